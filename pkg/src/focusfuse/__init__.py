"""Multi-focus image fusion toolkit.

Trains a small dense-block autoencoder by reconstruction, measures
per-pixel activity as the spatial frequency of its deep features, and
fuses registered multi-focus images through a verified decision map.
"""

from .autodiff import GradientSet, Tape, Tensor, backward
from .fusion import (FusionResult, feature_fuse, fuse_pair, fuse_stack, fuse_weighted,
                     initial_decision_map, spatial_frequency)
from .imageio import ImageBuffer, load_image, luminance, rgb_to_gray, save_image
from .maps import DecisionMap, FusionConfig, SFMap
from .metrics import FusionPair, MetricReport, evaluate, metric_qg
from .network import (DecoderParams, EncoderParams, NetworkParams, decoder_forward,
                      encoder_forward, init_params)
from .postprocess import (disk_element, guided_filter, morph_open_close,
                          remove_small_regions, verify)
from .synth import SynthSpec, make_training_corpus, synth_pair, synth_stack
from .training import AdamState, TrainConfig, adam_step, loss_total, lr_schedule, ssim, train
from .weights import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "AdamState", "DecisionMap", "DecoderParams", "EncoderParams", "FusionConfig",
    "FusionPair", "FusionResult", "GradientSet", "ImageBuffer", "MetricReport",
    "NetworkParams", "SFMap", "SynthSpec", "Tape", "Tensor", "TrainConfig",
    "adam_step", "backward", "decoder_forward", "disk_element", "encoder_forward",
    "evaluate", "feature_fuse", "fuse_pair", "fuse_stack", "fuse_weighted",
    "guided_filter", "init_params", "initial_decision_map", "load_image",
    "load_weights", "loss_total", "lr_schedule", "luminance", "make_training_corpus",
    "metric_qg", "morph_open_close", "remove_small_regions", "rgb_to_gray",
    "save_image", "save_weights", "spatial_frequency", "ssim", "synth_pair",
    "synth_stack", "train", "verify",
]
