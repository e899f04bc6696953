"""Cross-implementation parity with the converter/dumper package.

These tests drive the TypeScript tools under frontend/ end to end: a
fabricated external checkpoint (safetensors) is converted to ".sfw",
loaded back here bit-exactly, and the dumper's independently computed
activations are compared against this implementation's. Everything skips
when the secondary package has not been built.
"""

import json
import shutil
import struct
import subprocess
import zlib
from pathlib import Path

import numpy as np
import pytest

import focusfuse.autodiff as ad
from focusfuse.autodiff import Tensor
from focusfuse.network import init_params
from focusfuse.synth import make_texture
from focusfuse.weights import load_weights

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"
CONVERT_JS = FRONTEND / "dist" / "convert.js"
DUMP_JS = FRONTEND / "dist" / "dump.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not CONVERT_JS.exists() or not DUMP_JS.exists(),
    reason="secondary component not built (frontend/dist missing) or node unavailable")

# torch-style names of the fabricated external checkpoint
SOURCE_NAMES = {
    "c1": "encoder.conv_in", "dc1": "encoder.dense.0", "dc2": "encoder.dense.1",
    "dc3": "encoder.dense.2", "se.reduce": "encoder.attention.fc1",
    "se.expand": "encoder.attention.fc2", "c2": "decoder.0", "c3": "decoder.1",
    "c4": "decoder.2", "c5": "decoder.3",
}


def write_safetensors(path: Path, tensors: dict[str, np.ndarray]) -> None:
    header = {}
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        header[name] = {"dtype": "F32", "shape": list(arr.shape),
                        "data_offsets": [offset, offset + len(data)]}
        offset += len(data)
        blobs.append(data)
    head = json.dumps(header).encode()
    path.write_bytes(struct.pack("<Q", len(head)) + head + b"".join(blobs))


def write_pgm(path: Path, img: np.ndarray) -> None:
    samples = np.floor(np.clip(img, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    h, w = samples.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + samples.tobytes())


def read_activation_archive(path: Path) -> dict[str, np.ndarray]:
    blob = path.read_bytes()
    assert blob[:4] == b"SFA1"
    assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[4:-4]) & 0xFFFFFFFF
    pos = 4
    version, count = struct.unpack_from("<II", blob, pos)
    pos += 8
    assert version == 1
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode()
        pos += name_len
        ndim = blob[pos]
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        assert blob[pos] == 0
        pos += 1
        size = int(np.prod(dims))
        entries[name] = np.frombuffer(blob, dtype="<f4", count=size,
                                      offset=pos).reshape(dims)
        pos += 4 * size
    return entries


@pytest.fixture(scope="session")
def parity(tmp_path_factory):
    """Fabricated checkpoint, converted weights and dumped activations."""
    root = tmp_path_factory.mktemp("parity")
    params = init_params(seed=123)
    named = params.named()

    tensors = {}
    entries = []
    for layer, source in SOURCE_NAMES.items():
        kernel = named[f"{layer}.w"].data
        bias = named[f"{layer}.b"].data.reshape(-1)
        if kernel.shape[2] == 1:  # attention layers exported as linear matrices
            kernel = kernel.reshape(kernel.shape[0], kernel.shape[1])
        tensors[f"{source}.weight"] = kernel
        tensors[f"{source}.bias"] = bias
        entries.append({"source": f"{source}.weight", "target": f"{layer}.w",
                        "shape": list(kernel.shape)})
        entries.append({"source": f"{source}.bias", "target": f"{layer}.b",
                        "shape": list(bias.shape)})

    write_safetensors(root / "ckpt.safetensors", tensors)
    (root / "manifest.json").write_text(json.dumps({
        "source": "ckpt.safetensors", "source_layout": "out_ch_first",
        "entries": entries}))

    sfw_path = root / "converted.sfw"
    result = subprocess.run(
        ["node", str(CONVERT_JS), "--manifest", str(root / "manifest.json"),
         "--out", str(sfw_path)], capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    assert sfw_path.exists()

    rng = np.random.default_rng(9)
    images = {}
    archives = {}
    for i in range(3):
        img = make_texture(16, rng)
        img = np.floor(img * 255.0 + 0.5) / 255.0  # freeze at 8-bit precision
        image_path = root / f"img{i}.pgm"
        write_pgm(image_path, img)
        archive_path = root / f"acts{i}.sfa"
        result = subprocess.run(
            ["node", str(DUMP_JS), "--weights", str(sfw_path),
             "--image", str(image_path), "--out", str(archive_path)],
            capture_output=True, text=True)
        assert result.returncode == 0, result.stderr
        images[i] = img.astype(np.float32)
        archives[i] = read_activation_archive(archive_path)
    return {"params": params, "sfw": sfw_path, "images": images,
            "archives": archives, "audit": result.stdout}


def python_activations(params, img: np.ndarray) -> dict[str, np.ndarray]:
    p = params.encoder
    x = Tensor(img[None, None])
    x1 = ad.relu(ad.conv2d(x, p.c1_w, p.c1_b))
    x2 = ad.relu(ad.conv2d(x1, p.dc1_w, p.dc1_b))
    cat12 = ad.channel_concat(x1, x2)
    x3 = ad.relu(ad.conv2d(cat12, p.dc2_w, p.dc2_b))
    cat123 = ad.channel_concat(cat12, x3)
    x4 = ad.relu(ad.conv2d(cat123, p.dc3_w, p.dc3_b))
    dense = ad.channel_concat(cat123, x4)
    pooled = ad.global_avg_pool(dense)
    squeezed = ad.relu(ad.conv2d(pooled, p.se_reduce_w, p.se_reduce_b))
    gate = ad.sigmoid(ad.conv2d(squeezed, p.se_expand_w, p.se_expand_b))
    encoder = ad.channel_scale(dense, gate)
    d = params.decoder
    y = ad.relu(ad.conv2d(encoder, d.c2_w, d.c2_b))
    y = ad.relu(ad.conv2d(y, d.c3_w, d.c3_b))
    y = ad.relu(ad.conv2d(y, d.c4_w, d.c4_b))
    decoder = ad.conv2d(y, d.c5_w, d.c5_b)
    return {"input": x.data, "x1": x1.data, "x2": x2.data, "x3": x3.data,
            "x4": x4.data, "se_gate": gate.data, "encoder": encoder.data,
            "decoder": decoder.data}


class TestConversion:
    def test_converted_weights_load_and_validate(self, parity):
        loaded = load_weights(parity["sfw"])
        assert loaded.metadata["dense_widths"] == [16, 16, 16, 16]

    def test_conversion_is_bit_exact(self, parity):
        original = init_params(seed=123).named()
        loaded = load_weights(parity["sfw"]).named()
        for name in original:
            assert np.array_equal(original[name].data, loaded[name].data), name


class TestActivationParity:
    def test_archive_layout(self, parity):
        for archive in parity["archives"].values():
            assert list(archive) == ["input", "x1", "x2", "x3", "x4",
                                     "se_gate", "encoder", "decoder"]
            assert archive["se_gate"].shape == (1, 64, 1, 1)
            gate = archive["se_gate"]
            assert (gate > 0).all() and (gate < 1).all()

    def test_activations_match_within_tolerance(self, parity):
        worst = {}
        for i, img in parity["images"].items():
            mine = python_activations(parity["params"], img)
            theirs = parity["archives"][i]
            for name, arr in mine.items():
                diff = float(np.abs(arr - theirs[name]).max())
                worst[name] = max(worst.get(name, 0.0), diff)
        print("  parity max abs diffs:",
              {k: f"{v:.2e}" for k, v in worst.items()})
        assert max(worst.values()) < 1e-5

    def test_acceptance_line(self, parity):
        loaded = load_weights(parity["sfw"])
        diffs = []
        for i, img in parity["images"].items():
            mine = python_activations(loaded, img)
            diffs.append(float(np.abs(mine["encoder"]
                                      - parity["archives"][i]["encoder"]).max()))
        ok = max(diffs) < 1e-5
        print(f"[{'PASS' if ok else 'FAIL'}] parity: converted weights load; "
              f"encoder activations match within {max(diffs):.2e} on 3 images")
        assert ok
