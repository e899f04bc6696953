"""Minimal dense-tensor kernel with reverse-mode autodiff.

Everything is a rank-4 tensor (batch, channel, height, width) of 32-bit
floats; 64-bit is available as an opt-in verification dtype for gradient
checking, where float32 finite differences would drown in rounding noise.

Operations are pure functions. Passing a ``Tape`` records the computation;
``Tape.backward`` then replays it in reverse to produce gradients for every
named leaf tensor. Tensors are immutable after construction, so the same
parameters can be used from several threads; a tape belongs to one
training step and is never shared.
"""

from __future__ import annotations

from collections.abc import Mapping
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)


class Tensor:
    """Immutable dense rank-4 array.

    ``dtype`` defaults to float32 regardless of the input array's dtype;
    pass ``dtype=np.float64`` explicitly to build a verification graph.
    """

    __slots__ = ("data", "name")

    def __init__(self, data, name: Optional[str] = None, dtype=None):
        dt = np.float32 if dtype is None else np.dtype(dtype).type
        if dt not in _ALLOWED_DTYPES:
            raise ShapeError(f"unsupported dtype {dt}; expected float32 or float64")
        arr = np.ascontiguousarray(data, dtype=dt)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be rank 4 (n, c, h, w); got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.name = name

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def c(self) -> int:
        return self.data.shape[1]

    @property
    def h(self) -> int:
        return self.data.shape[2]

    @property
    def w(self) -> int:
        return self.data.shape[3]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor; got shape {self.shape}")
        return float(self.data.reshape(())[()])

    @staticmethod
    def zeros(shape, name=None, dtype=None) -> "Tensor":
        dt = np.float32 if dtype is None else dtype
        return Tensor(np.zeros(shape, dtype=dt), name=name, dtype=dt)

    @staticmethod
    def scalar(value: float, dtype=None) -> "Tensor":
        dt = np.float32 if dtype is None else dtype
        return Tensor(np.full((1, 1, 1, 1), value, dtype=dt), dtype=dt)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def _wrap(arr: np.ndarray, name=None) -> Tensor:
    return Tensor(arr, name=name, dtype=arr.dtype)


def _require_finite(t: Tensor, what: str) -> None:
    if not np.isfinite(t.data).all():
        raise NonFiniteError(f"{what} contains NaN or infinity")


def _require_same_dtype(*tensors: Tensor) -> None:
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"mixed dtypes {dt} and {t.data.dtype} in one operation")


class GradientSet(Mapping):
    """Gradients keyed by parameter name, each shaped like its parameter."""

    def __init__(self, grads: dict[str, Tensor]):
        self._grads = dict(grads)

    def __getitem__(self, name: str) -> Tensor:
        return self._grads[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._grads)

    def __len__(self) -> int:
        return len(self._grads)

    def __repr__(self) -> str:
        return f"GradientSet({sorted(self._grads)})"


class _TapeEntry:
    __slots__ = ("out", "inputs", "backward_fn", "op")

    def __init__(self, out, inputs, backward_fn, op):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Record of one forward computation, replayable in reverse.

    Entries are appended in execution order, so every entry's inputs are
    either leaves or outputs of earlier entries; the reverse sweep visits
    each entry exactly once.

    One thread builds and consumes one tape at a time: taped convolutions
    park their unfolded input columns in per-entry scratch slots, which the
    next taped forward pass on the same thread reuses. Take gradients before
    starting another taped forward.
    """

    def __init__(self):
        self._entries: list[_TapeEntry] = []
        self._produced_ids: set[int] = set()
        self._grad_by_id: dict[int, np.ndarray] = {}

    def record(self, out: Tensor, inputs: Sequence[Tensor],
               backward_fn: Callable[[np.ndarray], tuple], op: str) -> None:
        self._entries.append(_TapeEntry(out, tuple(inputs), backward_fn, op))
        self._produced_ids.add(id(out))

    def produced(self, t: Tensor) -> bool:
        """True if ``t`` is the output of an operation recorded on this tape."""
        return id(t) in self._produced_ids

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss_grad: float = 1.0) -> GradientSet:
        """Reverse sweep from the terminal scalar; returns named-leaf gradients.

        Deterministic: the same tape yields bit-identical gradients on every
        call, and calling twice does not corrupt state.
        """
        if not self._entries:
            raise ShapeError("cannot run backward on an empty tape")
        terminal = self._entries[-1].out
        if terminal.data.size != 1:
            raise ShapeError(
                f"tape must terminate in a scalar loss; last output has shape {terminal.shape}")

        produced = self._produced_ids
        grads: dict[int, np.ndarray] = {
            id(terminal): np.full((1, 1, 1, 1), loss_grad, dtype=terminal.data.dtype)
        }
        for entry in reversed(self._entries):
            g = grads.get(id(entry.out))
            if g is None:
                continue  # output never fed the loss
            input_grads = entry.backward_fn(g)
            for t, gt in zip(entry.inputs, input_grads):
                if gt is None:
                    continue
                if gt.shape != t.data.shape:
                    raise ShapeError(
                        f"backward of {entry.op} produced gradient shape {gt.shape} "
                        f"for input of shape {t.data.shape}")
                acc = grads.get(id(t))
                grads[id(t)] = gt if acc is None else acc + gt

        self._grad_by_id = grads
        named: dict[str, Tensor] = {}
        seen: set[int] = set()
        for entry in self._entries:
            for t in entry.inputs:
                if t.name is None or id(t) in produced or id(t) in seen:
                    continue
                seen.add(id(t))
                g = grads.get(id(t))
                # copy: leaf gradients must outlive pooled scratch buffers
                named[t.name] = _wrap(np.zeros_like(t.data) if g is None else g.copy())
        return GradientSet(named)

    def grad(self, t: Tensor) -> Optional[Tensor]:
        """Gradient of the last backward() with respect to any tensor.

        Copies, so the result survives scratch-buffer reuse by later passes.
        """
        g = self._grad_by_id.get(id(t))
        return None if g is None else _wrap(g.copy())


def backward(tape: Tape, loss_grad: float = 1.0) -> GradientSet:
    """Functional form of ``Tape.backward``."""
    return tape.backward(loss_grad)


# ---------------------------------------------------------------------------
# convolution

# Scratch buffers for the unfold/pad steps, reused across calls of the same
# shape: fresh multi-hundred-MB allocations every step are page-fault bound.
# Thread-local so concurrent forward passes never share scratch space.
import threading

_scratch = threading.local()


_SCRATCH_POOL_LIMIT = 64


def _scratch_buffer(tag: str, shape, dtype) -> np.ndarray:
    pool = getattr(_scratch, "pool", None)
    if pool is None:
        pool = _scratch.pool = {}
    key = (tag, tuple(shape), np.dtype(dtype).str)
    buf = pool.get(key)
    if buf is None:
        if len(pool) >= _SCRATCH_POOL_LIMIT:
            pool.clear()
        buf = pool[key] = np.empty(shape, dtype=dtype)
    return buf


def _pad_zero(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    n, c, h, w = x.shape
    buf = _scratch_buffer("pad", (n, c, h + 2 * pad, w + 2 * pad), x.dtype)
    buf[:, :, :pad, :] = 0
    buf[:, :, -pad:, :] = 0
    buf[:, :, :, :pad] = 0
    buf[:, :, :, -pad:] = 0
    buf[:, :, pad:-pad, pad:-pad] = x
    return buf


def _im2col(x: np.ndarray, k: int, pad: int, tag: str = "im2col") -> tuple[np.ndarray, int, int]:
    """Unfold k*k patches into per-sample columns: (n, c*k*k, H*W).

    Built from k*k plain slice copies so no strided gather is needed; the
    final reshape is a view into the scratch buffer, which stays valid only
    until the next same-tag, same-shape unfold on this thread.
    """
    n, c, h, w = x.shape
    x = _pad_zero(x, pad)
    oh = x.shape[2] - k + 1
    ow = x.shape[3] - k + 1
    cols = _scratch_buffer(tag, (n, c, k, k, oh, ow), x.dtype)
    for u in range(k):
        for v in range(k):
            cols[:, :, u, v] = x[:, :, u:u + oh, v:v + ow]
    return cols.reshape(n, c * k * k, oh * ow), oh, ow


def _col2im(cols: np.ndarray, x_shape, k: int, pad: int, oh: int, ow: int,
            tag: str) -> np.ndarray:
    """Scatter-add per-sample columns back to image layout; adjoint of _im2col.

    The result is a view into a pooled buffer; it stays valid until the next
    same-tag backward pass on this thread.
    """
    n, c, h, w = x_shape
    buf = _scratch_buffer(tag, (n, c, h + 2 * pad, w + 2 * pad), cols.dtype)
    buf.fill(0)
    blocks = cols.reshape(n, c, k, k, oh, ow)
    for u in range(k):
        for v in range(k):
            buf[:, :, u:u + oh, v:v + ow] += blocks[:, :, u, v]
    if pad:
        return buf[:, :, pad:-pad, pad:-pad]
    return buf


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           padding: str = "same", tape: Optional[Tape] = None) -> Tensor:
    """2-D cross-correlation, stride 1, odd square kernels (1x1 or 3x3).

    ``same`` zero-pads by k//2 so the output keeps the input's spatial size;
    ``valid`` keeps only fully covered positions. Accumulation happens in a
    fixed order (one matmul per call), so results are deterministic within
    one build.
    """
    if kernel.data.ndim != 4:
        raise ShapeError(f"kernel must be rank 4; got {kernel.shape}")
    co, ci, kh, kw = kernel.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"kernel must be 1x1 or 3x3; got {kh}x{kw}")
    if x.c != ci:
        raise ShapeError(f"input has {x.c} channels but kernel expects {ci}")
    if padding not in ("same", "valid"):
        raise ShapeError(f"unknown padding mode {padding!r}")
    if bias is not None and bias.shape != (1, co, 1, 1):
        raise ShapeError(f"bias must have shape (1, {co}, 1, 1); got {bias.shape}")
    _require_same_dtype(*(t for t in (x, kernel, bias) if t is not None))
    _require_finite(x, "conv2d input")
    _require_finite(kernel, "conv2d kernel")
    if bias is not None:
        _require_finite(bias, "conv2d bias")

    pad = kh // 2 if padding == "same" else 0
    if padding == "valid" and (x.h < kh or x.w < kw):
        raise ShapeError(f"input {x.h}x{x.w} too small for valid {kh}x{kw} convolution")

    # taped convolutions keep their unfolded columns in a per-entry slot so
    # the backward pass does not redo the unfold; untaped ones share one
    # transient buffer per shape
    slot = f".{len(tape)}" if tape is not None else ""
    cols, oh, ow = _im2col(x.data, kh, pad, "im2col" + slot)
    wmat = kernel.data.reshape(co, ci * kh * kw)
    out = (wmat @ cols).reshape(x.n, co, oh, ow)
    if bias is not None:
        np.add(out, bias.data, out=out)
    result = _wrap(out)

    if tape is not None:
        x_shape = x.data.shape
        x_needs_grad = x.name is not None or tape.produced(x)

        def bwd(g: np.ndarray):
            gb = np.ascontiguousarray(g).reshape(x.n, co, oh * ow)
            dw = np.matmul(gb, cols.transpose(0, 2, 1)).sum(axis=0).reshape(
                co, ci, kh, kw)
            dx = None
            if x_needs_grad:
                colg = _scratch_buffer("colgrad", (x.n, ci * kh * kw, oh * ow), g.dtype)
                np.matmul(wmat.T, gb, out=colg)
                dx = _col2im(colg, x_shape, kh, pad, oh, ow, "dx" + slot)
            if bias is None:
                return dx, dw
            db = g.sum(axis=(0, 2, 3)).reshape(1, co, 1, 1)
            return dx, dw, db

        inputs = (x, kernel) if bias is None else (x, kernel, bias)
        tape.record(result, inputs, bwd, "conv2d")
    return result


def filter2d(x: Tensor, kernel: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Correlate each channel with a fixed (non-trainable) 2-D kernel, valid mode."""
    k = np.asarray(kernel, dtype=x.data.dtype)
    if k.ndim != 2:
        raise ShapeError(f"filter kernel must be 2-D; got shape {k.shape}")
    kh, kw = k.shape
    if x.h < kh or x.w < kw:
        raise ShapeError(f"input {x.h}x{x.w} smaller than filter window {kh}x{kw}")
    v = sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    out = _wrap(np.einsum("nchwuv,uv->nchw", v, k))

    if tape is not None:
        kflip = k[::-1, ::-1].copy()

        def bwd(g: np.ndarray):
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            vg = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            return (np.einsum("nchwuv,uv->nchw", vg, kflip),)

        tape.record(out, (x,), bwd, "filter2d")
    return out


# ---------------------------------------------------------------------------
# activations and structural ops


def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = _wrap(np.maximum(x.data, 0))
    if tape is not None:
        def bwd(g: np.ndarray):
            # subgradient at 0 is 0
            return ((x.data > 0) * g,)
        tape.record(out, (x,), bwd, "relu")
    return out


def sigmoid(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    z = np.exp(-np.abs(x.data))  # stable branch, never overflows
    pos = 1.0 / (1.0 + z)
    out = _wrap(np.where(x.data >= 0, pos, z / (1.0 + z)).astype(x.data.dtype))
    if tape is not None:
        y = out.data

        def bwd(g: np.ndarray):
            return (g * y * (1.0 - y),)

        tape.record(out, (x,), bwd, "sigmoid")
    return out


def global_avg_pool(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if x.h * x.w < 1:
        raise ShapeError("global_avg_pool needs at least one spatial element")
    out = _wrap(x.data.mean(axis=(2, 3), keepdims=True))
    if tape is not None:
        area = x.h * x.w
        shape = x.data.shape

        def bwd(g: np.ndarray):
            return (np.broadcast_to(g / area, shape).copy(),)

        tape.record(out, (x,), bwd, "global_avg_pool")
    return out


def channel_concat(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if (a.n, a.h, a.w) != (b.n, b.h, b.w):
        raise ShapeError(f"channel_concat needs matching (n, h, w); got {a.shape} and {b.shape}")
    _require_same_dtype(a, b)
    out = _wrap(np.concatenate([a.data, b.data], axis=1))
    if tape is not None:
        ca = a.c

        def bwd(g: np.ndarray):
            return g[:, :ca], g[:, ca:]

        tape.record(out, (a, b), bwd, "channel_concat")
    return out


def channel_scale(x: Tensor, s: Tensor, tape: Optional[Tape] = None) -> Tensor:
    if s.shape != (x.n, x.c, 1, 1):
        raise ShapeError(f"scale must have shape ({x.n}, {x.c}, 1, 1); got {s.shape}")
    _require_same_dtype(x, s)
    out = _wrap(x.data * s.data)
    if tape is not None:
        def bwd(g: np.ndarray):
            return g * s.data, (g * x.data).sum(axis=(2, 3), keepdims=True)
        tape.record(out, (x, s), bwd, "channel_scale")
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic and reductions (loss plumbing)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} needs equal shapes; got {a.shape} and {b.shape}")
    _require_same_dtype(a, b)


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _check_same_shape(a, b, "add")
    out = _wrap(a.data + b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g, g), "add")
    return out


def sub(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = _wrap(a.data - b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g, -g), "sub")
    return out


def mul(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = _wrap(a.data * b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (g * b.data, g * a.data), "mul")
    return out


def div(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    _check_same_shape(a, b, "div")
    out = _wrap(a.data / b.data)
    if tape is not None:
        def bwd(g: np.ndarray):
            inv = g / b.data
            return inv, -inv * out.data
        tape.record(out, (a, b), bwd, "div")
    return out


def affine(x: Tensor, scale: float, shift: float, tape: Optional[Tape] = None) -> Tensor:
    """scale * x + shift with constant scalars."""
    out = _wrap((scale * x.data + shift).astype(x.data.dtype))
    if tape is not None:
        tape.record(out, (x,), lambda g: (scale * g,), "affine")
    return out


def sqrt(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = _wrap(np.sqrt(x.data))
    if tape is not None:
        y = out.data

        def bwd(g: np.ndarray):
            # derivative blows up at 0; treat that point as flat
            return (np.where(y > 0, 0.5 * g / np.where(y > 0, y, 1.0), 0.0),)

        tape.record(out, (x,), bwd, "sqrt")
    return out


def reduce_sum(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = _wrap(x.data.sum(dtype=x.data.dtype).reshape(1, 1, 1, 1))
    if tape is not None:
        shape = x.data.shape

        def bwd(g: np.ndarray):
            return (np.broadcast_to(g, shape).copy(),)

        tape.record(out, (x,), bwd, "reduce_sum")
    return out


def reduce_mean(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    out = _wrap(x.data.mean(dtype=x.data.dtype).reshape(1, 1, 1, 1))
    if tape is not None:
        size = x.data.size
        shape = x.data.shape

        def bwd(g: np.ndarray):
            return (np.broadcast_to(g / size, shape).copy(),)

        tape.record(out, (x,), bwd, "reduce_mean")
    return out
