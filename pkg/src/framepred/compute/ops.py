"""Differentiable primitives on NCHW tensors.

Every op computes in the dtype of its inputs (float32 for training, float64
for gradient verification) and records a backward closure on the tape.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import Tensor, _accumulate, make_result


def _check_nchw(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{what}: expected a (batch, channels, height, width) tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution / dense
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 cross-correlation with symmetric zero padding."""
    _check_nchw(x, "conv2d input")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be (out_ch, in_ch, kh, kw), got {weight.shape}")
    out_ch, in_ch, kh, kw = weight.shape
    b, c, h, w = x.shape
    if c != in_ch:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {in_ch}")
    if bias.shape != (out_ch,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({out_ch},)")
    if padding < 0:
        raise ValueError("conv2d: padding must be >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    ho, wo = hp - kh + 1, wp - kw + 1

    # channels-last internally: patch rows are contiguous channel vectors
    xh = np.zeros((b, hp, wp, c), dtype=x.dtype)
    xh[:, padding : padding + h, padding : padding + w, :] = x.data.transpose(0, 2, 3, 1)
    cols = kernels.im2col(xh, kh, kw)
    wmat = np.ascontiguousarray(weight.data.transpose(0, 2, 3, 1)).reshape(out_ch, -1)
    out = cols @ wmat.T
    out += bias.data
    out = np.ascontiguousarray(out.reshape(b, ho, wo, out_ch).transpose(0, 3, 1, 2))

    def backward(g: np.ndarray) -> None:
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, out_ch)
        if weight.requires_grad:
            dw = (gm.T @ cols).reshape(out_ch, kh, kw, in_ch).transpose(0, 3, 1, 2)
            _accumulate(weight, np.ascontiguousarray(dw))
        if bias.requires_grad:
            _accumulate(bias, gm.sum(axis=0))
        if x.requires_grad:
            dxh = kernels.col2im(gm @ wmat, b, hp, wp, c, kh, kw)
            dx = dxh[:, padding : padding + h, padding : padding + w, :].transpose(0, 3, 1, 2)
            _accumulate(x, np.ascontiguousarray(dx))

    return make_result(out, (x, weight, bias), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on flattened batch items: (B, ...) -> (B, out)."""
    if weight.ndim != 2:
        raise ValueError(f"linear weight must be (out, in), got {weight.shape}")
    b = x.shape[0]
    xin = x.data.reshape(b, -1)
    if xin.shape[1] != weight.shape[1]:
        raise ValueError(
            f"linear: input has {xin.shape[1]} features but weight expects {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = xin @ weight.data.T + bias.data

    def backward(g: np.ndarray) -> None:
        if weight.requires_grad:
            _accumulate(weight, g.T @ xin)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))
        if x.requires_grad:
            _accumulate(x, (g @ weight.data).reshape(x.shape))

    return make_result(out, (x, weight, bias), backward)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * (x.data > 0))

    return make_result(out, (x,), backward)


def tanh_act(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * (1 - out * out))

    return make_result(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(xd.dtype, copy=False)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * out * (1 - out))

    return make_result(out, (x,), backward)


def clamp(x: Tensor, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    """Clip to [lo, hi]; gradient passes where lo <= x <= hi, zero elsewhere."""
    out = np.clip(x.data, lo, hi)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * ((x.data >= lo) & (x.data <= hi)))

    return make_result(out, (x,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return make_result(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    out = a.data * b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return make_result(out, (a, b), backward)


def scale(a: Tensor, k: float) -> Tensor:
    k_ = a.dtype.type(k)
    out = a.data * k_

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * k_)

    return make_result(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, np.broadcast_to(g, a.shape).astype(a.dtype))

    return make_result(out, (a,), backward)


def flatten(x: Tensor) -> Tensor:
    out = x.data.reshape(x.shape[0], -1)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.reshape(x.shape))

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max; ties go to the first element in row-major order."""
    _check_nchw(x, "maxpool2x2")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"maxpool2x2 needs even spatial size, got {x.shape[2:]}")
    out, idx = kernels.maxpool2x2(np.ascontiguousarray(x.data))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, kernels.maxpool2x2_backward(np.ascontiguousarray(g), idx))

    return make_result(out, (x,), backward)


def downsample_avg2x(x: Tensor) -> Tensor:
    _check_nchw(x, "downsample_avg2x")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample_avg2x needs even spatial size, got {(h, w)}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2)
    # pairwise sum: exact on constants
    s = (blocks[:, :, :, 0, :, 0] + blocks[:, :, :, 0, :, 1]) + (
        blocks[:, :, :, 1, :, 0] + blocks[:, :, :, 1, :, 1]
    )
    out = s * x.dtype.type(0.25)

    def backward(g: np.ndarray) -> None:
        q = g * x.dtype.type(0.25)
        _accumulate(x, np.repeat(np.repeat(q, 2, axis=2), 2, axis=3))

    return make_result(out, (x,), backward)


def _axis_taps(n_in: int, n_out: int, mode: str):
    """Source index pair and blend weight per output position (half-pixel centres)."""
    centres = (np.arange(n_out) + 0.5) * n_in / n_out
    if mode == "nearest":
        lo = np.minimum(np.floor(centres).astype(np.int64), n_in - 1)
        return lo, lo, np.zeros(n_out)
    if mode == "bilinear":
        pos = np.clip(centres - 0.5, 0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo
    raise ValueError(f"unknown upsampling mode {mode!r}")


def interp_matrix(n_in: int, n_out: int, mode: str, dtype=np.float64) -> np.ndarray:
    """(n_out, n_in) matrix of the 1-D resampling map used by :func:`upsample`."""
    lo, hi, frac = _axis_taps(n_in, n_out, mode)
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def upsample(x: Tensor, target_h: int, target_w: int, mode: str = "bilinear") -> Tensor:
    """Separable resize to a larger grid; bilinear samples clamp at the edges."""
    _check_nchw(x, "upsample")
    h, w = x.shape[2:]
    if target_h < h or target_w < w:
        raise ValueError(f"upsample target {(target_h, target_w)} smaller than input {(h, w)}")
    lo_h, hi_h, fh = _axis_taps(h, target_h, mode)
    lo_w, hi_w, fw = _axis_taps(w, target_w, mode)
    fh = fh.astype(x.dtype)[:, None]
    fw = fw.astype(x.dtype)
    # lerp form a + f*(b - a) keeps constants exact
    a = x.data[:, :, lo_h, :]
    rows = a + fh * (x.data[:, :, hi_h, :] - a)
    a = rows[:, :, :, lo_w]
    out = a + fw * (rows[:, :, :, hi_w] - a)

    def backward(g: np.ndarray) -> None:
        ah = interp_matrix(h, target_h, mode, x.dtype)
        aw = interp_matrix(w, target_w, mode, x.dtype)
        _accumulate(x, np.matmul(np.matmul(ah.T, g), aw))

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------------------
# channel plumbing
# ---------------------------------------------------------------------------


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_nchw(a, "concat_channels")
    _check_nchw(b, "concat_channels")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, np.ascontiguousarray(g[:, :ca]))
        _accumulate(b, np.ascontiguousarray(g[:, ca:]))

    return make_result(out, (a, b), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_nchw(x, "slice_channels")
    out = np.ascontiguousarray(x.data[:, start:stop])

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full)

    return make_result(out, (x,), backward)
