"""Hot loops for the compute core.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature. The numba path is used when numba imports cleanly, unless
``FRAMEPRED_DISABLE_NUMBA`` is set to a truthy value in the environment.
Both paths are bitwise identical: they copy or accumulate the same values in
the same order.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("FRAMEPRED_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}

try:
    if _DISABLED:
        raise ImportError("numba disabled by FRAMEPRED_DISABLE_NUMBA")
    from numba import njit
except ImportError:  # pragma: no cover - depends on environment
    njit = None

BACKEND = "numpy" if njit is None else "numba"


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def im2col_numpy(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, Hp, Wp, C) padded channels-last input -> (B*Ho*Wo, kh*kw*C) patches.

    Columns are ordered (ki, kj, channel), so each patch row is built from
    contiguous channel vectors.
    """
    b, hp, wp, c = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # win: (B, Ho, Wo, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * ho * wo, kh * kw * c)


def col2im_numpy(
    cols: np.ndarray, b: int, hp: int, wp: int, c: int, kh: int, kw: int
) -> np.ndarray:
    """Adjoint of :func:`im2col_numpy`; overlapping patches are summed."""
    ho, wo = hp - kh + 1, wp - kw + 1
    v = cols.reshape(b, ho, wo, kh, kw, c)
    out = np.zeros((b, hp, wp, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + ho, j : j + wo, :] += v[:, :, :, i, j, :]
    return out


def maxpool2x2_numpy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping 2x2 max; returns (values, argmax index in 0..3)."""
    b, c, h, w = x.shape
    blocks = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(b, c, h // 2, w // 2, 4)
    idx = np.argmax(blocks, axis=-1)  # first max wins on ties
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int64)


def maxpool2x2_backward_numpy(g: np.ndarray, idx: np.ndarray) -> np.ndarray:
    b, c, ho, wo = g.shape
    onehot = np.zeros((b, c, ho, wo, 4), dtype=g.dtype)
    np.put_along_axis(onehot, idx[..., None], g[..., None], axis=-1)
    onehot = onehot.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return onehot.reshape(b, c, ho * 2, wo * 2)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if njit is not None:

    @njit(cache=True)
    def im2col_numba(xp, kh, kw):
        b, hp, wp, c = xp.shape
        ho = hp - kh + 1
        wo = wp - kw + 1
        cols = np.empty((b * ho * wo, kh * kw * c), dtype=xp.dtype)
        for n in range(b):
            for y in range(ho):
                for x in range(wo):
                    row = (n * ho + y) * wo + x
                    for i in range(kh):
                        for j in range(kw):
                            base = (i * kw + j) * c
                            for ch in range(c):
                                cols[row, base + ch] = xp[n, y + i, x + j, ch]
        return cols

    @njit(cache=True)
    def col2im_numba(cols, b, hp, wp, c, kh, kw):
        ho = hp - kh + 1
        wo = wp - kw + 1
        out = np.zeros((b, hp, wp, c), dtype=cols.dtype)
        # (i, j) outermost so each output cell accumulates in the numpy order
        for i in range(kh):
            for j in range(kw):
                base = (i * kw + j) * c
                for n in range(b):
                    for y in range(ho):
                        for x in range(wo):
                            row = (n * ho + y) * wo + x
                            for ch in range(c):
                                out[n, y + i, x + j, ch] += cols[row, base + ch]
        return out

    @njit(cache=True)
    def maxpool2x2_numba(x):
        b, c, h, w = x.shape
        ho = h // 2
        wo = w // 2
        out = np.empty((b, c, ho, wo), dtype=x.dtype)
        idx = np.empty((b, c, ho, wo), dtype=np.int64)
        for n in range(b):
            for ch in range(c):
                for y in range(ho):
                    for xx in range(wo):
                        best = x[n, ch, 2 * y, 2 * xx]
                        arg = 0
                        for k in range(1, 4):
                            v = x[n, ch, 2 * y + k // 2, 2 * xx + k % 2]
                            if v > best:
                                best = v
                                arg = k
                        out[n, ch, y, xx] = best
                        idx[n, ch, y, xx] = arg
        return out, idx

    @njit(cache=True)
    def maxpool2x2_backward_numba(g, idx):
        b, c, ho, wo = g.shape
        out = np.zeros((b, c, 2 * ho, 2 * wo), dtype=g.dtype)
        for n in range(b):
            for ch in range(c):
                for y in range(ho):
                    for xx in range(wo):
                        k = idx[n, ch, y, xx]
                        out[n, ch, 2 * y + k // 2, 2 * xx + k % 2] = g[n, ch, y, xx]
        return out

    im2col = im2col_numba
    col2im = col2im_numba
    maxpool2x2 = maxpool2x2_numba
    maxpool2x2_backward = maxpool2x2_backward_numba
else:  # pragma: no cover - depends on environment
    im2col = im2col_numpy
    col2im = col2im_numpy
    maxpool2x2 = maxpool2x2_numpy
    maxpool2x2_backward = maxpool2x2_backward_numpy
