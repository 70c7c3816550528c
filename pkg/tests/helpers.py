"""Shared test helpers and reference implementations."""

import numpy as np
from framepred.compute import ParamStore, Tensor


def store(dtype=np.float64, **arrays) -> ParamStore:
    s = ParamStore(dtype)
    for name, a in arrays.items():
        s.add(name, np.asarray(a, dtype=dtype))
    return s


def conv_reference(x, w, b, padding):
    """Direct nested-loop cross-correlation, NCHW."""
    x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    out = np.zeros((n, o, h - kh + 1, wd - kw + 1))
    for bi in range(n):
        for oc in range(o):
            for i in range(h - kh + 1):
                for j in range(wd - kw + 1):
                    acc = b[oc]
                    for ic in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += x[bi, ic, i + di, j + dj] * w[oc, ic, di, dj]
                    out[bi, oc, i, j] = acc
    return out


def t64(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))


# --- metric references: plain loops, no shared code with framepred.evaluation


def psnr_reference(t, p, mask=None):
    t, p = np.atleast_3d(np.asarray(t, float).T).T, np.atleast_3d(np.asarray(p, float).T).T
    c, h, w = t.shape
    total, count = 0.0, 0
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                if mask is None or mask[i][j]:
                    total += (t[ch, i, j] - p[ch, i, j]) ** 2
                    count += 1
    mse = max(total / count, 1e-10)
    return 10 * np.log10(255.0**2 / mse)


def _gray(img):
    a = np.asarray(img, float)
    if a.ndim == 2:
        return a
    if a.shape[0] == 1:
        return a[0]
    return 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]


def ssim_reference(t, p, mask=None):
    x, y = _gray(t), _gray(p)
    h, w = x.shape
    k = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5**2))
    win = np.outer(k, k)
    win /= win.sum()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for ci in range(5, h - 5):
        for cj in range(5, w - 5):
            if mask is not None and not mask[ci][cj]:
                continue
            a = x[ci - 5 : ci + 6, cj - 5 : cj + 6]
            b = y[ci - 5 : ci + 6, cj - 5 : cj + 6]
            mx, my = (win * a).sum(), (win * b).sum()
            vx = (win * (a - mx) ** 2).sum()
            vy = (win * (b - my) ** 2).sum()
            cxy = (win * (a - mx) * (b - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def sharp_reference(t, p, mask=None):
    t, p = np.atleast_3d(np.asarray(t, float).T).T, np.atleast_3d(np.asarray(p, float).T).T
    c, h, w = t.shape
    total, count = 0.0, 0
    for ch in range(c):
        for i in range(1, h):
            for j in range(1, w):
                if mask is not None and not mask[i][j]:
                    continue
                gt = abs(t[ch, i, j] - t[ch, i - 1, j]) + abs(t[ch, i, j] - t[ch, i, j - 1])
                gp = abs(p[ch, i, j] - p[ch, i - 1, j]) + abs(p[ch, i, j] - p[ch, i, j - 1])
                total += abs(gt - gp)
                count += 1
    return 10 * np.log10(255.0**2 / max(total / count, 1e-10))


def random_pair(rng, shape):
    """Target plus a correlated prediction, both in [0, 255]."""
    t = rng.uniform(0, 255, size=shape)
    p = np.clip(t + rng.normal(scale=rng.uniform(2, 60), size=shape), 0, 255)
    return t, p
