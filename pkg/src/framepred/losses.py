"""Training objectives: l_p, gradient difference, BCE and the adversarial terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compute import ops
from .compute.tensor import Tensor, _accumulate, make_result
from .model import Discriminator, ScalePyramid

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 0.0
    lambda_lp: float = 1.0
    lambda_gdl: float = 0.0
    p: int = 2
    alpha: int = 1

    def __post_init__(self):
        for name in ("lambda_adv", "lambda_lp", "lambda_gdl"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.lambda_adv > 0 or self.lambda_lp > 0 or self.lambda_gdl > 0):
            raise ValueError("at least one loss weight must be positive")
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")
        if int(self.alpha) != self.alpha or self.alpha < 1:
            raise ValueError(f"alpha must be an integer >= 1, got {self.alpha}")


# Named weightings from the experiments section.
LOSS_PRESETS: dict[str, LossWeights] = {
    "l2": LossWeights(0.0, 1.0, 0.0, p=2),
    "l1": LossWeights(0.0, 1.0, 0.0, p=1),
    "gdl-l1": LossWeights(0.0, 1.0, 1.0, p=1, alpha=1),
    "gdl-l2": LossWeights(0.0, 1.0, 1.0, p=2, alpha=2),
    "adv": LossWeights(0.05, 1.0, 0.0, p=2),
    "adv-gdl": LossWeights(0.05, 1.0, 1.0, p=2, alpha=1),
}


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _signed_pow(d: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """|d|**p and its derivative; the derivative is 0 at d == 0 for every p."""
    a = np.abs(d)
    if p == 1:
        return a, np.sign(d)
    return a**p, p * a ** (p - 1) * np.sign(d)


def lp_loss(pred, target, p: int = 2) -> Tensor:
    """Sum of |pred - target|**p over all elements, divided by the batch size.

    Axis 0 is the batch for inputs with two or more axes; a vector is one item.
    """
    pred, target = _tensor(pred), _tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"lp_loss: shape mismatch {pred.shape} vs {target.shape}")
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    b = pred.shape[0] if pred.ndim >= 2 else 1
    diff = pred.data - target.data
    val, dval = _signed_pow(diff, p)
    out = np.asarray(val.sum() / b, dtype=pred.dtype)

    def backward(g: np.ndarray) -> None:
        gd = dval * (g / b)
        _accumulate(pred, gd.astype(pred.dtype, copy=False))
        _accumulate(target, (-gd).astype(target.dtype, copy=False))

    return make_result(out, (pred, target), backward)


def gdl_loss(pred, target, alpha: int = 1) -> Tensor:
    """Gradient difference loss over vertical and horizontal neighbour pairs.

    Compares absolute forward differences of the two images pair by pair,
    raises each mismatch to ``alpha``, sums, and divides by the batch size.
    """
    pred, target = _tensor(pred), _tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"gdl_loss: shape mismatch {pred.shape} vs {target.shape}")
    if pred.ndim != 4 or pred.shape[2] < 2 or pred.shape[3] < 2:
        raise ValueError(f"gdl_loss needs NCHW images at least 2x2, got {pred.shape}")
    b = pred.shape[0]
    P, Y = pred.data, target.data

    terms = []
    total = 0.0
    for axis in (2, 3):
        dp = np.diff(P, axis=axis)
        dy = np.diff(Y, axis=axis)
        e = np.abs(dy) - np.abs(dp)
        val, dval = _signed_pow(e, alpha)
        total = total + val.sum()
        terms.append((axis, dp, dy, dval))
    out = np.asarray(total / b, dtype=pred.dtype)

    def backward(g: np.ndarray) -> None:
        gp = np.zeros_like(P)
        gy = np.zeros_like(Y)
        s = g / b
        for axis, dp, dy, dval in terms:
            # d/d(dp) of |(|dy| - |dp|)|^a  and  d/d(dy)
            cp = -dval * np.sign(dp) * s
            cy = dval * np.sign(dy) * s
            lead = [slice(None)] * 4
            tail = [slice(None)] * 4
            lead[axis] = slice(1, None)
            tail[axis] = slice(None, -1)
            gp[tuple(lead)] += cp
            gp[tuple(tail)] -= cp
            gy[tuple(lead)] += cy
            gy[tuple(tail)] -= cy
        _accumulate(pred, gp)
        _accumulate(target, gy)

    return make_result(out, (pred, target), backward)


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of probabilities against {0, 1} labels.

    Probabilities are clipped to [1e-7, 1 - 1e-7] before the logs; the
    gradient is evaluated at the clipped value and is not zeroed by the clip.
    """
    pred = _tensor(pred)
    t = np.asarray(target, dtype=pred.dtype)
    if t.ndim == 0:
        t = np.full(pred.shape, t, dtype=pred.dtype)
    t = t.reshape(pred.shape)
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_loss targets must be 0 or 1")
    n = pred.data.size
    pc = np.clip(pred.data, BCE_EPS, 1 - BCE_EPS)
    val = -(t * np.log(pc) + (1 - t) * np.log(1 - pc))
    out = np.asarray(val.sum() / n, dtype=pred.dtype)

    def backward(g: np.ndarray) -> None:
        _accumulate(pred, ((-t / pc + (1 - t) / (1 - pc)) * (g / n)).astype(pred.dtype, copy=False))

    return make_result(out, (pred,), backward)


def _check_scales(D: Discriminator, pyramid: ScalePyramid, generated: list[Tensor]) -> None:
    n = D.spec.n_scales
    if pyramid.n_scales != n or len(generated) != n:
        raise ValueError(
            f"scale count mismatch: D has {n}, pyramid {pyramid.n_scales}, predictions {len(generated)}"
        )


def _sum(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return total


def adv_d_loss(D: Discriminator, pyramid: ScalePyramid, generated: list[Tensor]) -> Tensor:
    """Real clips labelled 1, generated ones 0, summed over scales.

    Predictions are detached, so only the discriminator receives gradients.
    """
    _check_scales(D, pyramid, generated)
    if pyramid.ys is None:
        raise ValueError("adv_d_loss needs targets in the pyramid")
    terms = []
    for k in range(D.spec.n_scales):
        real = D(pyramid.xs[k], pyramid.ys[k], k)
        fake = D(pyramid.xs[k], generated[k].detach(), k)
        terms.append(ops.add(bce_loss(real, 1.0), bce_loss(fake, 0.0)))
    return _sum(terms)


def adv_g_loss(D: Discriminator, pyramid: ScalePyramid, generated: list[Tensor]) -> Tensor:
    """Generated clips scored against label 1 with the discriminator frozen."""
    _check_scales(D, pyramid, generated)
    terms = [bce_loss(D(pyramid.xs[k], generated[k], k, frozen=True), 1.0) for k in range(D.spec.n_scales)]
    return _sum(terms)


def multiscale_lp(pyramid: ScalePyramid, generated: list[Tensor], p: int) -> Tensor:
    return _sum([lp_loss(g, y, p) for g, y in zip(generated, pyramid.ys)])


def multiscale_gdl(pyramid: ScalePyramid, generated: list[Tensor], alpha: int) -> Tensor:
    return _sum([gdl_loss(g, y, alpha) for g, y in zip(generated, pyramid.ys)])


def combined_loss_terms(
    weights: LossWeights,
    D: Discriminator | None,
    pyramid: ScalePyramid,
    generated: list[Tensor],
) -> dict[str, Tensor]:
    """Weighted total plus each unweighted term; zero-weight terms are skipped."""
    if pyramid.ys is None:
        raise ValueError("combined loss needs targets in the pyramid")
    if len(generated) != pyramid.n_scales:
        raise ValueError("one prediction per pyramid scale is required")
    terms: dict[str, Tensor] = {}
    weighted = []
    if weights.lambda_adv > 0:
        if D is None:
            raise ValueError("lambda_adv > 0 needs a discriminator")
        terms["adv"] = adv_g_loss(D, pyramid, generated)
        weighted.append(ops.scale(terms["adv"], weights.lambda_adv))
    if weights.lambda_lp > 0:
        terms["lp"] = multiscale_lp(pyramid, generated, weights.p)
        weighted.append(ops.scale(terms["lp"], weights.lambda_lp))
    if weights.lambda_gdl > 0:
        terms["gdl"] = multiscale_gdl(pyramid, generated, weights.alpha)
        weighted.append(ops.scale(terms["gdl"], weights.lambda_gdl))
    terms["total"] = _sum(weighted)
    return terms


def combined_loss(
    weights: LossWeights,
    D: Discriminator | None,
    pyramid: ScalePyramid,
    generated: list[Tensor],
) -> Tensor:
    return combined_loss_terms(weights, D, pyramid, generated)["total"]
