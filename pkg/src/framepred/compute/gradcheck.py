"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import ParamStore, Tensor


def grad_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    epsilon: float = 1e-6,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Worst per-coordinate relative error between tape and numeric gradients.

    The error for one coordinate is ``|a - n| / max(1e-8, |a| + |n|)`` with
    ``n = (f(w + eps) - f(w - eps)) / (2 eps)``. ``max_coords`` limits the
    check to a random subset of coordinates per parameter.
    """
    params.zero_grad()
    loss = f(params)
    _check_finite(loss)
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in params.items()}
    params.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            xp = float(flat[i])
            fp = _value(f, params)
            flat[i] = orig - epsilon
            xm = float(flat[i])
            fm = _value(f, params)
            flat[i] = orig
            # actual stored step, which differs from 2*eps in float32
            num = (fp - fm) / (xp - xm)
            a = float(a_flat[i])
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    return worst


def _value(f, params: ParamStore) -> float:
    out = f(params)
    _check_finite(out)
    return float(out.data.reshape(-1)[0])


def _check_finite(t: Tensor) -> None:
    if t.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(t.data).all():
        raise FloatingPointError("function value is not finite")
