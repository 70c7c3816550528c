"""Time the numba kernels against their numpy counterparts.

Run with ``python3 benchmarks/bench_kernels.py``. The numba rows are skipped
when numba is unavailable or disabled through FRAMEPRED_DISABLE_NUMBA.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from framepred.compute import kernels as K


def cases(rng: np.random.Generator, batch: int, size: int, channels: int):
    xp = rng.normal(size=(batch, size + 2, size + 2, channels)).astype(np.float32)
    cols = K.im2col_numpy(xp, 3, 3)
    x = rng.normal(size=(batch, channels, size, size)).astype(np.float32)
    _, idx = K.maxpool2x2_numpy(x)
    g = rng.normal(size=idx.shape).astype(np.float32)
    b, hp, wp, c = xp.shape
    return {
        "im2col": (lambda f: f(xp, 3, 3), "im2col"),
        "col2im": (lambda f: f(cols, b, hp, wp, c, 3, 3), "col2im"),
        "maxpool2x2": (lambda f: f(x), "maxpool2x2"),
        "maxpool2x2_backward": (lambda f: f(g, idx), "maxpool2x2_backward"),
    }


def best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"backend={K.BACKEND} batch={args.batch} size={args.size} channels={args.channels}")
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  same")
    for name, (call, attr) in cases(rng, args.batch, args.size, args.channels).items():
        ref = getattr(K, f"{attr}_numpy")
        t_np = best(lambda: call(ref), args.repeat)
        fast = getattr(K, f"{attr}_numba", None)
        if fast is None:
            print(f"{name:<22}{t_np * 1e3:>10.3f}{'-':>10}{'-':>9}  -")
            continue
        call(fast)  # compile outside the timing
        t_nb = best(lambda: call(fast), args.repeat)
        a, b = call(ref), call(fast)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        same = all(np.array_equal(u, v) for u, v in zip(a, b))
        print(f"{name:<22}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.2f}x  {same}")


if __name__ == "__main__":
    main()
