"""Image-quality metrics, motion masks and the model-vs-baseline report.

All metrics work on images in the [0, 255] range shaped (H, W) or (C, H, W).
Masks are boolean (H, W) arrays; True marks an evaluated pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pnm
from .data import DataError, denormalize, normalize, stack_frames, to_uint8
from .model import recursive_predict

MAX_VAL = 255.0
FLOOR = 1e-10
SSIM_SIZE = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * MAX_VAL) ** 2
SSIM_C2 = (0.03 * MAX_VAL) ** 2
LUMA = np.array([0.299, 0.587, 0.114])
MOTION_THRESHOLD = 0.2
PSNR_CAP = 10.0 * math.log10(MAX_VAL**2 / FLOOR)
NO_MOTION = "no moving pixels"


class MetricError(ValueError):
    pass


def _as_chw(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise MetricError(f"expected (H, W) or (C, H, W) image, got shape {a.shape}")
    return a


def _pair(target, pred) -> tuple[np.ndarray, np.ndarray]:
    t, p = _as_chw(target), _as_chw(pred)
    if t.shape != p.shape:
        raise MetricError(f"shape mismatch {t.shape} vs {p.shape}")
    return t, p


def _mask(mask, hw: tuple[int, int]) -> np.ndarray:
    if mask is None:
        return np.ones(hw, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != hw:
        raise MetricError(f"mask shape {m.shape} does not match image {hw}")
    return m


def psnr(target, pred, mask=None) -> float:
    """10*log10(255^2 / MSE) over masked pixels (all channels), MSE floored."""
    t, p = _pair(target, pred)
    m = _mask(mask, t.shape[1:])
    if not m.any():
        raise MetricError("psnr: empty mask")
    d = (t - p)[:, m]
    mse = max(float(np.mean(d * d)), FLOOR)
    return 10.0 * math.log10(MAX_VAL**2 / mse)


def to_luma(img) -> np.ndarray:
    a = _as_chw(img)
    if a.shape[0] == 1:
        return a[0]
    if a.shape[0] == 3:
        return np.tensordot(LUMA, a, axes=1)
    raise MetricError(f"expected 1 or 3 channels, got {a.shape[0]}")


def gaussian_window(size: int = SSIM_SIZE, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(img, g.size, axis=0)
    rows = win @ g
    win = np.lib.stride_tricks.sliding_window_view(rows, g.size, axis=1)
    return win @ g


def ssim_map(target, pred) -> np.ndarray:
    """Per-window SSIM for every fully-inside 11x11 window (valid region)."""
    t, p = _pair(target, pred)
    x, y = to_luma(t), to_luma(p)
    if min(x.shape) < SSIM_SIZE:
        raise MetricError(f"image {x.shape} smaller than the {SSIM_SIZE}x{SSIM_SIZE} window")
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(target, pred, mask=None) -> float:
    """Mean SSIM over windows whose centre pixel is in the mask."""
    smap = ssim_map(target, pred)
    hw = _as_chw(target).shape[1:]
    m = _mask(mask, hw)
    r = SSIM_SIZE // 2
    centres = m[r : hw[0] - r, r : hw[1] - r]
    if not centres.any():
        raise MetricError("ssim: no masked window centres")
    return float(np.clip(smap[centres].mean(), -1.0, 1.0))


def _grad_sum(a: np.ndarray) -> np.ndarray:
    """|a[i,j]-a[i-1,j]| + |a[i,j]-a[i,j-1]| on rows/cols >= 1."""
    gi = np.abs(a[:, 1:, 1:] - a[:, :-1, 1:])
    gj = np.abs(a[:, 1:, 1:] - a[:, 1:, :-1])
    return gi + gj


def sharp_diff(target, pred, mask=None) -> float:
    """Gradient-based sharpness difference in dB; first row and column excluded."""
    t, p = _pair(target, pred)
    m = _mask(mask, t.shape[1:])[1:, 1:]
    if not m.any():
        raise MetricError("sharp_diff: empty valid set")
    d = np.abs(_grad_sum(t) - _grad_sum(p))[:, m]
    den = max(float(d.mean()), FLOOR)
    return 10.0 * math.log10(MAX_VAL**2 / den)


def motion_mask(frame_t, frame_prev, threshold: float = MOTION_THRESHOLD) -> np.ndarray:
    """Pixels whose max-channel change exceeds ``threshold`` on the [0, 1] scale."""
    a, b = _pair(frame_t, frame_prev)
    return (np.abs(a - b) / MAX_VAL).max(axis=0) > threshold


def baseline_last_input(X: np.ndarray, n_out: int, channels: int = 1) -> np.ndarray:
    """Repeat the final input frame ``n_out`` times along the channel axis.

    X is (..., m*c, H, W); the result is (..., n_out*c, H, W).
    """
    X = np.asarray(X)
    if X.shape[-3] < channels:
        raise ValueError("X holds no complete frame")
    last = X[..., -channels:, :, :]
    return np.concatenate([last] * n_out, axis=-3)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

METRICS = ("psnr", "ssim", "sharp")
_FUNCS = {"psnr": psnr, "ssim": ssim, "sharp": sharp_diff}


@dataclass
class _Acc:
    total: float = 0.0
    count: int = 0

    def add(self, v: float) -> None:
        self.total += v
        self.count += 1

    @property
    def mean(self) -> float | None:
        return self.total / self.count if self.count else None


@dataclass
class MetricsReport:
    """Mean metrics per predicted frame for the model and the last-input baseline.

    ``values[(source, frame, metric, variant)]`` is the mean over samples, or
    None for a masked variant when no sample had evaluable moving pixels.
    """

    frames: int
    samples: int
    threshold: float
    values: dict[tuple[str, int, str, str], float | None] = field(default_factory=dict)
    coverage: dict[int, float] = field(default_factory=dict)
    masked_counts: dict[tuple[int, str], int] = field(default_factory=dict)

    def get(self, source: str, frame: int, metric: str, variant: str = "masked") -> float | None:
        return self.values[(source, frame, metric, variant)]

    def records(self) -> list[str]:
        """Line-oriented text, one record per (source, frame, metric, variant)."""
        lines = [f"samples={self.samples} frames={self.frames} threshold={self.threshold:g}"]
        for f in range(1, self.frames + 1):
            lines.append(f"frame={f} coverage={self.coverage[f]:.6f}")
            for src in ("model", "baseline"):
                for metric in METRICS:
                    for variant in ("masked", "full"):
                        v = self.values[(src, f, metric, variant)]
                        shown = NO_MOTION if v is None else f"{v:.6f}"
                        lines.append(f"source={src} frame={f} metric={metric} variant={variant} value={shown}")
        return lines

    def table(self) -> str:
        head = f"{'frame':>5} {'source':<9}" + "".join(
            f" {m + '/' + v:>13}" for m in METRICS for v in ("masked", "full")
        )
        rows = [head, "-" * len(head)]
        for f in range(1, self.frames + 1):
            for src in ("model", "baseline"):
                cells = []
                for m in METRICS:
                    for v in ("masked", "full"):
                        x = self.values[(src, f, m, v)]
                        cells.append(f" {'n/a':>13}" if x is None else f" {x:13.4f}")
                rows.append(f"{f:>5} {src:<9}" + "".join(cells))
            rows.append(f"{'':>5} coverage {self.coverage[f]:.4f}")
        return "\n".join(rows)


def _score(acc: dict, source: str, f: int, truth: np.ndarray, pred: np.ndarray, mask: np.ndarray) -> None:
    for metric in METRICS:
        fn = _FUNCS[metric]
        acc[(source, f, metric, "full")].add(fn(truth, pred))
        if mask.any():
            try:
                acc[(source, f, metric, "masked")].add(fn(truth, pred, mask))
            except MetricError:
                pass  # mask has no evaluable position for this metric


def evaluate_predictions(
    inputs: list[np.ndarray],
    truths: list[np.ndarray],
    preds: list[np.ndarray],
    channels: int = 1,
    threshold: float = MOTION_THRESHOLD,
) -> MetricsReport:
    """Score prediction clips against ground truth; all arrays are [0, 255].

    Each entry is (T, C, H, W): ``inputs`` the seed frames, ``truths`` and
    ``preds`` the frames to score. Samples are reduced in list order.
    """
    if not truths:
        raise DataError("evaluation set is empty")
    frames = truths[0].shape[0]
    acc: dict = {}
    for src in ("model", "baseline"):
        for f in range(1, frames + 1):
            for metric in METRICS:
                for variant in ("masked", "full"):
                    acc[(src, f, metric, variant)] = _Acc()
    cov = {f: _Acc() for f in range(1, frames + 1)}
    for x, y, p in zip(inputs, truths, preds, strict=True):
        if y.shape != p.shape or y.shape[0] != frames:
            raise DataError(f"prediction {p.shape} and truth {y.shape} disagree")
        base = np.repeat(x[-1:], frames, axis=0)
        prev = x[-1]
        for i in range(frames):
            mask = motion_mask(y[i], prev, threshold)
            cov[i + 1].add(float(mask.mean()))
            _score(acc, "model", i + 1, y[i], p[i], mask)
            _score(acc, "baseline", i + 1, y[i], base[i], mask)
            prev = y[i]
    report = MetricsReport(frames=frames, samples=len(truths), threshold=threshold)
    for key, a in acc.items():
        report.values[key] = a.mean
        if key[3] == "masked":
            report.masked_counts[(key[1], key[2])] = a.count
    report.coverage = {f: a.mean for f, a in cov.items()}
    return report


def rollout(checkpoint, clips: list[np.ndarray], steps: int) -> tuple[list, list, list]:
    """Recursive predictions for each clip; returns (inputs, truths, preds) in [0, 255]."""
    spec = checkpoint.gen_spec
    m, n, c = spec.in_frames, spec.out_frames, spec.channels
    need = m + steps * n
    inputs, truths, preds = [], [], []
    for clip in clips:
        if clip.shape[0] < need:
            raise DataError(f"clip has {clip.shape[0]} frames, evaluation needs {need}")
        if clip.shape[1] != c:
            raise DataError(f"clip has {clip.shape[1]} channels, model expects {c}")
        x = clip[:m]
        seed = stack_frames(normalize(x))[None]
        out = recursive_predict(spec, checkpoint.g_params, seed, steps)[0]
        # predictions are exported as 8-bit frames, so score the quantized values
        p = to_uint8(denormalize(out)).astype(np.float64).reshape(steps * n, c, *out.shape[-2:])
        inputs.append(np.asarray(x, dtype=np.float64))
        truths.append(np.asarray(clip[m:need], dtype=np.float64))
        preds.append(p)
    return inputs, truths, preds


def evaluate_model(checkpoint, dataset: list[np.ndarray], steps: int = 1, threshold: float = MOTION_THRESHOLD) -> MetricsReport:
    """Roll the checkpoint's generator over each clip and score model and baseline."""
    if len(dataset) == 0:
        raise DataError("evaluation set is empty")
    inputs, truths, preds = rollout(checkpoint, dataset, steps)
    return evaluate_predictions(inputs, truths, preds, checkpoint.gen_spec.channels, threshold)


def masked_image(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """8-bit copy of a (C, H, W) frame with unevaluated pixels set to 0."""
    out = to_uint8(frame)
    out[:, ~np.asarray(mask, dtype=bool)] = 0
    return out


def export_masked(directory: str | Path, inputs, truths, preds, threshold: float = MOTION_THRESHOLD, limit: int = 8) -> list[Path]:
    """Write truth and prediction frames with static pixels blacked out."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for s, (x, y, p) in enumerate(zip(inputs[:limit], truths[:limit], preds[:limit])):
        prev = x[-1]
        for i in range(y.shape[0]):
            mask = motion_mask(y[i], prev, threshold)
            ext = ".pgm" if y.shape[1] == 1 else ".ppm"
            for tag, img in (("truth", y[i]), ("pred", p[i])):
                path = directory / f"sample{s:04d}_frame{i + 1}_{tag}{ext}"
                pnm.write(path, masked_image(img, mask))
                written.append(path)
            prev = y[i]
    return written
