"""Frame loading, normalisation, motion-filtered patch sampling and synthetic clips.

Frames travel as float32 arrays shaped (T, C, H, W) with values in [0, 255]
until they are cut into training samples, which are normalised to [-1, 1]
and laid out with frames stacked on the channel axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pnm


class DataError(ValueError):
    """Bad or unusable input data."""


class MotionThresholdError(DataError):
    """Patch sampling ran out of retries without meeting the motion threshold."""


# ---------------------------------------------------------------------------
# loading and value range
# ---------------------------------------------------------------------------


def load_frame_sequence(directory: str | Path) -> np.ndarray:
    """Read lexicographically ordered .pgm/.ppm frames into (T, C, H, W) floats."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".pgm", ".ppm"))
    if not files:
        raise DataError(f"no .pgm/.ppm frames in {directory}")
    frames = []
    for f in files:
        try:
            img = pnm.read(f)
        except pnm.PNMError as exc:
            raise DataError(f"{f}: {exc}") from exc
        if frames and img.shape != frames[0].shape:
            raise DataError(f"{f}: frame shape {img.shape} differs from {frames[0].shape}")
        frames.append(img)
    return np.stack(frames).astype(np.float32)


def load_clip_tree(root: str | Path) -> list[np.ndarray]:
    """One sequence per clip subdirectory, in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    clips = [load_frame_sequence(d) for d in sorted(p for p in root.iterdir() if p.is_dir())]
    if not clips:
        raise DataError(f"no clip directories under {root}")
    return clips


def write_frame_sequence(directory: str | Path, frames: np.ndarray) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames)
    width = max(4, len(str(len(frames) - 1)))
    ext = ".pgm" if frames.shape[1] == 1 else ".ppm"
    for t, fr in enumerate(frames):
        pnm.write(directory / f"{t:0{width}d}{ext}", to_uint8(fr))


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half up."""
    return np.floor(np.clip(np.asarray(x, dtype=np.float64), 0, 255) + 0.5).astype(np.uint8)


def normalize(frames) -> np.ndarray:
    """[0, 255] -> [-1, 1]."""
    return (np.asarray(frames, dtype=np.float32) / np.float32(127.5) - np.float32(1)).astype(np.float32)


def denormalize(x) -> np.ndarray:
    """[-1, 1] -> [0, 255] as floats (no rounding); see :func:`to_uint8` for export."""
    return (np.asarray(x, dtype=np.float64) + 1.0) * 127.5


# ---------------------------------------------------------------------------
# patch sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    patch_size: int = 32
    tau: float = 0.01
    channels: int = 1
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("motion threshold tau must be >= 0")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")

    def check_scales(self, n_scales: int) -> None:
        if self.patch_size % (2 ** (n_scales - 1)):
            raise ValueError(f"patch size {self.patch_size} not divisible by 2^{n_scales - 1}")


@dataclass
class ClipSample:
    X: np.ndarray  # (m*c, P, P) in [-1, 1]
    Y: np.ndarray  # (n*c, P, P) in [-1, 1]
    source: int = 0
    origin: tuple[int, int, int] = (0, 0, 0)  # (t, y, x)
    label: int | None = None


def motion_score(window: np.ndarray) -> float:
    """Mean squared difference between consecutive frames of a (T, C, h, w) window."""
    d = np.diff(np.asarray(window, dtype=np.float64), axis=0)
    return float(np.mean(d * d))


def stack_frames(frames: np.ndarray) -> np.ndarray:
    """(T, C, H, W) -> (T*C, H, W)."""
    t, c, h, w = frames.shape
    return frames.reshape(t * c, h, w)


def unstack_frames(x: np.ndarray, channels: int) -> np.ndarray:
    """(..., T*C, H, W) -> (..., T, C, H, W)."""
    *lead, tc, h, w = x.shape
    return x.reshape(*lead, tc // channels, channels, h, w)


def sample_patches(
    sequence: np.ndarray,
    spec: DatasetSpec,
    count: int,
    m: int,
    n: int,
    rng: np.random.Generator | None = None,
    source: int = 0,
) -> list[ClipSample]:
    """Uniform random spatio-temporal patches whose motion score is at least ``tau``.

    The score is taken on normalised values. Each patch gets ``max_retries``
    draws before :class:`MotionThresholdError` is raised.
    """
    seq = np.asarray(sequence)
    t_len, c, h, w = seq.shape
    p = spec.patch_size
    if t_len < m + n:
        raise DataError(f"sequence has {t_len} frames, need at least {m + n}")
    if p > h or p > w:
        raise DataError(f"patch size {p} larger than frames {h}x{w}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(count):
        for _attempt in range(spec.max_retries):
            t0 = int(rng.integers(0, t_len - (m + n) + 1))
            y0 = int(rng.integers(0, h - p + 1))
            x0 = int(rng.integers(0, w - p + 1))
            win = normalize(seq[t0 : t0 + m + n, :, y0 : y0 + p, x0 : x0 + p])
            if motion_score(win) >= spec.tau:
                out.append(
                    ClipSample(
                        X=stack_frames(win[:m]),
                        Y=stack_frames(win[m:]),
                        source=source,
                        origin=(t0, y0, x0),
                    )
                )
                break
        else:
            raise MotionThresholdError(
                f"no patch with motion score >= {spec.tau} after {spec.max_retries} draws"
            )
    return out


@dataclass
class ClipDataset:
    """A set of frame sequences that serves random minibatches of (X, Y)."""

    sequences: list[np.ndarray]
    spec: DatasetSpec
    m: int
    n: int
    labels: list[int] | None = None

    def __post_init__(self):
        if not self.sequences:
            raise DataError("dataset is empty")
        for s in self.sequences:
            if s.shape[1] != self.spec.channels:
                raise DataError(f"clip has {s.shape[1]} channels, dataset expects {self.spec.channels}")

    def __len__(self) -> int:
        return len(self.sequences)

    def samples(self, rng: np.random.Generator, count: int) -> list[ClipSample]:
        out = []
        for _ in range(count):
            i = int(rng.integers(0, len(self.sequences)))
            s = sample_patches(self.sequences[i], self.spec, 1, self.m, self.n, rng, source=i)[0]
            if self.labels is not None:
                s.label = self.labels[i]
            out.append(s)
        return out

    def batch(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.samples(rng, size)
        return np.stack([x.X for x in s]), np.stack([x.Y for x in s])


# ---------------------------------------------------------------------------
# synthetic clips
# ---------------------------------------------------------------------------


@dataclass
class Shape:
    x: int
    y: int
    size: int
    vx: int
    vy: int
    kind: str = "rect"  # "rect" | "disc"
    color: tuple[int, ...] = (255,)

    def mask(self) -> np.ndarray:
        s = self.size
        if self.kind == "rect":
            return np.ones((s, s), dtype=bool)
        if self.kind == "disc":
            c = (np.arange(s) + 0.5) - s / 2
            return c[:, None] ** 2 + c[None, :] ** 2 <= (s / 2) ** 2
        raise ValueError(f"unknown shape kind {self.kind!r}")


@dataclass(frozen=True)
class BouncingParams:
    height: int = 32
    width: int = 32
    n_shapes: int = 2
    min_size: int = 4
    max_size: int = 8
    min_speed: int = 1
    max_speed: int = 3
    frames: int = 16
    channels: int = 1
    kinds: tuple[str, ...] = ("rect", "disc")
    background: int = 0


def _reflect(pos: int, vel: int, hi: int) -> tuple[int, int]:
    pos += vel
    # elastic bounce off [0, hi]; loops cover steps longer than the free range
    while pos < 0 or pos > hi:
        if pos < 0:
            pos, vel = -pos, -vel
        if pos > hi:
            pos, vel = 2 * hi - pos, -vel
    return pos, vel


def render_shapes(
    shapes: list[Shape], height: int, width: int, frames: int, channels: int = 1, background: int = 0
) -> np.ndarray:
    """Advance shapes with elastic reflection and paint each frame; later shapes on top."""
    shapes = [Shape(**vars(s)) for s in shapes]
    for s in shapes:
        if s.size > height or s.size > width:
            raise ValueError(f"shape of size {s.size} does not fit a {height}x{width} canvas")
        if len(s.color) not in (1, channels):
            raise ValueError("shape color must have 1 or `channels` components")
    out = np.full((frames, channels, height, width), background, dtype=np.float32)
    for t in range(frames):
        for s in shapes:
            m = s.mask()
            color = np.broadcast_to(np.asarray(s.color, dtype=np.float32), (channels,))
            region = out[t, :, s.y : s.y + s.size, s.x : s.x + s.size]
            region[:, m] = color[:, None]
        for s in shapes:
            s.x, s.vx = _reflect(s.x, s.vx, width - s.size)
            s.y, s.vy = _reflect(s.y, s.vy, height - s.size)
    return out


def synth_bouncing_shapes(params: BouncingParams, seed: int) -> np.ndarray:
    """Rectangles and discs translating with elastic boundary reflection."""
    if params.max_size > min(params.height, params.width):
        raise ValueError("shape larger than canvas")
    if params.min_size < 1 or params.min_size > params.max_size:
        raise ValueError("need 1 <= min_size <= max_size")
    rng = np.random.default_rng(seed)
    shapes = []
    for _ in range(params.n_shapes):
        size = int(rng.integers(params.min_size, params.max_size + 1))
        speeds = rng.integers(params.min_speed, params.max_speed + 1, size=2)
        signs = rng.choice([-1, 1], size=2)
        if params.channels == 1:
            color = (int(rng.integers(128, 256)),)
        else:
            color = tuple(int(v) for v in rng.integers(64, 256, size=3))
        shapes.append(
            Shape(
                x=int(rng.integers(0, params.width - size + 1)),
                y=int(rng.integers(0, params.height - size + 1)),
                size=size,
                vx=int(speeds[0] * signs[0]),
                vy=int(speeds[1] * signs[1]),
                kind=str(rng.choice(list(params.kinds))),
                color=color,
            )
        )
    return render_shapes(shapes, params.height, params.width, params.frames, params.channels, params.background)


@dataclass(frozen=True)
class BimodalParams:
    canvas: int = 16
    dot: int = 2
    m: int = 4
    n: int = 1
    speed: int = 2
    start: tuple[int, int] | None = None  # (row, col); random when None
    background: int = 64
    foreground: int = 192


def _bimodal_bounds(p: BimodalParams) -> tuple[int, int, int]:
    lo_row = p.n * p.speed
    hi_row = p.canvas - p.dot - p.n * p.speed
    hi_col = p.canvas - p.dot - (p.m + p.n - 1) * p.speed
    if hi_row < lo_row or hi_col < 0:
        raise ValueError("canvas too small for the dot trajectory")
    return lo_row, hi_row, hi_col


def bimodal_clip(p: BimodalParams, row: int, col: int, mode: int) -> np.ndarray:
    """(m+n, 1, canvas, canvas) frames: rightward approach, then up (0) or down (1)."""
    frames = np.full((p.m + p.n, 1, p.canvas, p.canvas), p.background, dtype=np.float32)
    sign = -1 if mode == 0 else 1
    for t in range(p.m + p.n):
        c = col + t * p.speed
        r = row if t < p.m else row + sign * (t - p.m + 1) * p.speed
        frames[t, 0, r : r + p.dot, c : c + p.dot] = p.foreground
    return frames


def synth_bimodal_dot(p: BimodalParams, count: int, seed: int) -> tuple[list[np.ndarray], list[int]]:
    """Clips whose future is one of two equally likely continuations.

    Returns the clips and the mode label (0 = up-right, 1 = down-right) of each.
    """
    lo_row, hi_row, hi_col = _bimodal_bounds(p)
    rng = np.random.default_rng(seed)
    clips, labels = [], []
    for _ in range(count):
        if p.start is None:
            row = int(rng.integers(lo_row, hi_row + 1))
            col = int(rng.integers(0, hi_col + 1))
        else:
            row, col = p.start
        mode = int(rng.integers(0, 2))
        clips.append(bimodal_clip(p, row, col, mode))
        labels.append(mode)
    return clips, labels


def write_clip_tree(root: str | Path, clips: list[np.ndarray], labels: list[int] | None = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(clips) - 1)))
    for i, clip in enumerate(clips):
        write_frame_sequence(root / f"clip{i:0{width}d}", clip)
    if labels is not None:
        lines = [f"clip{i:0{width}d} {lab}" for i, lab in enumerate(labels)]
        (root / "labels.txt").write_text("\n".join(lines) + "\n")


def read_labels(root: str | Path) -> list[int] | None:
    path = Path(root) / "labels.txt"
    if not path.exists():
        return None
    return [int(line.split()[1]) for line in path.read_text().splitlines() if line.strip()]
