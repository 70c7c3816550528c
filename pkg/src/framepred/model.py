"""Multi-scale generator and discriminator built from declarative specs.

Scale indices are 0-based in code (scale 0 is the coarsest); parameter names
use the same index, e.g. ``G.2.conv1.w``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .compute import ops
from .compute.tensor import ParamStore, Tensor


@dataclass(frozen=True)
class ScaleConfig:
    """Square training sizes, coarsest first, each double the previous."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not sizes:
            raise ValueError("ScaleConfig needs at least one scale")
        for a, b in zip(sizes, sizes[1:]):
            if b != 2 * a:
                raise ValueError(f"scale sizes must double at each level, got {sizes}")

    @classmethod
    def from_top(cls, top: int, n_scales: int) -> "ScaleConfig":
        if top % (2 ** (n_scales - 1)):
            raise ValueError(f"size {top} is not divisible by 2^{n_scales - 1}")
        return cls(tuple(top >> (n_scales - 1 - k) for k in range(n_scales)))

    @property
    def n_scales(self) -> int:
        return len(self.sizes)

    @property
    def top(self) -> int:
        return self.sizes[-1]


@dataclass(frozen=True)
class GenScale:
    maps: tuple[int, ...]
    kernels: tuple[int, ...]


@dataclass(frozen=True)
class GeneratorSpec:
    scales: tuple[GenScale, ...]
    sizes: ScaleConfig
    in_frames: int = 4
    out_frames: int = 1
    channels: int = 3
    upsample_mode: str = "bilinear"

    def __post_init__(self):
        if len(self.scales) != self.sizes.n_scales:
            raise ValueError("one GenScale per scale size is required")
        for k, sc in enumerate(self.scales):
            if len(sc.kernels) != len(sc.maps) + 1:
                raise ValueError(
                    f"G scale {k}: {len(sc.maps)} feature maps need {len(sc.maps) + 1} kernels, "
                    f"got {len(sc.kernels)}"
                )
            if any(ks % 2 == 0 for ks in sc.kernels):
                raise ValueError(f"G scale {k}: kernels must be odd, got {sc.kernels}")
        if self.upsample_mode not in ("bilinear", "nearest"):
            raise ValueError(f"unknown upsample mode {self.upsample_mode!r}")

    @property
    def n_scales(self) -> int:
        return self.sizes.n_scales

    def in_channels(self, k: int) -> int:
        c_in = self.in_frames * self.channels
        return c_in if k == 0 else c_in + self.out_frames * self.channels

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        for k, sc in enumerate(self.scales):
            chans = [self.in_channels(k), *sc.maps, self.out_frames * self.channels]
            for i, ks in enumerate(sc.kernels):
                shapes.append((f"G.{k}.conv{i}.w", (chans[i + 1], chans[i], ks, ks)))
                shapes.append((f"G.{k}.conv{i}.b", (chans[i + 1],)))
        return shapes

    def to_dict(self) -> dict:
        return {
            "kind": "generator",
            "sizes": list(self.sizes.sizes),
            "scales": [{"maps": list(s.maps), "kernels": list(s.kernels)} for s in self.scales],
            "in_frames": self.in_frames,
            "out_frames": self.out_frames,
            "channels": self.channels,
            "upsample_mode": self.upsample_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            scales=tuple(GenScale(tuple(s["maps"]), tuple(s["kernels"])) for s in d["scales"]),
            sizes=ScaleConfig(tuple(d["sizes"])),
            in_frames=d["in_frames"],
            out_frames=d["out_frames"],
            channels=d["channels"],
            upsample_mode=d.get("upsample_mode", "bilinear"),
        )


@dataclass(frozen=True)
class DiscScale:
    maps: tuple[int, ...]
    kernels: tuple[int, ...]
    fc: tuple[int, ...]
    pool: bool = False


@dataclass(frozen=True)
class DiscriminatorSpec:
    scales: tuple[DiscScale, ...]
    sizes: ScaleConfig
    in_frames: int = 4
    out_frames: int = 1
    channels: int = 3

    def __post_init__(self):
        if len(self.scales) != self.sizes.n_scales:
            raise ValueError("one DiscScale per scale size is required")
        for k, sc in enumerate(self.scales):
            if len(sc.kernels) != len(sc.maps):
                raise ValueError(f"D scale {k}: need one kernel per conv layer")
            self.conv_output_size(k)

    @property
    def n_scales(self) -> int:
        return self.sizes.n_scales

    def in_channels(self) -> int:
        return (self.in_frames + self.out_frames) * self.channels

    def conv_output_size(self, k: int) -> int:
        s = self.sizes.sizes[k]
        sc = self.scales[k]
        for ks in sc.kernels:
            s = s - ks + 1
            if s < 1:
                raise ValueError(f"D scale {k}: convolutions shrink a {self.sizes.sizes[k]}px input below 1px")
        if sc.pool:
            if s % 2:
                raise ValueError(f"D scale {k}: cannot 2x2-pool an odd {s}px map")
            s //= 2
        return s

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        for k, sc in enumerate(self.scales):
            chans = [self.in_channels(), *sc.maps]
            for i, ks in enumerate(sc.kernels):
                shapes.append((f"D.{k}.conv{i}.w", (chans[i + 1], chans[i], ks, ks)))
                shapes.append((f"D.{k}.conv{i}.b", (chans[i + 1],)))
            s = self.conv_output_size(k)
            dims = [chans[-1] * s * s, *sc.fc, 1]
            for i in range(len(dims) - 1):
                shapes.append((f"D.{k}.fc{i}.w", (dims[i + 1], dims[i])))
                shapes.append((f"D.{k}.fc{i}.b", (dims[i + 1],)))
        return shapes

    def to_dict(self) -> dict:
        return {
            "kind": "discriminator",
            "sizes": list(self.sizes.sizes),
            "scales": [
                {"maps": list(s.maps), "kernels": list(s.kernels), "fc": list(s.fc), "pool": s.pool}
                for s in self.scales
            ],
            "in_frames": self.in_frames,
            "out_frames": self.out_frames,
            "channels": self.channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorSpec":
        return cls(
            scales=tuple(
                DiscScale(tuple(s["maps"]), tuple(s["kernels"]), tuple(s["fc"]), bool(s["pool"]))
                for s in d["scales"]
            ),
            sizes=ScaleConfig(tuple(d["sizes"])),
            in_frames=d["in_frames"],
            out_frames=d["out_frames"],
            channels=d["channels"],
        )


def spec_text(spec: GeneratorSpec | DiscriminatorSpec | None) -> str:
    """Canonical one-line JSON used in checkpoints and spec dumps."""
    return json.dumps(None if spec is None else spec.to_dict(), sort_keys=True, separators=(",", ":"))


def spec_from_dict(d: dict | None):
    if d is None:
        return None
    if d["kind"] == "generator":
        return GeneratorSpec.from_dict(d)
    if d["kind"] == "discriminator":
        return DiscriminatorSpec.from_dict(d)
    raise ValueError(f"unknown spec kind {d['kind']!r}")


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _gen(maps, kernels):
    return tuple(GenScale(tuple(m), tuple(k)) for m, k in zip(maps, kernels))


def _disc(maps, kernels, fcs, pools):
    return tuple(
        DiscScale(tuple(m), tuple(k), tuple(f), p) for m, k, f, p in zip(maps, kernels, fcs, pools)
    )


PAPER_SCALES = ScaleConfig((4, 8, 16, 32))

# G_3 lists six conv layers but only five kernel sizes; a 3x3 is inserted mid-stack.
TABLE1_G_MAPS = ((128, 256, 128), (128, 256, 128), (128, 256, 512, 256, 128), (128, 256, 512, 256, 128))
TABLE1_G_KERNELS = ((3, 3, 3, 3), (5, 3, 3, 5), (5, 3, 3, 3, 3, 5), (7, 5, 5, 5, 5, 7))
TABLE1_D_MAPS = ((64,), (64, 128, 128), (128, 256, 256), (128, 256, 512, 128))
TABLE1_D_KERNELS = ((3,), (3, 3, 3), (5, 5, 5), (7, 7, 5, 5))
TABLE1_D_FC = ((512, 256), (1024, 512), (1024, 512), (1024, 512))

TABLE3_G_MAPS = ((16, 32, 64), (16, 32, 64), (32, 64, 128), (32, 64, 128, 128))
TABLE3_G_KERNELS = ((3, 3, 3, 3), (5, 3, 3, 3), (5, 5, 5, 5), (7, 5, 5, 5, 5))
TABLE3_D_MAPS = ((16,), (16, 32, 32), (32, 64, 64), (32, 64, 128, 128))
TABLE3_D_KERNELS = ((3,), (3, 3, 3), (5, 5, 5), (7, 7, 5, 5))
TABLE3_D_FC = ((128, 64), (256, 128), (256, 128), (256, 128))

# Desk-scale variants used by the synthetic experiments.
DESK_G_MAPS = ((16, 32, 16), (16, 32, 16), (32, 64, 32), (32, 64, 32))
DESK_G_KERNELS = ((3, 3, 3, 3), (5, 3, 3, 5), (5, 3, 3, 5), (5, 3, 3, 5))
DESK_D_MAPS = ((16,), (16, 32), (16, 32, 32), (16, 32, 32))
DESK_D_KERNELS = ((3,), (3, 3), (5, 5, 5), (7, 5, 5))
DESK_D_FC = ((32,), (64,), (64,), (64,))


def preset(
    name: str, channels: int = 3, upsample_mode: str = "bilinear"
) -> tuple[GeneratorSpec, DiscriminatorSpec]:
    """Named architecture pair.

    ``table1-4to1`` and ``table3-8to8`` reproduce the published tables at
    32x32 training size. ``desk-4to1`` is a narrow 4-scale model, and
    ``desk2-4to1`` keeps only the two finest desk scales (16 and 32 px).
    """
    if name == "table1-4to1":
        return (
            GeneratorSpec(_gen(TABLE1_G_MAPS, TABLE1_G_KERNELS), PAPER_SCALES, 4, 1, channels, upsample_mode),
            DiscriminatorSpec(
                _disc(TABLE1_D_MAPS, TABLE1_D_KERNELS, TABLE1_D_FC, (False, False, False, True)),
                PAPER_SCALES, 4, 1, channels,
            ),
        )
    if name == "table3-8to8":
        return (
            GeneratorSpec(_gen(TABLE3_G_MAPS, TABLE3_G_KERNELS), PAPER_SCALES, 8, 8, channels, upsample_mode),
            DiscriminatorSpec(
                _disc(TABLE3_D_MAPS, TABLE3_D_KERNELS, TABLE3_D_FC, (False, False, False, True)),
                PAPER_SCALES, 8, 8, channels,
            ),
        )
    if name == "desk-4to1":
        return (
            GeneratorSpec(_gen(DESK_G_MAPS, DESK_G_KERNELS), PAPER_SCALES, 4, 1, channels, upsample_mode),
            DiscriminatorSpec(
                _disc(DESK_D_MAPS, DESK_D_KERNELS, DESK_D_FC, (False, False, False, True)),
                PAPER_SCALES, 4, 1, channels,
            ),
        )
    if name == "desk2-4to1":
        sizes = ScaleConfig((16, 32))
        return (
            GeneratorSpec(_gen(DESK_G_MAPS[2:], DESK_G_KERNELS[2:]), sizes, 4, 1, channels, upsample_mode),
            DiscriminatorSpec(
                _disc(DESK_D_MAPS[2:], DESK_D_KERNELS[2:], DESK_D_FC[2:], (False, True)),
                sizes, 4, 1, channels,
            ),
        )
    raise ValueError(f"unknown model preset {name!r}; known: {', '.join(PRESETS)}")


PRESETS = ("table1-4to1", "table3-8to8", "desk-4to1", "desk2-4to1")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def init_weights(spec: GeneratorSpec | DiscriminatorSpec, seed: int, dtype=np.float32) -> ParamStore:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    for name, shape in spec.layer_shapes():
        if name.endswith(".b"):
            store.add(name, np.zeros(shape))
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            store.add(name, rng.uniform(-bound, bound, size=shape))
    return store


def check_params(spec, params: ParamStore) -> None:
    expected = spec.layer_shapes()
    if len(expected) != len(params):
        raise ValueError(f"spec expects {len(expected)} parameter tensors, store has {len(params)}")
    for name, shape in expected:
        if name not in params:
            raise ValueError(f"parameter {name!r} missing from store")
        if params[name].shape != shape:
            raise ValueError(f"parameter {name!r} has shape {params[name].shape}, spec expects {shape}")


# ---------------------------------------------------------------------------
# pyramid
# ---------------------------------------------------------------------------


@dataclass
class ScalePyramid:
    """Per-scale inputs ``xs[k]`` and (optional) targets ``ys[k]``, coarsest first."""

    xs: list[Tensor]
    ys: list[Tensor] | None = None

    @property
    def n_scales(self) -> int:
        return len(self.xs)


def _as_tensor(a) -> Tensor:
    return a if isinstance(a, Tensor) else Tensor(np.asarray(a))


def build_pyramid(X, Y=None, scales: ScaleConfig | int = 1) -> ScalePyramid:
    """Downscale X (and Y) by repeated 2x2 averaging.

    With a :class:`ScaleConfig` the input must be exactly the top size. With
    an integer scale count any size divisible by ``2**(n-1)`` is accepted,
    which is how trained generators run on larger frames.
    """
    X = _as_tensor(X)
    h, w = X.shape[2:]
    if isinstance(scales, ScaleConfig):
        n = scales.n_scales
        if (h, w) != (scales.top, scales.top):
            raise ValueError(f"clip is {h}x{w}, expected the top scale {scales.top}x{scales.top}")
    else:
        n = int(scales)
        if n < 1:
            raise ValueError("need at least one scale")
    f = 2 ** (n - 1)
    if h % f or w % f:
        raise ValueError(f"spatial size {h}x{w} not divisible by 2^{n - 1}")

    def chain(t: Tensor) -> list[Tensor]:
        out = [t]
        for _ in range(n - 1):
            out.append(ops.downsample_avg2x(out[-1]))
        return out[::-1]

    xs = chain(X)
    ys = None
    if Y is not None:
        Y = _as_tensor(Y)
        if Y.shape[2:] != (h, w) or Y.shape[0] != X.shape[0]:
            raise ValueError(f"target shape {Y.shape} incompatible with input {X.shape}")
        ys = chain(Y)
    return ScalePyramid(xs, ys)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _conv_stack(params: ParamStore, prefix: str, x: Tensor, n_layers: int) -> Tensor:
    for i in range(n_layers):
        w = params[f"{prefix}.conv{i}.w"]
        x = ops.conv2d(x, w, params[f"{prefix}.conv{i}.b"], padding=(w.shape[-1] - 1) // 2)
        x = ops.relu(x) if i < n_layers - 1 else ops.tanh_act(x)
    return x


def generator_forward(spec: GeneratorSpec, params: ParamStore, pyramid: ScalePyramid) -> list[Tensor]:
    """Coarse-to-fine predictions, one per scale.

    Scale 0 sees only its input frames. Every finer scale sees its input
    frames stacked with the upsampled coarser prediction and adds a tanh
    residual to that prediction; the sum is clamped to [-1, 1].
    """
    check_params(spec, params)
    if pyramid.n_scales != spec.n_scales:
        raise ValueError(f"pyramid has {pyramid.n_scales} scales, generator has {spec.n_scales}")
    preds: list[Tensor] = []
    for k, sc in enumerate(spec.scales):
        xk = pyramid.xs[k]
        if xk.shape[1] != spec.in_frames * spec.channels:
            raise ValueError(
                f"scale {k} input has {xk.shape[1]} channels, expected {spec.in_frames * spec.channels}"
            )
        if k == 0:
            yk = ops.clamp(_conv_stack(params, f"G.{k}", xk, len(sc.kernels)))
        else:
            up = ops.upsample(preds[-1], xk.shape[2], xk.shape[3], spec.upsample_mode)
            res = _conv_stack(params, f"G.{k}", ops.concat_channels(xk, up), len(sc.kernels))
            yk = ops.clamp(ops.add(up, res))
        preds.append(yk)
    return preds


def discriminator_forward(
    spec: DiscriminatorSpec, params: ParamStore, x_k: Tensor, candidate_k: Tensor, k: int
) -> Tensor:
    """Probability, shape (batch, 1), that ``candidate_k`` is a real continuation of ``x_k``."""
    size = spec.sizes.sizes[k]
    for t, what in ((x_k, "input"), (candidate_k, "candidate")):
        if t.shape[2:] != (size, size):
            raise ValueError(f"D scale {k} expects {size}x{size} {what}, got {t.shape[2:]}")
    sc = spec.scales[k]
    h = ops.concat_channels(x_k, candidate_k)
    if h.shape[1] != spec.in_channels():
        raise ValueError(f"D scale {k} expects {spec.in_channels()} channels, got {h.shape[1]}")
    for i in range(len(sc.kernels)):
        h = ops.relu(ops.conv2d(h, params[f"D.{k}.conv{i}.w"], params[f"D.{k}.conv{i}.b"], 0))
    if sc.pool:
        h = ops.maxpool2x2(h)
    h = ops.flatten(h)
    n_fc = len(sc.fc) + 1
    for i in range(n_fc):
        h = ops.linear(h, params[f"D.{k}.fc{i}.w"], params[f"D.{k}.fc{i}.b"])
        h = ops.relu(h) if i < n_fc - 1 else ops.sigmoid(h)
    return h


@dataclass
class Generator:
    spec: GeneratorSpec
    params: ParamStore

    def __call__(self, pyramid: ScalePyramid) -> list[Tensor]:
        return generator_forward(self.spec, self.params, pyramid)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Top-scale prediction for a batch of input clips (no tape)."""
        pyr = build_pyramid(Tensor(np.asarray(X, dtype=self.params.dtype)), None, self.spec.n_scales)
        return generator_forward(self.spec, self.params.frozen(), pyr)[-1].data


@dataclass
class Discriminator:
    spec: DiscriminatorSpec
    params: ParamStore

    def __call__(self, x_k: Tensor, candidate_k: Tensor, k: int, frozen: bool = False) -> Tensor:
        params = self.params.frozen() if frozen else self.params
        return discriminator_forward(self.spec, params, x_k, candidate_k, k)


def recursive_predict(spec: GeneratorSpec, params: ParamStore, seed_frames: np.ndarray, steps: int) -> np.ndarray:
    """Roll the generator forward ``steps`` times, feeding predictions back in.

    ``seed_frames`` is (batch, m*c, H, W); the result is (batch, steps*n*c, H, W).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    gen = Generator(spec, params)
    window = np.asarray(seed_frames, dtype=params.dtype)
    c_in = spec.in_frames * spec.channels
    if window.shape[1] != c_in:
        raise ValueError(f"seed has {window.shape[1]} channels, expected {c_in}")
    outs = []
    for _ in range(steps):
        pred = gen.predict(window)
        outs.append(pred)
        window = np.concatenate([window, pred], axis=1)[:, -c_in:]
    return np.concatenate(outs, axis=1)


def dump_spec(gen: GeneratorSpec, disc: DiscriminatorSpec | None = None) -> str:
    """Human-readable per-scale listing of feature maps and kernels."""
    lines = [f"generator in={gen.in_frames} out={gen.out_frames} channels={gen.channels} sizes={list(gen.sizes.sizes)}"]
    for k, sc in enumerate(gen.scales):
        lines.append(f"  G{k + 1}: maps={list(sc.maps)} kernels={list(sc.kernels)}")
    if disc is not None:
        lines.append(f"discriminator sizes={list(disc.sizes.sizes)}")
        for k, sc in enumerate(disc.scales):
            lines.append(
                f"  D{k + 1}: maps={list(sc.maps)} kernels={list(sc.kernels)} fc={list(sc.fc)} pool={sc.pool}"
            )
    return "\n".join(lines)


__all__ = [
    "DiscScale",
    "Discriminator",
    "DiscriminatorSpec",
    "GenScale",
    "Generator",
    "GeneratorSpec",
    "PRESETS",
    "ScaleConfig",
    "ScalePyramid",
    "build_pyramid",
    "check_params",
    "discriminator_forward",
    "dump_spec",
    "generator_forward",
    "init_weights",
    "preset",
    "recursive_predict",
    "spec_from_dict",
    "spec_text",
]
