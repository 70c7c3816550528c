"""INI run configuration: typed sections, strict keys, resolved-config output.

Precedence, lowest first: built-in defaults, the config file, command-line
flags. Every run writes the fully resolved file next to its outputs; feeding
that file back in reproduces the run.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import get_type_hints

from .losses import LOSS_PRESETS, LossWeights
from .model import (
    PRESETS,
    DiscriminatorSpec,
    DiscScale,
    GeneratorSpec,
    GenScale,
    ScaleConfig,
    preset,
)
from .training import LRSchedule, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "out"


@dataclass(frozen=True)
class ModelSection:
    """A named preset, or ``custom`` with the explicit lists below.

    Lists use ``|`` between scales and spaces or commas inside a scale, for
    example ``g_maps = 16 32 16 | 16 32 16``.
    """

    preset: str = "desk-4to1"
    channels: int = 1
    upsample: str = "bilinear"
    in_frames: int = 4
    out_frames: int = 1
    sizes: str = ""
    g_maps: str = ""
    g_kernels: str = ""
    d_maps: str = ""
    d_kernels: str = ""
    d_fc: str = ""
    d_pool: str = ""


@dataclass(frozen=True)
class DataSection:
    source: str = "bouncing"  # bouncing | bimodal | dir
    path: str = ""
    eval_path: str = ""
    clips: int = 64
    eval_clips: int = 16
    frames: int = 16
    height: int = 32
    width: int = 32
    n_shapes: int = 2
    min_size: int = 4
    max_size: int = 8
    min_speed: int = 1
    max_speed: int = 3
    kinds: str = "rect,disc"
    background: int = 0
    canvas: int = 16
    dot: int = 2
    speed: int = 2
    dot_background: int = 64
    dot_foreground: int = 192
    patch_size: int = 32
    tau: float = 0.01
    max_retries: int = 200


@dataclass(frozen=True)
class TrainSection:
    loss: str = "l2"
    lambda_adv: str = ""
    lambda_lp: str = ""
    lambda_gdl: str = ""
    p: str = ""
    alpha: str = ""
    rho_g: float = 0.04
    rho_g_final: float = 0.005
    rho_g_decays: int = 3
    rho_d: float = 0.02
    batch_size: int = 4
    steps: int = 1000
    log_every: int = 50
    checkpoint_every: int = 0


@dataclass(frozen=True)
class EvalSection:
    threshold: float = 0.2
    steps: int = 1
    export: int = 8


@dataclass(frozen=True)
class PredictSection:
    steps: int = 2
    clip: int = 0
    input: str = ""


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    predict: PredictSection = field(default_factory=PredictSection)


SECTIONS = tuple(f.name for f in fields(RunConfig))


def _section_type(name: str) -> type:
    return get_type_hints(RunConfig)[name]


def _coerce(section: str, key: str, raw: str, typ) -> object:
    raw = raw.strip()
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected {typ.__name__}, got {raw!r}") from None


def _apply(cfg: RunConfig, section: str, values: dict[str, str]) -> RunConfig:
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]; known: {', '.join(SECTIONS)}")
    cls = _section_type(section)
    hints = get_type_hints(cls)
    current = getattr(cfg, section)
    updates = {}
    for key, raw in values.items():
        if key not in hints:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        updates[key] = _coerce(section, key, raw, hints[key])
    return replace(cfg, **{section: replace(current, **updates)})


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keep key case so typos are not silently folded
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = base or RunConfig()
    for section in parser.sections():
        cfg = _apply(cfg, section, dict(parser.items(section)))
    return cfg


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    """Read ``path`` (if given), then apply ``section.key=value`` overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse_config(text, cfg)
    for item in overrides:
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        cfg = _apply(cfg, section.strip(), {key.strip(): value})
    return cfg


def config_text(cfg: RunConfig) -> str:
    """Every field of every section, in declaration order."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    for name in SECTIONS:
        sec = getattr(cfg, name)
        parser[name] = {f.name: str(getattr(sec, f.name)) for f in fields(sec)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def write_resolved(cfg: RunConfig, directory: str | Path) -> Path:
    path = Path(directory) / "resolved.ini"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_text(cfg))
    return path


# ---------------------------------------------------------------------------
# building domain objects
# ---------------------------------------------------------------------------


def _int_lists(section: str, key: str, raw: str) -> list[tuple[int, ...]]:
    try:
        return [tuple(int(v) for v in part.replace(",", " ").split()) for part in raw.split("|")]
    except ValueError:
        raise ConfigError(f"[{section}] {key}: bad integer list {raw!r}") from None


def _bools(raw: str) -> list[bool]:
    table = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}
    out = []
    for v in raw.replace(",", " ").replace("|", " ").split():
        if v.lower() not in table:
            raise ConfigError(f"[model] d_pool: expected booleans, got {v!r}")
        out.append(table[v.lower()])
    return out


_CUSTOM_KEYS = ("sizes", "g_maps", "g_kernels", "d_maps", "d_kernels", "d_fc", "d_pool")


def build_specs(m: ModelSection) -> tuple[GeneratorSpec, DiscriminatorSpec | None]:
    if m.channels not in (1, 3):
        raise ConfigError("[model] channels must be 1 or 3")
    try:
        if m.preset != "custom":
            if m.preset not in PRESETS:
                raise ConfigError(f"unknown model preset {m.preset!r}; known: {', '.join(PRESETS)}, custom")
            given = [k for k in _CUSTOM_KEYS if getattr(m, k)]
            if given:
                raise ConfigError(f"[model] {', '.join(given)} only apply to preset = custom")
            return preset(m.preset, m.channels, m.upsample)
        missing = [k for k in ("sizes", "g_maps", "g_kernels") if not getattr(m, k)]
        if missing:
            raise ConfigError(f"[model] custom preset needs {', '.join(missing)}")
        (sizes,) = _int_lists("model", "sizes", m.sizes)
        scales = ScaleConfig(sizes)
        g_maps = _int_lists("model", "g_maps", m.g_maps)
        g_kernels = _int_lists("model", "g_kernels", m.g_kernels)
        if len(g_maps) != len(g_kernels):
            raise ConfigError("[model] g_maps and g_kernels need one entry per scale")
        gen = GeneratorSpec(
            tuple(GenScale(a, b) for a, b in zip(g_maps, g_kernels)),
            scales, m.in_frames, m.out_frames, m.channels, m.upsample,
        )
        if not m.d_maps:
            return gen, None
        d_maps = _int_lists("model", "d_maps", m.d_maps)
        d_kernels = _int_lists("model", "d_kernels", m.d_kernels)
        d_fc = _int_lists("model", "d_fc", m.d_fc)
        pools = _bools(m.d_pool) if m.d_pool else [False] * len(d_maps)
        if not (len(d_maps) == len(d_kernels) == len(d_fc) == len(pools)):
            raise ConfigError("[model] d_maps, d_kernels, d_fc and d_pool need one entry per scale")
        disc = DiscriminatorSpec(
            tuple(DiscScale(a, b, c, p) for a, b, c, p in zip(d_maps, d_kernels, d_fc, pools)),
            scales, m.in_frames, m.out_frames, m.channels,
        )
        return gen, disc
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from exc


def build_weights(t: TrainSection) -> LossWeights:
    if t.loss not in LOSS_PRESETS:
        raise ConfigError(f"unknown loss preset {t.loss!r}; known: {', '.join(LOSS_PRESETS)}")
    w = LOSS_PRESETS[t.loss]
    upd = {}
    for key, typ in (("lambda_adv", float), ("lambda_lp", float), ("lambda_gdl", float), ("p", int), ("alpha", int)):
        raw = getattr(t, key)
        if raw != "":
            upd[key] = _coerce("train", key, raw, typ)
    try:
        return replace(w, **upd)
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from exc


def build_train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    weights = build_weights(t)
    try:
        return TrainConfig(
            weights=weights,
            rho_g=LRSchedule.for_steps(t.rho_g, t.rho_g_final, t.steps, t.rho_g_decays),
            rho_d=t.rho_d,
            batch_size=t.batch_size,
            steps=t.steps,
            seed=cfg.run.seed,
            adversarial=weights.lambda_adv > 0,
            log_every=t.log_every,
        )
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from exc
