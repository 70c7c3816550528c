"""Alternating adversarial training, plain training, and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .compute.tensor import ParamStore, sgd_step
from .data import ClipDataset, DataError
from .losses import LossWeights, adv_d_loss, combined_loss_terms
from .model import (
    Discriminator,
    DiscriminatorSpec,
    Generator,
    GeneratorSpec,
    build_pyramid,
    check_params,
    generator_forward,
    init_weights,
    spec_from_dict,
)

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """A training loss became NaN or infinite."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LRSchedule:
    """Piecewise-constant geometric decay from ``initial`` to ``final``.

    The rate is multiplied by ``(final/initial)**(1/decays)`` every
    ``interval`` steps, and the last stage is exactly ``final``.
    """

    initial: float = 0.04
    final: float = 0.005
    decays: int = 3
    interval: int = 1

    def __post_init__(self):
        if self.initial <= 0 or self.final <= 0:
            raise ValueError("learning rates must be positive")
        if self.final > self.initial:
            raise ValueError("final learning rate must not exceed the initial one")
        if self.decays < 0 or self.interval < 1:
            raise ValueError("need decays >= 0 and interval >= 1")

    @classmethod
    def for_steps(cls, initial: float, final: float, total_steps: int, decays: int = 3) -> "LRSchedule":
        """Schedule that reaches ``final`` at 75% of ``total_steps``."""
        if decays == 0:
            return cls(initial, final, 0, 1)
        interval = max(1, int(round(0.75 * total_steps / decays)))
        return cls(initial, final, decays, interval)

    def rate(self, step: int) -> float:
        if self.decays == 0:
            return self.initial
        stage = min(step // self.interval, self.decays)
        if stage == self.decays:
            return self.final
        return self.initial * (self.final / self.initial) ** (stage / self.decays)


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    rho_g: LRSchedule = field(default_factory=LRSchedule)
    rho_d: float = 0.02
    batch_size: int = 4
    steps: int = 1000
    seed: int = 0
    adversarial: bool = False
    log_every: int = 50

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.rho_d < 0:
            raise ValueError("rho_d must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.weights.lambda_adv > 0 and not self.adversarial:
            raise ValueError("lambda_adv > 0 requires adversarial training")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        d["rho_g"] = LRSchedule(**d["rho_g"])
        return cls(**d)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value})")
    return value


def train_step_d(config: TrainConfig, G: Generator, D: Discriminator, X, Y) -> float:
    """One SGD step of the discriminator against the frozen generator."""
    if not config.adversarial:
        raise ValueError("discriminator steps need an adversarial config")
    dt = D.params.dtype
    pyr = build_pyramid(np.asarray(X, dt), np.asarray(Y, dt), G.spec.sizes)
    fake = generator_forward(G.spec, G.params.frozen(), pyr)
    loss = adv_d_loss(D, pyr, fake)
    value = _finite(float(loss.data), "discriminator loss")
    loss.backward()
    sgd_step(D.params, config.rho_d)
    return value


def train_step_g(
    config: TrainConfig, G: Generator, D: Discriminator | None, X, Y, lr: float | None = None
) -> dict[str, float]:
    """One SGD step of the generator on the combined loss; D is not updated."""
    dt = G.params.dtype
    pyr = build_pyramid(np.asarray(X, dt), np.asarray(Y, dt), G.spec.sizes)
    preds = G(pyr)
    terms = combined_loss_terms(config.weights, D, pyr, preds)
    values = {k: _finite(float(v.data), f"generator {k} loss") for k, v in terms.items()}
    terms["total"].backward()
    sgd_step(G.params, config.rho_g.initial if lr is None else lr)
    if D is not None:
        D.params.zero_grad()
    return values


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    gen_spec: GeneratorSpec
    g_params: ParamStore
    step: int = 0
    disc_spec: DiscriminatorSpec | None = None
    d_params: ParamStore | None = None
    rng_state: dict = field(default_factory=dict)
    config: dict | None = None

    @property
    def generator(self) -> Generator:
        return Generator(self.gen_spec, self.g_params)

    @property
    def discriminator(self) -> Discriminator | None:
        if self.disc_spec is None or self.d_params is None:
            return None
        return Discriminator(self.disc_spec, self.d_params)


def _streams(seed: int) -> dict[str, np.random.SeedSequence]:
    g_init, d_init, g_batch, d_batch = np.random.SeedSequence(seed).spawn(4)
    return {"g_init": g_init, "d_init": d_init, "g_batch": g_batch, "d_batch": d_batch}


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def init_checkpoint(
    config: TrainConfig, gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec | None = None
) -> Checkpoint:
    streams = _streams(config.seed)
    g_params = init_weights(gen_spec, _int_seed(streams["g_init"]))
    d_params = None
    if config.adversarial:
        if disc_spec is None:
            raise ValueError("adversarial training needs a discriminator spec")
        d_params = init_weights(disc_spec, _int_seed(streams["d_init"]))
    rng_state = {
        "g_batch": np.random.default_rng(streams["g_batch"]).bit_generator.state,
        "d_batch": np.random.default_rng(streams["d_batch"]).bit_generator.state,
    }
    return Checkpoint(
        gen_spec, g_params, 0, disc_spec if config.adversarial else None, d_params, rng_state, config.to_dict()
    )


def _rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def train_loop(
    config: TrainConfig,
    dataset: ClipDataset,
    gen_spec: GeneratorSpec,
    disc_spec: DiscriminatorSpec | None = None,
    resume: Checkpoint | None = None,
    callback: Callable[[dict, Checkpoint], None] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Alternate D and G steps (G only when not adversarial) for ``config.steps``.

    The two steps draw their minibatches from independent random streams, so
    the generator sees the same batches whether or not D is being trained.
    ``callback(record, checkpoint)`` runs at every log step with the
    checkpoint brought up to date. Returns the final checkpoint and the log
    records.
    """
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    ckpt = resume if resume is not None else init_checkpoint(config, gen_spec, disc_spec)
    G = ckpt.generator
    D = ckpt.discriminator if config.adversarial else None
    if config.adversarial and D is None:
        raise ValueError("adversarial training needs discriminator parameters")
    rng_g = _rng_from_state(ckpt.rng_state["g_batch"])
    rng_d = _rng_from_state(ckpt.rng_state["d_batch"])

    records: list[dict] = []
    start = ckpt.step
    for step in range(start, config.steps):
        lr = config.rho_g.rate(step)
        rec: dict = {"step": step + 1, "rho_g": lr}
        if D is not None:
            Xd, Yd = dataset.batch(rng_d, config.batch_size)
            rec["d_loss"] = train_step_d(config, G, D, Xd, Yd)
        Xg, Yg = dataset.batch(rng_g, config.batch_size)
        rec.update(train_step_g(config, G, D, Xg, Yg, lr))
        ckpt.step = step + 1
        if config.log_every and (ckpt.step % config.log_every == 0 or ckpt.step == config.steps):
            records.append(rec)
            log.info("step %d %s", ckpt.step, {k: round(v, 5) for k, v in rec.items() if k != "step"})
            if callback is not None:
                ckpt.rng_state = {"g_batch": rng_g.bit_generator.state, "d_batch": rng_d.bit_generator.state}
                ckpt.config = config.to_dict()
                callback(rec, ckpt)
    ckpt.rng_state = {"g_batch": rng_g.bit_generator.state, "d_batch": rng_d.bit_generator.state}
    ckpt.config = config.to_dict()
    return ckpt, records


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

MAGIC = b"FPCK"
VERSION = 1


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _pack_params(prefix_params: list[tuple[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", len(prefix_params))]
    for name, arr in prefix_params:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "generator": ckpt.gen_spec.to_dict(),
        "discriminator": None if ckpt.disc_spec is None else ckpt.disc_spec.to_dict(),
        "config": ckpt.config,
    }
    params = [(n, t.data) for n, t in ckpt.g_params.items()]
    if ckpt.d_params is not None:
        params += [(n, t.data) for n, t in ckpt.d_params.items()]
    return b"".join(
        [
            MAGIC,
            struct.pack("<H", VERSION),
            _pack_str(json.dumps(header, sort_keys=True, separators=(",", ":"))),
            _pack_params(params),
            struct.pack("<Q", ckpt.step),
            _pack_str(json.dumps(ckpt.rng_state, sort_keys=True, separators=(",", ":"))),
        ]
    )


def checkpoint_digest(ckpt: Checkpoint) -> str:
    return hashlib.sha256(checkpoint_bytes(ckpt)).hexdigest()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint file is truncated")
        b = self.buf[self.pos : self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def parse_checkpoint(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    try:
        header = json.loads(r.string())
        gen_spec = spec_from_dict(header["generator"])
        disc_spec = spec_from_dict(header["discriminator"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt architecture header: {exc}") from exc
    (count,) = r.unpack("<I")
    g_params, d_params = ParamStore(np.float32), ParamStore(np.float32)
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        (g_params if name.startswith("G.") else d_params).add(name, arr)
    (step,) = r.unpack("<Q")
    try:
        rng_state = json.loads(r.string())
    except ValueError as exc:
        raise CheckpointError(f"corrupt RNG state: {exc}") from exc
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    ckpt = Checkpoint(
        gen_spec,
        g_params,
        step,
        disc_spec,
        d_params if len(d_params) else None,
        rng_state,
        header.get("config"),
    )
    try:
        check_params(gen_spec, g_params)
        if ckpt.d_params is not None:
            check_params(disc_spec, d_params)
    except ValueError as exc:
        raise CheckpointError(f"parameters do not match architecture: {exc}") from exc
    return ckpt


def load_checkpoint(path: str | Path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())
