"""``framepred`` command line: synth | train | predict | eval.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pnm
from .config import (
    ConfigError,
    RunConfig,
    build_specs,
    build_train_config,
    load_config,
    write_resolved,
)
from .data import (
    BimodalParams,
    BouncingParams,
    ClipDataset,
    DataError,
    DatasetSpec,
    denormalize,
    load_clip_tree,
    normalize,
    read_labels,
    stack_frames,
    synth_bimodal_dot,
    synth_bouncing_shapes,
    to_uint8,
    write_clip_tree,
    write_frame_sequence,
)
from .evaluation import evaluate_predictions, export_masked, rollout
from .model import recursive_predict
from .training import CheckpointError, DivergenceError, load_checkpoint, save_checkpoint, train_loop

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
SPLITS = {"train": 0, "eval": 1}
GRID_SEP = 2

log = logging.getLogger("framepred")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def _clip_seed(seed: int, split: str, i: int) -> int:
    ss = np.random.SeedSequence([seed, SPLITS[split], i])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def synth_split(cfg: RunConfig, split: str) -> tuple[list[np.ndarray], list[int] | None]:
    """Synthetic clips for one split; train and eval use disjoint seed streams."""
    d, seed = cfg.data, cfg.run.seed
    count = d.clips if split == "train" else d.eval_clips
    if d.source == "bouncing":
        params = BouncingParams(
            height=d.height, width=d.width, n_shapes=d.n_shapes,
            min_size=d.min_size, max_size=d.max_size,
            min_speed=d.min_speed, max_speed=d.max_speed,
            frames=d.frames, channels=cfg.model.channels,
            kinds=tuple(k.strip() for k in d.kinds.split(",") if k.strip()),
            background=d.background,
        )
        try:
            return [synth_bouncing_shapes(params, _clip_seed(seed, split, i)) for i in range(count)], None
        except ValueError as exc:
            raise ConfigError(f"[data] {exc}") from exc
    if d.source == "bimodal":
        if cfg.model.channels != 1:
            raise ConfigError("the bimodal dataset is grayscale; set [model] channels = 1")
        params = BimodalParams(
            canvas=d.canvas, dot=d.dot, m=cfg.model.in_frames, n=cfg.model.out_frames,
            speed=d.speed, background=d.dot_background, foreground=d.dot_foreground,
        )
        try:
            return synth_bimodal_dot(params, count, _clip_seed(seed, split, 0))
        except ValueError as exc:
            raise ConfigError(f"[data] {exc}") from exc
    raise ConfigError(f"[data] source {d.source!r} cannot be synthesized (use bouncing or bimodal)")


def load_split(cfg: RunConfig, split: str) -> tuple[list[np.ndarray], list[int] | None]:
    """Clips from disk when a path is configured, otherwise synthesized in memory."""
    d = cfg.data
    path = d.path if split == "train" else d.eval_path
    if path:
        return load_clip_tree(path), read_labels(path)
    if d.source == "dir":
        raise ConfigError(f"[data] source = dir needs {'path' if split == 'train' else 'eval_path'}")
    return synth_split(cfg, split)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out)
    for split in SPLITS:
        clips, labels = synth_split(cfg, split)
        write_clip_tree(out / split, clips, labels)
    write_resolved(cfg, out)
    return out


def cmd_train(cfg: RunConfig) -> Path:
    gen_spec, disc_spec = build_specs(cfg.model)
    config = build_train_config(cfg)
    clips, labels = load_split(cfg, "train")
    dspec = DatasetSpec(
        patch_size=cfg.data.patch_size, tau=cfg.data.tau, channels=cfg.model.channels,
        seed=cfg.run.seed, max_retries=cfg.data.max_retries,
    )
    try:
        dspec.check_scales(gen_spec.n_scales)
    except ValueError as exc:
        raise ConfigError(f"[data] {exc}") from exc
    if dspec.patch_size != gen_spec.sizes.top:
        raise ConfigError(f"[data] patch_size {dspec.patch_size} must equal the model's top scale {gen_spec.sizes.top}")
    dataset = ClipDataset(clips, dspec, gen_spec.in_frames, gen_spec.out_frames, labels)

    out = Path(cfg.run.out)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    log_path = out / "train_log.tsv"
    keys = ("step", "rho_g", "d_loss", "adv", "lp", "gdl", "total")
    lines = ["\t".join(keys)]
    every = cfg.train.checkpoint_every

    def on_log(rec: dict, ckpt) -> None:
        lines.append("\t".join(repr(rec[k]) if k in rec else "" for k in keys))
        if every and ckpt.step % every == 0:
            save_checkpoint(ckpt, ckpt_dir / f"step{ckpt.step:07d}.fpck")

    try:
        if config.steps == 0:
            ckpt, _ = train_loop(config, dataset, gen_spec, disc_spec)
        else:
            if every and config.log_every and every % config.log_every:
                raise ConfigError("[train] checkpoint_every must be a multiple of log_every")
            ckpt, _ = train_loop(config, dataset, gen_spec, disc_spec, callback=on_log)
    finally:
        log_path.write_text("\n".join(lines) + "\n")
    save_checkpoint(ckpt, out / "checkpoint.fpck")
    return out / "checkpoint.fpck"


def _gray_to_rgb(frame: np.ndarray) -> np.ndarray:
    return np.repeat(frame, 3, axis=0) if frame.shape[0] == 1 else frame


def image_grid(inputs: np.ndarray, truth: np.ndarray, preds: np.ndarray, sep: int = GRID_SEP) -> np.ndarray:
    """Frames side by side (inputs | truth | prediction) as uint8 RGB.

    All arguments are (T, C, H, W) in [0, 255]; frames are separated by
    ``sep`` white columns, so the width is frames*W + (frames-1)*sep.
    """
    frames = [_gray_to_rgb(to_uint8(f)) for group in (inputs, truth, preds) for f in group]
    h = frames[0].shape[1]
    bar = np.full((3, h, sep), 255, dtype=np.uint8)
    parts = []
    for i, f in enumerate(frames):
        if i:
            parts.append(bar)
        parts.append(f)
    return np.concatenate(parts, axis=2)


def cmd_predict(cfg: RunConfig, checkpoint: str | Path) -> Path:
    ckpt = _load(checkpoint)
    spec = ckpt.gen_spec
    m, n, c = spec.in_frames, spec.out_frames, spec.channels
    steps = cfg.predict.steps
    if steps < 1:
        raise ConfigError("[predict] steps must be >= 1")
    if cfg.predict.input:
        from .data import load_frame_sequence

        clip = load_frame_sequence(cfg.predict.input)
    else:
        clips, _ = load_split(cfg, "eval")
        if not 0 <= cfg.predict.clip < len(clips):
            raise DataError(f"[predict] clip {cfg.predict.clip} out of range (have {len(clips)})")
        clip = clips[cfg.predict.clip]
    if clip.shape[0] < m:
        raise DataError(f"clip has {clip.shape[0]} frames, the model needs {m} inputs")
    if clip.shape[1] != c:
        raise DataError(f"clip has {clip.shape[1]} channels, the model expects {c}")
    h, w = clip.shape[2:]
    div = 2 ** (spec.n_scales - 1)
    if h % div or w % div:
        raise DataError(f"frame size {h}x{w} is not divisible by {div}")

    x = clip[:m]
    out_frames = recursive_predict(spec, ckpt.g_params, stack_frames(normalize(x))[None], steps)[0]
    preds = denormalize(out_frames).reshape(steps * n, c, h, w)
    truth = clip[m : m + steps * n]

    out = Path(cfg.run.out) / "predict"
    write_frame_sequence(out / "frames", preds)
    pnm.write(out / "grid.ppm", image_grid(x, truth, preds))
    write_resolved(cfg, out)
    return out


def cmd_eval(cfg: RunConfig, checkpoint: str | Path) -> Path:
    ckpt = _load(checkpoint)
    clips, _ = load_split(cfg, "eval")
    if not clips:
        raise DataError("evaluation set is empty")
    e = cfg.eval
    if e.steps < 1:
        raise ConfigError("[eval] steps must be >= 1")
    inputs, truths, preds = rollout(ckpt, clips, e.steps)
    report = evaluate_predictions(inputs, truths, preds, ckpt.gen_spec.channels, e.threshold)
    out = Path(cfg.run.out) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text("\n".join(report.records()) + "\n")
    (out / "table.txt").write_text(report.table() + "\n")
    export_masked(out / "masked", inputs, truths, preds, e.threshold, e.export)
    write_resolved(cfg, out)
    print(report.table())
    return out


def _load(path: str | Path):
    try:
        return load_checkpoint(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except CheckpointError as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out", help="overrides [run] out")
    common.add_argument("--preset", help="overrides [model] preset")
    common.add_argument(
        "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override any config value; applied after the file, before the flags above",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="framepred", description="Multi-scale next-frame prediction.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write synthetic train/eval clips")
    sub.add_parser("train", parents=[common], help="train a generator (and discriminator)")
    for name, text in (("predict", "roll a checkpoint forward on one clip"), ("eval", "score a checkpoint")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--checkpoint", required=True, type=Path)
    return p


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, run=replace(cfg.run, out=args.out))
    if args.preset is not None:
        cfg = replace(cfg, model=replace(cfg.model, preset=args.preset))
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
        if args.command == "synth":
            out = cmd_synth(cfg)
        elif args.command == "train":
            out = cmd_train(cfg)
        elif args.command == "predict":
            out = cmd_predict(cfg, args.checkpoint)
        else:
            out = cmd_eval(cfg, args.checkpoint)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, pnm.PNMError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(out)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
