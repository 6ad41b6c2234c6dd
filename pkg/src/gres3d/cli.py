"""Command-line entry point: ``gres3d <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetFormatError, GenConfig, generate_dataset, read_dataset, write_dataset
from .diffcore import ComputationError
from .evaluation import DataError, evaluate_model
from .geometry import coverage_repetition_rates, fss, superpoint_centroids
from .losses import LossWeights
from .model import ModelConfig
from .trainer import CheckpointError, TrainConfig, TrainingError, fit, gradcheck, load_checkpoint

log = logging.getLogger("gres3d")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SECTIONS = ("gen", "model", "train", "weights")


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Generation, model, training and loss-weight settings resolved together."""

    gen: GenConfig = field(default_factory=GenConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, d: dict, where: str = "config") -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: top level must be a JSON object")
        extra = set(d) - set(SECTIONS)
        if extra:
            raise ConfigError(f"{where}: unknown sections {sorted(extra)}")
        try:
            train = dict(d.get("train", {}))
            if "weights" in d:
                train["weights"] = LossWeights(**d["weights"])
            return cls(
                gen=GenConfig.from_dict(d.get("gen", {})),
                model=ModelConfig.from_dict(d.get("model", {})),
                train=TrainConfig.from_dict(train),
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(f"{where}: {err}") from err

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{p}: config file not found")
        try:
            return cls.from_dict(json.loads(p.read_text()), str(p))
        except json.JSONDecodeError as err:
            raise ConfigError(f"{p}: malformed JSON ({err.msg} at line {err.lineno})") from err

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        weights = train.pop("weights")
        return {"gen": self.gen.to_dict(), "model": self.model.to_dict(), "train": train, "weights": weights}


def _override(obj, **values):
    # flags win over the config file; None means "not given"
    d = obj.to_dict()
    d.update({k: v for k, v in values.items() if v is not None})
    return type(obj).from_dict(d)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, cfg: RunConfig) -> int:
    gen = _override(cfg.gen, seed=args.seed, num_scenes=args.scenes, num_samples=args.samples,
                    val_fraction=args.val_fraction)
    manifest = generate_dataset(gen)
    write_dataset(manifest, args.out)
    n_val = len(manifest.split("val"))
    print(f"wrote {len(manifest.scenes)} scenes, {len(manifest.samples) - n_val} train / {n_val} val samples to {args.out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    manifest = read_dataset(args.data)
    mcfg = cfg.model
    if len(manifest.vocabulary) > mcfg.vocab_size:
        raise DataError(f"{args.data}: vocabulary has {len(manifest.vocabulary)} tokens, model holds {mcfg.vocab_size}")
    tcfg = _override(cfg.train, seed=args.seed, total_steps=args.steps, base_lr=args.lr,
                     batch_size=args.batch_size)
    pairs = manifest.pairs("train")
    if not pairs:
        raise DataError(f"{args.data}: train split is empty")
    ckpt = fit(pairs, mcfg, tcfg, out_path=args.out)
    print(f"trained {ckpt.step} steps on {len(pairs)} samples, checkpoint at {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    manifest = read_dataset(args.data)
    ckpt = load_checkpoint(args.ckpt)
    pairs = manifest.pairs(None if args.split == "all" else args.split)
    if not pairs:
        raise DataError(f"{args.data}: split '{args.split}' is empty")
    report = evaluate_model(pairs, ckpt.params, ckpt.model_config)
    text = report.to_json()
    if args.report:
        Path(args.report).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    err = gradcheck(args.seed, weights=cfg.train.weights)
    print(f"max relative error {err:.3e}")
    return EXIT_OK if err < args.tol else EXIT_NUMERIC


def coverage_table(scenes, nseed_list) -> list[dict]:
    """Mean CR/RR over scenes per seed count; counts above a scene's superpoint total are clamped."""
    rows = []
    for n in nseed_list:
        crs, rrs = [], []
        for scene in scenes:
            seeds = fss(superpoint_centroids(scene), min(n, scene.num_superpoints))
            cr, rr = coverage_repetition_rates(seeds, scene)
            crs.append(cr)
            rrs.append(rr)
        rows.append({"n_seed": n, "cr": float(np.mean(crs)), "rr": float(np.mean(rrs)), "scenes": len(scenes)})
    return rows


def cmd_stats(args, cfg: RunConfig) -> int:
    try:
        nseeds = [int(x) for x in args.nseed_list.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--nseed-list must be comma-separated integers, got {args.nseed_list!r}") from None
    if not nseeds or min(nseeds) < 1:
        raise UsageError("--nseed-list needs positive integers")
    manifest = read_dataset(args.data)
    lines = ["n_seed,coverage_rate,repetition_rate,scenes"]
    for r in coverage_table(manifest.scenes, nseeds):
        lines.append(f"{r['n_seed']},{r['cr']:.6f},{r['rr']:.6f},{r['scenes']}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gres3d", description="Referring segmentation on synthetic desk-scale point clouds.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, help="generator seed")
    g.add_argument("--scenes", type=int, help="number of scenes")
    g.add_argument("--samples", type=int, help="total number of expressions")
    g.add_argument("--val-fraction", type=float, help="share of samples put in the val split")
    g.add_argument("--config", help="JSON run config (sections gen/model/train/weights)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--steps", type=int, help="optimizer steps")
    t.add_argument("--seed", type=int, help="init and shuffling seed")
    t.add_argument("--lr", type=float, help="base learning rate")
    t.add_argument("--batch-size", type=int, help="samples per step")
    t.add_argument("--config", help="JSON run config (sections gen/model/train/weights)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint and write a JSON report")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--ckpt", required=True, help="checkpoint path")
    e.add_argument("--split", default="val", choices=("train", "val", "all"), help="split to score")
    e.add_argument("--report", help="write the JSON report here as well as to stdout")
    e.add_argument("--config", help="JSON run config (sections gen/model/train/weights)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full loss on a tiny problem")
    c.add_argument("--seed", type=int, default=0, help="problem and init seed")
    c.add_argument("--tol", type=float, default=1e-4, help="fail (exit 3) at or above this error")
    c.add_argument("--config", help="JSON run config; only the weights section is used")
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("stats", help="coverage/repetition rates of farthest-point seeds as CSV")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--nseed-list", default="32,64,128", help="comma-separated seed counts")
    s.add_argument("--out", help="write the CSV here as well as to stdout")
    s.add_argument("--config", help="JSON run config (unused, accepted for uniformity)")
    s.set_defaults(func=cmd_stats)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as stop:  # --help
        return int(stop.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DatasetFormatError, CheckpointError, DataError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, ComputationError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        # remaining ValueErrors come from flag values that fail config validation
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
