"""Command-line entry point: ``vfeel <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..comm import LinkError
from ..protocol import ProtocolError, TrainingDiverged, parse_scheme
from ..waveform import InvalidInput
from . import datafile, experiments
from .config import ConfigError, load_config

# exit codes by error category
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_LINK = 5
EXIT_NUMERIC = 6


def parse_seeds(text: str):
    """``"3"``, ``"0,2,5"`` or ``"0-11"`` (inclusive) to a list of ints."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds or min(seeds) < 0:
        raise ValueError(f"bad seed list {text!r}")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (defaults if omitted)")
    common.add_argument("--profile", choices=("full", "reduced"), help="override the profile")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="single seed")
    common.add_argument("--seeds", help="seed list: 0,1,2 or 0-11")
    common.add_argument("--scheme", help="scheme name, or a comma-separated list for sweep")

    p = argparse.ArgumentParser(prog="vfeel", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="simulate and write the dataset")
    sub.add_parser("train", parents=[common], help="train one scheme over the seeds")
    sub.add_parser("eval", parents=[common], help="test accuracy of saved checkpoints")
    sub.add_parser("overhead", parents=[common], help="communication/computation table")
    sub.add_parser("signal-demo", parents=[common], help="write plot-ready DSP arrays")
    sub.add_parser("sweep", parents=[common], help="train every scheme and summarize")
    return p


def _config(args):
    cfg = load_config(args.config, args.profile)
    if args.out:
        cfg.out = args.out
    if args.seeds:
        cfg.seeds = parse_seeds(args.seeds)
    elif args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else int(cfg.seeds[0])


def cmd_gen_data(args, cfg):
    if args.seed is not None:
        cfg.data_seed = args.seed
    paths, digest, ds = experiments.gen_data(cfg)
    print(f"train per class: {experiments.class_counts(ds.train_y)}")
    print(f"test per class:  {experiments.class_counts(ds.test_y)}")
    print(f"views: {ds.n_views}  samples: {len(ds.train_y) + len(ds.test_y)}")
    for p in paths:
        print(f"wrote {p}")
    print(f"sha256 {digest}")


def _dataset(cfg):
    return experiments.load_or_generate(cfg)


def cmd_train(args, cfg):
    if not args.scheme:
        raise InvalidInput("train needs --scheme")
    row = experiments.train_scheme(cfg, _dataset(cfg), args.scheme, cfg.seeds, print)
    print(experiments.summary_csv([row]), end="")


def cmd_eval(args, cfg):
    if not args.scheme:
        raise InvalidInput("eval needs --scheme")
    scheme = args.scheme.lower()
    parse_scheme(scheme)
    ds = _dataset(cfg)
    for seed in cfg.seeds:
        _, cpath = experiments.run_paths(cfg, scheme, seed)
        if not cpath.is_file():
            raise FileNotFoundError(f"no checkpoint {cpath}; run train first")
        with open(cpath, "rb") as fh:
            model, _ = experiments.load_model(fh)
        print(f"{scheme} seed {seed}: test accuracy "
              f"{experiments.model_accuracy(model, scheme, ds):.4f}")


def cmd_overhead(args, cfg):
    rows = experiments.overhead_rows(cfg)
    text = experiments.overhead_csv(rows)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "overhead.csv").write_text(text)
    print(text, end="")


def cmd_signal_demo(args, cfg):
    info = experiments.signal_demo(cfg, _seed(args, cfg), Path(cfg.out) / "signal_demo")
    print(json.dumps(info, sort_keys=True))


def cmd_sweep(args, cfg):
    schemes = [s.strip() for s in args.scheme.split(",")] if args.scheme else cfg.schemes
    for s in schemes:
        parse_scheme(s)
    rows = experiments.sweep(cfg, _dataset(cfg), schemes, cfg.seeds, print)
    print(experiments.summary_csv(rows), end="")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
            "overhead": cmd_overhead, "signal-demo": cmd_signal_demo, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, datafile.DatasetFormatError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        kind = "config" if isinstance(exc, ConfigError) else "invalid input"
        print(f"{kind} error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (LinkError, ProtocolError) as exc:
        print(f"link error: {exc}", file=sys.stderr)
        return EXIT_LINK
    except TrainingDiverged as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
