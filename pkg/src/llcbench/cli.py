#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
import argparse
import json
import logging
from pathlib import Path
import sys
from typing import Any, Dict, List, Optional, Sequence

from . import utils
from .base import ConfigBase, DictBase
from .exceptions import EXIT_CODE_OK, LLCBenchError, exit_code_for
from .experiment import (
    ForkSpec,
    RunConfig,
    experiment_compare,
    experiment_fork,
    experiment_overfit,
    experiment_smoothing_sweep,
    measure_llc,
    measure_trace,
    run_training
)
from .export import FORMATS, load_checkpoint
from .nn import MlpArchitecture


__all__ = [
    "build_parser",
    "main"
]

logger = logging.getLogger(__name__)

LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


def _floats(text: str) -> List[float]:
    return [float(_) for _ in text.split(",") if _.strip()]


def _ints(text: str) -> List[int]:
    return [int(_) for _ in text.split(",") if _.strip()]


def _architectures(text: str) -> List[Dict[str, Any]]:
    """`"1x64,2x128"` means one hidden layer of 64 and two of 128."""
    out = []
    for item in text.split(","):
        layers, _, width = item.strip().partition("x")
        try:
            out.append({"hidden_layers": [int(width)] * int(layers)})
        except ValueError:
            raise argparse.ArgumentTypeError(f"Architecture {item!r} is not of the form <layers>x<width>.")
    return out


def build_parser() -> argparse.ArgumentParser:
    """
    Returns
    -------
    argparse.ArgumentParser : The `llcbench` command line with its seven subcommands.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (a RunConfig; a ForkSpec for `fork`).")
    common.add_argument("--seed", type=int, help="Override the run seed.")
    common.add_argument("--out-dir", type=Path, help="Artifact directory.")
    common.add_argument("--format", choices=sorted(FORMATS), default="csv", help="Metric file format.")
    common.add_argument("--jobs", type=int, default=1, help="Worker threads.")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG.")

    parser = argparse.ArgumentParser(
        prog="llcbench",
        description="Train MLPs with SGD and NGD and measure LLC, WBIC and Hessian trace."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {utils.VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="One training run with per-epoch metrics.")

    compare = sub.add_parser("compare", parents=[common], help="SGD against NGD over seeds.")
    compare.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4], help="Comma-separated seeds.")
    compare.add_argument("--architectures", type=_architectures, help="E.g. 1x64,2x128.")

    sweep = sub.add_parser("sweep", parents=[common], help="NGD smoothing sweep over alpha and epsilon.")
    sweep.add_argument("--alphas", type=_floats, default=[], help="Comma-separated alpha grid.")
    sweep.add_argument("--epsilons", type=_floats, default=[], help="Comma-separated epsilon grid.")
    sweep.add_argument("--seeds", type=_ints, default=[0, 1, 2], help="Comma-separated seeds.")

    sub.add_parser("fork", parents=[common], help="Pretrain with SGD, then continue two branches.")

    overfit = sub.add_parser("overfit", parents=[common], help="Long run relating WBIC to validation loss.")
    overfit.add_argument("--max-lag", type=int, default=3, help="Largest cross-correlation shift.")

    for name, text in (("llc", "LLC and WBIC"), ("trace", "Hutchinson Hessian trace")):
        measure = sub.add_parser(name, parents=[common], help=f"{text} of a checkpoint or a freshly trained model.")
        measure.add_argument("--checkpoint", type=Path, help="A .npy parameter vector.")
    return parser


def _load(cls, path: Optional[Path]) -> ConfigBase:
    return cls.load(path) if path else cls().validate()


def _emit(result: Any, out_dir: Optional[Path], name: str) -> None:
    payload = result.to_dict() if isinstance(result, DictBase) else result
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{name}.json").write_text(text + "\n", encoding="utf-8")
    print(text)


def _run(args: argparse.Namespace) -> None:
    if args.command == "fork":
        spec = _load(ForkSpec, args.config)
        if args.seed is not None:
            spec = spec.replace(pretrain=spec.pretrain.replace(seed=args.seed)).validate()
        _emit(experiment_fork(spec, jobs=args.jobs, out_dir=args.out_dir), args.out_dir, "fork_report")
        return None
    cfg = _load(RunConfig, args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed).validate()
    if args.command == "train":
        records = run_training(cfg, args.out_dir, fmt=args.format, jobs=args.jobs)
        if args.out_dir is None:
            _emit([_.to_dict() for _ in records], None, "metrics")
    elif args.command == "compare":
        report = experiment_compare(
            cfg,
            args.seeds,
            architectures=[MlpArchitecture(**{**cfg.architecture.to_dict(), **_}) for _ in args.architectures]
            if args.architectures else None,
            jobs=args.jobs,
            out_dir=args.out_dir
        )
        _emit(report, args.out_dir, "compare_report")
    elif args.command == "sweep":
        report = experiment_smoothing_sweep(
            cfg, args.alphas, args.epsilons, args.seeds, jobs=args.jobs, out_dir=args.out_dir
        )
        _emit(report, args.out_dir, "sweep_report")
    elif args.command == "overfit":
        report = experiment_overfit(cfg, max_lag=args.max_lag, jobs=args.jobs, out_dir=args.out_dir)
        _emit(report, args.out_dir, "overfit_report")
    else:
        params = load_checkpoint(args.checkpoint) if args.checkpoint else None
        measure = measure_llc if args.command == "llc" else measure_trace
        _emit(measure(cfg, params, jobs=args.jobs), args.out_dir, args.command)


def main(argv: Sequence[str] = None) -> int:
    """
    Run the command line.

    Parameters
    ----------
    argv : Sequence[str]
        The arguments. Default `None`, i.e. `sys.argv[1:]`.

    Returns
    -------
    int : `0` on success, `2` on configuration or input errors, `3` on numeric or solver failures.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=LOG_LEVELS[min(args.verbose, len(LOG_LEVELS) - 1)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr
    )
    try:
        _run(args)
    except (LLCBenchError, OSError) as err:
        logger.error("%s: %s", err.__class__.__name__, err)
        return exit_code_for(err)
    return EXIT_CODE_OK
