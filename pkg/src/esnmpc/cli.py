"""Command-line front end for the pH case study.

Every command works inside one output directory (``--out``, default from the
config). ``excite`` writes ``train.csv`` / ``valid.csv`` there, ``identify``
and ``reduce`` write ``model_<variant>.json`` and append rows to
``table.txt``, ``control`` and ``bench`` write closed-loop logs.

Exit codes: 0 success, 1 usage or missing input, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .config import ExperimentConfig
from .experiment import (VARIANTS, ExperimentError, bench, excite, format_table,
                         identify, run_scenario)
from .ident import Dataset, IdentError, LassoNotConverged
from .plant import PlantError
from .reduce import ReductionError, reduce_and_retrain
from .reservoir import ReservoirError

log = logging.getLogger("esnmpc")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

NUMERICAL_ERRORS = (IdentError, LassoNotConverged, ExperimentError, ReductionError,
                    PlantError, ReservoirError, FloatingPointError,
                    np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for numerical failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="working/output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="esnmpc", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("excite", parents=[common],
                   help="open-loop MPRS runs -> train.csv, valid.csv")
    s = sub.add_parser("identify", parents=[common],
                       help="train a variant, append a table row")
    s.add_argument("--variant", choices=list(VARIANTS), default="2full")
    s = sub.add_parser("reduce", parents=[common],
                       help="prune and retrain a LASSO-trained model")
    s.add_argument("--model", type=Path, help="default: <out>/model_2a.json")
    s = sub.add_parser("validate", parents=[common],
                       help="free-run fitting on the validation set")
    s.add_argument("--model", type=Path, required=True)
    s = sub.add_parser("control", parents=[common],
                       help="closed-loop tracking and disturbance scenario")
    s.add_argument("--model", type=Path, help="default: <out>/model_2full.json")
    s = sub.add_parser("bench", parents=[common],
                       help="solve-time comparison, full vs reduced network")
    s.add_argument("--model", type=Path, nargs=2, metavar=("FULL", "REDUCED"),
                   help="default: <out>/model_1.json <out>/model_2full.json")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is not None:
        cfg = cfg.replace(out=str(args.out))
    return cfg


def _require(path: Path) -> Path:
    if not path.exists():
        raise UsageError(f"{path} not found")
    return path


def _datasets(out: Path, k0: int = 0) -> tuple[Dataset, Dataset]:
    hint = " (run 'esnmpc excite' first)"
    for name in ("train.csv", "valid.csv"):
        if not (out / name).exists():
            raise UsageError(f"{out / name} not found{hint}")
    return io.load_dataset(out / "train.csv", k0), io.load_dataset(out / "valid.csv", k0)


def _append_rows(out: Path, cfg: ExperimentConfig, rows) -> str:
    table = format_table(rows)
    path = out / "table.txt"
    new = not path.exists()
    with path.open("a") as fh:
        if new:
            fh.write(table.splitlines()[0] + "\n")
        for line in table.splitlines()[1:]:
            fh.write(f"{line}    # seed={cfg.seed}\n")
    return table


def cmd_excite(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out)
    train, valid = excite(cfg)
    for name, d, seed in (("train", train, cfg.train_seed), ("valid", valid, cfg.valid_seed)):
        io.save_dataset(out / f"{name}.csv", d,
                        {"mprs_seed": seed, "config": cfg.to_dict()})
        print(f"{name}: {len(d)} samples, u in [{d.u.min():.2f}, {d.u.max():.2f}], "
              f"y in [{d.y.min():.2f}, {d.y.max():.2f}] -> {out / name}.csv")
    return EXIT_OK


def cmd_identify(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out)
    train, valid = _datasets(out)
    want = (args.variant,)
    res = identify(cfg, train, valid, variants=want)
    if res.sweep is not None:
        log.info("selected lambda %.4g", res.sweep.lam)
    for v, model in res.models.items():
        io.save_model(out / f"model_{v}.json", model, cfg.to_dict())
    rows = [(VARIANTS[v], res.models[v].n, res.fittings[v]) for v in want]
    print(_append_rows(out, cfg, rows))
    if res.report is not None and args.variant in ("2b", "2full"):
        print(res.report.summary())
    return EXIT_OK


def cmd_reduce(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out)
    model = io.load_model(_require(args.model or out / "model_2a.json"))
    if model.readout.lam <= 0:
        raise UsageError("reduce needs a LASSO-trained model (variant 2a)")
    train, valid = _datasets(out, model.k0)
    pruned, retrained, report = reduce_and_retrain(model, train, valid,
                                                   cfg.training.ls_rcond)
    io.save_model(out / "model_2b.json", dataclasses.replace(pruned, label="2b"),
                  cfg.to_dict())
    io.save_model(out / "model_2full.json", dataclasses.replace(retrained, label="2full"),
                  cfg.to_dict())
    print(_append_rows(out, cfg, [
        (VARIANTS["2b"], pruned.n, report.fitting_after_prune),
        (VARIANTS["2full"], retrained.n, report.fitting_after_retrain)]))
    print(report.summary())
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    model = io.load_model(_require(args.model))
    _, valid = _datasets(Path(cfg.out), model.k0)
    fit = model.validate(valid)
    print(f"{args.model}: n={model.n} fitting={fit:.2f}%")
    return EXIT_OK


def _header(cfg: ExperimentConfig, **extra) -> dict:
    return {"config": cfg.to_dict(), **extra}


def cmd_control(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out)
    path = _require(args.model or out / "model_2full.json")
    model = io.load_model(path)
    res = run_scenario(cfg, model)
    label = model.label or path.stem
    io.write_log(out / f"control_{label}.csv", res.records,
                 _header(cfg, model=str(path), n=model.n))
    print(res.summary())
    return EXIT_OK


def cmd_bench(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out)
    paths = args.model or (out / "model_1.json", out / "model_2full.json")
    full, reduced = (io.load_model(_require(Path(p))) for p in paths)
    res = bench(cfg, full, reduced)
    for tag, sr, p, m in (("full", res.full, paths[0], full),
                          ("reduced", res.reduced, paths[1], reduced)):
        io.write_log(out / f"bench_{tag}.csv", sr.records,
                     _header(cfg, model=str(p), n=m.n))
    text = res.summary()
    (out / "bench.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


COMMANDS = {
    "excite": cmd_excite,
    "identify": cmd_identify,
    "reduce": cmd_reduce,
    "validate": cmd_validate,
    "control": cmd_control,
    "bench": cmd_bench,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"esnmpc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        # numerical errors derive from ValueError too, so sort them out first
        if isinstance(exc, NUMERICAL_ERRORS):
            print(f"esnmpc {args.command}: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"esnmpc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"esnmpc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
