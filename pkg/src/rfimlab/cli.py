"""Command-line front end.

Exit codes: 0 all assertions passed, 2 an assertion failed, 3 a capacity or
budget limit was hit.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import couplings
from .cftp import BudgetError
from .experiments import (CENSOR_LIMIT, RUNNERS, ExperimentConfig,
                          ResultTable)
from .geometry import BoxRegion
from .gibbs import CapacityError
from .randomfield import dump_field_binary, dump_field_csv, sample_field

EXIT_OK = 0
EXIT_ASSERT = 2
EXIT_CAPACITY = 3


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    cfg.kind = args.command
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.mode = args.mode
    if args.out is not None:
        cfg.out_dir = args.out
    if args.jobs is not None:
        cfg.jobs = args.jobs
    return cfg


def _write_outputs(table: ResultTable, cfg: ExperimentConfig):
    if not cfg.out_dir:
        return
    os.makedirs(cfg.out_dir, exist_ok=True)
    stem = os.path.join(cfg.out_dir, f"{cfg.kind}-{cfg.config_hash()}")
    table.to_csv(stem + ".csv")
    table.to_json(stem + ".json")
    cfg.to_file(stem + ".cfg")


def _check(table: ResultTable, cfg: ExperimentConfig) -> int:
    n = len(table.rows)
    if n and table.censored / n >= CENSOR_LIMIT:
        print(f"FAIL: {table.censored}/{n} instances censored")
        return EXIT_CAPACITY
    ok = True
    if cfg.kind == "perturb-audit":
        for col in ("incompatible_ok", "path_ok", "flip_ok"):
            bad = n - sum(table.column(col))
            if bad:
                print(f"FAIL: {bad} violations in {col}")
                ok = False
    elif cfg.kind == "free-energy":
        if max(table.column("deriv_rel_err")) > 1e-6:
            print("FAIL: derivative identity exceeds 1e-6 relative error")
            ok = False
        for col in ("two_zone_ok", "hat_upper_ok", "hat_lower_ok",
                    "hat_inclusion_ok"):
            bad = n - sum(table.column(col))
            if bad:
                print(f"FAIL: {bad} violations in {col}")
                ok = False
    elif cfg.kind == "coupling-suite":
        for (audit, runs, violations, pvalue) in table.rows:
            if violations:
                print(f"FAIL: {audit}: {violations} violations")
                ok = False
            if pvalue == pvalue and pvalue <= 0.001:
                print(f"FAIL: {audit}: p-value {pvalue:.2e}")
                ok = False
    return EXIT_OK if ok else EXIT_ASSERT


def _cmd_experiment(args) -> int:
    cfg = _load_config(args)
    try:
        table = RUNNERS[cfg.kind](cfg)
    except (BudgetError, CapacityError) as exc:
        print(f"capacity/budget: {exc}")
        return EXIT_CAPACITY
    except AssertionError as exc:
        print(f"assertion failed: {exc}")
        return EXIT_ASSERT
    _write_outputs(table, cfg)
    for k, v in sorted(table.metadata.items()):
        if k != "wall_time":
            print(f"{k}: {v}")
    return _check(table, cfg)


def _cmd_field(args) -> int:
    if args.action != "dump":
        print(f"unknown field action {args.action!r}")
        return EXIT_ASSERT
    region = BoxRegion(args.n)
    fld = sample_field(region, args.epsilon, args.seed or 0)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, f"field-N{args.n}-s{args.seed or 0}")
    dump_field_csv(fld, stem + ".csv")
    dump_field_binary(fld, stem + ".bin")
    print(f"wrote {stem}.csv and {stem}.bin")
    return EXIT_OK


def _cmd_replay(args) -> int:
    with open(args.trace) as f:
        trace = couplings.CouplingTrace.from_json(f.read())
    region = BoxRegion(trace.meta["N"])
    fld = sample_field(region, args.epsilon, args.field_seed)
    try:
        couplings.replay_trace(trace, fld, args.beta)
    except AssertionError as exc:
        print(f"replay mismatch: {exc}")
        return EXIT_ASSERT
    except BudgetError as exc:
        print(f"budget: {exc}")
        return EXIT_CAPACITY
    print("replay matches the recorded trace")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rfimlab")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--mode", choices=("t0", "exact", "cftp"),
                       default=None)

    for kind in RUNNERS:
        p = sub.add_parser(kind)
        common(p)
        p.set_defaults(func=_cmd_experiment)

    pf = sub.add_parser("field")
    pf.add_argument("action", choices=("dump",))
    pf.add_argument("--n", type=int, default=8)
    pf.add_argument("--epsilon", type=float, default=1.0)
    pf.add_argument("--seed", type=int, default=0)
    pf.add_argument("--out", default=None)
    pf.set_defaults(func=_cmd_field)

    pr = sub.add_parser("replay-trace")
    pr.add_argument("--trace", required=True)
    pr.add_argument("--epsilon", type=float, default=1.0)
    pr.add_argument("--field-seed", type=int, default=0)
    pr.add_argument("--beta", type=float, default=1.0)
    pr.set_defaults(func=_cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
