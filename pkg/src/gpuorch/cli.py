"""Command line entry point: ingest, train, solve, simulate, report.

Every subcommand takes ``--config``, ``--seed`` and ``--out``; ``--set key=value``
overrides any other config key. Exit status is 0 on success (an infeasible
allocation is a result, not an error) and nonzero on any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfgmod
from .dataset import TableFormatError, load_table, split, write_table
from .estimation import build_p1_samples, evaluate_mae, fit_p1, fit_p2
from .optimizer import AllocationInstance, build, solve, validate
from .regressor import load as load_model
from .regressor import save as save_model
from .simulator import (Scenario, default_sla, load_traces, metrics, run, write_records)


def _config(args) -> cfgmod.Config:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.Config()
    for item in args.set or ():
        cfg = cfgmod.override(cfg, item)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    return cfg


def _out_dir(cfg: cfgmod.Config) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ subcommands

def cmd_ingest(args) -> int:
    cfg = _config(args)
    if args.table:
        gt = load_table(args.table, capacity=cfg.dataset.capacity)
    else:
        gt = cfgmod.ground_truth(cfg)
    out = _out_dir(cfg)
    write_table(gt, out / "table.csv")
    batches = {}
    for j in gt.jobs:
        batches.setdefault(j.model_family, []).append(j.batch_size)
    info = {"accelerator_types": list(gt.acc_ids), "jobs": len(gt.jobs),
            "batch_sizes": {f: sorted(b) for f, b in sorted(batches.items())},
            "normalizer": gt.normalizer}
    _write_json(out / "ingest.json", info)
    print(f"{len(gt.acc_ids)} accelerator types, {len(gt.jobs)} jobs, "
          f"{len(gt.solo)} solo and {len(gt.paired)} paired entries")
    for f, b in info["batch_sizes"].items():
        print(f"  {f}: {', '.join(str(x) for x in b)}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    gt = cfgmod.ground_truth(cfg)
    m = cfg.model
    train_ids, val_ids, test_ids = split(gt, 1.0 - m.val_frac - m.test_frac, m.val_frac, cfg.seed)
    hyper = m.train_config(cfg.seed)
    p1, r1 = fit_p1(gt, train_ids, val_ids, hidden=m.hidden, hyper=hyper, k=m.neighbors,
                    seed=cfg.seed)
    p2, r2 = fit_p2(gt, train_ids, val_ids, noise_sigma=m.p2_noise_sigma, hidden=m.hidden,
                    hyper=hyper, seed=cfg.seed)
    test = build_p1_samples(gt, gt.schema, jobs=test_ids, pool=train_ids, k=1) if test_ids else []
    out = _out_dir(cfg)
    save_model(p1, out / "p1.npz")
    save_model(p2, out / "p2.npz")
    report = {"split": {"train": train_ids, "val": val_ids, "test": test_ids},
              "p1": r1.as_dict(), "p2": r2.as_dict(),
              "p1_test_mae": evaluate_mae(p1, test) if test else None}
    _write_json(out / "train_report.json", report)
    print(f"P1: {r1.epochs_run} epochs, val MAE {r1.final_val_mae:.4f}"
          + (f", test MAE {report['p1_test_mae']:.4f}" if test else ""))
    print(f"P2: {r2.epochs_run} epochs, val MAE {r2.final_val_mae:.4f}")
    print(f"models written to {out}")
    return 0


def cmd_solve(args) -> int:
    inst = AllocationInstance.load(args.instance)
    alloc = solve(build(inst), time_limit=args.time_limit)
    problems = validate(inst, alloc) if alloc.feasible else []
    print(f"status: {alloc.status}")
    if alloc.feasible:
        print(f"power: {alloc.objective_watts!r} W")
        for a, s, c in alloc.assignments:
            print(f"  {a}@{s}: {c}")
        for j, t in sorted(alloc.per_job_throughput.items()):
            print(f"  throughput {j}: {t:.6g}")
        print("validation: " + ("ok" if not problems else
                                "; ".join(f"{v.constraint}[{v.index}] {v.message}" for v in problems)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "allocation.json", alloc.to_dict())
    return 1 if problems else 0


def scenario_from_config(cfg: cfgmod.Config) -> Scenario:
    gt = cfgmod.ground_truth(cfg)
    sc = cfg.scenario
    arrivals, boot = cfgmod.arrivals_and_bootstrap(cfg, gt)
    p1 = load_model(sc.p1_path) if sc.p1_path else None
    p2 = load_model(sc.p2_path) if sc.p2_path else None
    return Scenario(gt, cfgmod.servers(cfg, gt), boot, arrivals,
                    default_sla(gt, arrivals, sc.sla_fraction, sc.distributability),
                    noise_sigma=sc.noise_sigma, rounds=sc.rounds, estimator=sc.estimator,
                    p1=p1, p2=p2, hidden=tuple(cfg.model.hidden),
                    train=cfg.model.train_config(cfg.seed), time_limit=sc.time_limit,
                    name=sc.estimator)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    result = run(scenario_from_config(cfg), cfg.seed)
    out = _out_dir(cfg)
    result.write(out)
    cfgmod.dump(cfg, out / "config.json")
    s = result.summary
    print(f"{s['rounds']} rounds, energy {s['energy_watt_rounds']:.6g} watt-rounds, "
          f"SLA violation rate {s['sla_violation_rate']:.4f}, "
          f"mean estimate MAE {s['mean_estimate_mae']:.4f}")
    print(f"trace written to {out / 'trace.jsonl'}")
    return 0


def _trace_file(path: Path) -> Path:
    return path / "trace.jsonl" if path.is_dir() else path


def cmd_report(args) -> int:
    records = []
    for raw in args.traces:
        path = _trace_file(Path(raw))
        summary = metrics(load_traces(path))
        label = str(path.parent if path.name == "trace.jsonl" else path)
        side = path.parent / "summary.json"
        rec = {"run": label}
        if side.exists():
            meta = json.loads(side.read_text(encoding="utf-8"))
            rec.update({k: meta.get(k) for k in ("estimator", "seed", "noise_sigma",
                                                  "bootstrap_jobs")})
        rec.update({k: v for k, v in summary.items() if k != "estimate_mae_per_round"})
        records.append(rec)
    cols = ["run", "estimator", "rounds", "mean_estimate_mae", "energy_watt_rounds",
            "sla_violation_rate"]
    widths = [max(len(c), *(len(_fmt(r.get(c))) for r in records)) for c in cols]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for r in records:
        print("  ".join(_fmt(r.get(c)).ljust(w) for c, w in zip(cols, widths)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_records(records, out / "report.jsonl")
    return 0


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4f}"
    return "-" if v is None else str(v)


# ------------------------------------------------------------------ wiring

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. scenario.noise_sigma=0.05")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gpuorch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("ingest", parents=[common], help="parse and normalize a throughput table")
    s.add_argument("table", nargs="?", help="CSV table; omitted: export the configured dataset")
    s.set_defaults(func=cmd_ingest)
    s = sub.add_parser("train", parents=[common], help="train the estimation models")
    s.set_defaults(func=cmd_train)
    s = sub.add_parser("solve", parents=[common], help="solve one allocation instance")
    s.add_argument("instance", help="instance JSON file")
    s.add_argument("--time-limit", type=float, default=60.0)
    s.set_defaults(func=cmd_solve)
    s = sub.add_parser("simulate", parents=[common], help="run the closed loop")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("report", parents=[common], help="compare simulation traces")
    s.add_argument("traces", nargs="+", help="trace.jsonl files or simulate output directories")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TableFormatError as exc:
        print(f"error: {getattr(args, 'table', None) or 'table'}: {exc}", file=sys.stderr)
    except (ValueError, KeyError, OSError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
