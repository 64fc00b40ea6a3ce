"""Closed-loop online scheduling: arrivals, estimation, allocation, measurement, refinement.

Every round one job arrives (while arrivals remain). Its throughput is estimated
into the catalog, the optimizer re-allocates every active job from catalog
values, each placement is measured against the ground truth with multiplicative
noise, and the measurements are propagated to the accelerator types the
combination did not run on.

Trace files are JSON lines, one record per round::

    round          int
    arrived        job id or null
    admitted       jobs newly placed this round
    deferred       jobs waiting for capacity after this round
    active         jobs placed this round, sorted
    p1_estimates   [acc, job, members, value, truth]  first estimates for the arrival
    allocation     {status, watts, assignments: [acc, server, members, planned, alpha, beta]}
    measurements   [acc, server, members, values]
    refinements    [acc, job, members, value]
    estimates      [acc, job, members, lookup, truth]  catalog view of waiting/active jobs
    sla            [job, min_throughput, measured_total]
    metrics        {p1_mae, estimate_mae, watts, sla_violations}

``watts`` is ``power_of`` the planned allocation; ``sla_violations`` counts the
active jobs whose measured total falls short plus every job still waiting.
Solver runtimes are kept out of traces so that reruns are byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .catalog import Catalog
from .dataset import GroundTruth
from .domain import Combination, JobSpec
from .estimation import (LearnedEstimator, Measurement, NeighborCopyEstimator, OracleEstimator,
                         fit_p1, fit_p2)
from .optimizer import (FEAS_TOL, AllocationInstance, Server, all_combinations,
                        build, power_of, solve)
from .regressor import Regressor, TrainConfig

ESTIMATORS = ("learned", "p1-only", "copy", "oracle")


@dataclass
class Scenario:
    ground_truth: GroundTruth
    servers: Tuple[Server, ...]
    bootstrap_jobs: Tuple[str, ...]
    arrival_order: Tuple[str, ...]
    sla: Mapping[str, Tuple[float, int]]  # job -> (min_throughput, distributability)
    noise_sigma: float = 0.0
    rounds: Optional[int] = None  # None: one round per arrival
    estimator: str = "learned"
    p1: Optional[Regressor] = None
    p2: Optional[Regressor] = None
    hidden: Tuple[int, ...] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    time_limit: float = 60.0
    name: str = ""

    def __post_init__(self):
        self.servers = tuple(self.servers)
        self.bootstrap_jobs = tuple(self.bootstrap_jobs)
        self.arrival_order = tuple(self.arrival_order)
        known = set(self.ground_truth.job_ids)
        overlap = set(self.arrival_order) & set(self.bootstrap_jobs)
        if overlap:
            raise ValueError(f"arriving jobs are also bootstrap jobs: {sorted(overlap)}")
        if len(set(self.arrival_order)) != len(self.arrival_order):
            raise ValueError("a job arrives twice")
        unknown = (set(self.arrival_order) | set(self.bootstrap_jobs)) - known
        if unknown:
            raise ValueError(f"jobs missing from the ground truth: {sorted(unknown)}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.estimator in ("learned", "p1-only", "copy") and not self.bootstrap_jobs:
            raise ValueError(f"the {self.estimator} estimator needs bootstrap jobs")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.rounds is not None and self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        missing = set(self.arrival_order) - set(self.sla)
        if missing:
            raise ValueError(f"no SLA for {sorted(missing)}")
        accs = set(self.ground_truth.acc_ids)
        for s in self.servers:
            bad = set(s.accelerators) - accs
            if bad:
                raise ValueError(f"server {s.server_id} uses unknown accelerators {sorted(bad)}")

    @property
    def n_rounds(self) -> int:
        return len(self.arrival_order) if self.rounds is None else self.rounds


def default_sla(gt: GroundTruth, jobs: Sequence[str], fraction: float = 0.5,
                distributability: int = 1) -> Dict[str, Tuple[float, int]]:
    """Each job must reach ``fraction`` of its best solo throughput on any accelerator."""
    out = {}
    for j in jobs:
        best = max(gt.throughput(a, j, Combination.solo(j)) for a in gt.acc_ids)
        out[j] = (fraction * best, distributability)
    return out


@dataclass
class RoundTrace:
    round: int
    arrived: Optional[str]
    admitted: List[str]
    deferred: List[str]
    active: List[str]
    p1_estimates: List[list]
    allocation: dict
    measurements: List[list]
    refinements: List[list]
    estimates: List[list]
    sla: List[list]
    metrics: Dict[str, float]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)


@dataclass
class SimulationResult:
    traces: List[RoundTrace]
    summary: dict
    solver_seconds: List[float]

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "trace.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
            for t in self.traces:
                fh.write(t.to_json() + "\n")
        (out / "summary.json").write_text(json.dumps(self.summary, sort_keys=True, indent=2) + "\n")
        (out / "timing.json").write_text(json.dumps(timing(self.solver_seconds), indent=2) + "\n")


def _members(c: Combination) -> List[str]:
    return list(c.members)


def _mean_abs(pairs: Sequence[Tuple[float, float]]) -> float:
    if not pairs:
        return math.nan
    return math.fsum(abs(a - b) for a, b in pairs) / len(pairs)


def _make_estimator(scn: Scenario, seed: int):
    gt = scn.ground_truth
    if scn.estimator == "oracle":
        return OracleEstimator(gt)
    if scn.estimator == "copy":
        return NeighborCopyEstimator()
    p1, p2 = scn.p1, scn.p2
    boot = sorted(scn.bootstrap_jobs)
    hyper = TrainConfig(**{**scn.train.__dict__, "seed": seed})
    if p1 is None:
        p1, _ = fit_p1(gt, boot, (), hidden=scn.hidden, hyper=hyper, seed=seed)
    if scn.estimator == "p1-only":
        return _P1Only(p1)
    if p2 is None:
        p2, _ = fit_p2(gt, boot, (), hidden=scn.hidden, hyper=hyper, seed=seed)
    return LearnedEstimator(p1, p2)


class _P1Only(LearnedEstimator):
    name = "p1-only"

    def __init__(self, p1: Regressor):
        super().__init__(p1, None)

    def refine(self, catalog, measured: Measurement, target_accs):
        return NeighborCopyEstimator().refine(catalog, measured, target_accs)


def _bootstrap(catalog: Catalog, scn: Scenario, rng: np.random.Generator) -> None:
    gt = scn.ground_truth
    for j in sorted(scn.bootstrap_jobs):
        catalog.register_job(gt.job(j))
    for acc in gt.acc_ids:
        for c in all_combinations(sorted(scn.bootstrap_jobs)):
            if not gt.has(acc, c):
                continue
            for j in c.members:
                catalog.record_measurement(acc, j, c, _measure(gt, acc, j, c, scn.noise_sigma, rng))


def _measure(gt: GroundTruth, acc: str, job: str, c: Combination, sigma: float,
             rng: np.random.Generator) -> float:
    truth = gt.throughput(acc, job, c)
    if sigma == 0:
        return truth
    return max(0.0, truth * (1.0 + float(rng.normal(0.0, sigma))))


def _instance(scn: Scenario, catalog: Catalog, jobs: Sequence[str]) -> AllocationInstance:
    gt = scn.ground_truth
    specs = []
    for j in jobs:
        t_min, dist = scn.sla[j]
        specs.append(JobSpec(j, gt.job(j).model_family, gt.job(j).batch_size,
                             gt.job(j).replication, min_throughput=t_min, distributability=dist))
    throughput = {}
    combos = []
    for c in all_combinations(jobs):
        vals = {}
        for acc in gt.acc_ids:
            if all(catalog.has(acc, j, c) for j in c.members):
                for j in c.members:
                    vals[(acc, j, c)] = catalog.lookup(acc, j, c)
            else:
                break
        else:
            combos.append(c)
            throughput.update(vals)
    return AllocationInstance(scn.servers, {a.acc_id: a for a in gt.accelerators}, specs,
                              combos, throughput)


def _estimate_view(catalog: Catalog, gt: GroundTruth, jobs: Sequence[str]) -> List[list]:
    wanted = set(jobs)
    rows = []
    for rec in catalog.records():
        if rec.job in wanted and set(rec.combo.members) <= wanted:
            rows.append([rec.acc, rec.job, _members(rec.combo), rec.value(),
                         gt.throughput(rec.acc, rec.job, rec.combo)])
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def run(scenario: Scenario, seed: int = 0) -> SimulationResult:
    scn = scenario
    gt = scn.ground_truth
    rng = np.random.default_rng(seed)
    catalog = Catalog(gt.acc_ids, gt.schema)
    if scn.n_rounds == 0:
        return SimulationResult([], metrics([]), [])
    _bootstrap(catalog, scn, rng)
    estimator = _make_estimator(scn, seed)

    arrivals = list(scn.arrival_order)
    active: List[str] = []
    waiting: List[str] = []
    traces: List[RoundTrace] = []
    seconds: List[float] = []
    for r in range(scn.n_rounds):
        arrived = arrivals.pop(0) if arrivals else None
        p1_rows: List[list] = []
        if arrived is not None:
            spec = gt.job(arrived)
            try:
                est = estimator.initial(catalog, spec, gt.acc_ids, active + waiting)
            except LookupError:
                est = None
            if est is not None:
                p1_rows = [[e.acc, e.job, _members(e.combo), e.value,
                            gt.throughput(e.acc, e.job, e.combo)] for e in est.rows]
            waiting.append(arrived)

        # admit as many waiting jobs as fit, deferring the newest first
        admitted = list(waiting)
        while True:
            inst = _instance(scn, catalog, active + admitted)
            alloc = solve(build(inst), time_limit=scn.time_limit)
            seconds.append(alloc.seconds)
            if alloc.feasible or not admitted:
                break
            admitted.pop()
        waiting = [j for j in waiting if j not in admitted]
        if alloc.feasible:
            active = active + admitted
        else:
            admitted = []
        placed = sorted(active)

        measured_total: Dict[str, List[float]] = {j: [] for j in placed}
        meas_rows, ref_rows = [], []
        assign_rows = []
        used_by_combo: Dict[Combination, set] = {}
        for acc, _, c in alloc.assignments:
            used_by_combo.setdefault(c, set()).add(acc)
        for acc, server, c in alloc.assignments:
            a = inst.accelerators[acc]
            assign_rows.append([acc, server, _members(c),
                                [inst.throughput[(acc, j, c)] for j in c.members],
                                a.power_idle, a.power_per_unit_load])
            values = {j: _measure(gt, acc, j, c, scn.noise_sigma, rng) for j in c.members}
            for j, v in values.items():
                measured_total[j].append(v)
            meas_rows.append([acc, server, _members(c), [values[j] for j in c.members]])
            targets = [a2 for a2 in gt.acc_ids if a2 not in used_by_combo[c]]
            res = estimator.refine(catalog, Measurement(acc, c, values), targets)
            ref_rows.extend([u.acc, u.job, _members(u.combo), u.value] for u in res.updates)

        watts = power_of(inst, alloc) if alloc.feasible else 0.0
        sla_rows = []
        for j in placed:
            sla_rows.append([j, scn.sla[j][0], math.fsum(measured_total[j])])
        violations = sum(1 for _, need, got in sla_rows if got < need - FEAS_TOL) + len(waiting)
        view = _estimate_view(catalog, gt, placed + waiting)
        metrics_row = {
            "p1_mae": _mean_abs([(row[3], row[4]) for row in p1_rows]),
            "estimate_mae": _mean_abs([(row[3], row[4]) for row in view]),
            "watts": watts,
            "sla_violations": violations,
        }
        traces.append(RoundTrace(
            round=r, arrived=arrived, admitted=sorted(admitted), deferred=list(waiting),
            active=placed, p1_estimates=p1_rows,
            allocation={"status": alloc.status, "watts": watts, "assignments": assign_rows},
            measurements=meas_rows, refinements=ref_rows, estimates=view, sla=sla_rows,
            metrics=metrics_row))
    summary = metrics(traces)
    summary.update({"scenario": scn.name, "estimator": scn.estimator, "seed": seed,
                    "noise_sigma": scn.noise_sigma, "bootstrap_jobs": len(scn.bootstrap_jobs)})
    return SimulationResult(traces, summary, seconds)


def load_traces(path) -> List[RoundTrace]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(RoundTrace(**json.loads(line)))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: not a round trace ({exc})") from exc
    return out


def metrics(traces: Sequence[RoundTrace]) -> dict:
    """Deterministic summary of a run: MAE trajectory, energy, SLA violation rate."""
    maes = [t.metrics["estimate_mae"] for t in traces]
    p1 = [t.metrics["p1_mae"] for t in traces if not math.isnan(t.metrics["p1_mae"])]
    job_rounds = sum(len(t.active) + len(t.deferred) for t in traces)
    violations = sum(t.metrics["sla_violations"] for t in traces)
    finite = [m for m in maes if not math.isnan(m)]
    return {
        "rounds": len(traces),
        "estimate_mae_per_round": maes,
        "mean_estimate_mae": math.fsum(finite) / len(finite) if finite else math.nan,
        "mean_p1_mae": math.fsum(p1) / len(p1) if p1 else math.nan,
        "energy_watt_rounds": math.fsum(t.metrics["watts"] for t in traces),
        "sla_violations": violations,
        "sla_violation_rate": violations / job_rounds if job_rounds else 0.0,
        "infeasible_rounds": sum(1 for t in traces if t.allocation["status"] == "infeasible"),
    }


def timing(seconds: Sequence[float]) -> dict:
    return {"solves": len(seconds),
            "mean_solver_seconds": float(np.mean(seconds)) if seconds else 0.0,
            "max_solver_seconds": float(max(seconds)) if seconds else 0.0}


def compare(scenarios: Sequence[Scenario], seeds: Sequence[int] = (0,)) -> List[dict]:
    """Run every scenario under every seed; one flat record per run."""
    records = []
    for scn in scenarios:
        for seed in seeds:
            res = run(scn, seed)
            rec = {k: v for k, v in res.summary.items() if k != "estimate_mae_per_round"}
            rec.update(timing(res.solver_seconds))
            records.append(rec)
    return records


def write_records(records: Sequence[dict], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
