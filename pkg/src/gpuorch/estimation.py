"""Initial throughput estimation from a similar job, and refinement from measurements.

Initial model input (width 3F + A + 2, F = feature width, A = accelerator count)::

    psi(neighbor), psi(partner), onehot(acc), T[acc, neighbor | {neighbor, partner}],
    T[acc, partner | {neighbor, partner}], psi(new job)

and output ``(T~[acc, new | {new, partner}], T~[acc, partner | {new, partner}])``.
The partner may be the empty-slot sentinel, whose features and throughputs are 0.

Refinement model input (width 2F + 2A + 6)::

    psi(j1), psi(j2), onehot(a1), onehot(a2),
    est[a1, j1], est[a1, j2], meas[a1, j1], meas[a1, j2], est[a2, j1], est[a2, j2]

and output ``(T~[a2, j1], T~[a2, j2])`` for the combination ``{j1, j2}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .catalog import Catalog, rank_jobs
from .dataset import FeatureSchema, GroundTruth, encode
from .domain import SENTINEL, SENTINEL_ID, Combination, JobSpec
from .regressor import Regressor, TrainConfig, TrainReport, train

DEFAULT_NEIGHBORS = 3


def p1_width(n_features: int, n_accs: int) -> int:
    return 3 * n_features + n_accs + 2


def p2_width(n_features: int, n_accs: int) -> int:
    return 2 * n_features + 2 * n_accs + 6


def _one_hot(acc_ids: Sequence[str], acc: str) -> np.ndarray:
    v = np.zeros(len(acc_ids))
    v[acc_ids.index(acc)] = 1.0
    return v


def _combo(j: str, k: str) -> Combination:
    return Combination.solo(j) if k == SENTINEL_ID else Combination.pair(j, k)


@dataclass
class P1Sample:
    j1: str
    j2: str
    j3: str
    acc: str
    x: np.ndarray
    y: np.ndarray


@dataclass
class P2Sample:
    j1: str
    j2: str
    a1: str
    a2: str
    x: np.ndarray
    y: np.ndarray


def stack(samples) -> Tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, 0)), np.zeros((0, 0))
    return np.stack([s.x for s in samples]), np.stack([s.y for s in samples])


def p1_input(psi_nb, psi_partner, acc_vec, t_nb, t_partner, psi_new) -> np.ndarray:
    return np.concatenate([psi_nb, psi_partner, acc_vec, [t_nb, t_partner], psi_new])


def build_p1_samples(gt: GroundTruth, schema: Optional[FeatureSchema] = None,
                     jobs: Optional[Iterable[str]] = None, pool: Optional[Iterable[str]] = None,
                     k: int = DEFAULT_NEIGHBORS) -> List[P1Sample]:
    """Training pairs for the initial estimator.

    ``jobs`` are the jobs being estimated (j1); ``pool`` supplies neighbors (j2) and
    co-located partners (j3). Both default to every job in the table. Each j1 uses
    its ``k`` nearest pool neighbors; samples whose table entries are missing are
    skipped.
    """
    schema = schema or gt.schema
    targets = list(gt.job_ids if jobs is None else jobs)
    pool_ids = list(targets if pool is None else pool)
    psi = {j: encode(gt.job(j), schema) for j in set(targets) | set(pool_ids)}
    psi[SENTINEL_ID] = encode(SENTINEL, schema)
    accs = list(gt.acc_ids)
    out: List[P1Sample] = []
    for j1 in targets:
        neighbors = rank_jobs(schema, gt.job(j1), [gt.job(p) for p in pool_ids if p != j1])[:k]
        for j2 in neighbors:
            for a in accs:
                acc_vec = _one_hot(accs, a)
                for j3 in [SENTINEL_ID] + [p for p in pool_ids if p not in (j1, j2)]:
                    c_in, c_out = _combo(j2, j3), _combo(j1, j3)
                    if not (gt.has(a, c_in) and gt.has(a, c_out)):
                        continue
                    x = p1_input(psi[j2], psi[j3], acc_vec, gt.throughput(a, j2, c_in),
                                 gt.throughput(a, j3, c_in), psi[j1])
                    y = np.array([gt.throughput(a, j1, c_out), gt.throughput(a, j3, c_out)])
                    out.append(P1Sample(j1, j2, j3, a, x, y))
    return out


def p2_input(psi1, psi2, a1_vec, a2_vec, est_a1, meas_a1, est_a2) -> np.ndarray:
    return np.concatenate([psi1, psi2, a1_vec, a2_vec, est_a1, meas_a1, est_a2])


def build_p2_samples(gt: GroundTruth, estimate_noise_sigma: float, seed: int,
                     jobs: Optional[Iterable[str]] = None, focus: Optional[Iterable[str]] = None,
                     schema: Optional[FeatureSchema] = None) -> List[P2Sample]:
    """Training pairs for the refinement model.

    Prior estimates are ground truth times ``1 + N(0, sigma)``, clamped to [0, 1].
    Pairs are emitted in both member orders. With ``focus`` given, only
    combinations containing a focus job are used.
    """
    if estimate_noise_sigma < 0:
        raise ValueError("estimate_noise_sigma must be >= 0")
    schema = schema or gt.schema
    ids = list(gt.job_ids if jobs is None else jobs)
    focus_set = set(ids if focus is None else focus)
    psi = {j: encode(gt.job(j), schema) for j in ids}
    psi[SENTINEL_ID] = encode(SENTINEL, schema)
    accs = list(gt.acc_ids)
    rng = np.random.default_rng(seed)

    orders: List[Tuple[str, str]] = []
    for i, j in enumerate(ids):
        if j in focus_set:
            orders.append((j, SENTINEL_ID))
        for kk in ids[i + 1:]:
            if j in focus_set or kk in focus_set:
                orders.extend([(j, kk), (kk, j)])

    def noisy(v: float) -> float:
        return float(np.clip(v * (1.0 + rng.normal(0.0, estimate_noise_sigma)), 0.0, 1.0))

    out: List[P2Sample] = []
    for j1, j2 in orders:
        c = _combo(j1, j2)
        for a1 in accs:
            if not gt.has(a1, c):
                continue
            for a2 in accs:
                if a2 == a1 or not gt.has(a2, c):
                    continue
                t1 = [gt.throughput(a1, j1, c), gt.throughput(a1, j2, c)]
                t2 = [gt.throughput(a2, j1, c), gt.throughput(a2, j2, c)]
                est1 = [noisy(t1[0]), noisy(t1[1]) if j2 != SENTINEL_ID else 0.0]
                est2 = [noisy(t2[0]), noisy(t2[1]) if j2 != SENTINEL_ID else 0.0]
                x = p2_input(psi[j1], psi[j2], _one_hot(accs, a1), _one_hot(accs, a2),
                             est1, t1, est2)
                out.append(P2Sample(j1, j2, a1, a2, x, np.array(t2)))
    return out


# ------------------------------------------------------------------ inference

@dataclass
class EstimateRow:
    acc: str
    job: str
    combo: Combination
    value: float


@dataclass
class InitialEstimate:
    job: str
    neighbor: Optional[str]
    rows: List[EstimateRow] = field(default_factory=list)
    copied: bool = False
    skipped: List[Tuple[str, str]] = field(default_factory=list)

    def for_job(self, job: str) -> List[EstimateRow]:
        return [r for r in self.rows if r.job == job]


def _context(catalog: Catalog, acc: str, j1: str, j3: str, ranked: List[str],
             with_records: List[str]) -> Optional[Tuple[str, str]]:
    """Pick the (neighbor, partner) whose recorded co-location stands in for (j1, j3).

    The nearest neighbor is preferred; when it has never been seen next to j3 the
    job most similar to j3 that it has been seen next to is used as a proxy.
    """
    for x in ranked:
        if j3 == SENTINEL_ID:
            if catalog.has(acc, x, Combination.solo(x)):
                return x, SENTINEL_ID
            continue
        if x != j3:
            c = Combination.pair(x, j3)
            if catalog.has(acc, x, c) and catalog.has(acc, j3, c):
                return x, j3
        proxies = catalog.ranked_jobs(catalog.job(j3), exclude=(x, j1), candidates=with_records)
        for y in proxies:
            c = Combination.pair(x, y)
            if catalog.has(acc, x, c) and catalog.has(acc, y, c):
                return x, y
    return None


def estimate_initial(p1: Optional[Regressor], catalog: Catalog, new_job: JobSpec,
                     accelerators: Sequence[str], active_jobs: Iterable[str]) -> InitialEstimate:
    """Write first estimates for ``new_job`` alone and next to every active job.

    Also writes the predicted throughput of each active partner under the new
    co-location. With ``p1`` None the neighbor's catalog values are copied
    directly and the result is flagged ``copied``.
    """
    j1 = new_job.job_id
    if j1 not in catalog:
        catalog.register_job(new_job)
    with_records = [j for j in catalog.jobs_with_records() if j != j1]
    ranked = catalog.ranked_jobs(new_job, exclude=(j1,), candidates=with_records)
    if not ranked:
        raise LookupError("catalog holds no job with throughput records to compare against")
    result = InitialEstimate(j1, ranked[0], copied=p1 is None)

    partners = [SENTINEL_ID]
    for j in active_jobs:
        if j != j1 and j not in partners:
            partners.append(j)

    psi_new = catalog.vector(j1)
    plans: List[Tuple[str, str, np.ndarray, Tuple[float, float]]] = []
    for acc in accelerators:
        acc_vec = _one_hot(list(catalog.accelerators), acc)
        for j3 in partners:
            ctx = _context(catalog, acc, j1, j3, ranked, with_records)
            if ctx is None:
                result.skipped.append((acc, j3))
                continue
            x, y = ctx
            c_in = _combo(x, y)
            t_x, t_y = catalog.lookup(acc, x, c_in), catalog.lookup(acc, y, c_in)
            plans.append((acc, j3, p1_input(catalog.vector(x), catalog.vector(y), acc_vec,
                                            t_x, t_y, psi_new), (t_x, t_y)))
    if not plans:
        return result
    if p1 is None:
        preds = np.array([copied for *_, copied in plans])
    else:
        preds = p1.predict(np.stack([inp for _, _, inp, _ in plans]))
    preds = np.clip(preds, 0.0, 1.0)
    for (acc, j3, _, _), (t1, t3) in zip(plans, preds):
        c = _combo(j1, j3)
        catalog.put_estimate(acc, j1, c, t1)
        result.rows.append(EstimateRow(acc, j1, c, float(t1)))
        if j3 != SENTINEL_ID:
            catalog.put_estimate(acc, j3, c, t3)
            result.rows.append(EstimateRow(acc, j3, c, float(t3)))
    return result


@dataclass
class Measurement:
    acc: str
    combo: Combination
    values: Mapping[str, float]


@dataclass
class RefineResult:
    updates: List[EstimateRow] = field(default_factory=list)
    skipped: List[Tuple[str, str]] = field(default_factory=list)


def _ordered(combo: Combination) -> Tuple[str, str]:
    return (combo.members[0], SENTINEL_ID) if combo.is_solo else combo.members


def refine(p2: Regressor, catalog: Catalog, measured: Measurement,
           target_accs: Iterable[str]) -> RefineResult:
    """Record a measurement and push refined estimates to the other accelerator types."""
    a1, c = measured.acc, measured.combo
    j1, j2 = _ordered(c)
    if set(measured.values) != set(c.members):
        raise ValueError(f"measurement must cover exactly the members of {c}")
    est_a1 = [catalog.lookup(a1, j1, c), catalog.lookup(a1, j2, c)]
    meas_a1 = [float(measured.values[j1]), float(measured.values.get(j2, 0.0))]
    for j in c.members:
        catalog.record_measurement(a1, j, c, measured.values[j])

    result = RefineResult()
    accs = list(catalog.accelerators)
    psi1, psi2 = catalog.vector(j1), catalog.vector(j2)
    plans = []
    seen = set()
    for a2 in target_accs:
        if a2 == a1 or a2 in seen:
            continue
        seen.add(a2)
        missing = [j for j in c.members if not catalog.has(a2, j, c)]
        if missing:
            result.skipped.extend((a2, j) for j in missing)
            continue
        est_a2 = [catalog.lookup(a2, j1, c), catalog.lookup(a2, j2, c)]
        plans.append((a2, p2_input(psi1, psi2, _one_hot(accs, a1), _one_hot(accs, a2),
                                   est_a1, meas_a1, est_a2)))
    if not plans:
        return result
    preds = np.clip(p2.predict(np.stack([inp for _, inp in plans])), 0.0, 1.0)
    for (a2, _), out in zip(plans, preds):
        for j, v in zip((j1, j2), out):
            if j == SENTINEL_ID:
                continue
            catalog.put_estimate(a2, j, c, v)
            result.updates.append(EstimateRow(a2, j, c, float(v)))
    return result


# ------------------------------------------------------------------ estimators

class LearnedEstimator:
    """Initial and refinement regressors wired to the catalog."""

    name = "learned"

    def __init__(self, p1: Regressor, p2: Regressor):
        self.p1, self.p2 = p1, p2

    def initial(self, catalog, job, accelerators, active_jobs) -> InitialEstimate:
        return estimate_initial(self.p1, catalog, job, accelerators, active_jobs)

    def refine(self, catalog, measured: Measurement, target_accs) -> RefineResult:
        return refine(self.p2, catalog, measured, target_accs)


class NeighborCopyEstimator:
    """Baseline: copy the nearest job's catalog values, never refine."""

    name = "copy"

    def initial(self, catalog, job, accelerators, active_jobs) -> InitialEstimate:
        return estimate_initial(None, catalog, job, accelerators, active_jobs)

    def refine(self, catalog, measured: Measurement, target_accs) -> RefineResult:
        for j in measured.combo.members:
            catalog.record_measurement(measured.acc, j, measured.combo, measured.values[j])
        return RefineResult()


class OracleEstimator:
    """Reads the ground truth directly; isolates optimizer behavior from estimation error."""

    name = "oracle"

    def __init__(self, gt: GroundTruth):
        self.gt = gt

    def initial(self, catalog, job, accelerators, active_jobs) -> InitialEstimate:
        j1 = job.job_id
        if j1 not in catalog:
            catalog.register_job(job)
        result = InitialEstimate(j1, None)
        partners = [j for j in dict.fromkeys(active_jobs) if j != j1]
        for acc in accelerators:
            for c in [Combination.solo(j1)] + [Combination.pair(j1, p) for p in partners]:
                if not self.gt.has(acc, c):
                    result.skipped.append((acc, c.partner(j1)))
                    continue
                for j in ([j1] + [m for m in c.members if m != j1]):
                    v = self.gt.throughput(acc, j, c)
                    catalog.put_estimate(acc, j, c, v)
                    result.rows.append(EstimateRow(acc, j, c, v))
        return result

    def refine(self, catalog, measured: Measurement, target_accs) -> RefineResult:
        c = measured.combo
        for j in c.members:
            catalog.record_measurement(measured.acc, j, c, measured.values[j])
        result = RefineResult()
        for a2 in dict.fromkeys(target_accs):
            if a2 == measured.acc:
                continue
            for j in c.members:
                if not catalog.has(a2, j, c):
                    result.skipped.append((a2, j))
                    continue
                v = self.gt.throughput(a2, j, c)
                catalog.put_estimate(a2, j, c, v)
                result.updates.append(EstimateRow(a2, j, c, v))
        return result


# ------------------------------------------------------------------ training

def evaluate_mae(model: Regressor, samples) -> float:
    """MAE of clamped predictions over every output of every sample."""
    x, y = stack(samples)
    if len(x) == 0:
        return float("nan")
    return float(np.mean(np.abs(np.clip(model.predict(x), 0.0, 1.0) - y)))


def fit_p1(gt: GroundTruth, train_jobs: Sequence[str], val_jobs: Sequence[str] = (),
           hidden: Sequence[int] = (64, 64), hyper: Optional[TrainConfig] = None,
           k: int = DEFAULT_NEIGHBORS, seed: int = 0) -> Tuple[Regressor, TrainReport]:
    """Train the initial estimator on ``train_jobs``.

    Validation samples estimate each held-out job from its single nearest
    training neighbor, as at inference time.
    """
    schema = gt.schema
    tr = build_p1_samples(gt, schema, jobs=train_jobs, pool=train_jobs, k=k)
    va = build_p1_samples(gt, schema, jobs=val_jobs, pool=train_jobs, k=1) if val_jobs else []
    model = Regressor.new([p1_width(schema.width, len(gt.acc_ids)), *hidden, 2], seed=seed)
    report = train(model, stack(tr), stack(va) if va else None, hyper)
    return model, report


def fit_p2(gt: GroundTruth, train_jobs: Sequence[str], val_jobs: Sequence[str] = (),
           noise_sigma: float = 0.1, hidden: Sequence[int] = (64, 64),
           hyper: Optional[TrainConfig] = None, seed: int = 0) -> Tuple[Regressor, TrainReport]:
    schema = gt.schema
    tr = build_p2_samples(gt, noise_sigma, seed, jobs=train_jobs)
    va = (build_p2_samples(gt, noise_sigma, seed + 1, jobs=list(train_jobs) + list(val_jobs),
                           focus=val_jobs) if val_jobs else [])
    model = Regressor.new([p2_width(schema.width, len(gt.acc_ids)), *hidden, 2], seed=seed + 1)
    report = train(model, stack(tr), stack(va) if va else None, hyper)
    return model, report
