"""Throughput tables: loading, synthetic generation, feature encoding, splitting.

Raw throughputs are iterations/second. Everything downstream works on the
normalized scale ``raw / normalizer`` where the normalizer is the largest raw
throughput anywhere in the table, so normalized values live in [0, 1].

Table CSV layout (one row per measurement; an empty ``co_model`` marks a solo row)::

    model,batch_size,accelerator,co_model,co_batch_size,throughput_self,throughput_other
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .domain import SENTINEL_ID, AcceleratorType, Combination, JobSpec

log = logging.getLogger(__name__)

CSV_HEADER = ["model", "batch_size", "accelerator", "co_model", "co_batch_size",
              "throughput_self", "throughput_other"]

GAVEL_ACCELERATORS = ("k80", "p100", "v100",
                      "k80_unconsolidated", "p100_unconsolidated", "v100_unconsolidated")

# batch sets of the public workload suite
GAVEL_WORKLOADS: Dict[str, Tuple[int, ...]] = {
    "resnet18": (16, 32, 64, 128, 256),
    "resnet50": (16, 32, 64, 128, 256),
    "transformer": (16, 32, 128, 256),
    "lm": (5, 10, 20, 80),
    "recommendation": (512, 1024, 2048, 8192),
}

# (idle watts, watts per unit of normalized load) by GPU class
CLASS_POWER = {"k80": (50.0, 100.0), "p100": (60.0, 175.0), "v100": (70.0, 250.0)}


class TableFormatError(ValueError):
    """Malformed throughput table. ``lineno`` is 1-based, or None for whole-file problems."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


def default_accelerator(name: str, capacity: int = 2) -> AcceleratorType:
    gpu_class = name.split("_")[0]
    alpha, beta = CLASS_POWER.get(gpu_class, (50.0, 100.0))
    return AcceleratorType(acc_id=name, name=name, capacity=capacity,
                           power_idle=alpha, power_per_unit_load=beta)


@dataclass(frozen=True)
class FeatureSchema:
    """Fixed layout of job feature vectors: family one-hot, log2 batch, replication.

    Batch sizes are scaled per family over that family's log2 batch range, so the
    smallest batch of every family encodes to 0 and the largest to 1.
    """

    families: Tuple[str, ...]
    batch_ranges: Mapping[str, Tuple[float, float]]
    replication_range: Tuple[float, float] = (1.0, 1.0)

    @classmethod
    def from_jobs(cls, jobs: Iterable[JobSpec]) -> "FeatureSchema":
        ranges: Dict[str, List[float]] = {}
        reps = []
        for j in jobs:
            if j.is_sentinel:
                continue
            lb = math.log2(j.batch_size)
            lo_hi = ranges.setdefault(j.model_family, [lb, lb])
            lo_hi[0] = min(lo_hi[0], lb)
            lo_hi[1] = max(lo_hi[1], lb)
            reps.append(float(j.replication))
        fams = tuple(sorted(ranges))
        rep_range = (min(reps), max(reps)) if reps else (1.0, 1.0)
        return cls(fams, MappingProxyType({f: (r[0], r[1]) for f, r in ranges.items()}), rep_range)

    @property
    def width(self) -> int:
        return len(self.families) + 2

    def encode(self, spec: JobSpec) -> np.ndarray:
        return encode(spec, self)


def _scale(value: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.0
    return (value - lo) / (hi - lo)


def encode(spec: JobSpec, schema: FeatureSchema) -> np.ndarray:
    vec = np.zeros(schema.width)
    if spec.is_sentinel:
        return vec
    try:
        idx = schema.families.index(spec.model_family)
    except ValueError:
        raise ValueError(f"unknown model family {spec.model_family!r}") from None
    vec[idx] = 1.0
    lo, hi = schema.batch_ranges[spec.model_family]
    vec[-2] = _scale(math.log2(spec.batch_size), lo, hi)
    vec[-1] = _scale(float(spec.replication), *schema.replication_range)
    return vec


@dataclass(frozen=True)
class GroundTruth:
    """Complete measured throughput table for solo and pairwise co-location."""

    accelerators: Tuple[AcceleratorType, ...]
    jobs: Tuple[JobSpec, ...]
    solo: Mapping[Tuple[str, str], float]
    paired: Mapping[Tuple[str, Combination], Mapping[str, float]]
    normalizer: float = field(default=0.0)

    @classmethod
    def build(cls, accelerators: Sequence[AcceleratorType], jobs: Sequence[JobSpec],
              solo: Mapping[Tuple[str, str], float],
              paired: Mapping[Tuple[str, Combination], Mapping[str, float]]) -> "GroundTruth":
        values = list(solo.values()) + [v for d in paired.values() for v in d.values()]
        normalizer = max(values) if values else 1.0
        if normalizer <= 0:
            normalizer = 1.0
        frozen_pairs = MappingProxyType({k: MappingProxyType(dict(v)) for k, v in paired.items()})
        return cls(tuple(accelerators), tuple(jobs), MappingProxyType(dict(solo)),
                   frozen_pairs, float(normalizer))

    @cached_property
    def acc_ids(self) -> Tuple[str, ...]:
        return tuple(a.acc_id for a in self.accelerators)

    @cached_property
    def job_ids(self) -> Tuple[str, ...]:
        return tuple(j.job_id for j in self.jobs)

    @cached_property
    def _jobs_by_id(self) -> Dict[str, JobSpec]:
        return {j.job_id: j for j in self.jobs}

    @cached_property
    def schema(self) -> FeatureSchema:
        return FeatureSchema.from_jobs(self.jobs)

    def job(self, job_id: str) -> JobSpec:
        return self._jobs_by_id[job_id]

    def accelerator(self, acc_id: str) -> AcceleratorType:
        for a in self.accelerators:
            if a.acc_id == acc_id:
                return a
        raise KeyError(acc_id)

    def has(self, acc: str, combo: Combination) -> bool:
        if combo.is_solo:
            return (acc, combo.members[0]) in self.solo
        return (acc, combo) in self.paired

    def raw(self, acc: str, job: str, combo: Combination) -> float:
        if job == SENTINEL_ID:
            return 0.0
        if job not in combo:
            raise KeyError(f"{job} not in {combo}")
        if combo.is_solo:
            return self.solo[(acc, job)]
        return self.paired[(acc, combo)][job]

    def throughput(self, acc: str, job: str, combo: Combination) -> float:
        """Normalized throughput of ``job`` under ``combo`` on ``acc``."""
        return self.raw(acc, job, combo) / self.normalizer

    def pair_throughputs(self, acc: str, j1: str, j2: str) -> Tuple[float, float]:
        c = Combination.pair(j1, j2)
        return self.throughput(acc, j1, c), self.throughput(acc, j2, c)

    def with_accelerators(self, accelerators: Sequence[AcceleratorType]) -> "GroundTruth":
        """Same measurements with replaced accelerator parameters (ids must match)."""
        if tuple(a.acc_id for a in accelerators) != self.acc_ids:
            raise ValueError("accelerator ids must match the table")
        return replace(self, accelerators=tuple(accelerators))


# --------------------------------------------------------------------------- I/O

def _parse_int(text: str, what: str, lineno: int) -> int:
    try:
        v = int(text)
    except ValueError:
        raise TableFormatError(f"{what} {text!r} is not an integer", lineno) from None
    if v < 1:
        raise TableFormatError(f"{what} must be positive, got {v}", lineno)
    return v


def _parse_float(text: str, what: str, lineno: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise TableFormatError(f"{what} {text!r} is not a number", lineno) from None
    if not math.isfinite(v) or v < 0:
        raise TableFormatError(f"{what} must be finite and nonnegative, got {text!r}", lineno)
    return v


def load_table(path, capacity: int = 2) -> GroundTruth:
    """Parse a throughput CSV into a GroundTruth.

    Self-pairings (a job co-located with a copy of itself) are skipped with a
    warning since combinations hold distinct jobs.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TableFormatError("empty file")
    header = [h.strip() for h in rows[0]]
    if header != CSV_HEADER:
        raise TableFormatError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", 1)
    if len(rows) == 1:
        raise TableFormatError(f"{path}: no data rows")

    acc_order: List[str] = []
    jobs: Dict[str, JobSpec] = {}
    solo: Dict[Tuple[str, str], float] = {}
    paired: Dict[Tuple[str, Combination], Dict[str, float]] = {}

    def job_for(model: str, batch: int) -> str:
        spec = JobSpec.make(model, batch)
        jobs.setdefault(spec.job_id, spec)
        return spec.job_id

    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise TableFormatError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", lineno)
        model, batch, acc, co_model, co_batch, t_self, t_other = (c.strip() for c in row)
        if not model:
            raise TableFormatError("empty model", lineno)
        if not acc:
            raise TableFormatError("empty accelerator", lineno)
        j1 = job_for(model, _parse_int(batch, "batch_size", lineno))
        v1 = _parse_float(t_self, "throughput_self", lineno)
        if acc not in acc_order:
            acc_order.append(acc)
        if not co_model:
            if co_batch or t_other:
                raise TableFormatError("solo row must leave co_batch_size and throughput_other empty", lineno)
            if (acc, j1) in solo:
                raise TableFormatError(f"duplicate solo entry for {j1} on {acc}", lineno)
            solo[(acc, j1)] = v1
            continue
        j2 = job_for(co_model, _parse_int(co_batch, "co_batch_size", lineno))
        v2 = _parse_float(t_other, "throughput_other", lineno)
        if j1 == j2:
            log.warning("line %d: skipping self-pairing of %s on %s", lineno, j1, acc)
            continue
        key = (acc, Combination.pair(j1, j2))
        if key in paired:
            raise TableFormatError(f"duplicate entry for {key[1]} on {acc}", lineno)
        paired[key] = {j1: v1, j2: v2}

    for acc in acc_order:
        for j in jobs:
            if (acc, j) not in solo:
                raise TableFormatError(f"missing solo entry for {j} on {acc}")
    for (acc, combo), vals in paired.items():
        for j, v in vals.items():
            if v > solo[(acc, j)]:
                log.warning("%s on %s: co-located throughput %g exceeds solo %g",
                            j, acc, v, solo[(acc, j)])

    accs = [default_accelerator(a, capacity) for a in acc_order]
    ordered_jobs = sorted(jobs.values(), key=lambda s: (s.model_family, s.batch_size))
    return GroundTruth.build(accs, ordered_jobs, solo, paired)


def write_table(gt: GroundTruth, path) -> None:
    """Write raw throughputs in the CSV layout; ``load_table`` reads it back exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for acc in gt.acc_ids:
            for j in gt.jobs:
                w.writerow([j.model_family, j.batch_size, acc, "", "", repr(float(gt.solo[(acc, j.job_id)])), ""])
            for (a, combo), vals in gt.paired.items():
                if a != acc:
                    continue
                x, y = (gt.job(m) for m in combo.members)
                w.writerow([x.model_family, x.batch_size, acc, y.model_family, y.batch_size,
                            repr(float(vals[x.job_id])), repr(float(vals[y.job_id]))])


# --------------------------------------------------------------------- synthetic

def synthesize(accelerators: Sequence[AcceleratorType], families: Mapping[str, Sequence[int]],
               interference: float, seed: int,
               acc_speeds: Optional[Sequence[float]] = None) -> GroundTruth:
    """Product-form synthetic table with encoding-driven co-location interference.

    solo(a, j) = speed[a] * base[f] * (b_min[f] / b) ** kappa[f]
    paired(a, j | k) = solo(a, j) * (1 - interference * contention(j, k))
    contention(j, k) = pressure(k) * (0.5 + 0.5 * pressure(j))
    """
    if not accelerators or not families or any(len(b) == 0 for b in families.values()):
        raise ValueError("need at least one accelerator, family and batch size")
    if not 0.0 <= interference <= 1.0:
        raise ValueError(f"interference must lie in [0, 1], got {interference}")
    rng = np.random.default_rng(seed)
    n_acc = len(accelerators)
    if acc_speeds is None:
        speeds = np.sort(rng.uniform(1.0, 3.0, n_acc))
    else:
        speeds = np.asarray(acc_speeds, dtype=float)
        if speeds.shape != (n_acc,) or np.any(speeds <= 0):
            raise ValueError("acc_speeds must give one positive speed per accelerator")
    fam_names = sorted(families)
    base = dict(zip(fam_names, rng.uniform(50.0, 100.0, len(fam_names))))
    kappa = dict(zip(fam_names, rng.uniform(0.3, 0.8, len(fam_names))))
    pressure_f = dict(zip(fam_names, rng.uniform(0.2, 1.0, len(fam_names))))

    jobs = [JobSpec.make(f, b) for f in fam_names for b in sorted(set(families[f]))]
    schema = FeatureSchema.from_jobs(jobs)

    def pressure(spec: JobSpec) -> float:
        vec = encode(spec, schema)
        fam = fam_names[int(np.argmax(vec[:len(fam_names)]))]
        return pressure_f[fam] * (0.6 + 0.4 * vec[-2])

    solo: Dict[Tuple[str, str], float] = {}
    for a, speed in zip(accelerators, speeds):
        for j in jobs:
            bmin = min(families[j.model_family])
            curve = (bmin / j.batch_size) ** kappa[j.model_family]
            solo[(a.acc_id, j.job_id)] = float(speed * (base[j.model_family] * curve))

    press = {j.job_id: pressure(j) for j in jobs}
    paired: Dict[Tuple[str, Combination], Dict[str, float]] = {}
    for a in accelerators:
        for i, x in enumerate(jobs):
            for y in jobs[i + 1:]:
                cx = press[y.job_id] * (0.5 + 0.5 * press[x.job_id])
                cy = press[x.job_id] * (0.5 + 0.5 * press[y.job_id])
                paired[(a.acc_id, Combination.pair(x.job_id, y.job_id))] = {
                    x.job_id: float(solo[(a.acc_id, x.job_id)] * (1.0 - interference * cx)),
                    y.job_id: float(solo[(a.acc_id, y.job_id)] * (1.0 - interference * cy)),
                }
    return GroundTruth.build(accelerators, jobs, solo, paired)


def synthetic_accelerators(n_acc: int, capacity: int = 2) -> List[AcceleratorType]:
    """Accelerators ``acc0..acc{n-1}`` with power scaled by rank (slowest first)."""
    out = []
    for r in range(n_acc):
        frac = r / (n_acc - 1) if n_acc > 1 else 0.0
        out.append(AcceleratorType(acc_id=f"acc{r}", name=f"acc{r}", capacity=capacity,
                                   power_idle=50.0 * (1.0 + 0.4 * frac),
                                   power_per_unit_load=100.0 + 150.0 * frac))
    return out


def generate_synthetic(n_acc: int, n_families: int, batches_per_family: int,
                       interference: float, noise_seed: int,
                       acc_speeds: Optional[Sequence[float]] = None,
                       capacity: int = 2) -> GroundTruth:
    """Synthetic table with families ``synthetic-k`` and batch sizes 16, 32, 64, ..."""
    if min(n_acc, n_families, batches_per_family) < 1:
        raise ValueError("n_acc, n_families and batches_per_family must all be >= 1")
    families = {f"synthetic-{k}": [16 * 2 ** i for i in range(batches_per_family)]
                for k in range(n_families)}
    return synthesize(synthetic_accelerators(n_acc, capacity), families, interference,
                      noise_seed, acc_speeds)


def gavel_like_table(seed: int = 0, interference: float = 0.3) -> GroundTruth:
    """Synthetic stand-in for the public workload suite: six accelerator types, 22 jobs."""
    speeds = {"k80": 1.0, "p100": 2.3, "v100": 3.6,
              "k80_unconsolidated": 0.9, "p100_unconsolidated": 2.0, "v100_unconsolidated": 3.1}
    accs = [default_accelerator(a) for a in GAVEL_ACCELERATORS]
    return synthesize(accs, GAVEL_WORKLOADS, interference, seed,
                      acc_speeds=[speeds[a] for a in GAVEL_ACCELERATORS])


# ------------------------------------------------------------------------- split

def split(gt: GroundTruth, train_frac: float, val_frac: float, seed: int
          ) -> Tuple[List[str], List[str], List[str]]:
    """Partition job ids (not samples) into train/val/test."""
    if train_frac <= 0 or val_frac < 0 or train_frac + val_frac > 1 + 1e-12:
        raise ValueError("need train_frac > 0, val_frac >= 0 and train_frac + val_frac <= 1")
    ids = sorted(j.job_id for j in gt.jobs if not j.is_sentinel)
    order = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    n = len(ids)
    n_train = int(round(train_frac * n))
    n_val = int(round(val_frac * n))
    n_test = n - n_train - n_val
    want_test = 1 - train_frac - val_frac > 1e-12
    if n_train < 1 or (val_frac > 0 and n_val < 1) or n_test < 0 or (want_test and n_test < 1):
        raise ValueError(f"{n} jobs are too few for fractions {train_frac}/{val_frac}")
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
