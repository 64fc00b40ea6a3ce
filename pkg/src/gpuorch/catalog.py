"""Registry of jobs and their per-(accelerator, job, combination) throughput knowledge.

Each record keeps the full history of estimates for one (acc, job, combo) key and,
once the job has actually run that way, the measured value. ``lookup`` returns the
measurement when there is one and otherwise the plain mean of the estimates.

Snapshot format: UTF-8 text, one record per line, tab-separated fields::

    acc <TAB> job <TAB> member[,member] <TAB> est[,est...] <TAB> measurement

with an empty field for a missing measurement (or an empty estimate history).
Floats are written with ``repr`` so export followed by import is value-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import FeatureSchema, encode
from .domain import SENTINEL, SENTINEL_ID, Combination, JobSpec

Key = Tuple[str, str, Combination]


class CatalogError(KeyError):
    pass


def rank_jobs(schema: FeatureSchema, query: JobSpec, candidates: Iterable[JobSpec]) -> List[str]:
    """Candidate ids ordered by Euclidean feature distance to ``query``, ties by id."""
    q = encode(query, schema)
    scored = sorted((float(np.linalg.norm(encode(c, schema) - q)), c.job_id)
                    for c in candidates if not c.is_sentinel)
    return [j for _, j in scored]


def _mean(values: Sequence[float]) -> float:
    # correctly rounded sum; clamp so rounding can never leave [min, max]
    m = math.fsum(values) / len(values)
    return min(max(m, min(values)), max(values))


@dataclass
class EstimateRecord:
    acc: str
    job: str
    combo: Combination
    refinement_set: List[float] = field(default_factory=list)
    measurement: Optional[float] = None

    def value(self) -> float:
        if self.measurement is not None:
            return self.measurement
        if not self.refinement_set:
            raise CatalogError(f"record {self.acc}/{self.job}/{self.combo} holds no value")
        return _mean(self.refinement_set)

    def estimate(self) -> Optional[float]:
        """Mean of the estimate history alone, ignoring any measurement."""
        if not self.refinement_set:
            return None
        return _mean(self.refinement_set)


class Catalog:
    """In-memory catalog. Single writer; callers serialize mutation."""

    def __init__(self, accelerators: Sequence[str], schema: FeatureSchema):
        self.accelerators: Tuple[str, ...] = tuple(accelerators)
        self.schema = schema
        self._jobs: Dict[str, JobSpec] = {SENTINEL_ID: SENTINEL}
        self._vectors: Dict[str, np.ndarray] = {SENTINEL_ID: encode(SENTINEL, schema)}
        self._records: Dict[Key, EstimateRecord] = {}
        self._has_records: Dict[str, int] = {}

    # -- jobs

    def register_job(self, spec: JobSpec) -> str:
        if spec.job_id in self._jobs:
            raise CatalogError(f"job {spec.job_id!r} already registered")
        self._vectors[spec.job_id] = encode(spec, self.schema)
        self._jobs[spec.job_id] = spec
        return spec.job_id

    def update_job(self, spec: JobSpec) -> None:
        """Replace a registered job's spec (e.g. to attach SLA fields); features must not change."""
        old = self.job(spec.job_id)
        if (old.model_family, old.batch_size, old.replication) != (
                spec.model_family, spec.batch_size, spec.replication):
            raise ValueError(f"cannot change the attributes of {spec.job_id}")
        self._jobs[spec.job_id] = spec

    def job(self, job_id: str) -> JobSpec:
        try:
            return self._jobs[job_id]
        except KeyError:
            raise CatalogError(f"unknown job {job_id!r}") from None

    def __contains__(self, job_id) -> bool:
        return job_id in self._jobs

    @property
    def job_ids(self) -> List[str]:
        return list(self._jobs)

    def __len__(self) -> int:
        return len(self._jobs)

    def vector(self, job_id: str) -> np.ndarray:
        return self._vectors[job_id]

    def ranked_jobs(self, query: JobSpec, exclude: Iterable[str] = (),
                    candidates: Optional[Iterable[str]] = None) -> List[str]:
        """Non-sentinel jobs ordered by feature distance to ``query``, ties by id."""
        skip = set(exclude) | {SENTINEL_ID}
        pool = self._jobs if candidates is None else candidates
        q = encode(query, self.schema)
        scored = [(float(np.linalg.norm(self._vectors[j] - q)), j)
                  for j in pool if j not in skip]
        scored.sort()
        return [j for _, j in scored]

    def nearest_job(self, query: JobSpec, exclude: Iterable[str] = ()) -> str:
        ranked = self.ranked_jobs(query, exclude)
        if not ranked:
            raise CatalogError("no candidate jobs to compare against")
        return ranked[0]

    def jobs_with_records(self) -> List[str]:
        return [j for j, n in self._has_records.items() if n > 0]

    # -- records

    def _check(self, acc: str, job: str, combo: Combination) -> Key:
        if acc not in self.accelerators:
            raise CatalogError(f"unknown accelerator {acc!r}")
        if job == SENTINEL_ID:
            raise CatalogError("the sentinel job carries no records")
        for j in combo.members:
            if j not in self._jobs:
                raise CatalogError(f"unknown job {j!r}")
        if job not in combo:
            raise CatalogError(f"{job} is not a member of {combo}")
        return acc, job, combo

    def _record_for_write(self, acc: str, job: str, combo: Combination) -> EstimateRecord:
        key = self._check(acc, job, combo)
        rec = self._records.get(key)
        if rec is None:
            rec = self._records[key] = EstimateRecord(acc, job, combo)
            self._has_records[job] = self._has_records.get(job, 0) + 1
        return rec

    def put_estimate(self, acc: str, job: str, combo: Combination, value: float) -> int:
        """Append an estimate; returns its round index within the record's history."""
        value = float(value)
        if not value >= 0:
            raise ValueError(f"estimate must be nonnegative, got {value}")
        rec = self._record_for_write(acc, job, combo)
        rec.refinement_set.append(value)
        return len(rec.refinement_set) - 1

    def record_measurement(self, acc: str, job: str, combo: Combination, value: float) -> None:
        value = float(value)
        if not value >= 0:
            raise ValueError(f"measurement must be nonnegative, got {value}")
        self._record_for_write(acc, job, combo).measurement = value

    def record(self, acc: str, job: str, combo: Combination) -> Optional[EstimateRecord]:
        return self._records.get((acc, job, combo))

    def has(self, acc: str, job: str, combo: Combination) -> bool:
        if job == SENTINEL_ID:
            return True
        return (acc, job, combo) in self._records

    def lookup(self, acc: str, job: str, combo: Combination) -> float:
        if job == SENTINEL_ID:
            return 0.0
        rec = self._records.get((acc, job, combo))
        if rec is None:
            raise CatalogError(f"no record for {job} under {combo} on {acc}")
        return rec.value()

    def records(self) -> Iterator[EstimateRecord]:
        return iter(self._records.values())

    # -- snapshots

    def export_snapshot(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            for rec in self._records.values():
                fh.write("\t".join([
                    rec.acc, rec.job, ",".join(rec.combo.members),
                    ",".join(repr(v) for v in rec.refinement_set),
                    "" if rec.measurement is None else repr(rec.measurement),
                ]) + "\n")

    def import_snapshot(self, path) -> int:
        """Load records into this catalog (jobs must already be registered). Returns the count."""
        n = 0
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 5:
                    raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields")
                acc, job, members, ests, meas = parts
                combo = Combination(members.split(","))
                rec = self._record_for_write(acc, job, combo)
                rec.refinement_set = [float(v) for v in ests.split(",")] if ests else []
                rec.measurement = float(meas) if meas else None
                n += 1
        return n
