"""Core domain types shared by every module: jobs, accelerator types, combinations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Tuple

SENTINEL_ID = "<j0>"  # cannot clash with "family-batch" ids


@dataclass(frozen=True)
class JobSpec:
    """A machine learning job: its attribute vector plus SLA fields.

    ``min_throughput`` is on the normalized throughput scale. ``distributability``
    caps how many accelerator placements the job may receive.
    """

    job_id: str
    model_family: str
    batch_size: int
    replication: int = 1
    min_throughput: float = 0.0
    distributability: int = 1
    is_sentinel: bool = False

    def __post_init__(self):
        if not self.is_sentinel:
            if self.batch_size < 1:
                raise ValueError(f"{self.job_id}: batch_size must be >= 1")
            if self.replication < 1:
                raise ValueError(f"{self.job_id}: replication must be >= 1")
        if self.min_throughput < 0:
            raise ValueError(f"{self.job_id}: min_throughput must be >= 0")
        if self.distributability < 1:
            raise ValueError(f"{self.job_id}: distributability must be >= 1")

    @classmethod
    def make(cls, family: str, batch_size: int, **kwargs) -> "JobSpec":
        return cls(job_id=f"{family}-{batch_size}", model_family=family,
                   batch_size=batch_size, **kwargs)


SENTINEL = JobSpec(job_id=SENTINEL_ID, model_family="", batch_size=0,
                   replication=0, is_sentinel=True)


@dataclass(frozen=True)
class AcceleratorType:
    acc_id: str
    name: str
    capacity: int = 2
    power_idle: float = 50.0
    power_per_unit_load: float = 100.0

    def __post_init__(self):
        if self.capacity not in (1, 2):
            raise ValueError(f"{self.acc_id}: capacity must be 1 or 2, got {self.capacity}")
        if self.power_idle < 0 or self.power_per_unit_load < 0:
            raise ValueError(f"{self.acc_id}: power parameters must be nonnegative")


@dataclass(frozen=True, order=True, init=False)
class Combination:
    """One or two distinct jobs sharing a single accelerator."""

    members: Tuple[str, ...]

    def __init__(self, members: Iterable[str]):
        given = list(members)
        ms = tuple(sorted(set(given)))
        if len(ms) != len(given) or not 1 <= len(ms) <= 2:
            raise ValueError(f"combination must hold 1 or 2 distinct jobs, got {given}")
        if SENTINEL_ID in ms:
            raise ValueError("the sentinel job never appears inside a combination")
        object.__setattr__(self, "members", ms)

    @classmethod
    def solo(cls, job: str) -> "Combination":
        return cls((job,))

    @classmethod
    def pair(cls, a: str, b: str) -> "Combination":
        if a == b:
            raise ValueError(f"pair members must differ, got {a!r} twice")
        return cls((a, b))

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def is_solo(self) -> bool:
        return len(self.members) == 1

    def __contains__(self, job) -> bool:
        return job in self.members

    def __iter__(self):
        return iter(self.members)

    def partner(self, job: str) -> str:
        """The other member, or the sentinel id for a solo combination."""
        if job not in self.members:
            raise KeyError(job)
        if self.is_solo:
            return SENTINEL_ID
        a, b = self.members
        return b if job == a else a

    def __str__(self):
        return "+".join(self.members)
