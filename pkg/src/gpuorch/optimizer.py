"""Energy-minimizing allocation of job combinations to accelerators.

Decision variables are binary placements x[a, s, c]: combination ``c`` runs on the
accelerator of type ``a`` in server ``s``. Power of one accelerator is affine,
``idle + per_unit * load`` while in use, where load is the summed normalized
throughput of the jobs it hosts. Constraints:

* assignment      every job gets at least one placement
* distributability  ... and at most ``distributability`` placements
* capacity        jobs on an accelerator never exceed its capacity
* throughput      a job's throughput summed over all its placements meets its minimum
* exclusivity     an accelerator hosts at most one combination

``solve`` is an exact depth-first branch and bound over accelerator slots with
linear-relaxation bounds for small instances and the HiGHS MIP solver beyond that. ``brute_force`` enumerates every placement for small
instances and serves as its oracle. Among equal-cost optima both return the
first one in slot order, trying each slot's combinations in sorted order before
leaving the slot empty.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .domain import AcceleratorType, Combination, JobSpec

Placement = Tuple[str, str, Combination]  # (acc type, server, combination)

FEAS_TOL = 1e-9
BRUTE_FORCE_MAX_SLOTS = 4
BRUTE_FORCE_MAX_JOBS = 4
MIP_REL_GAP = 1e-9


class MissingThroughputError(KeyError):
    pass


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Server:
    server_id: str
    accelerators: Tuple[str, ...]

    def __post_init__(self):
        if len(set(self.accelerators)) != len(self.accelerators):
            raise ValueError(f"server {self.server_id} lists an accelerator type twice")


def all_combinations(job_ids: Sequence[str]) -> List[Combination]:
    ids = sorted(job_ids)
    return ([Combination.solo(j) for j in ids]
            + [Combination.pair(a, b) for a, b in itertools.combinations(ids, 2)])


@dataclass
class AllocationInstance:
    servers: Tuple[Server, ...]
    accelerators: Mapping[str, AcceleratorType]
    jobs: Tuple[JobSpec, ...]
    combos: Tuple[Combination, ...]
    throughput: Mapping[Tuple[str, str, Combination], float]

    def __post_init__(self):
        self.servers = tuple(self.servers)
        self.jobs = tuple(self.jobs)
        self.combos = tuple(self.combos)

    def slots(self) -> List[Tuple[str, str]]:
        """Every (acc type, server) accelerator, sorted."""
        return sorted((a, s.server_id) for s in self.servers for a in s.accelerators)

    def job(self, job_id: str) -> JobSpec:
        for j in self.jobs:
            if j.job_id == job_id:
                return j
        raise KeyError(job_id)

    # -- file format

    def to_dict(self) -> dict:
        return {
            "servers": [{"id": s.server_id, "accelerators": list(s.accelerators)} for s in self.servers],
            "accelerators": [
                {"id": a.acc_id, "name": a.name, "capacity": a.capacity,
                 "power_idle": a.power_idle, "power_per_unit_load": a.power_per_unit_load}
                for a in self.accelerators.values()],
            "jobs": [{"id": j.job_id, "model_family": j.model_family, "batch_size": j.batch_size,
                      "min_throughput": j.min_throughput, "distributability": j.distributability}
                     for j in self.jobs],
            "combos": [list(c.members) for c in self.combos],
            "throughput": [{"acc": a, "job": j, "combo": list(c.members), "value": v}
                           for (a, j, c), v in self.throughput.items()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AllocationInstance":
        servers = tuple(Server(s["id"], tuple(s["accelerators"])) for s in data["servers"])
        accs = {a["id"]: AcceleratorType(a["id"], a.get("name", a["id"]), int(a["capacity"]),
                                         float(a["power_idle"]), float(a["power_per_unit_load"]))
                for a in data["accelerators"]}
        jobs = tuple(JobSpec(j["id"], j.get("model_family", "unknown"), int(j.get("batch_size", 1)),
                             min_throughput=float(j["min_throughput"]),
                             distributability=int(j.get("distributability", 1)))
                     for j in data["jobs"])
        if "combos" in data:
            combos = tuple(Combination(c) for c in data["combos"])
        else:
            combos = tuple(all_combinations([j.job_id for j in jobs]))
        thr = {(t["acc"], t["job"], Combination(t["combo"])): float(t["value"])
               for t in data["throughput"]}
        return cls(servers, accs, jobs, combos, thr)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AllocationInstance":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Allocation:
    assignments: Tuple[Placement, ...]
    objective_watts: float
    per_job_throughput: Dict[str, float]
    status: str  # "optimal" | "infeasible" | "gap"
    bound: float = math.nan
    nodes: int = 0
    seconds: float = field(default=0.0, compare=False)

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective_watts": self.objective_watts,
            "bound": None if math.isnan(self.bound) else self.bound,
            "assignments": [{"acc": a, "server": s, "combo": list(c.members)}
                            for a, s, c in self.assignments],
            "per_job_throughput": dict(sorted(self.per_job_throughput.items())),
        }


@dataclass
class ILP:
    instance: AllocationInstance
    slots: List[Tuple[str, str]]
    variables: List[Placement]
    slot_vars: List[List[int]]
    cost: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    row_names: List[str]
    job_ids: List[str]
    job_vars: List[List[int]]
    job_thr: List[np.ndarray]

    @property
    def n_vars(self) -> int:
        return len(self.variables)


def _placement_terms(instance: AllocationInstance, acc: str, combo: Combination) -> List[float]:
    a = instance.accelerators[acc]
    return [a.power_idle] + [a.power_per_unit_load * instance.throughput[(acc, j, combo)]
                             for j in combo.members]


def build(instance: AllocationInstance) -> ILP:
    """Enumerate variables in (acc, server, combo) order and assemble A_ub x <= b_ub."""
    job_ids = [j.job_id for j in instance.jobs]
    for c in instance.combos:
        for m in c.members:
            if m not in job_ids:
                raise KeyError(f"combination {c} names unknown job {m}")
    slots = instance.slots()
    combos = sorted(instance.combos)
    variables: List[Placement] = []
    slot_vars: List[List[int]] = []
    for a, s in slots:
        acc = instance.accelerators[a]
        ids = []
        for c in combos:
            for j in c.members:
                if (a, j, c) not in instance.throughput:
                    raise MissingThroughputError(f"no throughput for {j} under {c} on {a}")
            if c.size > acc.capacity:
                continue
            ids.append(len(variables))
            variables.append((a, s, c))
        slot_vars.append(ids)

    n = len(variables)
    cost = np.array([sum(_placement_terms(instance, a, c)) for a, _, c in variables])
    rows, rhs, names = [], [], []
    job_vars: List[List[int]] = []
    job_thr: List[np.ndarray] = []
    for spec in instance.jobs:
        j = spec.job_id
        idx = [k for k, (_, _, c) in enumerate(variables) if j in c]
        thr = np.zeros(n)
        for k in idx:
            a, _, c = variables[k]
            thr[k] = instance.throughput[(a, j, c)]
        ind = np.zeros(n)
        ind[idx] = 1.0
        rows += [-ind, ind, -thr]
        rhs += [-1.0, float(spec.distributability), -spec.min_throughput]
        names += [f"assignment[{j}]", f"distributability[{j}]", f"throughput[{j}]"]
        job_vars.append(idx)
        job_thr.append(thr)
    for (a, s), ids in zip(slots, slot_vars):
        size = np.zeros(n)
        one = np.zeros(n)
        for k in ids:
            size[k] = variables[k][2].size
            one[k] = 1.0
        rows += [size, one]
        rhs += [float(instance.accelerators[a].capacity), 1.0]
        names += [f"capacity[{a}@{s}]", f"exclusivity[{a}@{s}]"]
    A = np.array(rows) if rows else np.zeros((0, n))
    return ILP(instance, slots, variables, slot_vars, cost, A, np.array(rhs), names,
               job_ids, job_vars, job_thr)


def power_of(instance: AllocationInstance, allocation: Allocation) -> float:
    """Total watts of an allocation, summed with correctly rounded ``math.fsum``."""
    terms: List[float] = []
    for a, _, c in allocation.assignments:
        terms.extend(_placement_terms(instance, a, c))
    return math.fsum(terms)


def _throughputs(instance: AllocationInstance, assignments: Sequence[Placement]) -> Dict[str, float]:
    parts: Dict[str, List[float]] = {j.job_id: [] for j in instance.jobs}
    for a, _, c in assignments:
        for j in c.members:
            parts.setdefault(j, []).append(instance.throughput[(a, j, c)])
    return {j: math.fsum(v) for j, v in parts.items()}


def _allocation(instance: AllocationInstance, assignments: Sequence[Placement], status: str,
                bound: float = math.nan, nodes: int = 0) -> Allocation:
    alloc = Allocation(tuple(assignments), 0.0, _throughputs(instance, assignments), status,
                       bound, nodes)
    alloc.objective_watts = power_of(instance, alloc)
    return alloc


def _infeasible(instance: AllocationInstance, bound: float = math.inf, nodes: int = 0) -> Allocation:
    return Allocation((), math.nan, {j.job_id: 0.0 for j in instance.jobs}, "infeasible", bound, nodes)


# ------------------------------------------------------------------ exact solve

class _Search:
    def __init__(self, ilp: ILP, time_limit: Optional[float]):
        self.ilp = ilp
        inst = ilp.instance
        self.deadline = None if time_limit is None else time.monotonic() + time_limit
        self.nodes = 0
        self.timed_out = False
        self.best_cost = math.inf
        self.best: Optional[List[int]] = None
        self.best_from_dfs = False
        n = ilp.n_vars
        self.var_terms = [_placement_terms(inst, a, c) for a, _, c in ilp.variables]
        self.var_jobs = [[ilp.job_ids.index(j) for j in c.members] for _, _, c in ilp.variables]
        self.var_thr = [[inst.throughput[(a, j, c)] for j in c.members] for a, _, c in ilp.variables]
        self.need = [inst.job(j).min_throughput for j in ilp.job_ids]
        self.dist = [inst.job(j).distributability for j in ilp.job_ids]
        # best throughput each job can get from each slot
        self.slot_best = np.zeros((len(ilp.slots), len(ilp.job_ids)))
        for si, ids in enumerate(ilp.slot_vars):
            for k in ids:
                for jj, t in zip(self.var_jobs[k], self.var_thr[k]):
                    self.slot_best[si, jj] = max(self.slot_best[si, jj], t)
        self.slot_covers = self.slot_best > 0
        for si, ids in enumerate(ilp.slot_vars):
            for k in ids:
                for jj in self.var_jobs[k]:
                    self.slot_covers[si, jj] = True
        # min_cover[d][j]: cheapest placement covering job j among slots d..end
        n_jobs = len(ilp.job_ids)
        self.min_cover = [[math.inf] * n_jobs for _ in range(len(ilp.slots) + 1)]
        for si in range(len(ilp.slots) - 1, -1, -1):
            row = list(self.min_cover[si + 1])
            for k in ilp.slot_vars[si]:
                for jj in self.var_jobs[k]:
                    row[jj] = min(row[jj], float(ilp.cost[k]))
            self.min_cover[si] = row

    def _tol(self, v: float) -> float:
        return 1e-9 * max(1.0, abs(v))

    def _lp(self, depth: int, choice: List[int], counts: List[int]) -> Tuple[float, Optional[np.ndarray]]:
        ilp = self.ilp
        lo = np.zeros(ilp.n_vars)
        hi = np.ones(ilp.n_vars)
        for si in range(depth):
            ids = ilp.slot_vars[si]
            hi[ids] = 0.0
            if choice[si] >= 0:
                lo[choice[si]] = hi[choice[si]] = 1.0
        for jj, cnt in enumerate(counts):
            if cnt >= self.dist[jj]:
                for k in ilp.job_vars[jj]:
                    if lo[k] == 0.0:
                        hi[k] = 0.0
        if ilp.n_vars == 0:
            return 0.0, np.zeros(0)
        res = linprog(ilp.cost, A_ub=ilp.A_ub, b_ub=ilp.b_ub,
                      bounds=np.column_stack([lo, hi]), method="highs")
        if res.status == 2:
            return math.inf, None
        if res.status != 0:
            # numerical trouble: fall back to the trivially valid bound
            fixed = sum(ilp.cost[choice[si]] for si in range(depth) if choice[si] >= 0)
            return float(fixed), None
        return float(res.fun), res.x

    def _cover_cost(self, depth: int, counts: List[int]) -> float:
        # every job still unplaced needs some remaining placement: the priciest
        # of those cheapest options is a valid lower bound on the extra cost
        extra = 0.0
        for jj, cnt in enumerate(counts):
            if cnt == 0:
                extra = max(extra, self.min_cover[depth][jj])
        return extra

    def _prunable(self, bound: float) -> bool:
        if self.best is None:
            return False
        if self.best_from_dfs:
            return bound >= self.best_cost - self._tol(self.best_cost)
        return bound > self.best_cost + self._tol(self.best_cost)

    def _offer(self, chosen: List[int], from_dfs: bool) -> None:
        cost = math.fsum(t for k in chosen for t in self.var_terms[k])
        if cost < self.best_cost or (from_dfs and not self.best_from_dfs and cost <= self.best_cost):
            self.best_cost, self.best, self.best_from_dfs = cost, list(chosen), from_dfs

    def _feasible_leaf(self, chosen: List[int]) -> bool:
        counts = [0] * len(self.need)
        thr: List[List[float]] = [[] for _ in self.need]
        for k in chosen:
            for jj, t in zip(self.var_jobs[k], self.var_thr[k]):
                counts[jj] += 1
                thr[jj].append(t)
        return all(1 <= counts[jj] <= self.dist[jj] and
                   math.fsum(thr[jj]) >= self.need[jj] - FEAS_TOL for jj in range(len(self.need)))

    def run(self) -> None:
        ilp = self.ilp
        n_slots = len(ilp.slots)
        choice = [-1] * n_slots
        counts = [0] * len(self.need)
        thr = [0.0] * len(self.need)
        self.root_bound, _ = self._lp(0, choice, counts)
        if math.isinf(self.root_bound):
            return
        self._dfs(0, choice, counts, thr)

    def _dfs(self, depth: int, choice: List[int], counts: List[int], thr: List[float]) -> None:
        if self.timed_out:
            return
        self.nodes += 1
        if self.deadline is not None and self.nodes % 16 == 0 and time.monotonic() > self.deadline:
            self.timed_out = True
            return
        ilp = self.ilp
        n_slots = len(ilp.slots)
        chosen = [choice[si] for si in range(depth) if choice[si] >= 0]

        # quick feasibility: can every job still be covered and reach its minimum?
        for jj in range(len(self.need)):
            room = self.dist[jj] - counts[jj]
            if room < 0:
                return
            rest = self.slot_best[depth:, jj]
            extra = float(np.sum(np.sort(rest)[::-1][:room])) if room else 0.0
            if thr[jj] + extra < self.need[jj] - FEAS_TOL:
                return
            if counts[jj] == 0 and not self.slot_covers[depth:, jj].any():
                return

        satisfied = all(counts[jj] >= 1 and thr[jj] >= self.need[jj] - FEAS_TOL
                        for jj in range(len(self.need)))
        if depth == n_slots or (satisfied and all(
                ilp.cost[k] > 0 for si in range(depth, n_slots) for k in ilp.slot_vars[si])):
            # leaving every remaining slot empty is the unique cheapest completion
            if self._feasible_leaf(chosen):
                self._offer(chosen, from_dfs=True)
            return

        fixed_cost = math.fsum(t for k in chosen for t in self.var_terms[k])
        if self._prunable(fixed_cost + self._cover_cost(depth, counts)):
            return
        if n_slots - depth <= 1:
            # children are leaves; scoring them directly is cheaper than an LP
            bound, x = fixed_cost, None
        else:
            bound, x = self._lp(depth, choice, counts)
        if math.isinf(bound) or self._prunable(bound):
            return
        if x is not None and np.all(np.abs(x - np.round(x)) <= 1e-9):
            cand = [k for k in range(ilp.n_vars) if x[k] > 0.5]
            if self._feasible_leaf(cand):
                self._offer(cand, from_dfs=False)

        for k in ilp.slot_vars[depth] + [-1]:
            if k >= 0:
                js = self.var_jobs[k]
                if any(counts[jj] >= self.dist[jj] for jj in js):
                    continue
            choice[depth] = k
            if k >= 0:
                for jj, t in zip(self.var_jobs[k], self.var_thr[k]):
                    counts[jj] += 1
                    thr[jj] += t
            self._dfs(depth + 1, choice, counts, thr)
            if k >= 0:
                for jj, t in zip(self.var_jobs[k], self.var_thr[k]):
                    counts[jj] -= 1
                    thr[jj] -= t
            choice[depth] = -1
            if self.timed_out:
                return


def _canonical(instance: AllocationInstance, placements: Sequence[Placement]) -> List[Placement]:
    """Relabel interchangeable servers so equal-cost symmetric answers print identically."""
    by_server: Dict[str, List[Placement]] = {s.server_id: [] for s in instance.servers}
    for p in placements:
        by_server[p[1]].append(p)
    groups: Dict[Tuple[str, ...], List[str]] = {}
    for s in instance.servers:
        groups.setdefault(tuple(sorted(s.accelerators)), []).append(s.server_id)
    out: List[Placement] = []
    for ids in groups.values():
        bundles = sorted((sorted((a, c.members) for a, _, c in by_server[s]) for s in ids),
                         key=lambda b: (len(b) == 0, b))
        for sid, bundle in zip(sorted(ids), bundles):
            out.extend((a, sid, Combination(m)) for a, m in bundle)
    return sorted(out, key=_placement_key)


def _solve_mip(ilp: ILP, time_limit: Optional[float]) -> Allocation:
    inst = ilp.instance
    if ilp.n_vars == 0:
        return _infeasible(inst) if inst.jobs else _allocation(inst, [], "optimal", 0.0)
    options = {"mip_rel_gap": MIP_REL_GAP}
    if time_limit is not None:
        options["time_limit"] = float(time_limit)
    res = milp(ilp.cost, integrality=np.ones(ilp.n_vars), bounds=Bounds(0.0, 1.0),
               constraints=[LinearConstraint(ilp.A_ub, -np.inf, ilp.b_ub)], options=options)
    bound = getattr(res, "mip_dual_bound", None)
    bound = math.nan if bound is None else float(bound)
    if res.x is None:
        status = "infeasible" if res.status == 2 else "gap"
        alloc = _infeasible(inst, math.inf if status == "infeasible" else bound)
        alloc.status = status
        return alloc
    chosen = [ilp.variables[k] for k in range(ilp.n_vars) if res.x[k] > 0.5]
    status = "optimal" if res.status == 0 else "gap"
    alloc = _allocation(inst, _canonical(inst, chosen), status, bound)
    if status == "optimal":
        alloc.bound = alloc.objective_watts
    return alloc


def solve(ilp: ILP, time_limit: Optional[float] = 60.0) -> Allocation:
    """Minimum-power allocation, or ``gap`` status when the time limit hits.

    Instances small enough for ``brute_force`` go through the exact branch and
    bound, which returns the first optimum in slot order. Larger ones are handed
    to the HiGHS MIP solver; their answer is optimal to a relative gap of
    ``MIP_REL_GAP`` with interchangeable servers put in a canonical order.
    """
    t0 = time.monotonic()
    inst = ilp.instance
    if len(ilp.slots) > BRUTE_FORCE_MAX_SLOTS or len(ilp.job_ids) > BRUTE_FORCE_MAX_JOBS:
        alloc = _solve_mip(ilp, time_limit)
        alloc.seconds = time.monotonic() - t0
        return alloc
    search = _Search(ilp, time_limit)
    search.run()
    root = getattr(search, "root_bound", math.inf)
    if search.best is None:
        status = "gap" if search.timed_out else "infeasible"
        alloc = _infeasible(inst, root, search.nodes)
        alloc.status = status
    else:
        status = "gap" if search.timed_out else "optimal"
        placements = sorted((ilp.variables[k] for k in search.best), key=_placement_key)
        alloc = _allocation(inst, placements, status,
                            root if search.timed_out else search.best_cost, search.nodes)
    alloc.seconds = time.monotonic() - t0
    return alloc


def _placement_key(p: Placement):
    a, s, c = p
    return (a, s, c.members)


# ------------------------------------------------------------------ oracle

def brute_force(instance: AllocationInstance) -> Allocation:
    """Enumerate every way to give each accelerator one combination or nothing."""
    slots = instance.slots()
    jobs = [j.job_id for j in instance.jobs]
    if len(slots) > BRUTE_FORCE_MAX_SLOTS or len(jobs) > BRUTE_FORCE_MAX_JOBS:
        raise InstanceTooLarge(f"{len(slots)} accelerators / {len(jobs)} jobs exceed the "
                               f"enumeration bound ({BRUTE_FORCE_MAX_SLOTS}/{BRUTE_FORCE_MAX_JOBS})")
    combos = sorted(instance.combos)
    n_opt = len(combos) + 1  # last option leaves the accelerator empty
    n_jobs = len(jobs)
    cost = np.zeros((len(slots), n_opt))
    count = np.zeros((len(slots), n_opt, n_jobs))
    thr = np.zeros((len(slots), n_opt, n_jobs))
    fits = np.ones((len(slots), n_opt), dtype=bool)
    for si, (a, _) in enumerate(slots):
        acc = instance.accelerators[a]
        for ci, c in enumerate(combos):
            fits[si, ci] = c.size <= acc.capacity
            cost[si, ci] = acc.power_idle
            for j in c.members:
                t = instance.throughput[(a, j, c)]
                cost[si, ci] += acc.power_per_unit_load * t
                count[si, ci, jobs.index(j)] = 1
                thr[si, ci, jobs.index(j)] = t

    grid = np.array(list(itertools.product(range(n_opt), repeat=len(slots))), dtype=int)
    if len(slots) == 0:
        grid = np.zeros((1, 0), dtype=int)
    rows = np.arange(len(slots))
    ok = np.all(fits[rows, grid], axis=1)
    cnt = count[rows, grid].sum(axis=1)
    tot = thr[rows, grid].sum(axis=1)
    need = np.array([instance.job(j).min_throughput for j in jobs])
    dist = np.array([instance.job(j).distributability for j in jobs])
    ok &= np.all((cnt >= 1) & (cnt <= dist), axis=1)
    ok &= np.all(tot >= need - FEAS_TOL - 1e-12, axis=1)
    total = cost[rows, grid].sum(axis=1)
    if not ok.any():
        return _infeasible(instance)

    def placements(row) -> List[Placement]:
        return [(slots[si][0], slots[si][1], combos[o]) for si, o in enumerate(row) if o < len(combos)]

    def exact_feasible(pl: List[Placement]) -> bool:
        per = _throughputs(instance, pl)
        return all(per[j] >= instance.job(j).min_throughput - FEAS_TOL for j in jobs)

    idx = np.flatnonzero(ok)
    approx_min = total[idx].min()
    near = [i for i in idx if total[i] <= approx_min + 1e-6 * max(1.0, abs(approx_min))]
    best_cost, best_row = math.inf, None
    for i in near:  # enumeration order, so the first exact minimum wins ties
        pl = placements(grid[i])
        if not exact_feasible(pl):
            continue
        c = math.fsum(t for a, _, cb in pl for t in _placement_terms(instance, a, cb))
        if c < best_cost:
            best_cost, best_row = c, pl
    if best_row is None:
        return _infeasible(instance)
    return _allocation(instance, sorted(best_row, key=_placement_key), "optimal", best_cost)


# ------------------------------------------------------------------ validation

@dataclass(frozen=True)
class Violation:
    constraint: str
    index: str
    message: str

    def __str__(self):
        return f"{self.constraint}[{self.index}]: {self.message}"


def validate(instance: AllocationInstance, allocation: Allocation) -> List[Violation]:
    out: List[Violation] = []
    servers = {s.server_id: s for s in instance.servers}
    combos = set(instance.combos)
    per_slot: Dict[Tuple[str, str], List[Combination]] = {}
    counts: Dict[str, int] = {j.job_id: 0 for j in instance.jobs}
    thr: Dict[str, List[float]] = {j.job_id: [] for j in instance.jobs}
    for a, s, c in allocation.assignments:
        if s not in servers or a not in servers[s].accelerators:
            out.append(Violation("placement", f"{a}@{s}", "no such accelerator"))
            continue
        if c not in combos:
            out.append(Violation("placement", str(c), "combination not offered"))
            continue
        per_slot.setdefault((a, s), []).append(c)
        for j in c.members:
            counts[j] += 1
            thr[j].append(instance.throughput[(a, j, c)])
    for spec in instance.jobs:
        j = spec.job_id
        if counts[j] < 1:
            out.append(Violation("assignment", j, "job has no placement"))
        if counts[j] > spec.distributability:
            out.append(Violation("distributability", j,
                                 f"{counts[j]} placements exceed limit {spec.distributability}"))
        got = math.fsum(thr[j])
        if got < spec.min_throughput - FEAS_TOL:
            out.append(Violation("throughput", j, f"{got:.6g} < required {spec.min_throughput:.6g}"))
    for (a, s), cs in sorted(per_slot.items()):
        load = sum(c.size for c in cs)
        cap = instance.accelerators[a].capacity
        if load > cap:
            out.append(Violation("capacity", f"{a}@{s}", f"{load} jobs exceed capacity {cap}"))
        if len(cs) > 1:
            out.append(Violation("exclusivity", f"{a}@{s}", f"{len(cs)} combinations assigned"))
    return out
