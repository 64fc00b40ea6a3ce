import json
import math

import numpy as np
import pytest

from gpuorch.dataset import generate_synthetic
from gpuorch.domain import Combination
from gpuorch.optimizer import Server
from gpuorch.regressor import TrainConfig
from gpuorch.simulator import (Scenario, compare, default_sla, load_traces, metrics, run,
                               write_records)


@pytest.fixture(scope="module")
def gt():
    return generate_synthetic(2, 3, 3, 0.3, 5)


def scenario(gt, estimator="copy", n_boot=5, n_arrive=3, servers=2, seed=0, **kw):
    order = [gt.job_ids[i] for i in np.random.default_rng(seed).permutation(len(gt.job_ids))]
    boot, arrive = order[:n_boot], order[n_boot:n_boot + n_arrive]
    kw.setdefault("sla", default_sla(gt, arrive, 0.4))
    return Scenario(gt, [Server(f"s{i}", gt.acc_ids) for i in range(servers)], boot, arrive,
                    estimator=estimator, **kw)


def test_zero_rounds_is_an_empty_run(gt):
    res = run(scenario(gt, rounds=0))
    assert res.traces == []
    assert res.summary["energy_watt_rounds"] == 0.0
    assert res.summary["rounds"] == 0


def test_one_trace_per_round(gt):
    res = run(scenario(gt, rounds=5))
    assert [t.round for t in res.traces] == list(range(5))
    assert [t.arrived for t in res.traces][3:] == [None, None]


def test_runs_are_deterministic(gt):
    scn = scenario(gt, "learned", noise_sigma=0.05, hidden=(8,),
                   train=TrainConfig(epochs=15))
    a, b = run(scn, seed=4), run(scn, seed=4)
    assert [t.to_json() for t in a.traces] == [t.to_json() for t in b.traces]
    assert json.dumps(a.summary, sort_keys=True) == json.dumps(b.summary, sort_keys=True)


def test_energy_is_the_sum_of_per_round_power(gt):
    res = run(scenario(gt, noise_sigma=0.1), seed=1)
    per_round = []
    for t in res.traces:
        terms = []
        for acc, server, members, thr, idle, per_unit in t.allocation["assignments"]:
            terms.append(idle)
            terms.extend(per_unit * v for v in thr)
        assert t.metrics["watts"] == math.fsum(terms)
        per_round.append(t.metrics["watts"])
    assert res.summary["energy_watt_rounds"] == math.fsum(per_round)


def test_metrics_recompute_from_written_traces(gt, tmp_path):
    res = run(scenario(gt, noise_sigma=0.05), seed=2)
    res.write(tmp_path)
    back = load_traces(tmp_path / "trace.jsonl")
    again = metrics(back)
    stored = json.loads((tmp_path / "summary.json").read_text())
    for k, v in again.items():
        assert stored[k] == pytest.approx(v, nan_ok=True)
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert timing["solves"] >= len(back)
    assert "seconds" not in (tmp_path / "trace.jsonl").read_text()


def test_round_metrics_match_their_own_fields(gt):
    for t in run(scenario(gt, noise_sigma=0.1), seed=3).traces:
        short = sum(1 for _, need, got in t.sla if got < need - 1e-9)
        assert t.metrics["sla_violations"] == short + len(t.deferred)
        if t.estimates:
            mae = math.fsum(abs(r[3] - r[4]) for r in t.estimates) / len(t.estimates)
            assert t.metrics["estimate_mae"] == mae


def test_measurements_without_noise_equal_truth(gt):
    res = run(scenario(gt, "oracle"))
    for t in res.traces:
        for acc, _, members, values in t.measurements:
            c = Combination(members)
            assert values == [gt.throughput(acc, j, c) for j in c.members]


def test_oracle_without_noise_meets_every_sla(gt):
    s = run(scenario(gt, "oracle", n_boot=0, n_arrive=6, servers=3)).summary
    assert s["infeasible_rounds"] == 0
    assert s["sla_violations"] == 0


def test_infeasible_arrival_is_deferred(gt):
    # one accelerator, and each job needs its full solo throughput there, so sharing fails
    acc = gt.acc_ids[-1]
    arrive = list(gt.job_ids[:2])
    sla = {j: (gt.throughput(acc, j, Combination.solo(j)), 1) for j in arrive}
    scn = Scenario(gt, [Server("s0", (acc,))], (), arrive, sla, estimator="oracle")
    traces = run(scn).traces
    assert traces[0].admitted == [arrive[0]]
    assert traces[1].deferred == [arrive[1]]
    assert traces[1].allocation["status"] == "optimal"
    assert traces[1].metrics["sla_violations"] >= 1
    assert arrive[1] not in traces[1].active


def test_nothing_fits_records_an_infeasible_round(gt):
    j = gt.job_ids[0]
    scn = Scenario(gt, [Server("s0", (gt.acc_ids[0],))], (), [j], {j: (5.0, 1)},
                   estimator="oracle")
    t = run(scn).traces[0]
    assert t.deferred == [j] and t.active == []
    assert t.metrics["watts"] == 0.0 and t.metrics["sla_violations"] == 1
    assert run(scn).summary["sla_violation_rate"] == 1.0


def test_refinements_skip_accelerators_already_used_by_the_combination(gt):
    for t in run(scenario(gt, "learned", hidden=(8,), train=TrainConfig(epochs=10))).traces:
        used = {}
        for acc, _, members, *_ in t.allocation["assignments"]:
            used.setdefault(tuple(members), set()).add(acc)
        for acc, job, members, _ in t.refinements:
            assert acc not in used[tuple(members)]


def test_scenario_validation(gt):
    ids = gt.job_ids
    servers = [Server("s0", gt.acc_ids)]
    sla = default_sla(gt, ids)
    with pytest.raises(ValueError):
        Scenario(gt, servers, [ids[0]], [ids[0]], sla)  # overlap
    with pytest.raises(ValueError):
        Scenario(gt, servers, [ids[0]], [ids[1], ids[1]], sla)
    with pytest.raises(ValueError):
        Scenario(gt, servers, [ids[0]], ["ghost"], sla)
    with pytest.raises(ValueError):
        Scenario(gt, servers, [ids[0]], [ids[1]], sla, estimator="psychic")
    with pytest.raises(ValueError):
        Scenario(gt, servers, [], [ids[1]], sla, estimator="learned")
    with pytest.raises(ValueError):
        Scenario(gt, servers, [ids[0]], [ids[1]], sla, noise_sigma=-1)
    with pytest.raises(ValueError):
        Scenario(gt, servers, [ids[0]], [ids[1]], sla, rounds=-1)
    with pytest.raises(ValueError):
        Scenario(gt, servers, [ids[0]], [ids[1]], {})
    with pytest.raises(ValueError):
        Scenario(gt, [Server("s0", ("tpu",))], [ids[0]], [ids[1]], sla)


def test_more_bootstrap_coverage_lowers_estimate_error():
    table = generate_synthetic(3, 4, 5, 0.3, 7)
    few, many = [], []
    for seed in range(20):
        order = [table.job_ids[i] for i in np.random.default_rng(seed).permutation(20)]
        arrive, pool = order[:4], order[4:]
        sla = default_sla(table, arrive, 0.3)
        servers = [Server(f"s{i}", table.acc_ids) for i in range(2)]
        for frac, out in ((0.2, few), (0.8, many)):
            boot = pool[:round(frac * len(pool))]
            res = run(Scenario(table, servers, boot, arrive, sla, estimator="copy"), seed)
            out.append(res.summary["mean_p1_mae"])
    assert np.mean(many) <= np.mean(few)


def test_compare_emits_flat_records(gt, tmp_path):
    recs = compare([scenario(gt, name="copy"), scenario(gt, "oracle", name="oracle")], seeds=[0, 1])
    assert [(r["scenario"], r["seed"]) for r in recs] == [("copy", 0), ("copy", 1),
                                                          ("oracle", 0), ("oracle", 1)]
    assert all("estimate_mae_per_round" not in r and "mean_solver_seconds" in r for r in recs)
    path = tmp_path / "r.jsonl"
    write_records(recs, path)
    assert len(path.read_text().splitlines()) == 4
