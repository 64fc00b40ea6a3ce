import numpy as np
import pytest

from gpuorch.catalog import Catalog
from gpuorch.dataset import GroundTruth, default_accelerator, gavel_like_table, generate_synthetic
from gpuorch.domain import SENTINEL_ID, Combination, JobSpec
from gpuorch.estimation import (LearnedEstimator, Measurement, NeighborCopyEstimator,
                                OracleEstimator, build_p1_samples, build_p2_samples,
                                estimate_initial, evaluate_mae, fit_p1, fit_p2, p1_width,
                                p2_width, refine)
from gpuorch.optimizer import all_combinations
from gpuorch.regressor import Regressor, TrainConfig


def constant_model(n_in, outputs):
    """A model that ignores its input and always predicts ``outputs``."""
    return Regressor([n_in, len(outputs)], [np.zeros((n_in, len(outputs)))],
                     [np.array(outputs, dtype=float)])


def measured_catalog(gt, jobs):
    cat = Catalog(gt.acc_ids, gt.schema)
    for j in jobs:
        cat.register_job(gt.job(j))
    for a in gt.acc_ids:
        for c in all_combinations(jobs):
            for j in c.members:
                cat.record_measurement(a, j, c, gt.throughput(a, j, c))
    return cat


# -- sample construction

def test_widths(synth):
    F, A = synth.schema.width, len(synth.acc_ids)
    assert (F, A) == (6, 3)
    assert p1_width(F, A) == 3 * 6 + 3 + 2
    assert p2_width(F, A) == 2 * 6 + 2 * 3 + 6
    s1 = build_p1_samples(synth, k=1)[0]
    assert s1.x.shape == (p1_width(F, A),)
    s2 = build_p2_samples(synth, 0.0, seed=0)[0]
    assert s2.x.shape == (p2_width(F, A),)


def test_two_job_solo_table_gives_two_samples():
    acc = default_accelerator("k80")
    jobs = [JobSpec.make("f", 16), JobSpec.make("f", 32)]
    gt = GroundTruth.build([acc], jobs, {("k80", "f-16"): 4.0, ("k80", "f-32"): 2.0}, {})
    samples = build_p1_samples(gt, k=1)
    assert len(samples) == 2
    for s in samples:
        assert s.j3 == SENTINEL_ID
        F = gt.schema.width
        # partner features and partner throughput are zero for the empty slot
        assert np.all(s.x[F:2 * F] == 0)
        assert s.x[2 * F + 1 + 1] == 0.0
        assert s.y[1] == 0.0
    by_target = {s.j1: s for s in samples}
    assert by_target["f-16"].y[0] == 1.0 and by_target["f-16"].x[2 * F + 1] == 0.5
    assert by_target["f-32"].y[0] == 0.5 and by_target["f-32"].x[2 * F + 1] == 1.0


def test_empty_ground_truth_gives_no_samples():
    gt = GroundTruth.build([default_accelerator("k80")], [], {}, {})
    assert build_p1_samples(gt) == []
    assert build_p2_samples(gt, 0.1, seed=0) == []


def test_p1_sample_values_come_from_the_table(synth):
    F = synth.schema.width
    for s in build_p1_samples(synth, k=2)[::97]:
        c_in = Combination.solo(s.j2) if s.j3 == SENTINEL_ID else Combination.pair(s.j2, s.j3)
        c_out = Combination.solo(s.j1) if s.j3 == SENTINEL_ID else Combination.pair(s.j1, s.j3)
        assert s.x[2 * F + 3] == synth.throughput(s.acc, s.j2, c_in)
        assert s.x[2 * F + 4] == synth.throughput(s.acc, s.j3, c_in)
        assert s.y.tolist() == [synth.throughput(s.acc, s.j1, c_out),
                                synth.throughput(s.acc, s.j3, c_out)]
        # the target job's own throughput never appears among the inputs
        assert s.j1 not in (s.j2, s.j3)


def test_p1_sample_count(synth):
    # each of 16 jobs x 3 neighbors x 3 accelerators x (sentinel + 14 partners)
    assert len(build_p1_samples(synth, k=3)) == 16 * 3 * 3 * 15


def test_p2_samples_noise_free_priors_equal_truth(synth):
    F, A = synth.schema.width, len(synth.acc_ids)
    samples = build_p2_samples(synth, 0.0, seed=0)
    est_a1 = slice(2 * F + 2 * A, 2 * F + 2 * A + 2)
    meas_a1 = slice(2 * F + 2 * A + 2, 2 * F + 2 * A + 4)
    est_a2 = slice(2 * F + 2 * A + 4, 2 * F + 2 * A + 6)
    for s in samples[::53]:
        assert np.array_equal(s.x[est_a1], s.x[meas_a1])
        assert np.array_equal(s.x[est_a2], s.y)
    orders = {(s.j1, s.j2) for s in samples}
    jobs = synth.job_ids
    assert (jobs[0], jobs[1]) in orders and (jobs[1], jobs[0]) in orders


def test_p2_samples_are_seeded_and_clamped(synth):
    a = build_p2_samples(synth, 0.5, seed=3)
    b = build_p2_samples(synth, 0.5, seed=3)
    assert all(np.array_equal(x.x, y.x) for x, y in zip(a, b))
    xs = np.stack([s.x for s in a])
    assert xs.min() >= 0.0 and xs.max() <= 1.0
    with pytest.raises(ValueError):
        build_p2_samples(synth, -0.1, seed=0)


# -- initial estimation

def test_row_counts_with_six_accelerators():
    gt = gavel_like_table()
    known = ["resnet18-16", "resnet18-64", "lm-5"]
    cat = measured_catalog(gt, known)
    model = constant_model(p1_width(gt.schema.width, 6), [0.3, 0.2])
    result = estimate_initial(model, cat, gt.job("resnet18-32"), gt.acc_ids, [])
    assert len(result.rows) == 6  # solo only
    assert all(r.combo.is_solo for r in result.rows)

    cat.register_job(gt.job("lm-10"))
    result = estimate_initial(model, cat, gt.job("resnet50-32"), gt.acc_ids, ["lm-5"])
    own = {(r.acc, r.combo) for r in result.for_job("resnet50-32")}
    assert len(own) == 6 * 2
    partner_rows = [r for r in result.rows if r.job == "lm-5"]
    assert len(partner_rows) == 6
    assert all(r.value == 0.2 for r in partner_rows)
    assert cat.lookup("k80", "resnet50-32", Combination.solo("resnet50-32")) == 0.3


def test_predictions_are_clamped(synth):
    known = list(synth.job_ids[:6])
    cat = measured_catalog(synth, known)
    model = constant_model(p1_width(synth.schema.width, 3), [1.7, -0.4])
    new = synth.job_ids[8]
    result = estimate_initial(model, cat, synth.job(new), synth.acc_ids, [known[0]])
    values = {(r.job == new, r.value) for r in result.rows}
    assert values == {(True, 1.0), (False, 0.0)}


def test_copy_fallback_uses_the_neighbor_values(synth):
    known = list(synth.job_ids[:4])
    cat = measured_catalog(synth, known)
    new = synth.job(synth.job_ids[5])
    result = estimate_initial(None, cat, new, synth.acc_ids, [])
    assert result.copied
    nb = result.neighbor
    assert nb == cat.ranked_jobs(new, exclude=[new.job_id], candidates=known)[0]
    for r in result.rows:
        assert r.value == synth.throughput(r.acc, nb, Combination.solo(nb))


def test_no_records_means_no_neighbor(synth):
    cat = Catalog(synth.acc_ids, synth.schema)
    with pytest.raises(LookupError):
        estimate_initial(None, cat, synth.job(synth.job_ids[0]), synth.acc_ids, [])


def test_identical_job_estimates_track_the_neighbor():
    gt = generate_synthetic(3, 4, 4, 0.0, 7)
    train_ids = [j for j in gt.job_ids if not j.endswith("-64")]
    val_ids = [j for j in gt.job_ids if j.endswith("-64")]
    p1, report = fit_p1(gt, train_ids, val_ids, hyper=TrainConfig(seed=0), seed=0)
    gaps = []
    for twin_of in train_ids:
        cat = measured_catalog(gt, train_ids)
        src = gt.job(twin_of)
        result = estimate_initial(p1, cat, JobSpec("twin", src.model_family, src.batch_size),
                                  gt.acc_ids, [])
        assert result.neighbor == twin_of
        gaps += [abs(r.value - gt.throughput(r.acc, twin_of, Combination.solo(twin_of)))
                 for r in result.rows]
    assert np.mean(gaps) <= report.final_val_mae


# -- refinement

def test_refine_records_measurement_and_appends(synth):
    jobs = list(synth.job_ids[:3])
    cat = Catalog(synth.acc_ids, synth.schema)
    for j in jobs:
        cat.register_job(synth.job(j))
    c = Combination.pair(jobs[0], jobs[1])
    for a in synth.acc_ids:
        for j in c.members:
            cat.put_estimate(a, j, c, 0.5)
    model = constant_model(p2_width(synth.schema.width, 3), [0.2, 0.9])
    a1 = synth.acc_ids[0]
    res = refine(model, cat, Measurement(a1, c, {jobs[0]: 0.4, jobs[1]: 0.6}), synth.acc_ids)
    assert cat.lookup(a1, jobs[0], c) == 0.4
    assert len(res.updates) == 2 * 2
    for a2 in synth.acc_ids[1:]:
        assert cat.record(a2, jobs[0], c).refinement_set == [0.5, 0.2]
        assert cat.lookup(a2, jobs[1], c) == pytest.approx((0.5 + 0.9) / 2)


def test_refine_solo_only_updates_the_real_job(synth):
    j = synth.job_ids[0]
    cat = Catalog(synth.acc_ids, synth.schema)
    cat.register_job(synth.job(j))
    c = Combination.solo(j)
    for a in synth.acc_ids:
        cat.put_estimate(a, j, c, 0.5)
    model = constant_model(p2_width(synth.schema.width, 3), [0.3, 0.8])
    res = refine(model, cat, Measurement(synth.acc_ids[1], c, {j: 0.45}), synth.acc_ids)
    assert [(u.acc, u.job) for u in res.updates] == [(synth.acc_ids[0], j), (synth.acc_ids[2], j)]


def test_refine_on_the_measured_accelerator_only_is_a_no_op(synth):
    j = synth.job_ids[0]
    cat = Catalog(synth.acc_ids, synth.schema)
    cat.register_job(synth.job(j))
    c = Combination.solo(j)
    cat.put_estimate(synth.acc_ids[0], j, c, 0.5)
    model = constant_model(p2_width(synth.schema.width, 3), [0.3, 0.8])
    res = refine(model, cat, Measurement(synth.acc_ids[0], c, {j: 0.45}), [synth.acc_ids[0]])
    assert res.updates == [] and res.skipped == []


def test_refine_skips_targets_without_priors(synth):
    j = synth.job_ids[0]
    cat = Catalog(synth.acc_ids, synth.schema)
    cat.register_job(synth.job(j))
    c = Combination.solo(j)
    cat.put_estimate(synth.acc_ids[0], j, c, 0.5)
    cat.put_estimate(synth.acc_ids[1], j, c, 0.5)
    model = constant_model(p2_width(synth.schema.width, 3), [0.3, 0.8])
    res = refine(model, cat, Measurement(synth.acc_ids[0], c, {j: 0.45}), synth.acc_ids)
    assert res.skipped == [(synth.acc_ids[2], j)]
    assert [u.acc for u in res.updates] == [synth.acc_ids[1]]


def test_refine_rejects_partial_measurements(synth):
    jobs = synth.job_ids[:2]
    cat = measured_catalog(synth, list(jobs))
    model = constant_model(p2_width(synth.schema.width, 3), [0.3, 0.8])
    with pytest.raises(ValueError):
        refine(model, cat, Measurement(synth.acc_ids[0], Combination.pair(*jobs), {jobs[0]: 0.1}),
               synth.acc_ids)


# -- estimator strategies

def test_oracle_estimator_writes_truth(synth):
    est = OracleEstimator(synth)
    cat = Catalog(synth.acc_ids, synth.schema)
    a, b = synth.job_ids[:2]
    est.initial(cat, synth.job(a), synth.acc_ids, [])
    est.initial(cat, synth.job(b), synth.acc_ids, [a])
    for acc in synth.acc_ids:
        for c in all_combinations([a, b]):
            for j in c.members:
                assert cat.lookup(acc, j, c) == synth.throughput(acc, j, c)


def test_copy_estimator_never_refines(synth):
    cat = measured_catalog(synth, list(synth.job_ids[:3]))
    c = Combination.solo(synth.job_ids[0])
    before = [r.refinement_set[:] for r in cat.records()]
    res = NeighborCopyEstimator().refine(cat, Measurement(synth.acc_ids[0], c,
                                                          {synth.job_ids[0]: 0.25}), synth.acc_ids)
    assert res.updates == []
    assert [r.refinement_set for r in cat.records()] == before
    assert cat.lookup(synth.acc_ids[0], synth.job_ids[0], c) == 0.25


def test_learned_models_beat_copying(synth):
    from gpuorch.dataset import split
    tr, va, te = split(synth, 0.7, 0.15, seed=0)
    p1, _ = fit_p1(synth, tr, va, hyper=TrainConfig(seed=0), seed=0)
    p2, _ = fit_p2(synth, tr, va, hyper=TrainConfig(seed=0), seed=0)
    test = build_p1_samples(synth, jobs=te, pool=tr, k=1)
    learned = evaluate_mae(p1, test)
    copy = float(np.mean([abs(s.x[2 * synth.schema.width + 3] - s.y[0]) for s in test]))
    assert learned < copy
    assert isinstance(LearnedEstimator(p1, p2), LearnedEstimator)
