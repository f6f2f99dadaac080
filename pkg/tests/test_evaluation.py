from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm

from amdm import DetectorKind, EvalConfig, Scenario, measure_latency, run_benchmark
from amdm.evaluation import (
    ablation_csv,
    ablation_sweep,
    auc,
    average_precision,
    count_false_positives,
    eligibility,
    evaluate_trace,
    fpr_at_tpr,
    injection_windows,
    mean_se,
    pooled_curves,
    pr_curve,
    roc_curve,
    segments,
    summarize,
    summary_csv,
)
from amdm.simulator import AnomalyInjection, AnomalyKind


def test_latency_example():
    truth = [None] * 300
    truth[100:140] = ["trust-shock"] * 40
    flags = np.zeros(300, dtype=bool)
    flags[[50, 111, 120]] = True
    assert measure_latency(flags, truth, step_seconds=0.5) == [5.5]


def test_latency_miss_and_horizon():
    truth = [None] * 100 + ["x"] * 10 + [None] * 100
    flags = np.zeros(210, dtype=bool)
    flags[130] = True  # past onset + 3 * duration
    assert measure_latency(flags, truth) == [None]
    flags[129] = True
    assert measure_latency(flags, truth) == [14.5]
    with pytest.raises(ValueError, match="no anomaly"):
        measure_latency(flags, [None] * 210)
    with pytest.raises(ValueError, match="aligned"):
        measure_latency(flags[:5], truth)


def test_mean_se_example():
    mean, se = mean_se([4.0, 5.0, 6.0])
    assert mean == 5.0
    assert se == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    assert se == pytest.approx(0.577, abs=5e-4)
    assert math.isnan(mean_se([1.0])[1])
    assert all(math.isnan(v) for v in mean_se([]))


def test_windows_segments_eligibility():
    truth = [None] * 10 + ["a"] * 3 + [None] * 10 + ["b"] * 2 + [None] * 5
    assert injection_windows(truth) == [(10, 13, "a"), (23, 25, "b")]
    assert injection_windows([False, True, True, False]) == [(1, 3, True)]
    assert segments(truth) == [(0, 19), (19, 30)]
    assert segments([None] * 4) == [(0, 4)]
    pos, neg = eligibility(truth, burn_in=5)
    assert np.flatnonzero(pos).tolist() == [10, 11, 12, 23, 24]
    assert not neg[:5].any() and not neg[10:19].any() and not neg[23:29].any()
    assert neg[5:10].all() and neg[19:23].all() and neg[29]
    flags = np.ones(30, dtype=bool)
    assert count_false_positives(flags, truth, burn_in=5) == (int(neg.sum()), int(neg.sum()))


def test_scenario_validation():
    inj = AnomalyInjection(AnomalyKind.COST_SPIKE, 200, 40, 1.0)
    with pytest.raises(ValueError, match="horizon"):
        Scenario("s", 300, (inj, AnomalyInjection(AnomalyKind.TRUST_SHOCK, 260, 10, 1.0)))
    with pytest.raises(ValueError, match="length"):
        Scenario("s", 0, ())
    sc = Scenario("s", 400, (inj,))
    assert Scenario.from_dict(sc.to_dict()) == sc
    with pytest.raises(ValueError, match="burn-in"):
        EvalConfig(scenarios=(Scenario("s", 400, (AnomalyInjection("cost-spike", 100, 10, 1.0),)),))
    with pytest.raises(ValueError):
        EvalConfig(detectors=())


# --- curves


def test_roc_matches_sklearn(rng):
    y = rng.random(2000) < 0.2
    s = rng.normal(size=2000) + 1.2 * y
    s[::7] = np.round(s[::7], 1)  # ties
    pts = roc_curve(s, y)
    fpr, tpr, _ = skm.roc_curve(y, s, drop_intermediate=False)
    np.testing.assert_allclose([p.fpr for p in pts], fpr)
    np.testing.assert_allclose([p.tpr for p in pts], tpr)
    assert auc(pts) == pytest.approx(skm.roc_auc_score(y, s), abs=1e-12)
    ap = average_precision(pr_curve(s, y))
    assert ap == pytest.approx(skm.average_precision_score(y, s), abs=1e-12)


def test_curve_endpoints_and_errors():
    pts = roc_curve([0.1, 0.9, 0.5], [False, True, False])
    assert (pts[0].fpr, pts[0].tpr) == (0.0, 0.0) and pts[0].threshold == math.inf
    assert (pts[-1].fpr, pts[-1].tpr) == (1.0, 1.0)
    assert auc(pts) == 1.0
    assert fpr_at_tpr(pts, 0.95) == 0.0
    pr = pr_curve([0.1, 0.9, 0.5], [False, True, False])
    assert pr[0].recall == 0.0 and pr[-1].recall == 1.0
    with pytest.raises(ValueError, match="both classes"):
        roc_curve([1.0, 2.0], [True, True])
    with pytest.raises(ValueError, match="aligned"):
        roc_curve([1.0], [True, False])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5, allow_nan=False), st.booleans()), min_size=2,
                max_size=80).filter(lambda v: 0 < sum(b for _, b in v) < len(v)))
def test_roc_is_monotone_staircase(pairs):
    s = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    pts = roc_curve(s, y)
    f = np.array([p.fpr for p in pts])
    t = np.array([p.tpr for p in pts])
    assert np.all(np.diff(f) >= 0) and np.all(np.diff(t) >= 0)
    assert np.all(np.diff([p.threshold for p in pts]) < 0)
    assert 0.0 <= auc(pts) <= 1.0
    # flipping the scores mirrors the curve
    assert auc(pts) + auc(roc_curve(-s, y)) == pytest.approx(1.0)
    pr = pr_curve(s, y)
    assert all(0.0 <= p.precision <= 1.0 for p in pr)
    assert np.all(np.diff([p.recall for p in pr]) >= 0)


# --- harness


@pytest.fixture(scope="module")
def small_config():
    sc = Scenario("small", 900, (
        AnomalyInjection(AnomalyKind.GOAL_DRIFT, 300, 60, 5.0),
        AnomalyInjection(AnomalyKind.TRUST_SHOCK, 600, 30, 3.0),
    ))
    return EvalConfig(scenarios=(sc,), seeds=(1, 2, 3))


@pytest.fixture(scope="module")
def small_results(small_config):
    return run_benchmark(small_config)


def test_benchmark_shape(small_results):
    assert len(small_results) == 4 * 3 * 2
    rows = summarize(small_results)
    assert [(r.detector, r.anomaly) for r in rows[:2]] == [
        (DetectorKind.STATIC, AnomalyKind.GOAL_DRIFT), (DetectorKind.STATIC, AnomalyKind.TRUST_SHOCK)]
    assert len(rows) == 8
    for r in rows:
        assert r.runs == 3 and 0 <= r.detected <= 3
        assert 0.0 <= r.fpr <= 1.0
        assert r.censored_mean >= (r.latency_mean or 0.0) or r.detected < r.runs
    csv = summary_csv(rows)
    assert csv.count("\n") == 9 and "np." not in csv


def test_segments_count_each_step_once(small_results, small_config):
    by_seed = {}
    for r in small_results:
        if r.detector is DetectorKind.AMDM:
            by_seed.setdefault(r.seed, []).append(r)
    for rs in by_seed.values():
        neg = sum(r.negatives for r in rs)
        truth = [None] * 900
        truth[300:360] = ["g"] * 60
        truth[600:630] = ["t"] * 30
        assert neg == int(eligibility(truth, small_config.burn_in)[1].sum())


def test_amdm_attribution_follows_axes(small_results):
    drift = [r.attribution for r in small_results
             if r.detector is DetectorKind.AMDM and r.anomaly is AnomalyKind.GOAL_DRIFT
             and r.attribution]
    assert drift
    for a in drift:
        assert a["capability"] + a["robustness"] > 0.5
    shock = [r.attribution for r in small_results
             if r.detector is DetectorKind.AMDM and r.anomaly is AnomalyKind.TRUST_SHOCK
             and r.attribution]
    assert shock and all(max(a, key=a.get) == "human" for a in shock)


def test_pooled_curves(small_results):
    curves = pooled_curves(small_results)
    assert list(curves) == list(DetectorKind)
    for roc, pr in curves.values():
        assert 0.0 <= auc(roc) <= 1.0
        assert roc[-1].tpr == 1.0 and pr[-1].recall == 1.0


def test_no_injection_stream_yields_misses_with_fpr(registry):
    from amdm import MonitorHandle, generate, profile

    s = generate(profile(), 1000, seed=4)
    tr = MonitorHandle(registry).run(s.values)
    res = evaluate_trace(tr, s.truth, detector=DetectorKind.AMDM, seed=4, burn_in=160,
                         step_seconds=0.5)
    assert len(res) == 1
    r = res[0]
    assert r.anomaly is None and r.latency is None and r.negatives == 840
    assert 0.0 <= r.fpr < 0.05
    row = summarize(res)[0]
    assert math.isnan(row.miss_rate) and row.latency_mean is None


def test_ablation_sweep_grid():
    cfg = EvalConfig(seeds=(1,))
    cells = ablation_sweep(cfg, lambdas=(0.25,), windows=(40, 80), alphas=(0.05, 0.001))
    assert [(c.window, c.alpha) for c in cells] == [(40, 0.05), (40, 0.001), (80, 0.05),
                                                    (80, 0.001)]
    assert cells[1].fpr <= cells[0].fpr and cells[3].fpr <= cells[2].fpr
    assert ablation_csv(cells).count("\n") == 5
