from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amdm import (
    AXES,
    AmdmConfig,
    Axis,
    Direction,
    EwmaOnlyDetector,
    MetricRegistry,
    MetricSample,
    MetricSpec,
    MonitorError,
    MonitorHandle,
    generate,
    register_metrics,
)
from amdm.core import aggregate_axis, attribute
from amdm.numerics import OnlineCovariance, chi_square_quantile
from amdm.simulator import AnomalyInjection, AnomalyKind


def reference_trace(values, registry, cfg):
    """Plain re-implementation of the detector from its definition.

    Windows are recomputed from scratch every step and the joint inverse
    by direct solve, so it shares no state handling with the kernels.
    """
    n_rows, m = values.shape
    a = len(AXES)
    w, lam, k = cfg.window, cfg.lam, cfg.k
    thr = chi_square_quantile(a, 1 - cfg.alpha)
    coef = np.zeros((m, a))
    for i, spec in enumerate(registry.specs):
        j = AXES.index(spec.axis)
        total = sum(s.weight for s in registry.specs if s.axis == spec.axis)
        coef[i, j] = spec.direction.sign * spec.weight / total
    out = {key: np.full((n_rows, a), np.nan) for key in ("s", "theta", "sd")}
    out["flags"] = np.zeros((n_rows, a), dtype=bool)
    out["d2"] = np.full(n_rows, np.nan)
    out["alarm"] = np.zeros(n_rows, dtype=bool)
    theta = None
    scores = []
    jmean = np.zeros(a)
    jraw = np.zeros((a, a))
    jn = 0
    for t in range(n_rows):
        win = values[max(0, t - w + 1): t + 1]
        mu = win.mean(axis=0)
        sd = np.maximum(win.std(axis=0), cfg.sigma_floor * (1 + np.abs(mu)))
        s = ((values[t] - mu) / sd) @ coef
        out["s"][t] = s
        if t + 1 < w:
            continue
        theta = s.copy() if theta is None else lam * s + (1 - lam) * theta
        scores.append(s)
        sw = np.array(scores[-w:])
        ssd = sw.std(axis=0)
        out["theta"][t] = theta
        out["sd"][t] = ssd
        if len(scores) >= w:
            out["flags"][t] = np.abs(s - theta) > k * ssd
        if jn >= cfg.warmup:
            shrunk = ((1 - cfg.shrinkage) * jraw + cfg.shrinkage * np.diag(np.diag(jraw))
                      + cfg.epsilon * np.eye(a))
            r = s - jmean
            d2 = float(r @ np.linalg.solve(shrunk, r))
            out["d2"][t] = d2
            out["alarm"][t] = d2 > thr
        jn += 1
        b = 1.0 / jn if jn <= cfg.warmup else max(1.0 / jn, cfg.forgetting)
        d = s - jmean
        jmean = jmean + b * d
        jraw = (1 - b) * jraw + b * (1 - b) * np.outer(d, d)
    return out


@pytest.fixture(scope="module")
def drift_stream(prof):
    inj = (AnomalyInjection(AnomalyKind.GOAL_DRIFT, 400, 100, 5.0),
           AnomalyInjection(AnomalyKind.TRUST_SHOCK, 900, 40, 3.0))
    return generate(prof, 1300, inj, seed=11)


def test_detector_matches_reference(drift_stream, registry):
    cfg = AmdmConfig(window=40, warmup=25)
    tr = MonitorHandle(registry, cfg).run(drift_stream.values)
    ref = reference_trace(drift_stream.values, registry, cfg)
    np.testing.assert_allclose(tr.axis_scores, ref["s"], rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(tr.thresholds, ref["theta"], rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(tr.score_std, ref["sd"], rtol=1e-8, atol=1e-9)
    live = ~np.isnan(ref["d2"])
    np.testing.assert_array_equal(np.isnan(tr.d_squared), ~live)
    np.testing.assert_allclose(tr.d_squared[live], ref["d2"][live], rtol=1e-8)
    # decisions may only differ where the statistic sits on the threshold
    d2 = ref["d2"][live]
    near = np.abs(d2 - cfg.joint_threshold) < 1e-6 * cfg.joint_threshold
    assert np.array_equal(tr.alarm[live][~near], ref["alarm"][live][~near])
    assert (tr.axis_flags != ref["flags"]).sum() <= 2
    assert tr.alarm.any()


def test_default_window_reference(drift_stream, registry):
    cfg = AmdmConfig()
    tr = MonitorHandle(registry, cfg).run(drift_stream.values[:700])
    ref = reference_trace(drift_stream.values[:700], registry, cfg)
    live = ~np.isnan(ref["d2"])
    assert live.sum() == 700 - cfg.window + 1 - cfg.warmup
    np.testing.assert_allclose(tr.d_squared[live], ref["d2"][live], rtol=1e-8)


def test_step_equals_block(drift_stream, registry):
    vals = drift_stream.values[:600]
    block = MonitorHandle(registry).run(vals)
    h = MonitorHandle(registry)
    for t, sample in enumerate(drift_stream.samples[:600]):
        d = h.step(sample)
        ref = block.detection(t)
        assert d.axis_flags == ref.axis_flags
        assert d.joint_flag == ref.joint_flag
        assert d.d_squared == ref.d_squared
        assert d.score == ref.score or (math.isnan(d.score) and math.isnan(ref.score))
    assert h.n_seen == 600
    assert len(h.axis_scores()) == len(AXES)


def test_split_blocks_equal_one_block(drift_stream, registry):
    vals = drift_stream.values
    whole = MonitorHandle(registry).run(vals)
    h = MonitorHandle(registry)
    parts = [h.run(vals[:333]), h.run(vals[333:334]), h.run(vals[334:])]
    np.testing.assert_array_equal(np.vstack([p.data for p in parts]), whole.data)
    assert list(np.concatenate([p.steps for p in parts])) == list(range(len(vals)))


def test_ewma_only_axis_flags_identical(drift_stream, registry):
    amdm = MonitorHandle(registry).run(drift_stream.values)
    ewma = EwmaOnlyDetector(registry).run(drift_stream.values)
    np.testing.assert_array_equal(amdm.axis_flags, ewma.axis_flags)
    np.testing.assert_array_equal(ewma.alarm, ewma.axis_flags.any(axis=1))
    assert np.isnan(ewma.d_squared).all()


def test_amdm_alarm_is_joint_flag(drift_stream, registry):
    tr = MonitorHandle(registry).run(drift_stream.values)
    live = ~np.isnan(tr.d_squared)
    np.testing.assert_array_equal(tr.alarm, live & (np.nan_to_num(tr.d_squared) > tr.joint_threshold))


def test_attribution_on_alarms(drift_stream, registry):
    tr = MonitorHandle(registry).run(drift_stream.values)
    dets = [tr.detection(i) for i in np.flatnonzero(tr.alarm)]
    assert dets
    for d in dets:
        assert set(d.attribution) == set(AXES)
        assert sum(d.attribution.values()) == pytest.approx(1.0)
        assert min(d.attribution.values()) >= 0.0
    quiet = tr.detection(int(np.flatnonzero(~tr.alarm)[-1]))
    assert quiet.attribution is None


def test_warmup_rows(registry, prof):
    vals = generate(prof, 200, seed=2).values
    cfg = AmdmConfig(window=20, warmup=10)
    tr = MonitorHandle(registry, cfg).run(vals)
    assert np.isnan(tr.thresholds[:19]).all() and not np.isnan(tr.thresholds[19]).any()
    assert not tr.axis_flags[:38].any()
    assert np.isnan(tr.d_squared[:29]).all() and not np.isnan(tr.d_squared[29])
    assert tr.axis_scores_at(0) == ()
    assert tr.detection(0).d_squared is None


def test_config_validation():
    for kw in ({"lam": 0.0}, {"lam": 1.5}, {"window": 1}, {"window": 2.5}, {"k": 0.0},
               {"alpha": 1.0}, {"shrinkage": -0.1}, {"warmup": 5}, {"forgetting": 1.0},
               {"epsilon": 0.0}):
        with pytest.raises(ValueError):
            AmdmConfig(**kw)
    assert AmdmConfig().joint_threshold == pytest.approx(15.0863, abs=1e-4)
    assert AmdmConfig().replace(k=2.0).k == 2.0


def test_registry_validation():
    specs = [MetricSpec(f"m{i}", ax) for i, ax in enumerate(AXES)]
    reg = MetricRegistry(specs)
    assert len(reg) == 5 and reg.metrics_of("safety")[0].name == "m2"
    with pytest.raises(ValueError, match="duplicate"):
        MetricRegistry(specs + [MetricSpec("m0", Axis.SAFETY)])
    with pytest.raises(ValueError, match="axes without"):
        MetricRegistry(specs[:4])
    with pytest.raises(ValueError):
        MetricRegistry([])
    with pytest.raises(ValueError):
        MetricSpec("bad name", Axis.SAFETY)
    with pytest.raises(ValueError):
        MetricSpec("x", Axis.SAFETY, weight=0.0)
    with pytest.raises(ValueError):
        MetricSpec("x", "nonsense")


def test_aggregate_axis_weights_and_direction():
    specs = [MetricSpec("a", Axis.SAFETY, Direction.HIGHER_IS_WORSE, 1.0),
             MetricSpec("b", Axis.SAFETY, Direction.LOWER_IS_WORSE, 3.0)]
    assert aggregate_axis({"a": 2.0, "b": 1.0}, specs, Axis.SAFETY) == pytest.approx(
        (2.0 - 3.0) / 4.0)
    with pytest.raises(ValueError):
        aggregate_axis({}, specs, Axis.HUMAN)


def test_sample_feed_errors(registry, prof):
    h = MonitorHandle(registry)
    row = dict(zip(prof.names, prof.means))
    h.step(MetricSample(0, row))
    with pytest.raises(MonitorError, match="does not exceed"):
        h.step(MetricSample(0, row))
    with pytest.raises(MonitorError, match="unregistered"):
        h.step(MetricSample(1, {**row, "bogus": 1.0}))
    with pytest.raises(MonitorError, match="non-finite"):
        h.step(MetricSample(1, {**row, prof.names[3]: math.nan}))
    with pytest.raises(MonitorError, match="non-negative"):
        MonitorHandle(registry).step(MetricSample(-1, row))
    with pytest.raises(MonitorError, match="no prior value"):
        MonitorHandle(registry).step(MetricSample(0, {prof.names[0]: 1.0}))
    with pytest.raises(MonitorError, match="shape"):
        MonitorHandle(registry).run(np.zeros((3, 4)))
    with pytest.raises(MonitorError, match="strictly increasing"):
        MonitorHandle(registry).run(np.zeros((3, 15)), steps=[0, 2, 2])


def test_missing_metrics_carry_forward(registry, prof):
    cfg = AmdmConfig(window=5, warmup=6)
    h = MonitorHandle(registry, cfg)
    row = dict(zip(prof.names, prof.means))
    h.step(MetricSample(0, row))
    partial = {k: v for k, v in row.items() if k != prof.names[0]}
    for t in range(1, 6):
        h.step(MetricSample(t, partial))
    assert h.staleness == {prof.names[0]: 5}
    with pytest.raises(MonitorError, match="missing for more than"):
        h.step(MetricSample(6, partial))
    # a complete sample restarts the run; the total keeps counting
    h.step(MetricSample(7, row))
    for t in range(8, 13):
        h.step(MetricSample(t, partial))
    assert h.staleness == {prof.names[0]: 11}


def test_reset_restores_initial_state(drift_stream, registry):
    h = MonitorHandle(registry)
    first = h.run(drift_stream.values[:300]).data.copy()
    h.reset()
    np.testing.assert_array_equal(h.run(drift_stream.values[:300]).data, first)


def test_register_metrics(prof):
    h = register_metrics(prof.metrics, AmdmConfig(k=2.5))
    assert h.config.k == 2.5 and len(h.registry) == 15


def test_joint_state_snapshot(drift_stream, registry):
    h = MonitorHandle(registry)
    assert h.axis_scores() == ()
    h.run(drift_stream.values[:500])
    js = h.joint_state
    assert js.ready
    probe = np.ones(len(AXES))
    r = probe - js.mean
    assert js.mahalanobis_sq(probe) == pytest.approx(
        float(r @ np.linalg.solve(js.covariance, r)), rel=1e-9)


# --- attribution identity


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_contributions_sum_to_d2(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 5))
    state = OnlineCovariance.from_moments(rng.normal(size=5), a @ a.T + 0.1 * np.eye(5))
    s = rng.normal(size=5) * 4
    terms = state.contributions(s)
    assert terms.sum() == pytest.approx(state.mahalanobis_sq(s), rel=1e-9, abs=1e-12)
    shares = attribute(state, s)
    assert sum(shares.values()) == pytest.approx(1.0)
    assert all(v >= 0 for v in shares.values())


@pytest.mark.parametrize("axis", range(5))
def test_single_axis_deviation_attributed(axis):
    state = OnlineCovariance.from_moments(np.zeros(5), np.eye(5), shrinkage=0.0, epsilon=1e-12)
    s = np.zeros(5)
    s[axis] = 4.0
    shares = attribute(state, s)
    assert shares[AXES[axis]] >= 0.99
    assert state.mahalanobis_sq(s) == pytest.approx(16.0)
