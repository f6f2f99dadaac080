from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amdm import AnomalyInjection, AnomalyKind, WorkflowProfile, generate, profile
from amdm.core import Axis
from amdm.simulator import KIND_AXES, PROFILE_NAMES, ar1_noise, inject


@pytest.mark.parametrize("name", PROFILE_NAMES)
def test_profiles_are_valid(name):
    p = profile(name)
    assert len(p.metrics) == 15
    assert WorkflowProfile.from_dict(p.to_dict()) == p
    assert len(p.registry()) == 15
    with pytest.raises(ValueError):
        profile("nope")


def test_seeded_generation_is_reproducible(prof):
    a = generate(prof, 500, seed=3)
    b = generate(prof, 500, seed=3)
    c = generate(prof, 500, seed=4)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.truth == [None] * 500 and not a.labels.any()


def test_ar1_moments():
    rng = np.random.default_rng(0)
    x = ar1_noise(rng, 200_000, (0.0, 0.6, 0.9))
    assert x.std(axis=0) == pytest.approx([1, 1, 1], abs=0.03)
    lag1 = [np.corrcoef(x[1:, j], x[:-1, j])[0, 1] for j in range(3)]
    assert lag1 == pytest.approx([0.0, 0.6, 0.9], abs=0.01)


def test_stationary_marginals(prof):
    v = generate(prof, 50_000, seed=5).values
    np.testing.assert_allclose(v.mean(axis=0), prof.means, atol=0.05 * np.max(prof.stds))
    np.testing.assert_allclose(v.std(axis=0), prof.stds, rtol=0.05)


@pytest.mark.parametrize("kind", list(AnomalyKind))
def test_injection_touches_only_its_axes(kind, prof):
    inj = AnomalyInjection(kind, 200, 50, 3.0)
    clean = generate(prof, 400, seed=9)
    dirty = generate(prof, 400, (inj,), seed=9)
    diff = dirty.values - clean.values
    axes = np.array([s.axis in KIND_AXES[kind] for s in prof.metrics])
    assert np.all(diff[:, ~axes] == 0.0)
    assert np.all(diff[:200] == 0.0) and np.all(diff[250:] == 0.0)
    signs = np.array([s.direction.sign for s in prof.metrics])
    peak = diff[249, axes] * signs[axes] / np.array(prof.stds)[axes]
    assert peak == pytest.approx(np.full(axes.sum(), 3.0))
    assert dirty.truth[199] is None and dirty.truth[200] is kind and dirty.truth[250] is None


def test_goal_drift_ramps(prof):
    j = prof.names.index(prof.registry().metrics_of(Axis.CAPABILITY)[0].name)
    shape = [abs(inject("goal-drift", prof, t, 10, 5, 2.0)[j]) / prof.stds[j] for t in range(9, 16)]
    assert shape == pytest.approx([0.0, 0.0, 0.5, 1.0, 1.5, 2.0, 0.0])
    step = [abs(inject("trust-shock", prof, t, 10, 3, 2.0)).max() > 0 for t in range(9, 14)]
    assert step == [False, True, True, True, False]


def test_injection_validation(prof):
    with pytest.raises(ValueError, match="overlap"):
        generate(prof, 300, (AnomalyInjection("cost-spike", 100, 50, 1.0),
                             AnomalyInjection("trust-shock", 120, 10, 1.0)))
    with pytest.raises(ValueError, match="beyond"):
        generate(prof, 100, (AnomalyInjection("cost-spike", 90, 20, 1.0),))
    for bad in ((-1, 10, 1.0), (5, 0, 1.0), (5, 10, 0.0)):
        with pytest.raises(ValueError):
            AnomalyInjection("cost-spike", *bad)
    with pytest.raises(ValueError, match="affects"):
        AnomalyInjection("cost-spike", 5, 10, 1.0, axes={"safety"})
    with pytest.raises(ValueError):
        generate(prof, 0)


def test_common_factor_correlates_axes():
    p = profile(common_share=0.5)
    v = generate(p, 20_000, seed=1).values
    signs = np.array([s.direction.sign for s in p.metrics])
    z = (v - v.mean(axis=0)) / v.std(axis=0) * signs
    c = np.corrcoef(z.T)
    assert c[0, -1] == pytest.approx(0.5, abs=0.05)
    with pytest.raises(ValueError):
        profile(common_share=0.6, wander_share=0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 300))
def test_samples_match_values(seed, length):
    s = generate(profile(), length, seed=seed)
    samples = s.samples
    assert len(samples) == length
    assert list(samples[-1].values.values()) == s.values[-1].tolist()
    assert samples[-1].step == length - 1
