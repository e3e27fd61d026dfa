import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oylab.environment import GridSpec, generate
from oylab.identities import (
    EventSpec,
    IdentityReport,
    burke_increment_test,
    constrained_superadditivity_suite,
    dufresne_test,
    fkg_discrete_check,
    midpoint,
    rains_ejs_check,
    rains_ejs_rhs,
    random_midpoint_pairs,
    random_triples,
    snap_to_grid,
    stationary_bias_sweep,
    stationary_mean_check,
    superadditivity_suite,
)
from oylab.polymer import LatticePoint as P, PreconditionError
from oylab.specfun import free_energy, psi


def test_rains_rhs_closed_form():
    # at eta = theta the identity is trivial
    assert rains_ejs_rhs(1.3, 1.3, 2.0, 4) == 1.0
    val = rains_ejs_rhs(0.8, 1.2, 3.0, 3)
    expect = math.exp(3 * (math.lgamma(1.2) - math.lgamma(0.8)) - 3.0 * (1.44 - 0.64) / 2)
    assert val == pytest.approx(expect, rel=1e-12)


def test_rains_small_scale():
    r = rains_ejs_check((0.8, 1.2, 3.0, 3), 2000, seed=5, dt=0.01)
    assert r.verdict, r
    assert r.extra["relative_se"] < 0.1
    trivial = rains_ejs_check((1.0, 1.0, 3.0, 3), 10, seed=5)
    assert trivial.verdict and trivial.n_samples == 0


def test_rains_rejects_bad_parameters():
    with pytest.raises(ValueError):
        rains_ejs_check((0.0, 1.0, 3.0, 3), 10, seed=1)


def test_stationary_mean_small_scale():
    r = stationary_mean_check(1.0, 4 * psi(1, 1.0), 4, 1000, seed=6, dt=0.02)
    assert r.verdict, r
    assert r.rhs == pytest.approx(r.params["t"] - 4 * psi(0, 1.0))
    assert r.params["t"] == pytest.approx(snap_to_grid(4 * psi(1, 1.0), 0.02))


def test_bias_sweep_structure():
    out = stationary_bias_sweep(1.0, 2.0, 2, 50, seed=7, dts=(0.04, 0.02, 0.01))
    assert len(out["mean"]) == 3 and len(out["halving_shift"]) == 2
    assert all(se > 0 for se in out["halving_shift_se"])
    # a finer grid has more jump configurations, so the mean free energy rises
    assert all(s > 0 for s in out["halving_shift"])
    with pytest.raises(ValueError):
        stationary_bias_sweep(1.0, 2.0, 2, 5, seed=7, dts=(0.04, 0.03))


def test_burke_small_scale():
    r = burke_increment_test(1.0, 4 * psi(1, 1.0), 4, 1000, seed=8, dt=0.02)
    assert r.verdict, r.checks
    assert set(r.checks) >= {"ks", "variance", "mean_0", "mean_1", "corr_0"}
    with pytest.raises(PreconditionError):
        burke_increment_test(1.0, 4.0, 4, 10, seed=8, s_grid=(0.0,))
    with pytest.raises(PreconditionError):
        burke_increment_test(1.0, 4.0, 4, 10, seed=8, s_grid=(1.0, 0.5))


def test_dufresne_small_scale():
    r = dufresne_test(1.0, 2000, seed=9, dt=0.01)
    assert r.verdict, r.extra
    assert r.extra["ks_pvalue_one_sample"] > 0.001
    # mean of 1/Gamma(nu) is infinite at nu = 1, so compare at nu = 2 where it is 1
    r2 = dufresne_test(2.0, 2000, seed=9, dt=0.01)
    assert r2.verdict
    assert r2.extra["sample_mean"] == pytest.approx(1.0, rel=0.15)
    with pytest.raises(ValueError):
        dufresne_test(0.0, 10)
    with pytest.warns(RuntimeWarning):
        dufresne_test(1.0, 20, horizon=10.0, dt=0.01)


def _event_pair(correlated: bool):
    if correlated:
        # overlapping paths through levels 2 and 3 share environment
        return [
            EventSpec(P(0.0, 1), P(2.0, 3), free_energy(2, 2)),
            EventSpec(P(1.0, 2), P(3.0, 4), free_energy(2, 2)),
        ]
    # disjoint levels: independent events
    return [
        EventSpec(P(0.0, 1), P(2.0, 2), free_energy(2, 1)),
        EventSpec(P(0.0, 3), P(2.0, 4), free_energy(2, 1)),
    ]


def test_fkg_positive_association():
    r = fkg_discrete_check(_event_pair(True), 5000, 16, seed=10)
    assert r.verdict and r.alternative == "greater"
    assert r.lhs > r.rhs  # strictly positive association is visible
    control = fkg_discrete_check(_event_pair(False), 5000, 16, seed=10, alternative="two-sided")
    assert control.verdict
    with pytest.raises(ValueError):
        fkg_discrete_check([], 10, 16, seed=1)


def test_report_json_round_trip():
    r = IdentityReport("x", np.float64(1.5), 1.0, 0.25, 10, np.bool_(True), params={"a": np.arange(3)})
    back = json.loads(r.to_json())
    assert back["lhs"] == 1.5 and back["verdict"] is True and back["params"]["a"] == [0, 1, 2]
    assert r.z_score == pytest.approx(2.0)
    assert IdentityReport("y", 1.0, 0.0, 0.0, 1, False).z_score == math.inf


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32))
def test_superadditivity_property(seed):
    env = generate(seed, GridSpec(0.0, 4.0, 0.1, 0, 5))
    triples = random_triples(np.random.default_rng(seed), 4.0, 5, 0.1, 20)
    for (p, r, q), slack in superadditivity_suite(env, triples):
        assert p.precedes(r) and r.precedes(q)
        assert slack >= -1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), width=st.floats(0.3, 3.0))
def test_constrained_superadditivity_property(seed, width):
    env = generate(seed, GridSpec(0.0, 4.0, 0.1, 0, 6))
    pairs = random_midpoint_pairs(np.random.default_rng(seed), 4.0, 6, 0.1, 10)
    for (p, r, q), slack in constrained_superadditivity_suite(env, pairs, width):
        assert slack >= -1e-9


def test_suite_errors():
    env = generate(1, GridSpec(0.0, 4.0, 0.1, 0, 5))
    with pytest.raises(PreconditionError):
        superadditivity_suite(env, [(P(2.0, 0), P(1.0, 1), P(3.0, 2))])
    with pytest.raises(PreconditionError):
        midpoint(P(0.0, 0), P(2.0, 1))
    assert midpoint(P(0.0, 0), P(2.0, 2)) == P(1.0, 1)
