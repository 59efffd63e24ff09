import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firesale_maxent.core import degrees
from firesale_maxent.errors import InfeasibleSparsityError, TooFewBanksError, ValidationError
from firesale_maxent.evaluation import (ESTIMATORS, ScenarioConfig, capm_truth,
                                        estimator_comparison, generate_scenario, mecapm_truth,
                                        quartile_report, relative_errors)


# -- relative errors ----------------------------------------------------------------

def test_relative_error_identity_and_scaling():
    t = np.array([0.3, 2.0, 7.5])
    np.testing.assert_array_equal(relative_errors(t, t).errors, 0.0)
    np.testing.assert_array_equal(relative_errors(0.5 * t, t).errors, -0.5)


def test_relative_error_elementwise_oracle(rng):
    est, tru = rng.normal(size=30), rng.normal(size=30)
    tru[[3, 17]] = 0.0
    res = relative_errors(est, tru)
    for i in range(30):
        if tru[i] == 0:
            assert np.isnan(res.errors[i])
        else:
            assert res.errors[i] == (est[i] - tru[i]) / tru[i]
    assert res.excluded == (3, 17)
    with pytest.raises(ValidationError):
        relative_errors([1.0], [1.0, 2.0])


# -- quartiles ---------------------------------------------------------------------

def test_quartiles_eight_banks():
    truth = np.array([5.0, 1.0, 8.0, 3.0, 2.0, 7.0, 4.0, 6.0])
    rep = quartile_report(truth.copy(), truth)
    assert rep.medians == (1.5, 3.5, 5.5, 7.5)
    assert rep.iqrs == (0.5, 0.5, 0.5, 0.5)
    assert rep.counts == (2, 2, 2, 2)


def test_quartiles_constant_errors():
    rep = quartile_report(np.full(11, -0.2), np.arange(1.0, 12.0))
    assert rep.medians == (-0.2,) * 4 and rep.iqrs == (0.0,) * 4
    assert sorted(rep.counts) == [2, 3, 3, 3] and sum(rep.counts) == 11


def test_quartile_ties_follow_bank_order():
    truth = np.array([1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 4.0, 5.0])
    rep = quartile_report(np.arange(8.0), truth)
    # ranks: bank0, then banks 1..4 in input order at the tie
    assert rep.medians == (0.5, 2.5, 4.5, 6.5)
    assert rep.counts == (2, 2, 2, 2)


def test_quartiles_drop_excluded_and_nan():
    truth = np.arange(1.0, 11.0)
    err = np.arange(10.0)
    err[0] = np.nan
    rep = quartile_report(err, truth, excluded=[9])
    assert rep.excluded == (0, 9) and sum(rep.counts) == 8
    with pytest.raises(TooFewBanksError):
        quartile_report(np.zeros(3), np.ones(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=40, unique=True),
       st.randoms(use_true_random=False))
def test_quartiles_permutation_invariant(truth, rnd):
    truth = np.array(truth)
    err = np.sin(truth) + 0.1 * truth
    keep = truth != 0
    truth, err = truth[keep], err[keep]
    if truth.size < 4:
        return
    perm = list(range(truth.size))
    rnd.shuffle(perm)
    a, b = quartile_report(err, truth), quartile_report(err[perm], truth[perm])
    assert (a.medians, a.iqrs, a.counts) == (b.medians, b.iqrs, b.counts)
    assert max(a.counts) - min(a.counts) <= 1


# -- scenarios ------------------------------------------------------------------------

def test_dense_scenario_has_full_degrees():
    sc = generate_scenario(ScenarioConfig(12, 5, sparsity=0.0), 3)
    d = degrees(sc.holdings)
    np.testing.assert_array_equal(d.bank_degrees, 5)
    np.testing.assert_array_equal(d.asset_degrees, 12)


def test_scenario_sparsity_and_consistency():
    sc = generate_scenario(ScenarioConfig(50, 20, sparsity=0.5), 42)
    assert 0.45 <= sc.realized_sparsity <= 0.55
    x = sc.holdings.entries
    assert np.all(x == np.round(x))
    np.testing.assert_array_equal(x.sum(axis=1), sc.sheet.sizes)
    assert np.all(x.sum(axis=1) > 0) and np.all(x.sum(axis=0) > 0)
    assert np.all(x[:, 0] > 0) and sc.holdings.asset_ids[0] == "cash"
    lev = sc.sheet.leverages
    assert np.all(lev > 0) and 8 < lev.mean() < 12


def test_scenario_determinism():
    cfg = ScenarioConfig(30, 6, sparsity=0.4)
    a, b = generate_scenario(cfg, 9), generate_scenario(cfg, 9)
    assert a.holdings.entries.tobytes() == b.holdings.entries.tobytes()
    assert a.sheet.equities.tobytes() == b.sheet.equities.tobytes()
    assert not np.array_equal(a.holdings.entries, generate_scenario(cfg, 10).holdings.entries)


def test_infeasible_sparsity():
    with pytest.raises(InfeasibleSparsityError):
        generate_scenario(ScenarioConfig(4, 2, sparsity=0.9), 0)
    with pytest.raises(ValidationError):
        ScenarioConfig(3, 2)


# -- estimator comparison ----------------------------------------------------------

def test_capm_truth_gives_zero_capm_error():
    base = generate_scenario(ScenarioConfig(40, 8, sparsity=0.5), 2)
    reports = estimator_comparison(capm_truth(base), ["CAPM"])
    s_rep = next(r for r in reports if r.metric == "systemicness")
    assert max(abs(v) for v in s_rep.medians + s_rep.iqrs) <= 1e-10


def test_all_estimators_report_on_sparse_scenario():
    sc = generate_scenario(ScenarioConfig(40, 8, sparsity=0.5), 11)
    reports = estimator_comparison(sc, n_samples=200, seed=1)
    assert {(r.estimator, r.metric) for r in reports} == {
        (e, m) for e in ESTIMATORS for m in ("systemicness", "iv")}
    for r in reports:
        assert r.ok, r.error
        assert sum(r.counts) + len(r.excluded) == sc.holdings.n_banks
        assert all(np.isfinite(r.medians))


def test_failing_estimator_does_not_abort_others():
    sc = generate_scenario(ScenarioConfig(20, 5, sparsity=0.3), 1)
    reports = estimator_comparison(sc, ["nonsense", "CAPM"])
    bad = [r for r in reports if r.estimator == "nonsense"]
    assert len(bad) == 2 and not bad[0].ok and "nonsense" in bad[0].error
    assert all(r.ok for r in reports if r.estimator == "CAPM")


def test_mecapm_truth_keeps_leverage():
    base = generate_scenario(ScenarioConfig(30, 6, sparsity=0.5), 4)
    truth = mecapm_truth(base, 8)
    np.testing.assert_allclose(truth.sheet.leverages, base.sheet.leverages, rtol=1e-12)
    np.testing.assert_array_equal(truth.sheet.sizes, truth.holdings.entries.sum(axis=1))
