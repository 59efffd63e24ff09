import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from firesale_maxent.core import HoldingsMatrix, StrengthSequences, marginals
from firesale_maxent.errors import InfeasibleSupportError, MaxIterExceeded
from firesale_maxent.reconstruct import (SupportMask, capm_matrix, cross_entropy_min,
                                         feasible_support, ipf, kl_divergence)


@pytest.mark.parametrize("a, c, x", [
    ([3, 1], [2, 2], [[1.5, 1.5], [0.5, 0.5]]),
    ([5, 5], [5, 5], [[2.5, 2.5], [2.5, 2.5]]),
    ([10], [2, 3, 5], [[2, 3, 5]]),
])
def test_capm_examples(a, c, x):
    np.testing.assert_allclose(capm_matrix(StrengthSequences(a, c)).entries, x, rtol=1e-15)


@settings(max_examples=50)
@given(st.integers(1, 40), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_capm_reproduces_marginals(n, k, seed):
    rng = np.random.default_rng(seed)
    a = rng.lognormal(3, 2, n)
    c = rng.dirichlet(np.ones(k)) * a.sum()
    s = StrengthSequences(a, c)
    m = marginals(capm_matrix(s))
    np.testing.assert_allclose(m.bank_sizes, a, rtol=1e-9)
    np.testing.assert_allclose(m.asset_caps, c, rtol=1e-9)


def test_capm_prior_is_already_optimal():
    s = StrengthSequences([3, 1, 6], [2, 2, 6])
    res = ipf(capm_matrix(s).entries, s.bank_sizes, s.asset_caps)
    assert res.iterations <= 1
    np.testing.assert_allclose(res.matrix, capm_matrix(s).entries, rtol=1e-12)


def test_constant_prior_gives_capm():
    s = StrengthSequences([3, 7], [4, 6])
    x = cross_entropy_min(HoldingsMatrix(np.ones((2, 2))), s)
    np.testing.assert_allclose(x.entries, [[1.2, 1.8], [2.8, 4.2]], rtol=1e-10)


def test_masked_two_by_two_is_unique():
    s = StrengthSequences([1, 1], [1, 1])
    mask = SupportMask([[False, True], [True, True]])
    x = cross_entropy_min(capm_matrix(s), s, mask)
    np.testing.assert_allclose(x.entries, [[0, 1], [1, 0]], atol=1e-12)


def test_feasible_support_prunes_forced_zero():
    support = np.array([[False, True], [True, True]])
    live = feasible_support(support, np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    np.testing.assert_array_equal(live, [[False, True], [True, False]])


def test_feasible_support_keeps_entries_on_cycles():
    support = np.ones((2, 2), dtype=bool)
    live = feasible_support(support, np.array([1.0, 2.0]), np.array([2.0, 1.0]))
    assert live.all()


def test_infeasible_mask_detected():
    s = StrengthSequences([2, 1], [1, 2])
    mask = SupportMask([[True, False], [True, True]])
    with pytest.raises(InfeasibleSupportError):
        cross_entropy_min(capm_matrix(s), s, mask)
    with pytest.raises(InfeasibleSupportError, match="no allowed"):
        SupportMask([[False, False], [True, True]]).check(s)


def test_ipf_stall_declares_infeasible():
    prior = np.array([[1.0, 0.0], [1.0, 1.0]])
    with pytest.raises(InfeasibleSupportError):
        ipf(prior, np.array([2.0, 1.0]), np.array([1.0, 2.0]), max_iter=100_000)


def test_ipf_max_iter():
    prior = np.array([[1.0, 1e-6], [1.0, 1.0]])
    with pytest.raises(MaxIterExceeded):
        ipf(prior, np.array([1.0, 1.0]), np.array([1.0, 1.0]), max_iter=3)


@pytest.mark.parametrize("seed", range(10))
def test_rank_one_prior_returns_capm(seed):
    rng = np.random.default_rng(seed)
    a, c = rng.lognormal(2, 1, 12), rng.lognormal(2, 1, 5)
    c *= a.sum() / c.sum()
    s = StrengthSequences(a, c)
    prior = HoldingsMatrix(np.outer(rng.uniform(0.1, 10, 12), rng.uniform(0.1, 10, 5)))
    np.testing.assert_allclose(cross_entropy_min(prior, s).entries, capm_matrix(s).entries,
                               rtol=1e-8)


def test_idempotent(rng):
    s = StrengthSequences([3, 4, 5], [6, 6])
    prior = HoldingsMatrix(rng.uniform(0.5, 2, (3, 2)))
    x = cross_entropy_min(prior, s)
    again = ipf(x.entries, s.bank_sizes, s.asset_caps)
    assert again.iterations <= 1


def test_divergence_from_solution_decreases(rng):
    # KL to the prior rises towards its constrained minimum; the monotone
    # quantity is the divergence of the solution from each iterate.
    s = StrengthSequences([3, 4, 5], [2, 4, 6])
    prior = rng.uniform(0.1, 3, (3, 3))
    final = ipf(prior, s.bank_sizes, s.asset_caps, tol=1e-14, max_iter=100_000).matrix
    x = prior.copy()
    kls = []
    for _ in range(30):
        x *= (s.bank_sizes / x.sum(axis=1))[:, None]
        kls.append(kl_divergence(final, x) - final.sum() + x.sum())
        x *= (s.asset_caps / x.sum(axis=0))[None, :]
        kls.append(kl_divergence(final, x) - final.sum() + x.sum())
    assert all(b <= a + 1e-13 for a, b in zip(kls, kls[1:]))


def test_kl_trace_reaches_constrained_minimum(rng):
    s = StrengthSequences([3, 4, 5], [2, 4, 6])
    prior = rng.uniform(0.1, 3, (3, 3))
    res = ipf(prior, s.bank_sizes, s.asset_caps, track_kl=True)
    assert res.kl_trace[-1] == pytest.approx(kl_divergence(res.matrix, prior))
    assert res.residual <= 1e-10


def test_zero_prior_entries_stay_zero():
    s = StrengthSequences([2, 2], [2, 2])
    prior = HoldingsMatrix([[1.0, 0.0], [1.0, 1.0]])
    x = cross_entropy_min(prior, s)
    assert x.entries[0, 1] == 0
    np.testing.assert_allclose(x.entries, [[2, 0], [0, 2]], atol=1e-12)
