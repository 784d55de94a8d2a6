import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import gammaln

from spectral_hmm import hdp
from spectral_hmm.errors import InvariantError


def crp_tables(n, p, rng):
    """Direct seating: each customer joins table t w.p. size_t/(p+i) or opens one w.p. p/(p+i)."""
    sizes = []
    for i in range(n):
        w = np.array(sizes + [p], dtype=float)
        t = rng.choice(w.size, p=w / w.sum())
        if t == len(sizes):
            sizes.append(1)
        else:
            sizes[t] += 1
    return len(sizes)


@pytest.mark.parametrize("n", [1, 5, 50])
@pytest.mark.parametrize("p", [0.1, 1.0, 10.0])
def test_crt_matches_restaurant_simulation(n, p):
    rng = np.random.default_rng(int(n * 100 + p * 10))
    reps = 4000
    direct = np.array([crp_tables(n, p, rng) for _ in range(reps)])
    fast = hdp.crt(np.full(reps, n), p, rng)
    se = np.hypot(direct.std(ddof=1), fast.std(ddof=1)) / math.sqrt(reps)
    assert abs(direct.mean() - fast.mean()) <= 3 * se + 1e-12
    exact = sum(p / (p + i) for i in range(n))
    assert abs(fast.mean() - exact) <= 3 * fast.std(ddof=1) / math.sqrt(reps) + 1e-12
    assert fast.min() >= 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=1, max_size=12), st.floats(1e-6, 50), st.integers(0, 999))
def test_crt_bounds(counts, conc, seed):
    n = np.array(counts)
    m = hdp.crt(n, conc, np.random.default_rng(seed))
    assert np.all(m <= n)
    assert np.all((m >= 1) == (n >= 1))


def test_crt_shapes_and_zero_concentration():
    rng = np.random.default_rng(0)
    n = np.array([[0, 3], [7, 1]])
    m = hdp.crt(n, np.zeros((2, 2)), rng)
    np.testing.assert_array_equal(m, (n > 0).astype(int))


def test_dirichlet_means():
    rng = np.random.default_rng(1)
    a = np.array([0.5, 2.0, 7.5])
    draws = np.array([hdp.dirichlet(a, rng) for _ in range(20000)])
    se = draws.std(axis=0, ddof=1) / math.sqrt(20000)
    assert np.all(np.abs(draws.mean(axis=0) - a / a.sum()) < 3 * se)


def test_dirichlet_tiny_concentrations_stay_positive():
    rng = np.random.default_rng(2)
    w = hdp.dirichlet(np.full((100, 7), 1e-4), rng)
    assert np.all(w > 0) and np.allclose(w.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        hdp.dirichlet([1.0, -1.0], rng)


def test_pi_rows_posterior_means():
    rng = np.random.default_rng(3)
    alpha = np.array([0.2, 0.5, 0.3])
    n = np.array([[10, 2, 0], [1, 0, 4], [0, 0, 0]])
    eta, kappa = 2.0, 5.0
    draws = np.array([hdp.sample_pi(n, alpha, eta, kappa, rng) for _ in range(20000)])
    conc = eta * alpha[None, :] + n + kappa * np.eye(3)
    expected = conc / conc.sum(axis=1, keepdims=True)
    se = draws.std(axis=0, ddof=1) / math.sqrt(20000)
    assert np.all(np.abs(draws.mean(axis=0) - expected) < 3 * se + 1e-12)
    row = np.array([hdp.sample_pi_row(1, n[1], alpha, eta, kappa, rng) for _ in range(20000)])
    assert np.all(np.abs(row.mean(axis=0) - expected[1]) < 3 * se[1] + 1e-12)


def test_alpha_and_pi0_means():
    rng = np.random.default_rng(4)
    m_bar = np.array([[3, 0, 1], [0, 2, 0], [1, 0, 0]])
    gamma = 1.5
    draws = np.array([hdp.sample_alpha(m_bar, gamma, rng) for _ in range(20000)])
    conc = gamma / 3 + m_bar.sum(axis=0)
    se = draws.std(axis=0, ddof=1) / math.sqrt(20000)
    assert np.all(np.abs(draws.mean(axis=0) - conc / conc.sum()) < 3 * se)
    alpha = np.array([0.6, 0.3, 0.1])
    p0 = np.array([hdp.sample_pi0(2, alpha, 4.0, rng) for _ in range(20000)])
    c0 = 4.0 * alpha + np.array([0, 0, 1])
    assert np.all(np.abs(p0.mean(axis=0) - c0 / c0.sum()) < 3 * p0.std(axis=0) / math.sqrt(20000))


def test_override_probability_by_bayes():
    """A house-dish table is an override w.p. rho / (rho + alpha_j (1 - rho))."""
    rho, a = 0.7, 0.2
    p_override = rho
    p_dish = (1 - rho) * a
    assert hdp.override_probability(a, rho) == pytest.approx(p_override / (p_override + p_dish))


def test_override_methods_agree():
    rng = np.random.default_rng(5)
    m = np.array([0, 3, 20])
    a = np.array([0.1, 0.5, 0.05])
    b1 = np.array([hdp.sample_overrides(m, a, 0.8, rng, "binomial") for _ in range(5000)])
    b2 = np.array([hdp.sample_overrides(m, a, 0.8, rng, "bernoulli") for _ in range(5000)])
    se = np.hypot(b1.std(axis=0), b2.std(axis=0)) / math.sqrt(5000) + 1e-12
    assert np.all(np.abs(b1.mean(axis=0) - b2.mean(axis=0)) < 3.5 * se)
    assert np.all(b1 <= m) and np.all(b2 <= m) and np.all(b1[:, 0] == 0)
    with pytest.raises(ValueError):
        hdp.sample_overrides(m, a, 0.8, rng, "other")


def test_considered_counts():
    m = np.array([[4, 1], [2, 3]])
    np.testing.assert_array_equal(hdp.considered_counts(m, [1, 3]), [[3, 1], [2, 0]])
    with pytest.raises(InvariantError):
        hdp.considered_counts(m, [5, 0])


def test_rho_conjugate():
    rng = np.random.default_rng(6)
    pri = hdp.HdpPriors(c_rho=3.0, d_rho=2.0)
    draws = np.array([hdp.sample_rho(4, 10, pri, rng) for _ in range(20000)])
    assert abs(draws.mean() - 7 / 15) < 3 * draws.std() / math.sqrt(20000)
    with pytest.raises(InvariantError):
        hdp.sample_rho(11, 10, pri, rng)


def _quadrature_mean(logpost):
    grid_hi = 200.0
    c = integrate.quad(lambda x: math.exp(logpost(x)), 1e-9, grid_hi, limit=400, points=[1, 5, 20])[0]
    m = integrate.quad(lambda x: x * math.exp(logpost(x)), 1e-9, grid_hi, limit=400, points=[1, 5, 20])[0]
    return m / c


def _chain_mean(step, x0, n=30000):
    x, out = x0, np.empty(n)
    for i in range(n):
        x = step(x)
        out[i] = x
    b = out.reshape(50, -1).mean(axis=1)
    return out.mean(), b.std(ddof=1) / math.sqrt(50)


def test_gamma_update_targets_antoniak_posterior():
    """p(gamma | K, n) is prop. to prior * gamma^K Gamma(gamma) / Gamma(gamma + n)."""
    pri = hdp.HdpPriors(a_gamma=2.0, b_gamma=0.5)
    K, n = 4, 30
    rng = np.random.default_rng(7)

    def logpost(g):
        return stats.gamma(2.0, scale=2.0).logpdf(g) + K * math.log(g) + gammaln(g) - gammaln(g + n)

    mean, se = _chain_mean(lambda g: hdp.sample_gamma(n, K, g, pri, rng), 1.0)
    assert abs(mean - _quadrature_mean(logpost)) < 3 * se


def test_eta_plus_kappa_update_targets_posterior():
    """Restaurants share concentration c: prior * c^m prod_j Gamma(c) / Gamma(c + n_j)."""
    pri = hdp.HdpPriors(a_ek=2.0, b_ek=0.5)
    n_j = np.array([12, 40, 3, 0])
    m = 9
    rng = np.random.default_rng(8)

    def logpost(c):
        live = n_j[n_j > 0]
        return (stats.gamma(2.0, scale=2.0).logpdf(c) + m * math.log(c)
                + float(np.sum(gammaln(c) - gammaln(c + live))))

    mean, se = _chain_mean(lambda c: hdp.sample_eta_plus_kappa(m, n_j, c, pri, rng), 1.0)
    assert abs(mean - _quadrature_mean(logpost)) < 3 * se


def test_prior_state_shapes():
    pri = hdp.HdpPriors(K_max=4)
    st_ = hdp.sample_prior_hdp(pri, np.random.default_rng(9))
    assert st_.pi.shape == (4, 4) and np.allclose(st_.pi.sum(axis=1), 1)
    assert st_.eta + st_.kappa == pytest.approx(st_.eta_plus_kappa)
    with pytest.raises(ValueError):
        hdp.HdpPriors(a_gamma=0)
