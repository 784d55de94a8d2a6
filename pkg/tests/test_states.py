import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fb_oracle import check_instance, enumerate_paths, random_instance
from spectral_hmm.emission import EmissionParams, SegmentView, segment_log_likelihood
from spectral_hmm.errors import NumericError
from spectral_hmm.states import (backward_messages, emission_loglik, hmm_log_likelihood,
                                 log_evidence, sample_states, smoothing_marginals,
                                 transition_counts)
from spectral_hmm.timeseries import TimeSeries


def random_problem(rng, T=6, K=3):
    return rng.normal(0, 2, size=(T, K)), rng.dirichlet(np.ones(K), size=K), rng.dirichlet(np.ones(K))


def test_messages_match_enumeration():
    """``p(y_{t+1:T} | z_t = k)`` ratios across k, enumerated over all futures."""
    rng = np.random.default_rng(0)
    loglik, pi, pi0 = random_problem(rng)
    T, K = loglik.shape
    msgs = backward_messages(loglik, pi)
    for t in range(T - 1):
        fut = np.zeros(K)
        paths, _ = enumerate_paths(loglik[t + 1:], pi, np.ones(K) / K)
        for k in range(K):
            lp = np.log(pi[k, paths[:, 0]]) + loglik[np.arange(t + 1, T), paths].sum(axis=1)
            if T - t - 1 > 1:
                lp += np.log(pi)[paths[:, :-1], paths[:, 1:]].sum(axis=1)
            fut[k] = np.exp(lp).sum()
        np.testing.assert_allclose(msgs.messages[t], fut / fut.sum(), rtol=1e-10)
        np.testing.assert_allclose(np.log(msgs.messages[t]) + msgs.log_scale[t], np.log(fut),
                                   rtol=1e-10)
    np.testing.assert_allclose(msgs.messages.sum(axis=1), 1.0, atol=1e-12)


def test_log_evidence_matches_enumeration():
    rng = np.random.default_rng(1)
    loglik, pi, pi0 = random_problem(rng, T=5)
    T, K = loglik.shape
    import itertools
    tot = []
    for z in itertools.product(range(K), repeat=T):
        z = np.array(z)
        tot.append(np.log(pi0[z[0]]) + loglik[np.arange(T), z].sum() + np.log(pi[z[:-1], z[1:]]).sum())
    ref = np.logaddexp.reduce(tot)
    assert log_evidence(loglik, pi0, backward_messages(loglik, pi)) == pytest.approx(ref, rel=1e-12)


def test_single_state_and_single_step():
    msgs = backward_messages(np.zeros((4, 1)), np.ones((1, 1)))
    np.testing.assert_array_equal(msgs.messages, 1.0)
    z, p = sample_states(np.zeros((4, 1)), np.ones((1, 1)), np.ones(1), msgs, np.random.default_rng(0))
    assert np.all(z == 0) and np.all(p == 1)
    ll = np.log(np.array([[0.2, 0.8]]))
    msgs = backward_messages(ll, np.eye(2))
    assert msgs.messages.shape == (1, 2)


def test_symmetric_states_give_uniform_rows():
    K = 3
    loglik = np.tile(np.random.default_rng(2).normal(size=(10, 1)), (1, K))
    pi = np.full((K, K), 1 / K)
    msgs = backward_messages(loglik, pi)
    _, p = sample_states(loglik, pi, np.full(K, 1 / K), msgs, np.random.default_rng(3))
    np.testing.assert_allclose(p, 1 / K, atol=1e-12)


def test_rescaling_invariance():
    rng = np.random.default_rng(4)
    loglik, pi, _ = random_problem(rng, T=8)
    a = backward_messages(loglik, pi)
    b = backward_messages(loglik + 123.0, pi)
    np.testing.assert_allclose(a.messages, b.messages, rtol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_sampler_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    err, tv, floor = check_instance(*random_instance(rng), n_draws=20_000, rng=rng)
    assert err < 1e-10
    assert tv < 3 * floor + 1e-3


def test_state_frequencies_match_marginals():
    rng = np.random.default_rng(5)
    loglik, pi, pi0 = random_problem(rng)
    msgs = backward_messages(loglik, pi)
    marg = smoothing_marginals(loglik, pi, pi0, msgs)
    N = 10_000
    freq = np.zeros_like(marg)
    for _ in range(N):
        z, p = sample_states(loglik, pi, pi0, msgs, rng)
        freq[np.arange(6), z] += 1
    freq /= N
    se = np.sqrt(marg * (1 - marg) / N)
    assert np.all(np.abs(freq - marg) <= 3 * se + 1e-12)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-10)


def test_underflow_is_numeric_error():
    loglik = np.array([[0.0, 0.0], [-np.inf, -np.inf]])
    with pytest.raises(NumericError):
        backward_messages(loglik, np.full((2, 2), 0.5))


def test_transition_counts_examples():
    np.testing.assert_array_equal(transition_counts(np.zeros(7, int), 2), [[6, 0], [0, 0]])
    np.testing.assert_array_equal(transition_counts([0, 1, 0, 1, 0], 2), [[0, 2], [2, 0]])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=0, max_size=60))
def test_transition_counts_recount(zs):
    z = np.array(zs, dtype=int)
    ref = np.zeros((5, 5), dtype=int)
    for a, b in zip(z[:-1], z[1:]):
        ref[a, b] += 1
    n = transition_counts(z, 5)
    np.testing.assert_array_equal(n, ref)
    assert n.sum() == max(len(zs) - 1, 0)


def test_hmm_loglik_perfect_fit_is_zero():
    s2 = 1 / (2 * math.pi)
    th = EmissionParams([0.1], [1.0, 0.0], s2)
    series = TimeSeries(th.mean(np.arange(5)))
    ll = hmm_log_likelihood(np.zeros(5, int), np.ones((1, 1)), np.ones(1), [th], series)
    assert ll == pytest.approx(0.0, abs=1e-12)


def test_hmm_loglik_manual_composition():
    ths = [EmissionParams([0.1], [1.0, 0.0], 0.5), EmissionParams([0.2], [0.0, 1.0], 2.0)]
    series = TimeSeries([0.3, -1.0, 0.4])
    z = np.array([0, 1, 1])
    pi = np.array([[0.7, 0.3], [0.4, 0.6]])
    pi0 = np.array([0.25, 0.75])
    segs = [SegmentView(series.times[z == k], series.values[z == k]) for k in range(2)]
    ref = (math.log(0.25) + math.log(0.3) + math.log(0.6)
           + sum(segment_log_likelihood(th, s) for th, s in zip(ths, segs)))
    assert hmm_log_likelihood(z, pi, pi0, ths, series) == pytest.approx(ref, rel=1e-12)
    assert hmm_log_likelihood(z, np.array([[1.0, 0.0], [0.0, 1.0]]), pi0, ths, series) == -math.inf


def test_emission_loglik_matches_scipy():
    ths = [EmissionParams([0.05], [1.0, 2.0], 0.3)]
    series = TimeSeries(np.random.default_rng(6).normal(size=9), t0=3)
    ref = stats.norm.logpdf(series.values, ths[0].mean(series.times), math.sqrt(0.3))
    np.testing.assert_allclose(emission_loglik(series, ths)[:, 0], ref, rtol=1e-12)
