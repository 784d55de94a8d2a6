"""Blocked sampling of the hidden state sequence.

Backward messages are kept row-normalised with their log scales retained, so
``log p(y_{t+1:T} | z_t = k) = log messages[t, k] + log_scale[t]`` (0-based
``t``; the last row is the empty-future message).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .emission import LOG_2PI, basis
from .errors import NumericError


@dataclass
class BackwardMessages:
    messages: np.ndarray
    log_scale: np.ndarray


def emission_loglik(series, thetas) -> np.ndarray:
    """``T x K`` matrix of ``log N(y_t; f_tk, sigma2_k)``."""
    t = series.times
    y = series.values
    out = np.empty((y.size, len(thetas)))
    for k, th in enumerate(thetas):
        resid = y - basis(t, th.omegas) @ th.betas
        out[:, k] = -0.5 * (LOG_2PI + np.log(th.sigma2)) - 0.5 * resid**2 / th.sigma2
    return out


@njit(cache=True)
def _backward(loglik, pi, msgs, log_scale):
    T, K = loglik.shape
    for k in range(K):
        msgs[T - 1, k] = 1.0 / K
    log_scale[T - 1] = np.log(K)
    e = np.empty(K)
    for t in range(T - 2, -1, -1):
        mx = loglik[t + 1, 0]
        for j in range(1, K):
            if loglik[t + 1, j] > mx:
                mx = loglik[t + 1, j]
        for j in range(K):
            e[j] = np.exp(loglik[t + 1, j] - mx) * msgs[t + 1, j]
        total = 0.0
        for k in range(K):
            acc = 0.0
            for j in range(K):
                acc += pi[k, j] * e[j]
            msgs[t, k] = acc
            total += acc
        if not total > 0.0:
            return t
        for k in range(K):
            msgs[t, k] /= total
        log_scale[t] = np.log(total) + mx + log_scale[t + 1]
    return -1


@njit(cache=True)
def _forward_sample(loglik, pi, pi0, msgs, u, z, probs):
    T, K = loglik.shape
    w = np.empty(K)
    for t in range(T):
        mx = loglik[t, 0]
        for k in range(1, K):
            if loglik[t, k] > mx:
                mx = loglik[t, k]
        total = 0.0
        for k in range(K):
            prior = pi0[k] if t == 0 else pi[z[t - 1], k]
            w[k] = prior * np.exp(loglik[t, k] - mx) * msgs[t, k]
            total += w[k]
        if not total > 0.0:
            return t
        acc = 0.0
        target = u[t] * total
        choice = K - 1
        for k in range(K):
            probs[t, k] = w[k] / total
            acc += w[k]
            if acc > target and choice == K - 1 and k < K - 1:
                choice = k
                target = np.inf
        z[t] = choice
    return -1


def backward_messages(loglik, pi) -> BackwardMessages:
    loglik = np.ascontiguousarray(loglik, dtype=float)
    T, K = loglik.shape
    msgs = np.empty((T, K))
    log_scale = np.empty(T)
    bad = _backward(loglik, np.ascontiguousarray(pi, dtype=float), msgs, log_scale)
    if bad >= 0:
        raise NumericError(f"backward message underflow at t={bad}")
    return BackwardMessages(msgs, log_scale)


def sample_states(loglik, pi, pi0, msgs: BackwardMessages, rng):
    """Draw ``z`` forward given backward messages.

    Returns the 0-based state sequence and the ``T x K`` matrix of the exact
    conditional distributions ``p(z_t = k | z_{t-1}, y, pi, theta)`` used.
    """
    loglik = np.ascontiguousarray(loglik, dtype=float)
    T, K = loglik.shape
    u = rng.random(T)
    z = np.empty(T, dtype=np.int64)
    probs = np.empty((T, K))
    bad = _forward_sample(loglik, np.ascontiguousarray(pi, dtype=float),
                          np.ascontiguousarray(pi0, dtype=float), msgs.messages, u, z, probs)
    if bad >= 0:
        raise NumericError(f"state sampling found no admissible state at t={bad}")
    return z, probs


def log_evidence(loglik, pi0, msgs: BackwardMessages) -> float:
    """``log p(y | pi, pi0, theta)`` from the backward pass."""
    a = np.log(np.asarray(pi0)) + loglik[0] + np.log(msgs.messages[0])
    return float(np.logaddexp.reduce(a) + msgs.log_scale[0])


def smoothing_marginals(loglik, pi, pi0, msgs: BackwardMessages) -> np.ndarray:
    """``T x K`` matrix of ``p(z_t = k | y, pi, pi0, theta)`` by scaled forward filtering."""
    loglik = np.asarray(loglik, dtype=float)
    pi = np.asarray(pi, dtype=float)
    T, K = loglik.shape
    out = np.empty((T, K))
    e = np.exp(loglik - loglik.max(axis=1, keepdims=True))
    a = np.asarray(pi0, dtype=float) * e[0]
    for t in range(T):
        if t:
            a = (a @ pi) * e[t]
        total = a.sum()
        if not total > 0:
            raise NumericError(f"forward filter underflow at t={t}")
        a = a / total
        w = a * msgs.messages[t]
        out[t] = w / w.sum()
    return out


def transition_counts(z, K: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.int64)
    if z.size < 2:
        return np.zeros((K, K), dtype=np.int64)
    flat = np.bincount(z[:-1] * K + z[1:], minlength=K * K)
    return flat.reshape(K, K)


def hmm_log_likelihood(z, pi, pi0, thetas, series=None, loglik=None) -> float:
    """Complete-data log likelihood of a path; ``-inf`` on a forbidden transition."""
    z = np.asarray(z, dtype=np.int64)
    if loglik is None:
        loglik = emission_loglik(series, thetas)
    with np.errstate(divide="ignore"):
        total = np.log(pi0[z[0]]) + loglik[np.arange(z.size), z].sum()
        if z.size > 1:
            total += np.log(np.asarray(pi)[z[:-1], z[1:]]).sum()
    return float(total)
