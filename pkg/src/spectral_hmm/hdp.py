"""Truncated sticky-HDP prior: global weights, transition rows, franchise counts.

The countable HDP is replaced by its ``K_max``-state weak limit,
``alpha ~ Dir(gamma / K_max, ...)`` and
``pi_j ~ Dir(eta * alpha + kappa * e_j)``. Self-transition stickiness is
parameterised by ``eta + kappa`` and ``rho = kappa / (eta + kappa)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError

TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class HdpPriors:
    """Gamma(shape, rate) priors on ``gamma`` and ``eta + kappa``, Beta on ``rho``."""

    a_gamma: float = 1.0
    b_gamma: float = 0.01
    a_ek: float = 1.0
    b_ek: float = 0.01
    c_rho: float = 100.0
    d_rho: float = 1.0
    K_max: int = 7

    def __post_init__(self):
        for name in ("a_gamma", "b_gamma", "a_ek", "b_ek", "c_rho", "d_rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.K_max < 1:
            raise ValueError("K_max must be >= 1")


@dataclass
class HdpState:
    alpha: np.ndarray
    pi: np.ndarray
    pi0: np.ndarray
    gamma: float
    eta_plus_kappa: float
    rho: float

    @property
    def eta(self) -> float:
        return (1.0 - self.rho) * self.eta_plus_kappa

    @property
    def kappa(self) -> float:
        return self.rho * self.eta_plus_kappa

    def copy(self) -> HdpState:
        return HdpState(self.alpha.copy(), self.pi.copy(), self.pi0.copy(),
                        self.gamma, self.eta_plus_kappa, self.rho)


@dataclass
class CrfCounts:
    n: np.ndarray
    m: np.ndarray
    o_dot: np.ndarray
    m_bar: np.ndarray


def dirichlet(conc, rng) -> np.ndarray:
    """Dirichlet draw that stays strictly positive for tiny concentrations.

    Gamma variates with shape below one are generated in log space via
    ``G(a) = G(a + 1) * U**(1/a)`` so that underflow cannot zero a component.
    """
    a = np.asarray(conc, dtype=float)
    if np.any(~(a >= 0)):
        raise ValueError("Dirichlet concentrations must be non-negative")
    a = np.maximum(a, TINY)
    small = a < 1.0
    logg = np.log(rng.standard_gamma(np.where(small, a + 1.0, a)))
    if np.any(small):
        u = rng.random(a.shape)
        with np.errstate(divide="ignore", over="ignore"):
            logg = logg + np.where(small, np.log(u) / a, 0.0)
    logg -= logg.max(axis=-1, keepdims=True)
    w = np.exp(logg)
    w = np.maximum(w / w.sum(axis=-1, keepdims=True), TINY)
    return w / w.sum(axis=-1, keepdims=True)


def crt(counts, conc, rng) -> np.ndarray:
    """Number of occupied tables when ``counts`` customers join a CRP.

    Customer ``i`` (1-based) opens a new table with probability
    ``conc / (conc + i - 1)``, so the first always does. Broadcasts over
    matching arrays of counts and concentrations.
    """
    counts = np.asarray(counts, dtype=np.int64)
    conc = np.broadcast_to(np.asarray(conc, dtype=float), counts.shape)
    flat_n = counts.ravel()
    flat_c = conc.ravel()
    total = int(flat_n.sum())
    out = np.zeros(flat_n.size, dtype=np.int64)
    if total == 0:
        return out.reshape(counts.shape)
    owner = np.repeat(np.arange(flat_n.size), flat_n)
    starts = np.cumsum(flat_n) - flat_n
    i = np.arange(total) - np.repeat(starts, flat_n)
    c = flat_c[owner]
    u = rng.random(total)
    with np.errstate(invalid="ignore", divide="ignore"):
        new_table = (i == 0) | (u < c / (c + i))
    np.add.at(out, owner, new_table)
    return out.reshape(counts.shape)


def sample_alpha(m_bar, gamma: float, rng) -> np.ndarray:
    """Global weights given considered-dish counts (matrix or column totals)."""
    m_bar = np.asarray(m_bar, dtype=float)
    cols = m_bar.sum(axis=0) if m_bar.ndim == 2 else m_bar
    return dirichlet(gamma / cols.size + cols, rng)


def sample_pi_row(j: int, n_row, alpha, eta: float, kappa: float, rng) -> np.ndarray:
    conc = eta * np.asarray(alpha, dtype=float) + np.asarray(n_row, dtype=float)
    conc[j] += kappa
    return dirichlet(conc, rng)


def sample_pi(n, alpha, eta: float, kappa: float, rng) -> np.ndarray:
    K = len(alpha)
    conc = eta * np.asarray(alpha, dtype=float)[None, :] + np.asarray(n, dtype=float)
    conc[np.diag_indices(K)] += kappa
    return dirichlet(conc, rng)


def sample_pi0(z1: int | None, alpha, eta: float, rng) -> np.ndarray:
    """Initial-state distribution: a Dir(eta * alpha) row plus the count of ``z_1``."""
    conc = eta * np.asarray(alpha, dtype=float)
    if z1 is not None:
        conc[z1] += 1.0
    return dirichlet(conc, rng)


def sample_table_counts(n, alpha, eta: float, kappa: float, rng) -> np.ndarray:
    n = np.asarray(n, dtype=np.int64)
    K = n.shape[0]
    conc = np.tile(eta * np.asarray(alpha, dtype=float), (K, 1))
    conc[np.diag_indices(K)] += kappa
    return crt(n, conc, rng)


def override_probability(alpha_j, rho: float):
    """Posterior probability that a table serving the house dish was overridden."""
    alpha_j = np.asarray(alpha_j, dtype=float)
    return rho / (rho + alpha_j * (1.0 - rho))


def sample_overrides(m_jj, alpha_j, rho: float, rng, method: str = "binomial"):
    """Override totals ``o_j.`` for ``m_jj`` house-dish tables.

    ``method="bernoulli"`` draws every table separately; ``"binomial"`` draws
    the aggregate. Both target the same law.
    """
    m_jj = np.asarray(m_jj, dtype=np.int64)
    p = np.broadcast_to(override_probability(alpha_j, rho), m_jj.shape)
    if method == "binomial":
        return rng.binomial(m_jj, p)
    if method == "bernoulli":
        flat_m, flat_p = m_jj.ravel(), p.ravel()
        owner = np.repeat(np.arange(flat_m.size), flat_m)
        hits = rng.random(owner.size) < flat_p[owner]
        out = np.zeros(flat_m.size, dtype=np.int64)
        np.add.at(out, owner, hits)
        return out.reshape(m_jj.shape)
    raise ValueError(f"unknown method {method!r}")


def considered_counts(m, o_dot) -> np.ndarray:
    m = np.asarray(m, dtype=np.int64)
    o_dot = np.asarray(o_dot, dtype=np.int64)
    diag = np.diagonal(m)
    if np.any(o_dot > diag) or np.any(o_dot < 0):
        raise InvariantError("override totals must lie in [0, m_jj]")
    m_bar = m.copy()
    m_bar[np.diag_indices(m.shape[0])] = diag - o_dot
    return m_bar


def sample_eta_plus_kappa(m_dotdot: int, n_row_sums, current: float, priors: HdpPriors, rng):
    """One auxiliary-variable update of the restaurant concentration ``eta + kappa``."""
    n_j = np.asarray(n_row_sums, dtype=float)
    n_j = n_j[n_j > 0]
    log_r = np.log(rng.beta(current + 1.0, n_j)) if n_j.size else np.zeros(0)
    s = rng.random(n_j.size) < n_j / (n_j + current)
    shape = priors.a_ek + m_dotdot - s.sum()
    rate = priors.b_ek - log_r.sum()
    return rng.gamma(shape, 1.0 / rate)


def sample_gamma(m_bar_dotdot: int, K_bar: int, current: float, priors: HdpPriors, rng):
    """One auxiliary-variable update of the top-level concentration ``gamma``."""
    if m_bar_dotdot > 0:
        log_psi = math.log(rng.beta(current + 1.0, m_bar_dotdot))
        xi = int(rng.random() < m_bar_dotdot / (m_bar_dotdot + current))
    else:
        log_psi, xi = 0.0, 0
    shape = priors.a_gamma + K_bar - xi
    return rng.gamma(shape, 1.0 / (priors.b_gamma - log_psi))


def sample_rho(o_total: int, m_dotdot: int, priors: HdpPriors, rng) -> float:
    if o_total < 0 or o_total > m_dotdot:
        raise InvariantError(f"override total {o_total} inconsistent with {m_dotdot} tables")
    return rng.beta(o_total + priors.c_rho, m_dotdot - o_total + priors.d_rho)


def sample_prior_hdp(priors: HdpPriors, rng) -> HdpState:
    K = priors.K_max
    gamma = rng.gamma(priors.a_gamma, 1.0 / priors.b_gamma)
    ek = rng.gamma(priors.a_ek, 1.0 / priors.b_ek)
    rho = rng.beta(priors.c_rho, priors.d_rho)
    alpha = dirichlet(np.full(K, gamma / K), rng)
    eta, kappa = (1.0 - rho) * ek, rho * ek
    pi = sample_pi(np.zeros((K, K)), alpha, eta, kappa, rng)
    pi0 = sample_pi0(None, alpha, eta, rng)
    return HdpState(alpha, pi, pi0, gamma, ek, rho)
