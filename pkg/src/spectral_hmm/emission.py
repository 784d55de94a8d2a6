"""Harmonic-regression emissions and the reversible-jump sampler over them.

Each hidden state carries ``theta = (d, omegas, betas, sigma2)``: a Gaussian
whose mean at absolute sample index ``t`` is

    f_t = sum_l  beta_l1 cos(2 pi omega_l t) + beta_l2 sin(2 pi omega_l t).

Frequencies are stored sorted ascending, which is how they are identified.
The prior on the sorted vector is therefore ``d! / phi_omega**d`` on the
ordered cone, and every Metropolis-Hastings ratio below is written against
that density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaln

from .errors import ImproperPriorError, NumericError
from .timeseries import periodogram

LOG_2PI = math.log(2.0 * math.pi)
MAX_CONDITION = 1e12


@dataclass
class EmissionParams:
    omegas: np.ndarray
    betas: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.omegas = np.asarray(self.omegas, dtype=float).ravel()
        self.betas = np.asarray(self.betas, dtype=float).ravel()
        self.sigma2 = float(self.sigma2)
        if self.betas.size != 2 * self.omegas.size:
            raise ValueError(
                f"betas must have length 2*d={2 * self.omegas.size}, got {self.betas.size}"
            )

    @property
    def d(self) -> int:
        return self.omegas.size

    @property
    def amplitudes(self) -> np.ndarray:
        b = self.betas.reshape(-1, 2)
        return np.sqrt(b[:, 0] ** 2 + b[:, 1] ** 2)

    def copy(self) -> EmissionParams:
        return EmissionParams(self.omegas.copy(), self.betas.copy(), self.sigma2)

    def mean(self, times) -> np.ndarray:
        return basis(times, self.omegas) @ self.betas


@dataclass(frozen=True)
class EmissionPriors:
    """Priors on one state's emission parameters.

    ``d`` is Poisson(``poisson_rate``) truncated to ``1..d_max``; frequencies
    are iid Uniform(0, ``phi_omega``); betas are N(0, ``sigma2_beta`` I); the
    variance is Inverse-Gamma(``xi0``/2, ``tau0``/2).

    ``min_gap`` restricts the sorted frequencies to the separated cone
    ``min_gap <= w_1``, ``w_{l+1} - w_l >= min_gap``, ``w_d <= phi - min_gap``
    (uniform there). Zero gives the plain iid-uniform prior.
    """

    poisson_rate: float = 1.0
    d_max: int = 5
    phi_omega: float = 0.25
    sigma2_beta: float = 100.0
    xi0: float = 1.0
    tau0: float = 0.1
    min_gap: float = 0.0
    _log_pd: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.poisson_rate <= 0:
            raise ValueError("poisson_rate must be positive")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if not 0 < self.phi_omega < 0.5:
            raise ValueError("phi_omega must lie in (0, 0.5)")
        if self.sigma2_beta <= 0:
            raise ValueError("sigma2_beta must be positive")
        if self.xi0 < 0 or self.tau0 < 0:
            raise ValueError("xi0 and tau0 must be non-negative")
        if not 0 <= self.min_gap or self.phi_omega - (self.d_max + 1) * self.min_gap <= 0:
            raise ValueError("min_gap must be >= 0 and leave room for d_max frequencies")
        ks = np.arange(1, self.d_max + 1)
        logw = ks * math.log(self.poisson_rate) - gammaln(ks + 1)
        logw -= np.logaddexp.reduce(logw)
        object.__setattr__(self, "_log_pd", logw)

    def log_prior_d(self, d: int) -> float:
        if d < 1 or d > self.d_max:
            return -math.inf
        return float(self._log_pd[d - 1])

    @property
    def prior_d(self) -> np.ndarray:
        return np.exp(self._log_pd)

    def log_prior_omegas(self, omegas) -> float:
        """Density of the sorted frequency vector."""
        w = np.asarray(omegas)
        d = w.size
        if d and not self.admissible(w):
            return -math.inf
        return float(gammaln(d + 1) - d * math.log(self.phi_omega - (d + 1) * self.min_gap))

    def admissible(self, w) -> bool:
        g = self.min_gap
        if w.size == 0:
            return True
        if g > 0:
            return bool(w[0] >= g and w[-1] <= self.phi_omega - g and np.all(np.diff(w) >= g))
        return bool(w[0] > 0 and w[-1] < self.phi_omega and np.all(np.diff(w) > 0))

    def frequency_bounds(self, lower: float | None, upper: float | None):
        """Open or closed range allowed for one frequency between its neighbours."""
        g = self.min_gap
        lo = (lower + g) if lower is not None else g
        hi = (upper - g) if upper is not None else self.phi_omega - g
        return lo, hi

    def sample_omegas(self, d: int, rng) -> np.ndarray:
        span = self.phi_omega - (d + 1) * self.min_gap
        return np.sort(rng.uniform(0.0, span, size=d)) + self.min_gap * np.arange(1, d + 1)

    def log_prior_betas(self, betas) -> float:
        b = np.asarray(betas)
        return float(-0.5 * b.size * (LOG_2PI + math.log(self.sigma2_beta))
                     - 0.5 * (b @ b) / self.sigma2_beta)

    def log_prior_sigma2(self, sigma2: float) -> float:
        a, s = self.xi0 / 2.0, self.tau0 / 2.0
        if a <= 0 or s <= 0:
            raise ImproperPriorError("inverse-gamma prior on sigma2 is improper (xi0 or tau0 is 0)")
        return float(a * math.log(s) - gammaln(a) - (a + 1) * math.log(sigma2) - s / sigma2)


@dataclass(frozen=True)
class ProposalConfig:
    """Tuning of the reversible-jump moves.

    ``sigma2_omega`` and ``psi_omega`` left as ``None`` resolve to
    ``1 / (50 T)`` and ``1 / T`` for a series of length ``T``. With
    ``collapsed_within`` the frequency steps of the within-model move are
    accepted on the betas-integrated likelihood; otherwise on the likelihood
    at the current betas.
    """

    c: float = 0.4
    xi_omega: float = 0.2
    sigma2_omega: float | None = None
    psi_omega: float | None = None
    rj_updates_per_sweep: int = 2
    birth_rank_guard: bool = True
    collapsed_within: bool = True

    def __post_init__(self):
        if not 0 <= self.c <= 0.5:
            raise ValueError("c must lie in [0, 0.5]")
        if not 0 <= self.xi_omega <= 1:
            raise ValueError("xi_omega must lie in [0, 1]")
        if self.rj_updates_per_sweep < 1:
            raise ValueError("rj_updates_per_sweep must be >= 1")

    def random_walk_var(self, n_total: int) -> float:
        return self.sigma2_omega if self.sigma2_omega is not None else 1.0 / (50.0 * n_total)

    def min_spacing(self, n_total: int) -> float:
        return self.psi_omega if self.psi_omega is not None else 1.0 / n_total


class SegmentView:
    """Observations currently allocated to one state.

    ``bounds`` holds ``(start, stop)`` positions into ``times``/``values`` for
    each maximal run of consecutive sample indices. ``n_total`` is the length
    of the full series, which fixes the default proposal scales.
    """

    def __init__(self, times, values, n_total: int | None = None, bounds=None):
        self.times = np.asarray(times, dtype=np.int64).ravel()
        self.values = np.asarray(values, dtype=float).ravel()
        if self.times.size != self.values.size:
            raise ValueError("times and values must be aligned")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("segment times must be strictly increasing")
        if bounds is None:
            breaks = np.flatnonzero(np.diff(self.times) != 1) + 1
            edges = np.concatenate(([0], breaks, [self.times.size]))
            bounds = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        self.bounds = list(bounds)
        self.n_total = int(n_total) if n_total is not None else max(int(self.times.size), 1)
        self._spectra = {}

    @classmethod
    def from_states(cls, z, series, j: int) -> SegmentView:
        idx = np.flatnonzero(np.asarray(z) == j)
        return cls(series.times[idx], series.values[idx], n_total=len(series))

    def __len__(self):
        return self.times.size

    @property
    def lengths(self) -> np.ndarray:
        return np.array([b - a for a, b in self.bounds], dtype=float)

    def spectrum(self, r: int):
        """Normalised proposal histogram for segment ``r``.

        Returns ``(grid, cumulative weights, weights)`` with the zero-frequency
        bin removed, or ``None`` when the segment carries no usable mass.
        """
        if r not in self._spectra:
            a, b = self.bounds[r]
            spec = periodogram(self.values[a:b])
            w = spec.power.copy()
            if w.size:
                w[0] = 0.0
            total = w.sum()
            if w.size < 2 or not np.isfinite(total) or total <= 0:
                self._spectra[r] = None
            else:
                w /= total
                self._spectra[r] = (b - a, np.cumsum(w), w)
        return self._spectra[r]


def basis_row(t, omegas) -> np.ndarray:
    omegas = np.asarray(omegas, dtype=float)
    ang = 2.0 * np.pi * omegas * t
    out = np.empty(2 * omegas.size)
    out[0::2] = np.cos(ang)
    out[1::2] = np.sin(ang)
    return out


def basis(times, omegas) -> np.ndarray:
    """Design matrix with rows ``basis_row(t, omegas)``."""
    times = np.asarray(times, dtype=float)
    omegas = np.asarray(omegas, dtype=float)
    ang = 2.0 * np.pi * np.outer(times, omegas)
    X = np.empty((times.size, 2 * omegas.size))
    X[:, 0::2] = np.cos(ang)
    X[:, 1::2] = np.sin(ang)
    return X


def _rss(theta: EmissionParams, seg: SegmentView) -> float:
    if len(seg) == 0:
        return 0.0
    r = seg.values - basis(seg.times, theta.omegas) @ theta.betas
    return float(r @ r)


def gaussian_loglik(rss: float, n: int, sigma2: float) -> float:
    return -0.5 * n * (LOG_2PI + math.log(sigma2)) - 0.5 * rss / sigma2


def segment_log_likelihood(theta: EmissionParams, seg: SegmentView) -> float:
    if not theta.sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {theta.sigma2}")
    return gaussian_loglik(_rss(theta, seg), len(seg), theta.sigma2)


class BetaPosterior:
    """Conjugate Gaussian conditional of the betas given frequencies and variance."""

    def __init__(self, omegas, sigma2: float, seg: SegmentView, priors: EmissionPriors):
        k = 2 * np.asarray(omegas).size
        X = basis(seg.times, omegas)
        prec = X.T @ X / sigma2
        prec[np.diag_indices(k)] += 1.0 / priors.sigma2_beta
        if k and np.trace(prec) * priors.sigma2_beta > MAX_CONDITION:
            cond = np.linalg.cond(prec)
            if not np.isfinite(cond) or cond > MAX_CONDITION:
                raise NumericError(f"beta posterior precision is ill-conditioned (cond={cond:.3g})")
        try:
            self.chol = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as exc:
            raise NumericError("beta posterior precision is not positive definite") from exc
        self.mean = cho_solve((self.chol, True), X.T @ seg.values / sigma2) if k else np.zeros(0)
        self.k = k
        self._n = len(seg)
        self._yy = float(seg.values @ seg.values)
        self._sigma2 = sigma2
        self._sigma2_beta = priors.sigma2_beta

    def log_marginal(self) -> float:
        """``log p(y | omegas, sigma2)`` with the betas integrated out."""
        u = self.chol.T @ self.mean
        logdet = 2.0 * np.log(np.diag(self.chol)).sum()
        return float(-0.5 * self._n * (LOG_2PI + math.log(self._sigma2))
                     - 0.5 * self.k * math.log(self._sigma2_beta) - 0.5 * logdet
                     - 0.5 * (self._yy / self._sigma2 - u @ u))

    @property
    def cov(self) -> np.ndarray:
        return cho_solve((self.chol, True), np.eye(self.k))

    def sample(self, rng) -> np.ndarray:
        z = rng.standard_normal(self.k)
        return self.mean + solve_triangular(self.chol.T, z, lower=False)

    def logpdf(self, beta) -> float:
        u = self.chol.T @ (np.asarray(beta) - self.mean)
        return float(-0.5 * self.k * LOG_2PI + np.log(np.diag(self.chol)).sum() - 0.5 * (u @ u))


def sample_beta(omegas, sigma2, seg, priors, rng) -> np.ndarray:
    return BetaPosterior(omegas, sigma2, seg, priors).sample(rng)


def sample_sigma2(betas, omegas, seg, priors, rng) -> float:
    rss = _rss(EmissionParams(omegas, betas, 1.0), seg)
    shape = 0.5 * (len(seg) + priors.xi0)
    scale = 0.5 * (priors.tau0 + rss)
    if shape <= 0 or scale <= 0:
        raise ImproperPriorError("sigma2 posterior is improper (no data and xi0 = tau0 = 0)")
    return scale / rng.gamma(shape)


def _birth_allowed(d: int, seg_len: int | None, cfg: ProposalConfig) -> bool:
    if not cfg.birth_rank_guard or seg_len is None:
        return True
    return seg_len >= 2 * (d + 1) + 2


def move_probabilities(d: int, priors: EmissionPriors, cfg: ProposalConfig, seg_len=None):
    """Birth, death and within-model probabilities ``(b_d, r_d, mu_d)``.

    With ``seg_len`` given and the rank guard enabled, births that would leave
    fewer than two spare observations over the regression columns are
    switched off.
    """
    if d < 1 or d > priors.d_max:
        raise ValueError(f"d={d} outside 1..{priors.d_max}")
    lp = priors.log_prior_d
    b = 0.0
    if d < priors.d_max and _birth_allowed(d, seg_len, cfg):
        b = cfg.c * min(1.0, math.exp(lp(d + 1) - lp(d)))
    r = 0.0 if d == 1 else cfg.c * min(1.0, math.exp(lp(d - 1) - lp(d)))
    return b, r, 1.0 - b - r


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _accept(log_ratio: float, rng) -> bool:
    if np.isnan(log_ratio):
        raise NumericError("acceptance ratio is NaN")
    return log_ratio >= 0 or math.log(rng.random()) < log_ratio


def _birth_support(omegas, phi: float, psi: float):
    """Intervals ``[w_l + psi, w_{l+1} - psi]`` with ``w_0 = 0``, ``w_{d+1} = phi``."""
    edges = np.concatenate(([0.0], np.asarray(omegas, dtype=float), [phi]))
    lo = edges[:-1] + psi
    hi = edges[1:] - psi
    keep = hi > lo
    return lo[keep], hi[keep]


def _log_posterior(theta, seg, priors, rss=None) -> float:
    rss = _rss(theta, seg) if rss is None else rss
    return (gaussian_loglik(rss, len(seg), theta.sigma2)
            + priors.log_prior_d(theta.d)
            + priors.log_prior_omegas(theta.omegas)
            + priors.log_prior_betas(theta.betas))


def _propose_frequency(w_cur, seg, seg_p, cfg, rw_sd, rng):
    """One draw from the mixture proposal; ``None`` when nothing can be proposed."""
    if rng.random() < cfg.xi_omega:
        if seg_p is None:
            return None
        r = int(rng.choice(seg_p.size, p=seg_p))
        spec = seg.spectrum(r)
        if spec is None:
            return None
        grid, cum, wts = spec
        h = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), wts.size - 1)
        w_new = (h + rng.random()) / grid
        h_cur = int(w_cur * grid)
        q_cur = wts[h_cur] if h_cur < wts.size else 0.0
        if q_cur <= 0:
            return None
        return w_new, math.log(q_cur) - math.log(wts[h])
    return w_cur + rw_sd * rng.standard_normal(), 0.0


def within_move(theta, seg, cfg, priors, rng) -> EmissionParams:
    """Update frequencies one at a time, then betas and variance by Gibbs.

    Each frequency is proposed with probability ``xi_omega`` from the
    periodogram histogram of a segment chosen in proportion to its length
    (an independence proposal), and otherwise by a Gaussian random walk.
    Proposals leaving the open interval between the neighbouring
    frequencies (or ``(0, phi_omega)`` at the ends) are rejected, so the
    vector stays sorted.
    """
    theta = theta.copy()
    n = len(seg)
    rw_sd = math.sqrt(cfg.random_walk_var(seg.n_total))
    lengths = seg.lengths
    seg_p = lengths / lengths.sum() if lengths.size else None
    collapsed = cfg.collapsed_within and n > 0
    if collapsed:
        log_m = BetaPosterior(theta.omegas, theta.sigma2, seg, priors).log_marginal()
    elif n:
        resid = seg.values - basis(seg.times, theta.omegas) @ theta.betas
        ang_t = 2.0 * np.pi * seg.times

    for l in range(theta.d):
        w_cur = theta.omegas[l]
        lower, upper = priors.frequency_bounds(theta.omegas[l - 1] if l > 0 else None,
                                               theta.omegas[l + 1] if l + 1 < theta.d else None)
        prop = _propose_frequency(w_cur, seg, seg_p, cfg, rw_sd, rng)
        if prop is None:
            continue
        w_new, log_q_ratio = prop
        if not lower < w_new < upper:
            continue
        if n == 0:
            theta.omegas[l] = w_new
        elif collapsed:
            omegas = theta.omegas.copy()
            omegas[l] = w_new
            try:
                log_m_new = BetaPosterior(omegas, theta.sigma2, seg, priors).log_marginal()
            except NumericError:
                continue
            if _accept(log_m_new - log_m + log_q_ratio, rng):
                theta.omegas[l] = w_new
                log_m = log_m_new
        else:
            b1, b2 = theta.betas[2 * l], theta.betas[2 * l + 1]
            old = b1 * np.cos(ang_t * w_cur) + b2 * np.sin(ang_t * w_cur)
            new = b1 * np.cos(ang_t * w_new) + b2 * np.sin(ang_t * w_new)
            trial = resid + old - new
            d_rss = float(trial @ trial - resid @ resid)
            if _accept(-0.5 * d_rss / theta.sigma2 + log_q_ratio, rng):
                theta.omegas[l] = w_new
                resid = trial

    theta.betas = sample_beta(theta.omegas, theta.sigma2, seg, priors, rng)
    theta.sigma2 = sample_sigma2(theta.betas, theta.omegas, seg, priors, rng)
    return theta


def birth_move(theta, seg, cfg, priors, rng) -> EmissionParams:
    """Propose one extra frequency; failed or empty-support moves keep ``theta``."""
    d = theta.d
    b_cur, _, _ = move_probabilities(d, priors, cfg, len(seg))
    if b_cur <= 0:
        return theta
    psi = cfg.min_spacing(seg.n_total)
    lo, hi = _birth_support(theta.omegas, priors.phi_omega, psi)
    widths = hi - lo
    total = widths.sum()
    if total <= 0:
        return theta
    i = int(rng.choice(widths.size, p=widths / total))
    w_new = lo[i] + rng.random() * widths[i]
    omegas = np.sort(np.append(theta.omegas, w_new))
    if np.any(np.diff(omegas) <= 0):
        return theta

    post_cur = BetaPosterior(theta.omegas, theta.sigma2, seg, priors)
    post_new = BetaPosterior(omegas, theta.sigma2, seg, priors)
    proposal = EmissionParams(omegas, post_new.sample(rng), theta.sigma2)
    _, r_new, _ = move_probabilities(d + 1, priors, cfg, len(seg))

    log_ratio = (_log_posterior(proposal, seg, priors) - _log_posterior(theta, seg, priors)
                 + _log(r_new) - math.log(d + 1) + post_cur.logpdf(theta.betas)
                 - _log(b_cur) + math.log(total) - post_new.logpdf(proposal.betas))
    out = proposal if _accept(log_ratio, rng) else theta.copy()
    out.sigma2 = sample_sigma2(out.betas, out.omegas, seg, priors, rng)
    return out


def death_move(theta, seg, cfg, priors, rng) -> EmissionParams:
    """Remove a uniformly chosen frequency, the mirror image of ``birth_move``.

    The reverse birth can only recreate the removed frequency when it lies at
    least ``psi_omega`` from the remaining ones; otherwise the move is
    rejected outright.
    """
    d = theta.d
    _, r_cur, _ = move_probabilities(d, priors, cfg, len(seg))
    if r_cur <= 0:
        return theta
    i = int(rng.integers(d))
    removed = theta.omegas[i]
    omegas = np.delete(theta.omegas, i)

    b_rev, _, _ = move_probabilities(d - 1, priors, cfg, len(seg))
    psi = cfg.min_spacing(seg.n_total)
    lo, hi = _birth_support(omegas, priors.phi_omega, psi)
    total = (hi - lo).sum()
    inside = bool(np.any((removed >= lo) & (removed <= hi)))

    post_cur = BetaPosterior(theta.omegas, theta.sigma2, seg, priors)
    post_new = BetaPosterior(omegas, theta.sigma2, seg, priors)
    proposal = EmissionParams(omegas, post_new.sample(rng), theta.sigma2)
    if inside and b_rev > 0:
        log_ratio = (_log_posterior(proposal, seg, priors) - _log_posterior(theta, seg, priors)
                     + math.log(b_rev) - math.log(total) + post_cur.logpdf(theta.betas)
                     - math.log(r_cur) + math.log(d) - post_new.logpdf(proposal.betas))
        accepted = _accept(log_ratio, rng)
    else:
        accepted = False
    out = proposal if accepted else theta.copy()
    out.sigma2 = sample_sigma2(out.betas, out.omegas, seg, priors, rng)
    return out


def rjmcmc_sweep(theta, seg, cfg, priors, rng) -> EmissionParams:
    """``cfg.rj_updates_per_sweep`` randomly chosen birth/death/within moves."""
    for _ in range(cfg.rj_updates_per_sweep):
        b, r, _ = move_probabilities(theta.d, priors, cfg, len(seg))
        u = rng.random()
        if u < b:
            theta = birth_move(theta, seg, cfg, priors, rng)
        elif u < b + r:
            theta = death_move(theta, seg, cfg, priors, rng)
        else:
            theta = within_move(theta, seg, cfg, priors, rng)
    return theta


def sample_prior_d(priors: EmissionPriors, rng) -> int:
    return int(rng.choice(priors.d_max, p=priors.prior_d)) + 1


def sample_prior_emission(priors: EmissionPriors, rng) -> EmissionParams:
    if priors.xi0 <= 0 or priors.tau0 <= 0:
        raise ImproperPriorError("cannot draw sigma2 from an improper prior (xi0 or tau0 is 0)")
    d = sample_prior_d(priors, rng)
    omegas = priors.sample_omegas(d, rng)
    betas = rng.normal(0.0, math.sqrt(priors.sigma2_beta), size=2 * d)
    sigma2 = (priors.tau0 / 2.0) / rng.gamma(priors.xi0 / 2.0)
    return EmissionParams(omegas, betas, sigma2)

