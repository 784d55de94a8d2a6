"""Synthetic data: oscillatory HMMs and AR-HMMs, plus the built-in scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .emission import EmissionParams
from .errors import ConfigError, NumericError
from .timeseries import TimeSeries

OVERFLOW_LIMIT = 1e12


def _check_transition(P, n_states=None) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ConfigError("transition matrix must be square")
    if n_states is not None and P.shape[0] != n_states:
        raise ConfigError(f"transition matrix is {P.shape[0]}x{P.shape[0]} but {n_states} states given")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-12):
        raise ConfigError("transition rows must be non-negative and sum to 1")
    return P


@dataclass
class GeneratorConfig:
    transition: np.ndarray
    emissions: list
    T: int
    seed: int = 0
    innovation: str = "gaussian"
    dof: tuple | None = None
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.transition = _check_transition(self.transition, len(self.emissions))
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.innovation not in ("gaussian", "student-t"):
            raise ConfigError(f"unknown innovation family {self.innovation!r}")
        if self.innovation == "student-t":
            if self.dof is None or len(self.dof) != len(self.emissions):
                raise ConfigError("student-t innovations need one dof per state")
            if any(v <= 0 for v in self.dof):
                raise ConfigError("dof must be positive")


@dataclass
class ArHmmConfig:
    coefs: list
    sd: list
    transition: np.ndarray
    T: int
    seed: int = 0
    initial: np.ndarray | None = None
    order: int = field(init=False)

    def __post_init__(self):
        self.coefs = [np.asarray(c, dtype=float).ravel() for c in self.coefs]
        self.order = self.coefs[0].size if self.coefs else 0
        if self.order < 1:
            raise ConfigError("AR order must be >= 1")
        if any(c.size != self.order for c in self.coefs):
            raise ConfigError("all AR coefficient vectors must have the same length")
        if len(self.sd) != len(self.coefs):
            raise ConfigError("one innovation sd per state is required")
        self.transition = _check_transition(self.transition, len(self.coefs))
        if self.T < 1:
            raise ConfigError("T must be >= 1")


def sample_markov_chain(P, T: int, rng, initial=None) -> np.ndarray:
    """0-based state path; the first state is uniform unless ``initial`` is given."""
    K = P.shape[0]
    p0 = np.full(K, 1.0 / K) if initial is None else np.asarray(initial, dtype=float)
    cum = np.cumsum(P, axis=1)
    u = rng.random(T)
    z = np.empty(T, dtype=np.int64)
    z[0] = min(int(np.searchsorted(np.cumsum(p0), u[0], side="right")), K - 1)
    for t in range(1, T):
        z[t] = min(int(np.searchsorted(cum[z[t - 1]], u[t], side="right")), K - 1)
    return z


def true_signal(z, emissions, times) -> np.ndarray:
    f = np.empty(len(z))
    for k, th in enumerate(emissions):
        idx = np.flatnonzero(z == k)
        if idx.size:
            f[idx] = th.mean(times[idx])
    return f


def simulate_hmm(cfg: GeneratorConfig, sample_rate: float = 1.0):
    """Returns ``(series, z, f)`` with 0-based states and the noiseless signal."""
    rng = np.random.default_rng(cfg.seed)
    z = sample_markov_chain(cfg.transition, cfg.T, rng, cfg.initial)
    times = np.arange(cfg.T)
    f = true_signal(z, cfg.emissions, times)
    sd = np.sqrt(np.array([th.sigma2 for th in cfg.emissions]))[z]
    if cfg.innovation == "gaussian":
        eps = rng.standard_normal(cfg.T)
    else:
        eps = rng.standard_t(np.asarray(cfg.dof, dtype=float)[z])
    return TimeSeries(f + sd * eps, sample_rate=sample_rate), z, f


def simulate_ar_hmm(cfg: ArHmmConfig, sample_rate: float = 1.0):
    """AR recursion driven by a hidden chain; the first ``p`` values are zero."""
    rng = np.random.default_rng(cfg.seed)
    z = sample_markov_chain(cfg.transition, cfg.T, rng, cfg.initial)
    eps = rng.standard_normal(cfg.T) * np.asarray(cfg.sd, dtype=float)[z]
    p = cfg.order
    y = np.zeros(cfg.T)
    for t in range(p, cfg.T):
        y[t] = cfg.coefs[z[t]] @ y[t - p:t][::-1] + eps[t]
        if abs(y[t]) > OVERFLOW_LIMIT:
            raise NumericError(f"AR recursion overflowed at t={t} (|y| > {OVERFLOW_LIMIT:g})")
    return TimeSeries(y, sample_rate=sample_rate), z


def ar_peak_frequency(coefs) -> float:
    """Frequency (cycles/sample) of the AR spectral peak, from the dominant complex root."""
    roots = np.roots(np.concatenate(([1.0], -np.asarray(coefs, dtype=float))))
    roots = roots[np.imag(roots) > 0]
    if roots.size == 0:
        return 0.0
    r = roots[np.argmax(np.abs(roots))]
    return float(np.angle(r) / (2 * np.pi))


ILLUSTRATIVE_TRANSITION = np.array([
    [0.99, 0.0097, 0.0003],
    [0.0001, 0.99, 0.0099],
    [0.0097, 0.0003, 0.99],
])


def illustrative_config(seed: int = 0, T: int = 1450) -> GeneratorConfig:
    emissions = [
        EmissionParams([1 / 25], [0.8, 0.8], 0.4**3),
        EmissionParams([1 / 19], [0.2, 0.2], 0.08**2),
        EmissionParams([1 / 12, 1 / 8], [1.0, 1.0, 1.0, 1.0], 0.3**2),
    ]
    return GeneratorConfig(ILLUSTRATIVE_TRANSITION, emissions, T, seed)


def t_innovation_config(seed: int = 0, T: int = 1024) -> GeneratorConfig:
    base = illustrative_config(seed, T)
    emissions = [
        EmissionParams([1 / 25], [3.0, 2.0], base.emissions[0].sigma2),
        EmissionParams([1 / 19], [1.2, 4.0], base.emissions[1].sigma2),
        EmissionParams([1 / 12, 1 / 8], [1.0, 5.0, 4.0, 3.0], base.emissions[2].sigma2),
    ]
    return GeneratorConfig(ILLUSTRATIVE_TRANSITION, emissions, T, seed,
                           innovation="student-t", dof=(2.0, 3.0, 2.0))


def ar_hmm_config(seed: int = 0, T: int = 900) -> ArHmmConfig:
    return ArHmmConfig(
        coefs=[[1.91, -0.991], [1.71, -0.995]],
        sd=[0.1, 0.05],
        transition=np.array([[0.99, 0.01], [0.01, 0.99]]),
        T=T,
        seed=seed,
    )


SCENARIOS = ("illustrative", "t-innovations", "ar-hmm")


def simulate_scenario(name: str, seed: int = 0):
    """``(series, z, f)`` for a named scenario; ``f`` is ``None`` for the AR-HMM."""
    if name == "illustrative":
        return simulate_hmm(illustrative_config(seed))
    if name == "t-innovations":
        return simulate_hmm(t_innovation_config(seed))
    if name == "ar-hmm":
        series, z = simulate_ar_hmm(ar_hmm_config(seed))
        return series, z, None
    raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
