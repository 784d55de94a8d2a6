"""The Gibbs loop and its trace.

One sweep, given the current ``(z, pi, pi0, alpha, theta, hypers)``:

1. backward messages and a blocked draw of ``z``;
2. transition counts ``n``;
3. table counts ``m``, overrides ``o`` and considered counts ``m_bar``, with
   ``pi`` integrated out;
4. ``eta + kappa``, ``rho`` and ``gamma`` from their count-based conditionals
   (``alpha`` integrated out for ``gamma``);
5. ``alpha``, then the rows of ``pi`` and ``pi0``;
6. emission parameters: reversible-jump sweeps for states holding at least
   ``min_obs_for_update`` observations, prior draws for the rest.

Steps 3 to 5 form a partially collapsed block. Each draw that integrates a
quantity out is followed by a fresh draw of that quantity before anything
conditions on it again, which keeps the stationary law exact.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import hdp
from .emission import (EmissionParams, EmissionPriors, ProposalConfig, SegmentView,
                       rjmcmc_sweep, sample_prior_emission)
from .errors import (ConfigError, DataError, ImproperPriorError, InvariantError, NumericError,
                     TraceFormatError)
from .states import (backward_messages, emission_loglik, hmm_log_likelihood,
                     sample_states, transition_counts)
from .timeseries import TimeSeries, fmt

TRACE_FORMAT = "spectral-hmm-trace"
TRACE_VERSION = 1
THREADS_ENV = "SPECTRAL_HMM_THREADS"


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int
    burnin: int
    emission: EmissionPriors = field(default_factory=EmissionPriors)
    hdp: hdp.HdpPriors = field(default_factory=hdp.HdpPriors)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    thin: int = 1
    prob_thin: int = 1
    min_obs_for_update: int | None = None
    spacing_prior: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burnin < self.iterations:
            raise ConfigError("burnin must satisfy 0 <= burnin < iterations")
        if self.thin < 1 or self.prob_thin < 1:
            raise ConfigError("thin and prob_thin must be >= 1")
        if self.hdp.K_max < 2:
            raise ConfigError("K_max must be >= 2")
        if self.min_obs_for_update is not None and self.min_obs_for_update < 1:
            raise ConfigError("min_obs_for_update must be >= 1")

    @property
    def K_max(self) -> int:
        return self.hdp.K_max

    @property
    def d_max(self) -> int:
        return self.emission.d_max

    @property
    def min_obs(self) -> int:
        if self.min_obs_for_update is not None:
            return self.min_obs_for_update
        return 2 * self.d_max + 2

    def emission_priors(self, n_total: int) -> EmissionPriors:
        """Priors in force for a series of length ``n_total``.

        With ``spacing_prior`` the birth spacing ``psi_omega`` also bounds the
        frequency prior's support, so no move can create a pair of
        frequencies that a death could not remove.
        """
        if not self.spacing_prior:
            return self.emission
        return replace(self.emission, min_gap=self.proposal.min_spacing(n_total))

    @property
    def n_records(self) -> int:
        return (self.iterations - self.burnin) // self.thin


@dataclass
class ChainState:
    z: np.ndarray
    thetas: list
    hdp: hdp.HdpState
    probs: np.ndarray | None = None
    log_likelihood: float = float("nan")


@dataclass
class TraceRecord:
    iteration: int
    z: np.ndarray
    thetas: list
    alpha: np.ndarray
    pi: np.ndarray
    pi0: np.ndarray
    gamma: float
    eta_plus_kappa: float
    rho: float
    log_likelihood: float
    p: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.thetas)

    def n_distinct(self) -> int:
        return int(np.unique(self.z).size)

    def __eq__(self, other):
        if not isinstance(other, TraceRecord):
            return NotImplemented
        same = (self.iteration == other.iteration and np.array_equal(self.z, other.z)
                and self.K == other.K
                and all(np.array_equal(a.omegas, b.omegas) and np.array_equal(a.betas, b.betas)
                        and a.sigma2 == b.sigma2 for a, b in zip(self.thetas, other.thetas)))
        for name in ("alpha", "pi", "pi0"):
            same = same and np.array_equal(getattr(self, name), getattr(other, name))
        for name in ("gamma", "eta_plus_kappa", "rho", "log_likelihood"):
            same = same and getattr(self, name) == getattr(other, name)
        if (self.p is None) != (other.p is None):
            return False
        return same and (self.p is None or np.array_equal(self.p, other.p))


@dataclass
class McmcTrace:
    records: list
    config: dict
    seed: int
    n_obs: int = 0
    t0: int = 0
    sample_rate: float = 1.0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def K(self) -> int:
        return self.records[0].K if self.records else 0

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def series_times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_obs)


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


class Streams:
    """Independent RNG streams split from one master seed."""

    def __init__(self, seed: int, K: int):
        children = np.random.SeedSequence(seed).spawn(4 + K)
        self.init, self.states, self.crf, self.hypers = (
            np.random.default_rng(s) for s in children[:4])
        self.emission = [np.random.default_rng(s) for s in children[4:]]


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return n


def init_chain(cfg: SamplerConfig, data: TimeSeries, rng) -> ChainState:
    """Uniform random state labels, prior-drawn emissions and HDP parameters."""
    K = cfg.K_max
    priors = cfg.emission_priors(len(data))
    try:
        thetas = [sample_prior_emission(priors, rng) for _ in range(K)]
    except ImproperPriorError as exc:
        raise ConfigError(f"cannot initialise empty states: {exc}") from exc
    state = hdp.sample_prior_hdp(cfg.hdp, rng)
    z = rng.integers(K, size=len(data))
    return ChainState(z=z, thetas=thetas, hdp=state)


def _emission_update(k, theta, z, data, cfg: SamplerConfig, priors, rng):
    seg = SegmentView.from_states(z, data, k)
    if len(seg) >= cfg.min_obs:
        return rjmcmc_sweep(theta, seg, cfg.proposal, priors, rng)
    return sample_prior_emission(priors, rng)


class _Step:
    """Names the sub-sampler in any numeric failure."""

    def __init__(self, iteration: int, component: str):
        self.iteration, self.component = iteration, component

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(
                exc_type, (NumericError, InvariantError, FloatingPointError, np.linalg.LinAlgError)):
            raise NumericError(
                f"iteration {self.iteration}, {self.component}: {exc}") from exc
        return False


def crf_block(z, state: hdp.HdpState, priors: hdp.HdpPriors, rng_crf, rng_hyp):
    """Steps 2 to 5: counts, hyperparameters, ``alpha``, ``pi`` and ``pi0``."""
    K = state.alpha.size
    n = transition_counts(z, K)
    m = hdp.sample_table_counts(n, state.alpha, state.eta, state.kappa, rng_crf)
    o = hdp.sample_overrides(np.diagonal(m), state.alpha, state.rho, rng_crf)
    m_bar = hdp.considered_counts(m, o)
    cols = m_bar.sum(axis=0)
    cols[z[0]] += 1

    ek = hdp.sample_eta_plus_kappa(int(m.sum()), n.sum(axis=1), state.eta_plus_kappa,
                                   priors, rng_hyp)
    rho = hdp.sample_rho(int(o.sum()), int(m.sum()), priors, rng_hyp)
    k_bar = int(hdp.crt(cols, state.gamma / K, rng_hyp).sum())
    gamma = hdp.sample_gamma(int(cols.sum()), k_bar, state.gamma, priors, rng_hyp)

    alpha = hdp.sample_alpha(cols, gamma, rng_crf)
    eta, kappa = (1.0 - rho) * ek, rho * ek
    pi = hdp.sample_pi(n, alpha, eta, kappa, rng_crf)
    pi0 = hdp.sample_pi0(int(z[0]), alpha, eta, rng_crf)
    return hdp.HdpState(alpha, pi, pi0, gamma, ek, rho), hdp.CrfCounts(n, m, o, m_bar)


def gibbs_sweep(chain: ChainState, data: TimeSeries, cfg: SamplerConfig, streams: Streams,
                iteration: int = 0, pool=None) -> ChainState:
    K = cfg.K_max
    h = chain.hdp
    with _Step(iteration, "state sequence"):
        ll = emission_loglik(data, chain.thetas)
        msgs = backward_messages(ll, h.pi)
        z, probs = sample_states(ll, h.pi, h.pi0, msgs, streams.states)
    with _Step(iteration, "CRF counts and hyperparameters"):
        h, _ = crf_block(z, h, cfg.hdp, streams.crf, streams.hypers)
    with _Step(iteration, "emission parameters"):
        priors = cfg.emission_priors(len(data))
        args = [(k, chain.thetas[k], z, data, cfg, priors, streams.emission[k]) for k in range(K)]
        if pool is not None:
            thetas = list(pool.map(lambda a: _emission_update(*a), args))
        else:
            thetas = [_emission_update(*a) for a in args]
    return ChainState(z=z, thetas=thetas, hdp=h, probs=probs)


def _record(chain: ChainState, data, iteration: int, keep_p: bool) -> TraceRecord:
    h = chain.hdp
    ll = hmm_log_likelihood(chain.z, h.pi, h.pi0, chain.thetas, data)
    return TraceRecord(
        iteration=iteration, z=chain.z.copy(), thetas=[t.copy() for t in chain.thetas],
        alpha=h.alpha.copy(), pi=h.pi.copy(), pi0=h.pi0.copy(), gamma=float(h.gamma),
        eta_plus_kappa=float(h.eta_plus_kappa), rho=float(h.rho), log_likelihood=ll,
        p=chain.probs.copy() if keep_p and chain.probs is not None else None,
    )


def run_sampler(cfg: SamplerConfig, data: TimeSeries, progress=None, every: int = 100,
                config_echo: dict | None = None) -> McmcTrace:
    """Run one chain. ``progress(iteration, log_likelihood)`` is called every ``every`` sweeps."""
    from .config import config_to_dict

    streams = Streams(cfg.seed, cfg.K_max)
    chain = init_chain(cfg, data, streams.init)
    records = []
    n_threads = _thread_count()
    pool = ThreadPoolExecutor(max_workers=n_threads) if n_threads > 1 else None
    kept = 0
    try:
        for it in range(1, cfg.iterations + 1):
            chain = gibbs_sweep(chain, data, cfg, streams, it, pool)
            store = it > cfg.burnin and (it - cfg.burnin) % cfg.thin == 0
            if store:
                records.append(_record(chain, data, it, kept % cfg.prob_thin == 0))
                kept += 1
            if progress is not None and (it % every == 0 or it == cfg.iterations):
                ll = records[-1].log_likelihood if store else hmm_log_likelihood(
                    chain.z, chain.hdp.pi, chain.hdp.pi0, chain.thetas, data)
                progress(it, ll)
    finally:
        if pool is not None:
            pool.shutdown()
    echo = config_echo if config_echo is not None else config_to_dict(cfg)
    return McmcTrace(records, echo, cfg.seed, len(data), data.t0, data.sample_rate)


# --- serialisation ---------------------------------------------------------

def _num(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "NaN"
    if np.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return fmt(x)


def _vec(a) -> str:
    return "[" + ",".join(_num(v) for v in np.asarray(a, dtype=float).ravel().tolist()) + "]"


def _mat(a) -> str:
    return "[" + ",".join(_vec(row) for row in np.asarray(a, dtype=float)) + "]"


def _record_line(r: TraceRecord) -> str:
    states = ",".join(
        '{"omegas":%s,"betas":%s,"sigma2":%s}' % (_vec(t.omegas), _vec(t.betas), _num(t.sigma2))
        for t in r.thetas)
    z = "[" + ",".join(str(int(v) + 1) for v in r.z) + "]"
    p = "null" if r.p is None else _mat(r.p)
    return ('{"iteration":%d,"z":%s,"states":[%s],"alpha":%s,"pi":%s,"pi0":%s,'
            '"gamma":%s,"eta_plus_kappa":%s,"rho":%s,"log_likelihood":%s,"p":%s}\n') % (
        r.iteration, z, states, _vec(r.alpha), _mat(r.pi), _vec(r.pi0), _num(r.gamma),
        _num(r.eta_plus_kappa), _num(r.rho), _num(r.log_likelihood), p)


def _header(trace: McmcTrace) -> dict:
    return {"format": TRACE_FORMAT, "version": TRACE_VERSION, "seed": trace.seed,
            "config": trace.config, "config_hash": trace.config_hash, "n_obs": trace.n_obs,
            "t0": trace.t0, "sample_rate": trace.sample_rate}


def _read_header(path: Path) -> dict:
    with path.open("rb") as fh:
        line = fh.readline()
    try:
        head = json.loads(line)
    except (ValueError, UnicodeDecodeError):
        raise TraceFormatError(f"{path}: byte 0: unreadable header") from None
    _check_header(head, path)
    return head


def _check_header(head, path):
    if not isinstance(head, dict) or head.get("format") != TRACE_FORMAT:
        raise TraceFormatError(f"{path}: byte 0: not a {TRACE_FORMAT} file")
    if head.get("version") != TRACE_VERSION:
        raise TraceFormatError(
            f"{path}: byte 0: unsupported trace version {head.get('version')!r} "
            f"(expected {TRACE_VERSION})")


def save_trace(trace: McmcTrace, path, append: bool = False):
    """Write JSON lines: a header, then one record per line.

    With ``append=True`` and an existing file, records are added only when the
    stored config hash matches this trace's.
    """
    path = Path(path)
    if append and path.exists() and path.stat().st_size > 0:
        head = _read_header(path)
        if head.get("config_hash") != trace.config_hash:
            raise TraceFormatError(f"{path}: refusing to append, config hash differs")
        with path.open("a") as fh:
            for r in trace.records:
                fh.write(_record_line(r))
        return
    with path.open("w") as fh:
        fh.write(json.dumps(_header(trace), sort_keys=True) + "\n")
        for r in trace.records:
            fh.write(_record_line(r))


def _parse_record(obj) -> TraceRecord:
    thetas = [EmissionParams(s["omegas"], s["betas"], s["sigma2"]) for s in obj["states"]]
    p = obj.get("p")
    return TraceRecord(
        iteration=int(obj["iteration"]), z=np.asarray(obj["z"], dtype=np.int64) - 1,
        thetas=thetas, alpha=np.asarray(obj["alpha"], dtype=float),
        pi=np.asarray(obj["pi"], dtype=float), pi0=np.asarray(obj["pi0"], dtype=float),
        gamma=float(obj["gamma"]), eta_plus_kappa=float(obj["eta_plus_kappa"]),
        rho=float(obj["rho"]), log_likelihood=float(obj["log_likelihood"]),
        p=None if p is None else np.asarray(p, dtype=float),
    )


def load_trace(path) -> McmcTrace:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read trace ({exc.strerror})") from None
    if not data:
        raise TraceFormatError(f"{path}: byte 0: empty trace file")
    records, head, offset = [], None, 0
    while offset < len(data):
        end = data.find(b"\n", offset)
        if end < 0:
            raise TraceFormatError(f"{path}: byte {offset}: truncated record (no line terminator)")
        line = data[offset:end]
        try:
            obj = json.loads(line)
        except (ValueError, UnicodeDecodeError) as exc:
            raise TraceFormatError(f"{path}: byte {offset}: corrupt line ({exc})") from None
        if head is None:
            _check_header(obj, path)
            head = obj
        else:
            try:
                records.append(_parse_record(obj))
            except (KeyError, TypeError, ValueError) as exc:
                raise TraceFormatError(f"{path}: byte {offset}: malformed record ({exc})") from None
        offset = end + 1
    return McmcTrace(records, head["config"], int(head["seed"]), int(head.get("n_obs", 0)),
                     int(head.get("t0", 0)), float(head.get("sample_rate", 1.0)))


def timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")
