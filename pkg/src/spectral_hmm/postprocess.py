"""Relabelling, posterior summaries, signal and peak extraction, event detection."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError
from .sampler import McmcTrace, TraceRecord

LOG_FLOOR = 1e-300


class UnusableTraceError(DataError):
    pass


class EmptyConditionError(DataError):
    pass


@dataclass
class RelabelResult:
    permutations: np.ndarray
    trace: McmcTrace
    objective: float
    history: list = field(default_factory=list)
    rounds: int = 0


def _class_matrix(r: TraceRecord) -> np.ndarray:
    if r.p is not None:
        return r.p
    out = np.zeros((r.z.size, r.K))
    out[np.arange(r.z.size), r.z] = 1.0
    return out


def permute_record(r: TraceRecord, nu) -> TraceRecord:
    """Relabel so that new state ``j`` is old state ``nu[j]``."""
    nu = np.asarray(nu, dtype=np.int64)
    inv = np.empty_like(nu)
    inv[nu] = np.arange(nu.size)
    return replace(
        r, z=inv[r.z], thetas=[r.thetas[i].copy() for i in nu], alpha=r.alpha[nu],
        pi=r.pi[np.ix_(nu, nu)], pi0=r.pi0[nu], p=None if r.p is None else r.p[:, nu])


def permute_trace(trace: McmcTrace, perms) -> McmcTrace:
    recs = [permute_record(r, nu) for r, nu in zip(trace.records, perms)]
    return replace(trace, records=recs)


def kl_objective(mats, perms, Q) -> float:
    logq = np.log(np.maximum(Q, LOG_FLOOR))
    total = 0.0
    for P, nu in zip(mats, perms):
        Pp = P[:, nu]
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(Pp > 0, Pp * np.log(Pp), 0.0)
        total += float(plogp.sum() - (Pp * logq).sum())
    return total


def relabel(trace: McmcTrace, max_rounds: int = 100) -> RelabelResult:
    """KL relabelling of state labels across records.

    Alternates between the consensus matrix ``Q`` (average of relabelled
    classification matrices) and, per record, the permutation minimising
    ``sum_t sum_j p_tj log(p_tj / q_tj)``, solved as a linear assignment.
    Records stored without classification probabilities contribute their
    one-hot state path.
    """
    if not trace.records:
        raise UnusableTraceError("trace has no records")
    if all(r.p is None for r in trace.records):
        raise UnusableTraceError("trace carries no classification matrices; relabelling needs them")
    K = trace.K
    mats = [_class_matrix(r) for r in trace.records]
    perms = np.tile(np.arange(K), (len(mats), 1))
    history = []
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        Q = np.mean([P[:, nu] for P, nu in zip(mats, perms)], axis=0)
        history.append(kl_objective(mats, perms, Q))
        logq = np.log(np.maximum(Q, LOG_FLOOR))
        changed = False
        for i, P in enumerate(mats):
            cost = -(logq.T @ P)
            _, cols = linear_sum_assignment(cost)
            if not np.array_equal(cols, perms[i]):
                # keep the current labelling on exact ties
                if cost[np.arange(K), cols].sum() < cost[np.arange(K), perms[i]].sum():
                    perms[i] = cols
                    changed = True
        if not changed:
            break
    Q = np.mean([P[:, nu] for P, nu in zip(mats, perms)], axis=0)
    final = kl_objective(mats, perms, Q)
    if history[-1] != final:
        history.append(final)
    return RelabelResult(perms, permute_trace(trace, perms), final, history, rounds)


def posterior_num_states(trace: McmcTrace) -> np.ndarray:
    """``out[k - 1] = P(k distinct states)`` for ``k = 1..K_max``."""
    if not trace.records:
        raise UnusableTraceError("trace has no records")
    ks = np.array([r.n_distinct() for r in trace.records])
    return np.bincount(ks - 1, minlength=trace.K) / ks.size


def _conditioning(trace: McmcTrace, k: int):
    recs = [r for r in trace.records if r.n_distinct() == k]
    if not recs:
        raise EmptyConditionError(f"no records with exactly {k} distinct states")
    occ = np.zeros(trace.K)
    for r in recs:
        occ[np.unique(r.z)] += 1
    labels = np.sort(np.argsort(-occ, kind="stable")[:k])
    return recs, labels, occ / len(recs)


def posterior_num_frequencies(trace: McmcTrace, k: int, d_max: int | None = None) -> dict:
    """Per relabelled state, the distribution of ``d`` over records with ``k`` states.

    The states reported are the ``k`` labels occupied most often among those
    records; keys are 0-based labels, values are vectors over ``d = 1..d_max``.
    """
    recs, labels, _ = _conditioning(trace, k)
    if d_max is None:
        d_max = int(trace.config.get("d_max") or max(t.d for r in recs for t in r.thetas))
    out = {}
    for j in labels:
        ds = np.array([r.thetas[j].d for r in recs if np.any(r.z == j)])
        out[int(j)] = np.bincount(ds - 1, minlength=d_max)[:d_max] / max(ds.size, 1)
    return out


@dataclass
class StateSummary:
    label: int
    occupancy: float
    d_probs: np.ndarray
    modal_d: int
    omega_mean: np.ndarray
    omega_sd: np.ndarray
    amp_mean: np.ndarray
    amp_sd: np.ndarray
    sigma2_mean: float
    n_samples: int

    def to_dict(self) -> dict:
        return {"label": self.label + 1, "occupancy": self.occupancy,
                "d_probs": self.d_probs.tolist(), "modal_d": self.modal_d,
                "omega_mean": self.omega_mean.tolist(), "omega_sd": self.omega_sd.tolist(),
                "amplitude_mean": self.amp_mean.tolist(), "amplitude_sd": self.amp_sd.tolist(),
                "sigma2_mean": self.sigma2_mean, "n_samples": self.n_samples}


@dataclass
class PosteriorSummary:
    num_states: np.ndarray
    modal_k: int
    states: list
    transition: np.ndarray
    transition_full: np.ndarray
    rho_mean: float
    rho_sd: float

    def to_dict(self) -> dict:
        return {"num_states": {str(i + 1): float(p) for i, p in enumerate(self.num_states)},
                "modal_k": self.modal_k, "states": [s.to_dict() for s in self.states],
                "transition": self.transition.tolist(),
                "transition_full": self.transition_full.tolist(),
                "rho_mean": self.rho_mean, "rho_sd": self.rho_sd}


def summarize_emissions(trace: McmcTrace, k: int | None = None) -> PosteriorSummary:
    """Table-style summary conditional on ``k`` states (default: the modal ``k``).

    Frequencies are matched across samples by ascending order within state
    and summarised over samples whose ``d`` equals the state's modal ``d``.
    ``transition`` restricts the posterior-mean transition matrix to the
    reported states and renormalises its rows.
    """
    pk = posterior_num_states(trace)
    if k is None:
        k = int(np.argmax(pk)) + 1
    recs, labels, occ = _conditioning(trace, k)
    dprobs = posterior_num_frequencies(trace, k)
    states = []
    for j in labels:
        dp = dprobs[int(j)]
        d_mode = int(np.argmax(dp)) + 1
        th = [r.thetas[j] for r in recs if np.any(r.z == j) and r.thetas[j].d == d_mode]
        om = np.array([t.omegas for t in th])
        amp = np.array([t.amplitudes for t in th])
        states.append(StateSummary(
            label=int(j), occupancy=float(occ[j]), d_probs=dp, modal_d=d_mode,
            omega_mean=om.mean(axis=0), omega_sd=om.std(axis=0),
            amp_mean=amp.mean(axis=0), amp_sd=amp.std(axis=0),
            sigma2_mean=float(np.mean([t.sigma2 for t in th])), n_samples=len(th)))
    pi_full = np.mean([r.pi for r in recs], axis=0)
    sub = pi_full[np.ix_(labels, labels)]
    rho = np.array([r.rho for r in recs])
    return PosteriorSummary(pk, k, states, sub / sub.sum(axis=1, keepdims=True), pi_full,
                            float(rho.mean()), float(rho.std()))


@dataclass
class Band:
    t: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray


def _band(samples, t, level) -> Band:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    a = (1 - level) / 2
    mean = samples.mean(axis=0)
    lo, hi = np.quantile(samples, [a, 1 - a], axis=0)
    return Band(t, mean, np.minimum(lo, mean), np.maximum(hi, mean))


def signal_samples(trace: McmcTrace, times=None) -> np.ndarray:
    """``records x T`` matrix of ``f_{t, z_t}``."""
    times = trace.series_times() if times is None else np.asarray(times)
    out = np.empty((len(trace), times.size))
    for i, r in enumerate(trace.records):
        for j in np.unique(r.z):
            idx = np.flatnonzero(r.z == j)
            out[i, idx] = r.thetas[j].mean(times[idx])
    return out


def extract_signal(trace: McmcTrace, data=None, level: float = 0.95) -> Band:
    if not trace.records:
        raise UnusableTraceError("trace has no records")
    times = data.times if data is not None else trace.series_times()
    return _band(signal_samples(trace, times), times, level)


def peak_track(trace: McmcTrace, level: float = 0.95) -> Band:
    """Dominant (largest-amplitude) frequency of the active state, per time."""
    if not trace.records:
        raise UnusableTraceError("trace has no records")
    samples = np.empty((len(trace), trace.n_obs))
    for i, r in enumerate(trace.records):
        dom = np.array([t.omegas[np.argmax(t.amplitudes)] for t in r.thetas])
        samples[i] = dom[r.z]
    return _band(samples, trace.series_times(), level)


def decode(trace: McmcTrace) -> np.ndarray:
    """Per-time most frequent (relabelled) state; ties go to the lower label."""
    if not trace.records:
        raise UnusableTraceError("trace has no records")
    counts = np.zeros((trace.n_obs, trace.K), dtype=np.int64)
    rows = np.arange(trace.n_obs)
    for r in trace.records:
        counts[rows, r.z] += 1
    return counts.argmax(axis=1)


@dataclass(frozen=True)
class Event:
    state: int
    start: int
    end: int
    duration_s: float


def state_runs(z):
    """Maximal constant runs as ``(state, start, end)`` with inclusive ``end``."""
    z = np.asarray(z)
    if z.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(z) != 0) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks - 1, [z.size - 1]))
    return [(int(z[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def extract_events(z_hat, target_states, sample_rate: float, min_duration_s: float = 10.0,
                   offset: int = 0) -> list:
    """Runs of a target state lasting at least ``min_duration_s`` (inclusive).

    ``z_hat`` and ``target_states`` share one labelling; ``offset`` is added
    to the reported start and end indices.
    """
    if not sample_rate > 0:
        raise ValueError("sample_rate must be positive")
    targets = {int(s) for s in target_states}
    events = []
    for state, s, e in state_runs(z_hat):
        if state not in targets:
            continue
        dur = (e - s + 1) / sample_rate
        if dur >= min_duration_s * (1 - 1e-12):
            events.append(Event(state, s + offset, e + offset, dur))
    return events


def sigh_filter(events, values, sample_rate: float, threshold: float, window_s: float = 10.0,
                offset: int = 0) -> list:
    """Drop events preceded within ``window_s`` by a breath with ``|y| > threshold``.

    A crude screen for post-sigh pauses, off unless called.
    """
    values = np.asarray(values, dtype=float)
    w = int(round(window_s * sample_rate))
    kept = []
    for ev in events:
        s = ev.start - offset
        pre = values[max(0, s - w):s]
        if pre.size == 0 or np.max(np.abs(pre)) <= threshold:
            kept.append(ev)
    return kept


def mse(estimate, truth) -> float:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"length mismatch: {estimate.shape} vs {truth.shape}")
    return float(np.mean((estimate - truth) ** 2))
