"""Command-line entry point: ``spectral-hmm {simulate,fit,summarize,events}``."""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_sampler_config, config_to_dict, load_config
from .emission import EmissionParams
from .errors import ConfigError, DataError, SpectralHMMError
from .postprocess import (decode, extract_events, extract_signal, peak_track, relabel,
                          sigh_filter, summarize_emissions)
from .sampler import load_trace, run_sampler, save_trace, timestamp
from .simulate import (SCENARIOS, ArHmmConfig, GeneratorConfig, ar_hmm_config, ar_peak_frequency,
                       illustrative_config, simulate_ar_hmm, simulate_hmm, t_innovation_config)
from .timeseries import load_series, write_csv


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


# --- simulate ----------------------------------------------------------------

def _custom_generator(path, seed):
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: cannot read generator spec ({exc})") from None
    try:
        T = int(spec["T"])
        if "ar" in spec:
            return ArHmmConfig(spec["ar"], spec["sd"], np.asarray(spec["transition"]), T, seed)
        states = [EmissionParams(s["omegas"], s["betas"], s["sigma2"]) for s in spec["states"]]
        return GeneratorConfig(np.asarray(spec["transition"]), states, T, seed,
                               innovation=spec.get("innovation", "gaussian"),
                               dof=spec.get("dof"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: invalid generator spec ({exc})") from None


def cmd_simulate(args) -> int:
    if args.scenario == "custom":
        if not args.generator:
            raise ConfigError("scenario 'custom' needs --generator FILE")
        gen = _custom_generator(args.generator, args.seed)
    else:
        gen = {"illustrative": illustrative_config, "t-innovations": t_innovation_config,
               "ar-hmm": ar_hmm_config}[args.scenario](args.seed)
    out = _out_dir(args.out)
    rate = args.sample_rate
    if isinstance(gen, ArHmmConfig):
        series, z = simulate_ar_hmm(gen, sample_rate=rate)
        peaks = np.array([ar_peak_frequency(c) for c in gen.coefs])
        truth_cols, truth_head = [peaks[z]], ["peak"]
    else:
        series, z, f = simulate_hmm(gen, sample_rate=rate)
        truth_cols, truth_head = [f], ["signal"]
    t = series.seconds
    states = (z + 1).tolist()
    try:
        write_csv(out / "series.csv", ["t", "value", "state"], [t, series.values, states])
        write_csv(out / "truth.csv", ["t", "state", *truth_head], [t, states, *truth_cols])
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc.strerror}") from None
    print(f"wrote {len(series)} rows to {out / 'series.csv'}")
    return 0


# --- fit -----------------------------------------------------------------------

def _chain_seed(seed: int, i: int, n: int) -> int:
    if n == 1:
        return seed
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


def _run_chain(cfg, data, path, label):
    def progress(it, ll):
        print(f"{label}iteration {it} log-likelihood {ll:.6g}", flush=True)

    trace = run_sampler(cfg, data, progress=progress)
    save_trace(trace, path)
    return str(path)


def cmd_fit(args) -> int:
    values = load_config(args.config)
    seed = args.seed if args.seed is not None else values["seed"]
    cfg = build_sampler_config(values, seed=seed)
    data = load_series(args.data, sample_rate=args.sample_rate)
    out = _out_dir(args.out)
    n = args.chains
    if n < 1:
        raise ConfigError("--chains must be >= 1")
    names = ["trace.jsonl"] if n == 1 else [f"trace.{i}.jsonl" for i in range(n)]
    manifest = {
        "config_path": str(Path(args.config).resolve()), "data_path": str(Path(args.data).resolve()),
        "output_dir": str(out.resolve()), "seed": seed, "chains": n,
        "chain_seeds": [_chain_seed(seed, i, n) for i in range(n)],
        "sample_rate": data.sample_rate, "config": config_to_dict(cfg),
        "traces": names, "version": __version__, "git_describe": _git_describe(),
        "started": timestamp(), "finished": None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if n == 1:
        _run_chain(cfg, data, out / names[0], "")
    else:
        cfgs = [build_sampler_config(values, seed=s) for s in manifest["chain_seeds"]]
        with ProcessPoolExecutor(max_workers=n) as pool:
            futs = [pool.submit(_run_chain, c, data, out / name, f"[chain {i}] ")
                    for i, (c, name) in enumerate(zip(cfgs, names))]
            for f in futs:
                f.result()
    manifest["finished"] = timestamp()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return 0


# --- summarize / events ------------------------------------------------------

def _maybe_relabel(trace, skip: bool):
    if skip:
        return trace, None
    res = relabel(trace)
    return res.trace, res


def cmd_summarize(args) -> int:
    trace = load_trace(args.trace)
    trace, res = _maybe_relabel(trace, args.skip_relabel)
    out = _out_dir(args.out)
    summary = summarize_emissions(trace, args.k).to_dict()
    summary["relabelled"] = res is not None
    if res is not None:
        summary["relabel_objective"] = res.objective
        summary["relabel_rounds"] = res.rounds
    summary["n_records"] = len(trace)
    summary["level"] = args.level
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    sig = extract_signal(trace, level=args.level)
    t = sig.t / trace.sample_rate
    write_csv(out / "signal.csv", ["t", "mean", "lo", "hi"], [t, sig.mean, sig.lo, sig.hi])
    pk = peak_track(trace, level=args.level)
    write_csv(out / "peaks.csv", ["t", "omega", "lo", "hi"], [t, pk.mean, pk.lo, pk.hi])
    print(f"modal k = {summary['modal_k']}; wrote summary.json, signal.csv, peaks.csv to {out}")
    return 0


def _parse_states(text: str, K: int):
    try:
        labels = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--states must be comma-separated integers, got {text!r}") from None
    bad = [s for s in labels if not 1 <= s <= K]
    if not labels or bad:
        raise ConfigError(f"unknown state labels {bad or text!r}; valid labels are 1..{K}")
    return [s - 1 for s in labels]


def cmd_events(args) -> int:
    trace = load_trace(args.trace)
    targets = _parse_states(args.states, trace.K)
    data = load_series(args.data, sample_rate=args.sample_rate or trace.sample_rate)
    if len(data) != trace.n_obs:
        raise DataError(f"data has {len(data)} values but the trace was fitted to {trace.n_obs}")
    trace, _ = _maybe_relabel(trace, args.skip_relabel)
    z_hat = decode(trace)
    events = extract_events(z_hat, targets, data.sample_rate, args.min_duration, offset=data.t0)
    if args.sigh_threshold is not None:
        events = sigh_filter(events, data.values, data.sample_rate, args.sigh_threshold,
                             offset=data.t0)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        _out_dir(out.parent)
    write_csv(out, ["state", "start", "end", "duration_s"],
              [[e.state + 1 for e in events], [e.start for e in events],
               [e.end for e in events], [e.duration_s for e in events]])
    print(f"{len(events)} events written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectral-hmm", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic series")
    s.add_argument("scenario", choices=[*SCENARIOS, "custom"])
    s.add_argument("--out", default=".")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sample-rate", type=float, default=1.0)
    s.add_argument("--generator", help="JSON generator spec for the custom scenario")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the sampler")
    f.add_argument("data")
    f.add_argument("--config", required=True)
    f.add_argument("--out", default=".")
    f.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--sample-rate", type=float, default=None)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("summarize", help="relabel and summarise a trace")
    m.add_argument("trace")
    m.add_argument("--out", default=".")
    m.add_argument("--skip-relabel", action="store_true")
    m.add_argument("--level", type=float, default=0.95)
    m.add_argument("--k", type=int, default=None, help="condition on k states (default: modal)")
    m.set_defaults(func=cmd_summarize)

    e = sub.add_parser("events", help="extract runs of target states")
    e.add_argument("trace")
    e.add_argument("data")
    e.add_argument("--states", required=True, help="comma-separated 1-based labels")
    e.add_argument("--min-duration", type=float, default=10.0, help="seconds (inclusive)")
    e.add_argument("--out", default="events.csv")
    e.add_argument("--skip-relabel", action="store_true")
    e.add_argument("--sample-rate", type=float, default=None)
    e.add_argument("--sigh-threshold", type=float, default=None,
                   help="drop events preceded within 10 s by |y| above this value")
    e.set_defaults(func=cmd_events)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "level", None) is not None and not 0 < args.level < 1:
        print("error: --level must lie in (0, 1)", file=sys.stderr)
        return ConfigError.exit_code
    try:
        return args.func(args)
    except SpectralHMMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
