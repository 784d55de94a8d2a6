"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Unknown keys are errors, and all
problems in a file are reported together.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .emission import EmissionPriors, ProposalConfig
from .errors import ConfigError
from .hdp import HdpPriors


@dataclass(frozen=True)
class Key:
    kind: type
    default: object = None
    required: bool = False
    auto: bool = False


SCHEMA = {
    "iterations": Key(int, required=True),
    "burnin": Key(int, required=True),
    "K_max": Key(int, required=True),
    "d_max": Key(int, required=True),
    "thin": Key(int, 1),
    "prob_thin": Key(int, 1),
    "seed": Key(int, 0),
    "min_obs_for_update": Key(int, None, auto=True),
    "poisson_rate": Key(float, 1.0),
    "phi_omega": Key(float, 0.25),
    "sigma2_beta": Key(float, 100.0),
    "xi0": Key(float, 1.0),
    "tau0": Key(float, 0.1),
    "a_gamma": Key(float, 1.0),
    "b_gamma": Key(float, 0.01),
    "a_ek": Key(float, 1.0),
    "b_ek": Key(float, 0.01),
    "c_rho": Key(float, 100.0),
    "d_rho": Key(float, 1.0),
    "c": Key(float, 0.4),
    "xi_omega": Key(float, 0.2),
    "sigma2_omega": Key(float, None, auto=True),
    "psi_omega": Key(float, None, auto=True),
    "rj_updates_per_sweep": Key(int, 2),
    "birth_rank_guard": Key(bool, True),
    "spacing_prior": Key(bool, True),
    "collapsed_within": Key(bool, True),
}


def _convert(name: str, raw: str, spec: Key):
    if spec.auto and raw.lower() == "auto":
        return None
    if spec.kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if spec.kind is int:
        try:
            return int(raw)
        except ValueError:
            pass
        try:
            f = float(raw)
        except ValueError:
            f = None
        if f is not None and f.is_integer():
            return int(f)
        raise ValueError(f"{name}: expected an integer, got {raw!r}")
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{name}: expected a number, got {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values, errors, invalid = {}, [], set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            values[key] = _convert(key, raw, SCHEMA[key])
        except ValueError as exc:
            errors.append(f"line {lineno}: {exc}")
            invalid.add(key)
    missing = [k for k, s in SCHEMA.items() if s.required and k not in values and k not in invalid]
    errors.extend(f"missing required key {k!r}" for k in missing)
    if errors:
        raise ConfigError(f"{source}: " + "; ".join(errors))
    for k, s in SCHEMA.items():
        values.setdefault(k, s.default)
    return values


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config_text(text, str(path))


def build_sampler_config(values: dict, **overrides):
    """``SamplerConfig`` from a parsed dict; value errors become ``ConfigError``."""
    from .sampler import SamplerConfig

    v = {**values, **{k: x for k, x in overrides.items() if x is not None}}
    unknown = set(v) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    for k, s in SCHEMA.items():
        v.setdefault(k, s.default)
        if s.required and v[k] is None:
            raise ConfigError(f"missing required key {k!r}")
    try:
        return SamplerConfig(
            iterations=v["iterations"], burnin=v["burnin"], thin=v["thin"],
            prob_thin=v["prob_thin"], seed=v["seed"], min_obs_for_update=v["min_obs_for_update"],
            spacing_prior=v["spacing_prior"],
            emission=EmissionPriors(poisson_rate=v["poisson_rate"], d_max=v["d_max"],
                                    phi_omega=v["phi_omega"], sigma2_beta=v["sigma2_beta"],
                                    xi0=v["xi0"], tau0=v["tau0"]),
            hdp=HdpPriors(a_gamma=v["a_gamma"], b_gamma=v["b_gamma"], a_ek=v["a_ek"],
                          b_ek=v["b_ek"], c_rho=v["c_rho"], d_rho=v["d_rho"], K_max=v["K_max"]),
            proposal=ProposalConfig(c=v["c"], xi_omega=v["xi_omega"],
                                    sigma2_omega=v["sigma2_omega"], psi_omega=v["psi_omega"],
                                    rj_updates_per_sweep=v["rj_updates_per_sweep"],
                                    birth_rank_guard=v["birth_rank_guard"],
                                    collapsed_within=v["collapsed_within"]),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def config_to_dict(cfg) -> dict:
    e, h, p = cfg.emission, cfg.hdp, cfg.proposal
    return {
        "iterations": cfg.iterations, "burnin": cfg.burnin, "K_max": h.K_max, "d_max": e.d_max,
        "thin": cfg.thin, "prob_thin": cfg.prob_thin, "seed": cfg.seed,
        "min_obs_for_update": cfg.min_obs_for_update,
        "poisson_rate": e.poisson_rate, "phi_omega": e.phi_omega, "sigma2_beta": e.sigma2_beta,
        "xi0": e.xi0, "tau0": e.tau0,
        "a_gamma": h.a_gamma, "b_gamma": h.b_gamma, "a_ek": h.a_ek, "b_ek": h.b_ek,
        "c_rho": h.c_rho, "d_rho": h.d_rho,
        "c": p.c, "xi_omega": p.xi_omega, "sigma2_omega": p.sigma2_omega,
        "psi_omega": p.psi_omega, "rj_updates_per_sweep": p.rj_updates_per_sweep,
        "birth_rank_guard": p.birth_rank_guard, "spacing_prior": cfg.spacing_prior,
        "collapsed_within": p.collapsed_within,
    }
