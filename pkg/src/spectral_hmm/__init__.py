"""Sticky HDP-HMM with oscillatory emissions, fitted by reversible-jump Gibbs sampling."""

from .emission import EmissionParams, EmissionPriors, ProposalConfig, SegmentView
from .errors import (ConfigError, DataError, NumericError, SpectralHMMError,
                     TraceFormatError)
from .hdp import HdpPriors, HdpState
from .sampler import McmcTrace, SamplerConfig, TraceRecord, load_trace, run_sampler, save_trace
from .timeseries import TimeSeries, load_series, periodogram

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "EmissionParams", "EmissionPriors", "HdpPriors", "HdpState",
    "McmcTrace", "NumericError", "ProposalConfig", "SamplerConfig", "SegmentView",
    "SpectralHMMError", "TimeSeries", "TraceFormatError", "TraceRecord", "load_series",
    "load_trace", "periodogram", "run_sampler", "save_trace",
]
