"""Density bounds for protein levels in gene regulatory networks.

The protein vector follows ``d eta = f(eta) dt + Z dB`` backwards from
Gaussian-type final data. This package provides closed-form density
envelopes, a PDE route to the moments they need, and a Gillespie oracle.
"""
from importlib.resources import files

from .bounds import DensityEnvelope, GaussianFinalData, HypothesisError
from .config import ConfigError, RunConfig
from .model import GeneNetwork, TimeWindow

__version__ = "0.1.0"


def bundled_config(name: str):
    """Path-like handle to a bundled example configuration (``name`` without ``.json``)."""
    return files(__package__) / "configs" / f"{name}.json"


__all__ = [
    "ConfigError",
    "DensityEnvelope",
    "GaussianFinalData",
    "GeneNetwork",
    "HypothesisError",
    "RunConfig",
    "TimeWindow",
    "bundled_config",
]
