"""Gene-network parameterization and the synthesis/degradation rate.

Protein amounts are real-valued here; integer counts only appear in
:mod:`genebsde.ssa`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# cosh overflows float64 just above 710.
_SIGMOID_CLAMP = 700.0


@dataclass(frozen=True)
class GeneNetwork:
    """Regulation matrix ``A``, maximum synthesis rates ``nu`` and degradation rates ``rho``.

    ``allow_zero_synthesis`` admits ``nu_i = 0`` (pure-death SSA fixtures);
    the density bounds themselves need ``nu > 0``.
    """

    A: np.ndarray
    nu: np.ndarray
    rho: np.ndarray
    allow_zero_synthesis: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        nu = np.array(self.nu, dtype=float).reshape(-1)
        rho = np.array(self.rho, dtype=float).reshape(-1)
        if A.ndim == 0:
            A = A.reshape(1, 1)
        n = nu.size
        if n < 1:
            raise ValueError("network needs at least one gene")
        if A.shape != (n, n) or rho.size != n:
            raise ValueError(
                f"inconsistent shapes: A{A.shape}, nu({nu.size}), rho({rho.size})"
            )
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(nu)) and np.all(np.isfinite(rho))):
            raise ValueError("network parameters must be finite")
        if np.any(rho <= 0):
            raise ValueError("rho must be strictly positive")
        if np.any(nu < 0) or (not self.allow_zero_synthesis and np.any(nu == 0)):
            raise ValueError("nu must be strictly positive")
        for name, arr in (("A", A), ("nu", nu), ("rho", rho)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.nu.size

    @classmethod
    def from_dict(cls, d: dict) -> "GeneNetwork":
        missing = [k for k in ("n", "A", "nu", "rho") if k not in d]
        if missing:
            raise KeyError(missing[0])
        net = cls(A=d["A"], nu=d["nu"], rho=d["rho"])
        if int(d["n"]) != net.n:
            raise ValueError(f"n = {d['n']} does not match parameter length {net.n}")
        return net

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "A": self.A.tolist(),
            "nu": self.nu.tolist(),
            "rho": self.rho.tolist(),
        }


@dataclass(frozen=True)
class TimeWindow:
    """Horizon ``T`` and evaluation time ``t`` with ``0 < t <= T``."""

    T: float
    t: float

    def __post_init__(self):
        if not (0.0 < self.t <= self.T) or not np.isfinite(self.T):
            raise ValueError(f"need 0 < t <= T, got t={self.t}, T={self.T}")

    @property
    def remaining(self) -> float:
        """Time left to the horizon, ``T - t``."""
        return self.T - self.t


def _state(net: GeneNetwork, eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1] != net.n:
        raise ValueError(f"state has {eta.shape[-1]} components, network has {net.n}")
    return eta


def regulatory_input(net: GeneNetwork, eta) -> np.ndarray:
    """Total regulatory input ``Theta_i = sum_j A_ij eta_j``.

    ``eta`` may carry leading batch axes; genes are on the last axis.
    """
    eta = _state(net, eta)
    return eta @ net.A.T


def rate(net: GeneNetwork, eta) -> np.ndarray:
    """Net synthesis minus degradation, ``nu_i * sigmoid(Theta_i) - rho_i * eta_i``."""
    eta = _state(net, eta)
    return net.nu * expit(regulatory_input(net, eta)) - net.rho * eta


def sigmoid_derivative(x):
    """Derivative of the logistic function, written as ``1 / (2 (cosh x + 1))``.

    Returns exactly 0 for ``|x| > 700`` where the true value underflows.
    """
    x = np.asarray(x, dtype=float)
    big = np.abs(x) > _SIGMOID_CLAMP
    xc = np.where(big, 0.0, x)
    out = np.where(big, 0.0, 0.5 / (np.cosh(xc) + 1.0))
    return out if out.ndim else float(out)


def jacobian(net: GeneNetwork, eta) -> np.ndarray:
    """Jacobian of :func:`rate` at ``eta``: ``psi(Theta_i) nu_i A_ij - rho_i delta_ij``."""
    eta = _state(net, eta)
    if eta.ndim != 1:
        raise ValueError("jacobian takes a single state vector")
    psi = sigmoid_derivative(regulatory_input(net, eta))
    return (psi * net.nu)[:, None] * net.A - np.diag(net.rho)


def lipschitz_bound(net: GeneNetwork) -> float:
    """Global Lipschitz constant of :func:`rate`.

    ``M = sqrt(sum_i 2 m_i^2)`` with ``m_i = max(rho_i, nu_i |A_i| / 4)`` and
    ``|A_i|`` the Euclidean norm of row ``i``.
    """
    row_norms = np.linalg.norm(net.A, axis=1)
    m = np.maximum(net.rho, net.nu * row_norms / 4.0)
    return float(np.sqrt(np.sum(2.0 * m**2)))
