"""Closed-form Gaussian-type density envelopes, tail bounds and certificates.

Means and mean absolute deviations are never computed here. They are passed
in from :mod:`genebsde.expect` (PDE route) or :mod:`genebsde.ssa` (empirical
route).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import GeneNetwork, TimeWindow


class HypothesisError(ValueError):
    """Raised when a network does not satisfy the assumptions a bound needs."""


@dataclass(frozen=True)
class GaussianFinalData:
    """Final data ``eta_T^i = c_i B_T^i + b_i``."""

    c: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float).reshape(-1)
        b = np.array(self.b, dtype=float).reshape(-1)
        if c.shape != b.shape:
            raise ValueError("c and b must have the same length")
        if np.any(c <= 0) or np.any(b <= 0):
            raise ValueError("Gaussian final data needs c_i > 0 and b_i > 0")
        c.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.c.size

    def derivative_bounds(self) -> "DerivativeBounds":
        """``gamma_ik = Gamma_ik = c_i delta_ik``."""
        d = np.diag(self.c)
        return DerivativeBounds(gamma=d, Gamma=d)


@dataclass(frozen=True)
class DerivativeBounds:
    """Constant bounds ``gamma_ik <= d h^i / d x_k <= Gamma_ik`` on the final data."""

    gamma: np.ndarray
    Gamma: np.ndarray

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float)
        Gamma = np.array(self.Gamma, dtype=float)
        if gamma.ndim != 2 or gamma.shape != Gamma.shape:
            raise ValueError("gamma and Gamma must be matrices of equal shape")
        if np.any(gamma < 0) or np.any(Gamma < gamma):
            raise ValueError("need 0 <= gamma <= Gamma componentwise")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "Gamma", Gamma)


@dataclass(frozen=True)
class DensityEnvelope:
    """Gaussian-shaped sandwich around the density of one protein level.

    ``lam`` and ``Lam`` are the lower and upper variance proxies; ``mean`` and
    ``abs_dev`` are ``E F`` and ``E|F - E F|``.
    """

    lam: float
    Lam: float
    mean: float = 0.0
    abs_dev: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.Lam < self.lam:
            raise ValueError(f"Lambda ({self.Lam}) < lambda ({self.lam}): inconsistent bounds")
        if not self.abs_dev > 0:
            raise ValueError("abs_dev must be positive")

    def with_moments(self, mean: float, abs_dev: float) -> "DensityEnvelope":
        return DensityEnvelope(self.lam, self.Lam, float(mean), float(abs_dev))

    def density_bounds(self, x):
        return density_bounds(self, x)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "Lambda": self.Lam, "mean": self.mean, "abs_dev": self.abs_dev}


def p_exponents(net: GeneNetwork) -> np.ndarray:
    """Column exponents ``P_j`` that control the growth of ``|D eta|``."""
    absA = np.abs(net.A)
    offdiag = (net.nu[:, None] * absA / 4.0).sum(axis=0) - net.nu * np.diag(absA) / 4.0
    diag = np.maximum(net.rho, np.abs(np.diag(net.A) * net.nu / 4.0 - net.rho))
    return offdiag + diag


def repressive_offdiagonal(net: GeneNetwork) -> bool:
    """True when ``A_ij <= 0`` for all ``i != j``, the gene-bound hypothesis."""
    off = net.A - np.diag(np.diag(net.A))
    return bool(np.all(off <= 0))


def lambda_gene(net: GeneNetwork, db: DerivativeBounds, i: int, window: TimeWindow) -> float:
    """Lower variance proxy ``lambda_i(t)`` for gene ``i`` (0-based)."""
    g2 = float(np.sum(db.gamma[i] ** 2))
    if g2 == 0.0:
        raise ValueError(f"row {i} of gamma is identically zero")
    rate = net.rho[i]
    if net.A[i, i] > 0:
        rate = rate - net.A[i, i] * net.nu[i] / 4.0
    return g2 * window.t * math.exp(2.0 * window.remaining * rate)


def Lambda_gene(net: GeneNetwork, db: DerivativeBounds, window: TimeWindow) -> float:
    """Upper variance proxy ``Lambda(t)``, common to every gene."""
    col = db.Gamma.sum(axis=0)
    growth = math.exp(2.0 * window.remaining * float(np.max(p_exponents(net))))
    return window.t * float(np.sum(col**2)) * growth


def gene_envelopes(net: GeneNetwork, db: DerivativeBounds, window: TimeWindow) -> list[DensityEnvelope]:
    """One envelope per gene with placeholder moments (mean 0, abs_dev 1)."""
    Lam = Lambda_gene(net, db, window)
    return [DensityEnvelope(lambda_gene(net, db, i, window), Lam) for i in range(net.n)]


def density_bounds(env: DensityEnvelope, x):
    """Pointwise ``(lower, upper)`` density bounds at ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=float)
    d2 = (x - env.mean) ** 2
    lower = env.abs_dev / (2.0 * env.Lam) * np.exp(-d2 / (2.0 * env.lam))
    upper = env.abs_dev / (2.0 * env.lam) * np.exp(-d2 / (2.0 * env.Lam))
    if x.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def tail_bound(env: DensityEnvelope, x: float) -> float:
    """Bound on ``P(F >= mean + x)`` and on ``P(F <= mean - x)``."""
    if not x > 0:
        raise ValueError("tail bound needs x > 0")
    return math.exp(-(x**2) / (2.0 * env.Lam))


def prediction_halfwidth(Lam: float, alpha: float) -> float:
    """Half-width ``x`` such that ``(mean - x, mean + x)`` holds mass at least ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not Lam > 0:
        raise ValueError("Lambda must be positive")
    return math.sqrt(2.0 * Lam * math.log(2.0 / (1.0 - alpha)))


def positivity_bound(env: DensityEnvelope) -> float:
    """Upper bound on ``P(F <= 0)``; only meaningful for a positive mean."""
    if not env.mean > 0:
        raise ValueError("positivity bound needs a positive mean")
    return math.exp(-(env.mean**2) / (2.0 * env.Lam))


def check_suppressed_shape(net: GeneNetwork) -> None:
    """Raise :class:`HypothesisError` unless gene 1 is repressed by all others,
    every gene activates itself, and genes 2..n do not regulate anything else."""
    A = net.A
    n = net.n
    if n < 2:
        raise HypothesisError("suppressed-gene bounds need at least two genes")
    if np.any(A[0, 1:] >= 0):
        raise HypothesisError("need A[0, k] < 0 for every k >= 1")
    if np.any(np.diag(A) <= 0):
        raise HypothesisError("need A[i, i] > 0 for every gene")
    rest = A[1:].copy()
    rest[np.arange(n - 1), np.arange(1, n)] = 0.0
    if np.any(rest != 0):
        raise HypothesisError("need A[i, j] = 0 for i != j, i >= 1")


def suppressed_gene_envelope(net: GeneNetwork, fd: GaussianFinalData, window: TimeWindow):
    """Sharper bounds for the targeted gene (index 0) of a suppression network.

    Returns ``(m_t, M_t, envelope)`` where the envelope has ``lam = t m_t^2``
    and ``Lam = t M_t^2`` and placeholder moments.
    """
    check_suppressed_shape(net)
    s = window.remaining
    nu1, rho1, c = net.nu[0], net.rho[0], fd.c
    m_t = c[0] * math.exp((rho1 - nu1 * net.A[0, 0] / 4.0) * s)
    kappa = nu1 * np.abs(net.A[0, 1:]) * c[1:] / 4.0 * np.exp(net.rho[1:] * s) * s
    M_t = math.exp(rho1 * s) * math.sqrt(c[0] ** 2 + float(np.sum(kappa**2)))
    env = DensityEnvelope(window.t * m_t**2, window.t * M_t**2)
    return m_t, M_t, env


def write_envelope_csv(path: Path, env: DensityEnvelope, x) -> None:
    lower, upper = density_bounds(env, np.asarray(x, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "lower", "upper"])
        for row in zip(np.asarray(x, dtype=float), lower, upper):
            w.writerow([repr(float(v)) for v in row])


def certificate_record(env: DensityEnvelope, alphas, mean_known: bool = True) -> dict:
    """JSON-ready certificate for one gene: variance proxies, positivity bound
    and one prediction interval per confidence level."""
    rows = []
    for alpha in alphas:
        x = prediction_halfwidth(env.Lam, alpha)
        row = {"alpha": float(alpha), "x_alpha": x}
        if mean_known:
            row["interval"] = [env.mean - x, env.mean + x]
        rows.append(row)
    pos = positivity_bound(env) if (mean_known and env.mean > 0) else None
    return {
        "lambda": env.lam,
        "Lambda": env.Lam,
        "mean": env.mean if mean_known else None,
        "abs_dev": env.abs_dev if mean_known else None,
        "positivity_bound": pos,
        "prediction": rows,
    }


def write_certificates_json(path: Path, records: list[dict]) -> None:
    Path(path).write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
