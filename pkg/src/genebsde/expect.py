"""Moments of ``eta_t = theta(t, B_t)`` by Gaussian-weighted quadrature over ``Q_a``."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from .bounds import GaussianFinalData
from .model import GeneNetwork, TimeWindow
from .pde import ThetaField


@dataclass(frozen=True)
class MomentReport:
    mean: list[float]
    abs_dev: list[float]
    trunc_err_mean: list[float]
    trunc_err_absdev: list[float]
    mass_deficit: float
    a: float = 0.0
    rule: str = "simpson"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_json())


def _simpson_weights(m: int) -> np.ndarray:
    # m intervals, m even
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def inner_weights(field: ThetaField, t: float, a: float | None = None):
    """1-D quadrature weights (including the Gaussian factor) on the nodes of ``Q_a``.

    Returns ``(index_slice, weights, a_eff, rule)``. ``a_eff`` is the largest
    node not beyond ``a``. Composite Simpson on the existing nodes.
    """
    grid = field.grid
    a = grid.a if a is None else a
    if a > grid.half_width * (1 + 1e-12):
        raise ValueError(f"a = {a} exceeds the field half-width {grid.half_width}")
    ax = grid.axis
    h = grid.spacing
    mid = grid.points_per_axis // 2
    k = int(math.floor(a / h + 1e-9))
    if k < 1:
        raise ValueError("inner cube contains no cells")
    sl = slice(mid - k, mid + k + 1)
    # 2k cells is always even; with k even the origin is also a panel edge
    w, rule = _simpson_weights(2 * k), "simpson"
    x = ax[sl]
    gauss = np.exp(-(x**2) / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)
    return sl, w * h * gauss, k * h, rule


def _tensor_sum(values: np.ndarray, w1: np.ndarray) -> float:
    # contract each axis with the 1-D weights, then a compensated final sum
    out = values
    for _ in range(values.ndim - 1):
        out = np.tensordot(out, w1, axes=([out.ndim - 1], [0]))
    return math.fsum((out * w1).tolist())


def mass_deficit(t: float, a: float, n: int) -> float:
    """``1 - P(B_t in Q_a)`` for an ``n``-dimensional Brownian motion."""
    return float(1.0 - erf(a / math.sqrt(2.0 * t)) ** n)


def J(t: float, a: float) -> float:
    return math.sqrt(2.0 * t / (math.pi * a**2)) * math.exp(-(a**2) / (2.0 * t))


def truncation_error_mean(net: GeneNetwork, fd: GaussianFinalData, window: TimeWindow, a: float, i: int) -> float:
    """Certified bound on the error of ``E eta^i_t`` from integrating over ``Q_a`` only."""
    if not a > 0:
        raise ValueError("a must be positive")
    t, s, n = window.t, window.remaining, net.n
    c, b = fd.c[i], fd.b[i]
    bracket = a * c + c * (n - 1) * math.sqrt(2.0 * t / math.pi) + b * n + net.nu[i] * n * s
    return math.exp(net.rho[i] * s) * J(t, a) * bracket


def choose_inner_cube(net: GeneNetwork, fd: GaussianFinalData, window: TimeWindow, tol: float) -> float:
    """Smallest half-integer ``a >= 1`` with every gene's truncation bound ``<= tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    a = 1.0
    while max(truncation_error_mean(net, fd, window, a, i) for i in range(net.n)) > tol:
        a += 0.5
    return a


def gaussian_weight_integral(
    field: ThetaField,
    t: float,
    net: GeneNetwork | None = None,
    fd: GaussianFinalData | None = None,
    window: TimeWindow | None = None,
) -> MomentReport:
    """``E eta^i_t`` and ``E|eta^i_t - E eta^i_t|`` from the field over ``Q_a``.

    Two passes: the mean first, then the absolute deviation about it. When the
    model inputs are given the certified truncation errors are filled in,
    otherwise they are reported as zero.
    """
    if not math.isclose(t, field.t, rel_tol=1e-12):
        raise ValueError(f"field is at t = {field.t}, asked for t = {t}")
    sl, w1, a_eff, rule = inner_weights(field, t)
    n = field.n
    inner = field.values[(sl,) * n]
    means, devs = [], []
    for i in range(n):
        comp = inner[..., i]
        mu = _tensor_sum(comp, w1)
        means.append(mu)
        devs.append(_tensor_sum(np.abs(comp - mu), w1))
    if net is not None and fd is not None and window is not None:
        err = [truncation_error_mean(net, fd, window, a_eff, i) for i in range(n)]
    else:
        err = [0.0] * n
    return MomentReport(
        mean=means,
        abs_dev=devs,
        trunc_err_mean=err,
        trunc_err_absdev=[2.0 * e for e in err],
        mass_deficit=mass_deficit(t, a_eff, n),
        a=a_eff,
        rule=rule,
    )
