"""Final-value problem ``d_t theta + 1/2 Lap theta - f(theta) = 0`` on a truncated cube.

The problem is reversed in time (``s = T - t``) and marched forward with
Strang splitting: half a reaction step, one Crank-Nicolson sweep per axis,
half a reaction step. Neumann walls use mirrored ghost nodes, which makes
the solve on ``Q_{a+N}`` equivalent to using the clamped final condition.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import GaussianFinalData
from .model import GeneNetwork, TimeWindow, lipschitz_bound
from numba import njit, prange

from .tridiag import as_lines, factor_tridiagonal, set_threads

log = logging.getLogger(__name__)

MAX_DIMENSION = 4
DEFAULT_POINTS = 65
DEFAULT_STEPS = 200


class NumericalError(RuntimeError):
    """The solver produced non-finite values or could not proceed."""


@dataclass(frozen=True)
class PdeGrid:
    """Tensor grid over ``Q_{a+N}``; ``a`` is the half-width used for expectations."""

    a: float
    N: float
    points_per_axis: int = DEFAULT_POINTS
    dt: float | None = None

    def __post_init__(self):
        if not (self.a > 0 and self.N > 0):
            raise ValueError("need a > 0 and N > 0")
        p = self.points_per_axis
        if p < 3 or p % 2 == 0:
            raise ValueError("points_per_axis must be odd and >= 3")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def aligned(cls, a: float, N: float, points_per_axis: int = DEFAULT_POINTS, dt: float | None = None) -> "PdeGrid":
        """Grid whose nodes include ``+-a`` with an even number of cells in
        ``[0, a]``. ``N`` is enlarged as needed, never shrunk."""
        m = (points_per_axis - 1) // 2
        k = int(math.floor(a * m / (a + N) + 1e-12))
        k -= k % 2
        if k < 2:
            raise ValueError("too few points to resolve the inner cube; increase points_per_axis")
        dx = a / k
        return cls(a=a, N=m * dx - a, points_per_axis=points_per_axis, dt=dt)

    @property
    def half_width(self) -> float:
        return self.a + self.N

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points_per_axis - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.points_per_axis)

    def step_count(self, remaining: float) -> int:
        if self.dt is None:
            return DEFAULT_STEPS
        return max(1, int(math.ceil(remaining / self.dt - 1e-9)))

    def to_dict(self) -> dict:
        return {"a": self.a, "N": self.N, "points_per_axis": self.points_per_axis, "dt": self.dt}


@dataclass(frozen=True)
class ThetaField:
    """Samples of ``theta_N(t, .)``; ``values[..., i]`` is component ``i``."""

    grid: PdeGrid
    t: float
    values: np.ndarray = field(repr=False)
    steps: int = 0

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @property
    def axis(self) -> np.ndarray:
        return self.grid.axis

    def at_origin(self) -> np.ndarray:
        mid = self.grid.points_per_axis // 2
        return self.values[(mid,) * self.n].copy()

    def write_csv(self, path: Path) -> None:
        """One row per node: ``x1..xn, theta1..thetan``, plus a JSON sidecar."""
        path = Path(path)
        n = self.n
        ax = self.axis
        mesh = np.meshgrid(*([ax] * n), indexing="ij")
        coords = np.stack([m.reshape(-1) for m in mesh], axis=1)
        vals = self.values.reshape(-1, n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(n)] + [f"theta{i + 1}" for i in range(n)])
            for xr, vr in zip(coords, vals):
                w.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in vr])
        meta = {"grid": self.grid.to_dict(), "t": self.t, "n": n, "steps": self.steps, "spacing": self.grid.spacing}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def extend_final_condition(fd: GaussianFinalData, grid: PdeGrid, x) -> np.ndarray:
    """Clamped linear final data ``c_i clamp(x_i, -(a+N), a+N) + b_i``."""
    x = np.asarray(x, dtype=float)
    L = grid.half_width
    return fd.c * np.clip(x, -L, L) + fd.b


def theta_amplitude_bound(net: GeneNetwork, fd: GaussianFinalData, window: TimeWindow, x) -> np.ndarray:
    """Pointwise bound ``e^{rho_i (T-t)} (c_i |x_i| + b_i + nu_i (T-t))`` on ``|theta^i|``."""
    x = np.asarray(x, dtype=float)
    s = window.remaining
    return np.exp(net.rho * s) * (fd.c * np.abs(x) + fd.b + net.nu * s)


def boundary_extension_error(net: GeneNetwork, fd: GaussianFinalData, window: TimeWindow, N: float) -> float:
    """Bound on ``sup_{Q_a} |theta - theta_N|`` from replacing the final data by its clamp."""
    if not N > 0:
        raise ValueError("N must be positive")
    s = window.remaining
    if s <= 0:
        return 0.0
    cnorm = float(np.linalg.norm(fd.c))
    M = lipschitz_bound(net)
    return cnorm * s**0.75 / math.sqrt(N) * math.exp(M * s - N**2 / (4.0 * s))


def choose_margin(net: GeneNetwork, fd: GaussianFinalData, window: TimeWindow, tol: float) -> float:
    """Smallest half-integer ``N`` whose boundary-extension bound is ``<= tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    N = 0.5
    # the bound eventually decays like exp(-N^2); past its peak it is monotone
    while boundary_extension_error(net, fd, window, N) > tol:
        N += 0.5
        if N > 1e4:
            raise NumericalError("no margin found below 1e4")
    return N


def _cn_factor(p: int, r: float):
    lower = np.full(p - 1, -r)
    upper = np.full(p - 1, -r)
    diag = np.full(p, 1.0 + 2.0 * r)
    upper[0] = -2.0 * r
    lower[-1] = -2.0 * r
    return factor_tridiagonal(lower, diag, upper)


@njit(parallel=True, cache=True)
def _cn_sweep(u, out, r, sub, pivot, upper_scaled):
    # One Crank-Nicolson substep along the middle axis of (pre, p, post):
    # out = (I - r D2)^{-1} (I + r D2) u, with mirror ghosts at both walls.
    pre, p, post = u.shape
    for q in prange(pre * post):
        a = q // post
        b = q - a * post
        for i in range(p):
            left = u[a, i - 1, b] if i > 0 else u[a, 1, b]
            right = u[a, i + 1, b] if i < p - 1 else u[a, p - 2, b]
            out[a, i, b] = u[a, i, b] + r * (left - 2.0 * u[a, i, b] + right)
        for i in range(1, p):
            out[a, i, b] -= sub[i] * out[a, i - 1, b]
        out[a, p - 1, b] /= pivot[p - 1]
        for i in range(p - 2, -1, -1):
            out[a, i, b] = out[a, i, b] / pivot[i] - upper_scaled[i] * out[a, i + 1, b]


@njit(inline="always")
def _sigmoid(x):
    # 1 / (1 + e^{-x}) is exactly 1.0 in double precision once x > 40
    if x > 40.0:
        return 1.0
    return 1.0 / (1.0 + math.exp(-x))


@njit(parallel=True, cache=True)
def _heun_reaction(u, A, nu, rho, h, k1, stage):
    # d theta / ds = -f(theta) = rho theta - nu sigmoid(A theta); u is (n, M)
    n, m_nodes = u.shape
    for m in prange(m_nodes):
        for i in range(n):
            th = 0.0
            for j in range(n):
                th += A[i, j] * u[j, m]
            k1[i, m] = rho[i] * u[i, m] - nu[i] * _sigmoid(th)
        for i in range(n):
            stage[i, m] = u[i, m] + h * k1[i, m]
        for i in range(n):
            th = 0.0
            for j in range(n):
                th += A[i, j] * stage[j, m]
            k2 = rho[i] * stage[i, m] - nu[i] * _sigmoid(th)
            u[i, m] += 0.5 * h * (k1[i, m] + k2)


def solve_final_value(
    net: GeneNetwork,
    fd: GaussianFinalData,
    grid: PdeGrid,
    window: TimeWindow,
    *,
    reaction: bool = True,
    threads: int = 1,
) -> ThetaField:
    """Grid samples of ``theta_N(t, .)`` on ``Q_{a+N}``.

    ``reaction=False`` drops ``f`` and solves the pure backward heat equation.
    """
    n = net.n
    if n > MAX_DIMENSION:
        raise ValueError(f"dense tensor grid limited to n <= {MAX_DIMENSION}, got {n}")
    if fd.n != n:
        raise ValueError("final data and network sizes differ")
    p = grid.points_per_axis
    ax = grid.axis
    shape = (p,) * n
    u = np.empty((n,) + shape)
    for i in range(n):
        view = [1] * n
        view[i] = p
        u[i] = np.broadcast_to(
            (fd.c[i] * np.clip(ax, -grid.half_width, grid.half_width) + fd.b[i]).reshape(view), shape
        )

    s_total = window.remaining
    steps = grid.step_count(s_total) if s_total > 0 else 0
    if steps == 0:
        return ThetaField(grid=grid, t=window.t, values=np.moveaxis(u, 0, -1).copy(), steps=0)
    h = s_total / steps
    r = h / (4.0 * grid.spacing**2)
    factor = _cn_factor(p, r)
    log.debug("theta solve: n=%d p=%d steps=%d h=%.4g", n, p, steps, h)

    set_threads(threads)
    A = np.ascontiguousarray(net.A)
    flat = u.reshape(n, -1)
    k1 = np.empty_like(flat)
    stage = np.empty_like(flat)
    rhs = np.empty_like(u)
    check_every = max(1, steps // 20)
    for step in range(steps):
        # Strang splitting; the trailing half reaction step of one step is
        # merged with the leading half step of the next
        if reaction:
            _heun_reaction(flat, A, net.nu, net.rho, (0.5 if step == 0 else 1.0) * h, k1, stage)
        for axis in range(1, n + 1):
            _cn_sweep(as_lines(u, axis), as_lines(rhs, axis), r, factor.sub, factor.pivot, factor.upper_scaled)
            u, rhs = rhs, u
            flat = u.reshape(n, -1)
        if reaction and step == steps - 1:
            _heun_reaction(flat, A, net.nu, net.rho, 0.5 * h, k1, stage)
        if (step + 1) % check_every == 0 or step == steps - 1:
            if not np.all(np.isfinite(u)):
                raise NumericalError(f"non-finite theta after step {step + 1}/{steps}")
    return ThetaField(grid=grid, t=window.t, values=np.ascontiguousarray(np.moveaxis(u, 0, -1)), steps=steps)
