"""Closed-form fixtures: comparison theorems for linear systems and the
two counterexamples where Malliavin derivatives change sign and Gaussian-type
density bounds fail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize, stats

from .bounds import HypothesisError
from .ssa import stream

SINGULAR_TOL = 1e-12


# --- comparison theorems -------------------------------------------------


def wazewski_lower_bound(a_ii: Callable[[float], float], u0_i: float, t: float) -> float:
    """``u0_i exp(int_0^t a_ii(s) ds)``, a lower bound on ``u^i(t)`` for
    ``u' = A(t) u`` with non-negative off-diagonal ``A`` and ``u0 >= 0``."""
    if u0_i < 0:
        raise ValueError("u0_i must be non-negative")
    if t == 0:
        return float(u0_i)
    integral, _ = integrate.quad(a_ii, 0.0, t, epsabs=1e-13, epsrel=1e-12)
    return float(u0_i * math.exp(integral))


def solve_linear_ode(A: Callable[[float], np.ndarray], u0, t: float) -> np.ndarray:
    """``u(t)`` for ``u' = A(s) u``, ``u(0) = u0`` (reference integration)."""
    u0 = np.asarray(u0, dtype=float)
    if t == 0:
        return u0.copy()
    sol = integrate.solve_ivp(
        lambda s, u: np.asarray(A(s), dtype=float) @ u, (0.0, t), u0, method="DOP853", rtol=1e-11, atol=1e-13
    )
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1]


def _check_linear_hypotheses(F, K, xi, t, T, samples=33):
    if np.any(np.asarray(xi) < 0):
        raise HypothesisError("need xi >= 0")
    for s in np.linspace(t, T, samples):
        Fs = np.asarray(F(s), dtype=float)
        off = Fs - np.diag(np.diag(Fs))
        if np.any(off < 0):
            raise HypothesisError(f"off-diagonal F negative at s = {s:.6g}")
        if np.any(np.asarray(K(s), dtype=float) < 0):
            raise HypothesisError(f"K negative at s = {s:.6g}")


def linear_bsde_lower_bound_deterministic(
    F: Callable[[float], np.ndarray],
    K: Callable[[float], np.ndarray],
    xi,
    t: float,
    T: float,
) -> np.ndarray:
    """Componentwise lower bound for ``Y_t = xi + int_t^T (F Y + K) ds`` with
    deterministic coefficients (the BSDE with no martingale part).

    Returns ``xi_i e^{int_t^T F_ii} + int_t^T e^{int_t^s F_ii} K_i(s) ds``.
    The sign hypotheses are checked on a uniform grid of ``[t, T]``.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if not T >= t:
        raise ValueError("need t <= T")
    _check_linear_hypotheses(F, K, xi, t, T)
    m = xi.size
    out = np.empty(m)
    for i in range(m):
        fii = lambda s, i=i: float(np.asarray(F(s), dtype=float)[i, i])

        def cum(s, fii=fii):
            return integrate.quad(fii, t, s, epsabs=1e-13, epsrel=1e-12)[0] if s > t else 0.0

        forcing = integrate.quad(
            lambda s: math.exp(cum(s)) * float(np.asarray(K(s), dtype=float)[i]), t, T, epsabs=1e-12, epsrel=1e-11
        )[0]
        out[i] = xi[i] * math.exp(cum(T)) + forcing
    return out


def backward_linear_ode(F, K, xi, t: float, T: float) -> np.ndarray:
    """Exact (numerically integrated) ``Y_t`` for ``-Y' = F Y + K``, ``Y_T = xi``."""
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if T == t:
        return xi.copy()
    # r = T - s runs forward
    rhs = lambda r, y: np.asarray(F(T - r), dtype=float) @ y + np.asarray(K(T - r), dtype=float)
    sol = integrate.solve_ivp(rhs, (0.0, T - t), xi, method="DOP853", rtol=1e-11, atol=1e-13)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1]


def random_linear_system(rng: np.random.Generator, m: int):
    """Random time-dependent ``(F, K, xi)`` meeting the sign hypotheses."""
    D0 = rng.uniform(-1.0, 1.0, m)
    D1 = rng.uniform(-1.0, 1.0, m)
    O0 = rng.uniform(0.0, 1.0, (m, m))
    O1 = rng.uniform(0.0, 1.0, (m, m))
    np.fill_diagonal(O0, 0.0)
    np.fill_diagonal(O1, 0.0)
    k0 = rng.uniform(0.0, 1.0, m)
    k1 = rng.uniform(0.0, 1.0, m)
    w = rng.uniform(0.5, 3.0)

    def F(s):
        return np.diag(D0 + D1 * math.sin(w * s)) + O0 + O1 * math.cos(w * s) ** 2

    def K(s):
        return k0 + k1 * math.sin(w * s) ** 2

    return F, K, rng.uniform(0.0, 2.0, m)


# --- Example 1: sign change of a Malliavin derivative --------------------


def malliavin_D1_sign(T: float, t: float, brownian_value) -> np.ndarray | float:
    """``D_r Y^1_t = e^{-T/2}(e^{-T/2} - (T-t) e^{t/2} cos B_t)``."""
    if not 0 < t < T:
        raise ValueError("need 0 < t < T")
    b = np.asarray(brownian_value, dtype=float)
    val = math.exp(-T / 2) * (math.exp(-T / 2) - (T - t) * math.exp(t / 2) * np.cos(b))
    return float(val) if val.ndim == 0 else val


def malliavin_D1_mean(T: float, t: float) -> float:
    """Expectation over ``B_t ~ N(0, t)``, using ``E cos B_t = e^{-t/2}``."""
    if not 0 < t < T:
        raise ValueError("need 0 < t < T")
    return math.exp(-T / 2) * (math.exp(-T / 2) - (T - t))


def malliavin_sign_witnesses(T: float, t: float) -> tuple[float, float] | None:
    """Brownian values ``(b_neg, b_pos)`` where the derivative is negative and
    positive, or ``None`` if it never changes sign."""
    amp = (T - t) * math.exp(t / 2)
    if amp <= math.exp(-T / 2):
        return None
    # cos b = 1 gives the minimum, cos b = 0 the value e^{-T} > 0
    return 0.0, math.pi / 2


# --- Example 2: no Gaussian-type bounds ----------------------------------


@dataclass(frozen=True)
class CounterexampleParams:
    T: float
    tau: float
    alpha: float
    beta: float

    @property
    def residual(self) -> float:
        return (self.T - self.tau) - math.exp(-(self.tau + self.T) / 2)

    def lattice(self, k) -> np.ndarray:
        """Singular points ``alpha + beta 2 pi k`` of the density."""
        return self.alpha + self.beta * 2.0 * math.pi * np.asarray(k, dtype=float)


def counterexample_tau(T: float) -> CounterexampleParams:
    """Solve ``T - tau = e^{-(tau+T)/2}`` on ``(0, T)``."""
    if not T >= 1:
        raise ValueError("need T >= 1")
    g = lambda tau: (T - tau) - math.exp(-(tau + T) / 2)
    # g(0) = T - e^{-T/2} > 0 and g(T) = -e^{-T} < 0; g is strictly decreasing
    tau = optimize.brentq(g, 0.0, T, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    for _ in range(3):
        d = -1.0 + 0.5 * math.exp(-(tau + T) / 2)
        tau -= g(tau) / d
    p = CounterexampleParams(T=T, tau=tau, alpha=-2.0 * (T - tau), beta=math.exp(-T))
    if abs(p.residual) >= 1e-12:
        raise RuntimeError(f"root residual {p.residual:.3g}")
    return p


def x_minus_sin(x):
    """``x - sin x`` without cancellation near 0."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = x - np.sin(x)
    small = np.abs(x) < 0.5
    if np.any(small):
        xs = x[small]
        x2 = xs * xs
        # Taylor series up to x^15; truncation error < 1e-20 relative on |x| < 0.5
        term = xs * x2 / 6.0
        acc = term.copy()
        for k in range(2, 8):
            term = -term * x2 / ((2 * k) * (2 * k + 1))
            acc += term
        out[small] = acc
    return out[0] if scalar else out


def _solve_offset(w, max_iter: int = 200) -> np.ndarray:
    # root u of u - sin u = w, guarded Newton on the bracket [w - 1, w + 1]
    w = np.asarray(w, dtype=float)
    lo, hi = w - 1.0, w + 1.0
    # u - sin u ~ u^3 / 6 near the flat point
    u = np.where(np.abs(w) < 1.0, np.cbrt(6.0 * w), w)
    for _ in range(max_iter):
        r = x_minus_sin(u) - w
        below = r < 0
        lo = np.where(below, np.maximum(lo, u), lo)
        hi = np.where(below, hi, np.minimum(hi, u))
        d = _one_minus_cos(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            un = u - r / d
        bad = ~np.isfinite(un) | (un <= lo) | (un >= hi)
        un = np.where(bad, 0.5 * (lo + hi), un)
        done = (r == 0) | (np.abs(un - u) <= 4 * np.finfo(float).eps * np.abs(u))
        u = np.where(r == 0, u, un)
        if np.all(done):
            return u
    raise RuntimeError("psi_inverse did not converge")


def _psi_reduced(params: CounterexampleParams, y, max_iter: int = 200):
    # psi(y) = 2 pi k + u with k the nearest lattice index; solving for u keeps
    # full precision near the flat points 2 pi k where 1 - cos psi vanishes
    y = np.asarray(y, dtype=float)
    k = np.round((y - params.alpha) / (2 * math.pi * params.beta))
    return k, _solve_offset((y - params.lattice(k)) / params.beta, max_iter)


def psi_inverse(params: CounterexampleParams, y, max_iter: int = 200) -> np.ndarray:
    """Unique root ``x`` of ``alpha + beta (x - sin x) = y`` (vectorized).

    Newton steps guarded by the bracket ``[w - 1, w + 1]`` on the offset from the
    nearest flat point ``2 pi k``; bisection whenever Newton would leave it.
    """
    k, u = _psi_reduced(params, y, max_iter)
    return 2 * math.pi * k + u


def _one_minus_cos(x):
    return 2.0 * np.sin(0.5 * x) ** 2


def singular_mask(params: CounterexampleParams, y) -> np.ndarray:
    """True where the density is undefined (``|1 - cos psi(y)| < 1e-12``)."""
    return _one_minus_cos(_psi_reduced(params, y)[1]) < SINGULAR_TOL


def y1_exact_density(params: CounterexampleParams):
    """Density ``y -> p_tau(psi(y)) / (beta (1 - cos psi(y)))`` of ``Y^1_tau``.

    Singular points are returned as NaN (see :func:`singular_mask`).
    """

    def density(y):
        k, u = _psi_reduced(params, y)
        psi = 2 * math.pi * k + u
        denom = _one_minus_cos(u)
        p = np.exp(-(psi**2) / (2 * params.tau)) / math.sqrt(2 * math.pi * params.tau)
        with np.errstate(divide="ignore"):
            out = np.where(denom < SINGULAR_TOL, np.nan, p / (params.beta * np.where(denom > 0, denom, 1.0)))
        return float(out) if out.ndim == 0 else out

    return density


def y1_exact_cdf(params: CounterexampleParams, y) -> np.ndarray:
    """``P(Y^1_tau <= y) = Phi(psi(y) / sqrt(tau))`` since the map is increasing."""
    return stats.norm.cdf(psi_inverse(params, y) / math.sqrt(params.tau))


def y1_support(params: CounterexampleParams, sigmas: float = 10.0) -> tuple[float, float]:
    x = sigmas * math.sqrt(params.tau)
    return (float(params.alpha - params.beta * x_minus_sin(x)), float(params.alpha + params.beta * x_minus_sin(x)))


def y1_density_integral(params: CounterexampleParams, lo: float, hi: float) -> float:
    """``int_lo^hi density dy`` by adaptive quadrature, independent of the CDF formula.

    The range is cut at the singular lattice and at the cell midpoints between
    them. Each piece lies on one side of a lattice point ``y_k``, where the
    density behaves like ``|y - y_k|^{-2/3}``; it is integrated in
    ``s = cbrt(y - y_k)`` with the density evaluated from the offset, which
    stays accurate below the rounding unit of ``y``.
    """
    if hi <= lo:
        return 0.0
    step = 2 * math.pi * params.beta
    j0 = math.floor((lo - params.alpha) / step * 2.0)
    j1 = math.ceil((hi - params.alpha) / step * 2.0)
    cuts = params.alpha + 0.5 * step * np.arange(j0, j1 + 1)
    edges = np.concatenate([[lo], cuts[(cuts > lo) & (cuts < hi)], [hi]])
    norm = 1.0 / math.sqrt(2 * math.pi * params.tau)

    def integrand(t, k):
        d = t**3
        u = float(_solve_offset(d / params.beta))
        psi = 2 * math.pi * k + u
        denom = float(_one_minus_cos(u))
        if denom == 0.0:
            return 0.0
        # 3 t^2 dt = dy
        return 3.0 * t * t * norm * math.exp(-(psi**2) / (2 * params.tau)) / (params.beta * denom)

    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        k = round((0.5 * (a + b) - params.alpha) / step)
        yk = float(params.lattice(k))
        total += integrate.quad(
            integrand, np.cbrt(a - yk), np.cbrt(b - yk), args=(k,), limit=400, epsabs=1e-14, epsrel=1e-12
        )[0]
    return total


def y1_cdf_by_quadrature(params: CounterexampleParams, y_grid) -> np.ndarray:
    """CDF on an increasing grid from cumulative density integrals."""
    y_grid = np.asarray(y_grid, dtype=float)
    lo, _ = y1_support(params, sigmas=12.0)
    if y_grid[0] <= lo:
        raise ValueError("grid starts outside the numerical support")
    out = np.empty(y_grid.size)
    acc = y1_density_integral(params, lo, y_grid[0])
    out[0] = acc
    for k in range(1, y_grid.size):
        acc += y1_density_integral(params, y_grid[k - 1], y_grid[k])
        out[k] = acc
    return out


def y1_monte_carlo(params: CounterexampleParams, samples: int, seed: int = 0) -> np.ndarray:
    """Draws of ``alpha + beta (B_tau - sin B_tau)``."""
    b = stream(seed, 0).normal(0.0, math.sqrt(params.tau), samples)
    return params.alpha + params.beta * x_minus_sin(b)


def ks_distance(params: CounterexampleParams, samples: np.ndarray) -> float:
    return float(stats.kstest(samples, lambda y: y1_exact_cdf(params, y)).statistic)


def gaussian_bound_violation(
    params: CounterexampleParams,
    ell: float,
    L: float,
    mean: float,
    sigma1: float,
    sigma2: float,
    lattice_range: int = 3,
    depth: int = 40,
) -> dict:
    """Search for ``y`` breaking ``ell e^{-(y-m)^2/2s1^2} <= p(y) <= L e^{-(y-m)^2/2s2^2}``.

    Points approach each lattice point ``alpha + 2 pi k beta`` from both sides
    (geometric offsets) and a coarse grid covers the support for the lower
    bound. Returns the first witness of each kind (or ``None``).
    """
    dens = y1_exact_density(params)
    offsets = params.beta * np.logspace(0, -depth / 2, depth + 1)
    pts = []
    for k in range(-lattice_range, lattice_range + 1):
        yk = float(params.lattice(k))
        pts.append(yk + offsets)
        pts.append(yk - offsets)
    lo, hi = y1_support(params, sigmas=12.0)
    pts.append(np.linspace(lo, hi, 4001))
    y = np.concatenate(pts)
    p = dens(y)
    ok = np.isfinite(p)
    y, p = y[ok], p[ok]
    upper = L * np.exp(-((y - mean) ** 2) / (2 * sigma2**2))
    lower = ell * np.exp(-((y - mean) ** 2) / (2 * sigma1**2))
    up_idx = np.flatnonzero(p > upper)
    lo_idx = np.flatnonzero(p < lower)
    return {
        "upper_witness": float(y[up_idx[0]]) if up_idx.size else None,
        "lower_witness": float(y[lo_idx[0]]) if lo_idx.size else None,
        "max_density": float(p.max()),
    }


# --- fixture suite ---------------------------------------------------------


def _check(name: str, passed: bool, **info) -> dict:
    return {"name": name, "passed": bool(passed), **info}


def run_fixture_suite(mc_samples: int = 10**6, seed: int = 0, random_systems: int = 100) -> list[dict]:
    """Every closed-form fixture as a pass/fail record (JSON-ready)."""
    out = []

    A2 = np.array([[-1.0, 1.0], [1.0, -1.0]])
    u1 = float(solve_linear_ode(lambda s: A2, [1.0, 0.0], 1.0)[0])
    lb = wazewski_lower_bound(lambda s: -1.0, 1.0, 1.0)
    out.append(_check("wazewski_2x2", u1 >= lb and abs(u1 - (1 + math.exp(-2)) / 2) < 1e-9, ode=u1, bound=lb))

    F1, K1 = (lambda s: np.array([[-1.0]])), (lambda s: np.array([1.0]))
    b1 = float(linear_bsde_lower_bound_deterministic(F1, K1, [0.0], 0.0, 1.0)[0])
    e1 = float(backward_linear_ode(F1, K1, [0.0], 0.0, 1.0)[0])
    exact = 1 - math.exp(-1)
    out.append(_check("linear_bsde_scalar", abs(b1 - exact) < 1e-9 and abs(e1 - exact) < 1e-9, bound=b1, exact=e1))

    F2, K2 = (lambda s: np.array([[0.0, 1.0], [1.0, 0.0]])), (lambda s: np.zeros(2))
    b2 = linear_bsde_lower_bound_deterministic(F2, K2, [1.0, 1.0], 0.0, 1.0)
    e2 = backward_linear_ode(F2, K2, [1.0, 1.0], 0.0, 1.0)
    out.append(
        _check(
            "linear_bsde_symmetric",
            bool(np.allclose(b2, 1.0) and np.allclose(e2, math.e) and np.all(e2 >= b2)),
            bound=b2.tolist(),
            exact=e2.tolist(),
        )
    )

    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(random_systems):
        m = int(rng.integers(1, 5))
        F, K, xi = random_linear_system(rng, m)
        T = float(rng.uniform(0.2, 2.0))
        gap = backward_linear_ode(F, K, xi, 0.0, T) - linear_bsde_lower_bound_deterministic(F, K, xi, 0.0, T)
        worst = min(worst, float(gap.min()))
    out.append(_check("linear_bsde_random_dominance", worst >= -1e-8, systems=random_systems, min_gap=worst))

    T, t = 2.0, 0.5
    wit = malliavin_sign_witnesses(T, t)
    signs = malliavin_D1_sign(T, t, np.array(wit)) if wit else None
    out.append(
        _check(
            "malliavin_sign_change",
            wit is not None and signs[0] < 0 < signs[1] and malliavin_D1_mean(T, t) < 0,
            values=None if signs is None else signs.tolist(),
            mean=malliavin_D1_mean(T, t),
        )
    )

    p = counterexample_tau(1.0)
    out.append(_check("counterexample_tau", abs(p.residual) < 1e-12, tau=p.tau, residual=p.residual))

    x = np.linspace(-20.0, 20.0, 40001)
    z = p.alpha + p.beta * x_minus_sin(x)
    ident = float(np.max(np.abs(x_minus_sin(psi_inverse(p, z)) - x_minus_sin(x))))
    out.append(_check("psi_inverse_identity", ident < 1e-10, max_error=ident))

    lo, hi = y1_support(p, sigmas=12.0)
    mass = y1_density_integral(p, lo, hi)
    out.append(_check("density_mass", abs(mass - 1.0) < 1e-3, mass=mass))

    ks = ks_distance(p, y1_monte_carlo(p, mc_samples, seed))
    out.append(_check("monte_carlo_ks", ks < 0.005, ks=ks, samples=mc_samples))

    cands = [(1e-3, 1e3, p.alpha, 1.0, 1.0), (1e-6, 1e6, 0.0, 10.0, 10.0), (0.1, 50.0, p.alpha, p.beta, 2 * p.beta)]
    scans = [gaussian_bound_violation(p, *c) for c in cands]
    out.append(
        _check(
            "gaussian_bound_violation",
            all(s["upper_witness"] is not None for s in scans),
            witnesses=[s["upper_witness"] for s in scans],
        )
    )
    return out
