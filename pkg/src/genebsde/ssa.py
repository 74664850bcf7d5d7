"""Gillespie simulation of the protein-only birth-death network.

Each gene has two reactions: synthesis ``eta_i -> eta_i + 1`` with propensity
``nu_i / (1 + exp(-Theta_i))`` and degradation ``eta_i -> eta_i - 1`` with
propensity ``rho_i eta_i``. ``Theta`` is computed from the raw integer counts.

Every trajectory draws from its own Philox stream keyed by ``(seed, index)``,
so an ensemble is reproducible regardless of how it is split across threads.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import erf

from .bounds import DensityEnvelope, GaussianFinalData
from .model import GeneNetwork

DONE, NEED_UNIFORMS, EVENT_LIMIT, RUNAWAY = 0, 1, 2, 3
MAX_COUNT = 10**9
_BLOCK = 4096
_MASK64 = (1 << 64) - 1


class SsaError(RuntimeError):
    """A trajectory could not be completed (e.g. counts ran away)."""


@dataclass(frozen=True)
class SsaConfig:
    net: GeneNetwork
    initial: np.ndarray
    T: float
    ensemble_size: int = 1000
    seed: int = 0

    def __post_init__(self):
        init = np.array(self.initial, dtype=np.int64).reshape(-1)
        if init.size != self.net.n:
            raise ValueError("initial counts do not match the network size")
        if np.any(init < 0):
            raise ValueError("initial counts must be non-negative")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be at least 1")
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant path: ``states[k]`` holds on ``[times[k], times[k+1])``."""

    times: np.ndarray
    states: np.ndarray

    def at(self, t: float) -> np.ndarray:
        """State at the last event not after ``t``."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.states[max(k, 0)].copy()


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    total: int

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def density(self) -> np.ndarray:
        return self.counts / (self.total * self.widths)

    def write_csv(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "density"])
            for lo, hi, d in zip(self.edges[:-1], self.edges[1:], self.density):
                w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])


@njit(cache=True)
def _propensities(counts, A, nu, rho, out):
    n = counts.shape[0]
    for i in range(n):
        th = 0.0
        for j in range(n):
            th += A[i, j] * counts[j]
        out[i] = nu[i] / (1.0 + math.exp(-th))
        out[n + i] = rho[i] * counts[i]


@njit(cache=True, nogil=True)
def _advance(counts, t, T, A, nu, rho, unif, pos, sample_times, samples, next_sample, max_events, max_count):
    """Run events until the horizon, the uniform buffer or ``max_events`` runs out.

    Returns ``(status, t, pos, next_sample, events)``; ``counts`` and
    ``samples`` are updated in place.
    """
    n = counts.shape[0]
    prop = np.empty(2 * n)
    n_samples = sample_times.shape[0]
    events = 0
    while True:
        if events >= max_events:
            return EVENT_LIMIT, t, pos, next_sample, events
        _propensities(counts, A, nu, rho, prop)
        a0 = 0.0
        for k in range(2 * n):
            a0 += prop[k]
        if a0 <= 0.0:
            t_next = np.inf
        else:
            if pos + 2 > unif.shape[0]:
                return NEED_UNIFORMS, t, pos, next_sample, events
            t_next = t - math.log(1.0 - unif[pos]) / a0
        while next_sample < n_samples and sample_times[next_sample] < t_next and sample_times[next_sample] <= T:
            for i in range(n):
                samples[next_sample, i] = counts[i]
            next_sample += 1
        if t_next > T:
            return DONE, T, pos, next_sample, events
        target = unif[pos + 1] * a0
        pos += 2
        acc = 0.0
        choice = 2 * n - 1
        for k in range(2 * n):
            acc += prop[k]
            if target < acc:
                choice = k
                break
        # guard against round-off selecting a reaction with zero propensity
        while prop[choice] == 0.0 and choice > 0:
            choice -= 1
        if choice < n:
            counts[choice] += 1
            if counts[choice] > max_count:
                return RUNAWAY, t_next, pos, next_sample, events + 1
        else:
            counts[choice - n] -= 1
        t = t_next
        events += 1


def stream(seed: int, index: int) -> np.random.Generator:
    """Philox generator keyed by the 64-bit seed and the trajectory index."""
    return np.random.Generator(np.random.Philox(key=(seed & _MASK64) | (int(index) << 64)))


def step_propensities(net: GeneNetwork, counts) -> np.ndarray:
    """Synthesis propensities followed by degradation propensities (length ``2n``)."""
    counts = np.asarray(counts, dtype=np.int64)
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    out = np.empty(2 * net.n)
    _propensities(counts, np.ascontiguousarray(net.A), net.nu, net.rho, out)
    return out


def _run_one(cfg: SsaConfig, index: int, sample_times: np.ndarray, max_count: int) -> np.ndarray:
    rng = stream(cfg.seed, index)
    counts = cfg.initial.copy()
    samples = np.zeros((sample_times.size, cfg.net.n), dtype=np.int64)
    A = np.ascontiguousarray(cfg.net.A)
    t, pos, nxt = 0.0, 0, 0
    block = _BLOCK
    unif = rng.random(block)
    big = np.iinfo(np.int64).max
    while True:
        status, t, pos, nxt, _ = _advance(
            counts, t, cfg.T, A, cfg.net.nu, cfg.net.rho, unif, pos, sample_times, samples, nxt, big, max_count
        )
        if status == DONE:
            return samples
        if status == RUNAWAY:
            raise SsaError(f"trajectory {index}: counts exceeded {max_count} at t = {t:.6g} ({counts.tolist()})")
        block = min(2 * block, 1 << 20)
        unif = np.concatenate([unif[pos:], rng.random(block)])
        pos = 0


def simulate_trajectory(cfg: SsaConfig, trajectory_index: int, max_count: int = MAX_COUNT) -> Trajectory:
    """Full event path of one trajectory (same stream as :func:`simulate_ensemble`)."""
    rng = stream(cfg.seed, trajectory_index)
    counts = cfg.initial.copy()
    A = np.ascontiguousarray(cfg.net.A)
    empty_t = np.empty(0)
    empty_s = np.zeros((0, cfg.net.n), dtype=np.int64)
    times, states = [0.0], [counts.copy()]
    t, pos = 0.0, 0
    unif = rng.random(_BLOCK)
    while True:
        status, t, pos, _, ev = _advance(
            counts, t, cfg.T, A, cfg.net.nu, cfg.net.rho, unif, pos, empty_t, empty_s, 0, 1, max_count
        )
        if status == DONE:
            break
        if status == RUNAWAY:
            raise SsaError(f"trajectory {trajectory_index}: counts exceeded {max_count} at t = {t:.6g}")
        if status == NEED_UNIFORMS:
            unif = np.concatenate([unif[pos:], rng.random(_BLOCK)])
            pos = 0
            continue
        times.append(t)
        states.append(counts.copy())
    return Trajectory(times=np.array(times), states=np.array(states))


def simulate_ensemble(
    cfg: SsaConfig,
    sample_times,
    *,
    threads: int = 1,
    max_count: int = MAX_COUNT,
) -> np.ndarray:
    """Counts at ``sample_times`` for every trajectory, shape ``(ensemble, times, n)``."""
    sample_times = np.asarray(sample_times, dtype=float).reshape(-1)
    if np.any(np.diff(sample_times) < 0):
        raise ValueError("sample_times must be non-decreasing")
    if np.any(sample_times < 0) or np.any(sample_times > cfg.T):
        raise ValueError("sample_times must lie in [0, T]")
    out = np.empty((cfg.ensemble_size, sample_times.size, cfg.net.n), dtype=np.int64)

    def work(lo_hi):
        lo, hi = lo_hi
        for k in range(lo, hi):
            out[k] = _run_one(cfg, k, sample_times, max_count)

    threads = max(1, int(threads))
    edges = np.linspace(0, cfg.ensemble_size, threads + 1).astype(int)
    chunks = list(zip(edges[:-1], edges[1:]))
    if threads == 1:
        work(chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(work, chunks))
    return out


def fit_final_data(final_samples, T: float) -> GaussianFinalData:
    """Moment-match ``c_i B_T + b_i`` to per-gene samples at the horizon.

    ``final_samples`` has shape ``(samples, n)``.
    """
    x = np.asarray(final_samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("need at least two samples per gene")
    b = x.mean(axis=0)
    c = x.std(axis=0, ddof=1) / math.sqrt(T)
    if np.any(c <= 0) or np.any(b <= 0):
        raise ValueError(f"fitted final data not positive (c={c.tolist()}, b={b.tolist()}); Gaussian surrogate inapplicable")
    return GaussianFinalData(c=c, b=b)


def histogram(samples, bin_width: float | None = None, bin_count: int | None = None) -> Histogram:
    """Histogram of integer-valued samples.

    With an integer ``bin_width`` the edges sit on half-integers so every bin
    covers the same number of attainable counts.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("no samples")
    lo, hi = float(x.min()), float(x.max())
    if bin_width is not None:
        if not bin_width > 0:
            raise ValueError("bin_width must be positive")
        start = math.floor(lo) - 0.5
        nbins = int(math.floor((hi - start) / bin_width)) + 1
        edges = start + bin_width * np.arange(nbins + 1)
    else:
        bins = bin_count or 50
        if bins < 1:
            raise ValueError("bin_count must be positive")
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("degenerate bins")
    counts, _ = np.histogram(x, bins=edges)
    return Histogram(edges=edges, counts=counts, total=int(x.size))


def _bin_average(amp: float, mean: float, var: float, lo, hi):
    # average over [lo, hi] of amp * exp(-(x - mean)^2 / (2 var))
    s = math.sqrt(2.0 * var)
    mass = 0.5 * math.sqrt(math.pi) * s * (erf((hi - mean) / s) - erf((lo - mean) / s))
    return amp * mass / (hi - lo)


def envelope_coverage(hist: Histogram, env: DensityEnvelope, min_count: int = 20) -> dict:
    """Fraction of well-populated bins whose empirical density lies inside the envelope.

    The envelope is averaged over each bin so it is compared with the same
    quantity the histogram estimates.
    """
    lo, hi = hist.edges[:-1], hist.edges[1:]
    lower = _bin_average(env.abs_dev / (2 * env.Lam), env.mean, env.lam, lo, hi)
    upper = _bin_average(env.abs_dev / (2 * env.lam), env.mean, env.Lam, lo, hi)
    dens = hist.density
    keep = hist.counts >= min_count
    inside = (dens >= lower) & (dens <= upper)
    used = int(keep.sum())
    frac = float(inside[keep].mean()) if used else float("nan")
    return {
        "coverage": frac,
        "bins_used": used,
        "bins_inside": int(inside[keep].sum()),
        "bins_above_upper": int((keep & (dens > upper)).sum()),
        "bins_below_lower": int((keep & (dens < lower)).sum()),
        "min_count": min_count,
    }


def write_samples_csv(path: Path, samples: np.ndarray, sample_times) -> None:
    """Long format ``trajectory,gene,t,count`` (genes 1-based)."""
    sample_times = np.asarray(sample_times, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "gene", "t", "count"])
        for k in range(samples.shape[0]):
            for j, t in enumerate(sample_times):
                for g in range(samples.shape[2]):
                    w.writerow([k, g + 1, repr(float(t)), int(samples[k, j, g])])
