"""Run configuration: a versioned JSON document with strict key checking."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .bounds import GaussianFinalData
from .model import GeneNetwork, TimeWindow

SCHEMA = 1

_TOP = {"schema", "name", "network", "final_data", "window", "pde", "ssa", "bounds", "output"}
_BLOCKS = {
    "network": {"n", "A", "nu", "rho"},
    "final_data": {"c", "b", "fit_from_ssa"},
    "window": {"T", "t"},
    "pde": {"a", "N", "tol", "points_per_axis", "dt"},
    "ssa": {"ensemble", "seed", "initial", "bin_width", "sample_times"},
    "bounds": {"alpha", "x_grid", "mean", "abs_dev", "suppressed"},
}
_XGRID = {"lo", "hi", "points", "sigmas"}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; the message names the offending key."""


def _check_keys(block: dict, allowed: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(block) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key '{extra[0]}'")


def _vector(block: dict, key: str, n: int, where: str) -> list[float] | None:
    if key not in block or block[key] is None:
        return None
    v = block[key]
    if not isinstance(v, list) or len(v) != n:
        raise ConfigError(f"{where}.{key}: expected a list of length {n}")
    return [float(x) for x in v]


@dataclass
class RunConfig:
    """Parsed configuration. ``raw`` keeps the validated document for round-trips."""

    raw: dict
    net: GeneNetwork = field(init=False, repr=False)
    window: TimeWindow = field(init=False)

    def __post_init__(self):
        self.raw = copy.deepcopy(self.raw)
        validate(self.raw)
        self.net = GeneNetwork.from_dict(self.raw["network"])
        self.window = TimeWindow(T=float(self.raw["window"]["T"]), t=float(self.raw["window"]["t"]))

    # ---- accessors -------------------------------------------------------

    @property
    def name(self) -> str:
        return self.raw.get("name", "run")

    @property
    def n(self) -> int:
        return self.net.n

    @property
    def fit_from_ssa(self) -> bool:
        return bool(self.raw["final_data"].get("fit_from_ssa", False))

    def final_data(self) -> GaussianFinalData:
        if self.fit_from_ssa:
            raise ConfigError("final_data is fitted from the SSA; run the ssa stage first")
        fd = self.raw["final_data"]
        return GaussianFinalData(c=fd["c"], b=fd["b"])

    @property
    def pde(self) -> dict:
        return self.raw.get("pde", {})

    @property
    def ssa(self) -> dict | None:
        return self.raw.get("ssa")

    @property
    def bounds(self) -> dict:
        return self.raw.get("bounds", {})

    @property
    def output(self) -> str | None:
        return self.raw.get("output")

    # ---- (de)serialization ----------------------------------------------

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls(doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def with_overrides(self, **ssa_overrides) -> "RunConfig":
        raw = self.to_dict()
        upd = {k: v for k, v in ssa_overrides.items() if v is not None}
        if upd:
            raw.setdefault("ssa", {}).update(upd)
        return RunConfig(raw)


def validate(doc: dict) -> None:
    """Raise :class:`ConfigError` unless ``doc`` is a well-formed schema-1 config."""
    _check_keys(doc, _TOP, "config")
    if doc.get("schema") != SCHEMA:
        raise ConfigError(f"schema: expected {SCHEMA}, got {doc.get('schema')!r}")
    for key in ("network", "final_data", "window"):
        if key not in doc:
            raise ConfigError(f"missing key '{key}'")
    for key, allowed in _BLOCKS.items():
        if key in doc:
            _check_keys(doc[key], allowed, key)

    try:
        net = GeneNetwork.from_dict(doc["network"])
    except KeyError as exc:
        raise ConfigError(f"network: missing key '{exc.args[0]}'") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"network: {exc}") from None
    n = net.n

    w = doc["window"]
    for k in ("T", "t"):
        if k not in w:
            raise ConfigError(f"window: missing key '{k}'")
    try:
        TimeWindow(T=float(w["T"]), t=float(w["t"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"window: {exc}") from None

    fd = doc["final_data"]
    explicit = "c" in fd or "b" in fd
    fit = bool(fd.get("fit_from_ssa", False))
    if explicit == fit:
        raise ConfigError("final_data: give exactly one of (c, b) or fit_from_ssa: true")
    if explicit:
        c, b = _vector(fd, "c", n, "final_data"), _vector(fd, "b", n, "final_data")
        if c is None or b is None:
            raise ConfigError(f"final_data: missing key '{'c' if c is None else 'b'}'")
        try:
            GaussianFinalData(c=c, b=b)
        except ValueError as exc:
            raise ConfigError(f"final_data: {exc}") from None
    elif "ssa" not in doc:
        raise ConfigError("final_data.fit_from_ssa needs an ssa block")

    pde = doc.get("pde", {})
    if "a" in pde or "N" in pde:
        if not ("a" in pde and "N" in pde):
            raise ConfigError("pde: give both a and N, or tol")
        if not (float(pde["a"]) > 0 and float(pde["N"]) > 0):
            raise ConfigError("pde: a and N must be positive")
    elif "tol" in pde and not float(pde["tol"]) > 0:
        raise ConfigError("pde.tol must be positive")
    p = pde.get("points_per_axis")
    if p is not None and (int(p) != p or p < 3 or p % 2 == 0):
        raise ConfigError("pde.points_per_axis must be an odd integer >= 3")
    if pde.get("dt") is not None and not float(pde["dt"]) > 0:
        raise ConfigError("pde.dt must be positive")

    ssa = doc.get("ssa")
    if ssa is not None:
        ens = ssa.get("ensemble", 1000)
        if int(ens) != ens or ens < 1:
            raise ConfigError("ssa.ensemble must be a positive integer")
        seed = ssa.get("seed", 0)
        if int(seed) != seed or not 0 <= seed < 2**64:
            raise ConfigError("ssa.seed must be an unsigned 64-bit integer")
        init = ssa.get("initial")
        if init is None and fit:
            raise ConfigError("ssa.initial is required when final_data is fitted")
        if init is not None:
            if not isinstance(init, list) or len(init) != n or any(int(v) != v or v < 0 for v in init):
                raise ConfigError(f"ssa.initial: expected {n} non-negative integers")
        st = ssa.get("sample_times")
        if st is not None:
            T = float(w["T"])
            if not isinstance(st, list) or not st or any(not 0 <= float(v) <= T for v in st):
                raise ConfigError("ssa.sample_times: expected a non-empty list within [0, T]")
            if any(b < a for a, b in zip(st, st[1:])):
                raise ConfigError("ssa.sample_times must be non-decreasing")
        bw = ssa.get("bin_width")
        if bw is not None and not float(bw) > 0:
            raise ConfigError("ssa.bin_width must be positive")

    bnd = doc.get("bounds", {})
    alpha = bnd.get("alpha", [0.75, 0.95])
    if not isinstance(alpha, list) or any(not 0 < float(a) < 1 for a in alpha):
        raise ConfigError("bounds.alpha: expected a list of levels in (0, 1)")
    _vector(bnd, "mean", n, "bounds")
    ad = _vector(bnd, "abs_dev", n, "bounds")
    if ad is not None and any(v <= 0 for v in ad):
        raise ConfigError("bounds.abs_dev must be positive")
    xg = bnd.get("x_grid")
    if xg is not None:
        _check_keys(xg, _XGRID, "bounds.x_grid")
        if ("lo" in xg) != ("hi" in xg):
            raise ConfigError("bounds.x_grid: give both lo and hi")
        if "lo" in xg and not float(xg["lo"]) < float(xg["hi"]):
            raise ConfigError("bounds.x_grid: need lo < hi")
        pts = xg.get("points", 401)
        if int(pts) != pts or pts < 2:
            raise ConfigError("bounds.x_grid.points must be an integer >= 2")
    if not isinstance(bnd.get("suppressed", False), bool):
        raise ConfigError("bounds.suppressed must be a boolean")
