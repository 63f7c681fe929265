"""Run configuration: a YAML document with model, grid, drift, approximation
and simulation blocks.  See ``docs/config.md`` for the schema."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .diffusion import DiffusionModel, Polynomial
from .statespace import GridSpace, build_grid

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Bad config; the message names the offending key (and line, for YAML errors)."""


@dataclass(frozen=True)
class GridBlock:
    bounds: tuple
    resolution: tuple


@dataclass(frozen=True)
class LyapunovBlock:
    V: tuple
    W: tuple
    delta: float
    b: float
    C_radius: float
    sup_V_on_C: float | None = None


@dataclass(frozen=True)
class ApproxBlock:
    kappa: float
    cells_per_axis: int
    epsilon: float
    alpha_delta: float
    times: tuple
    test_poly: tuple
    test_width: float | None


@dataclass(frozen=True)
class SimBlock:
    seed: int
    n_paths: int
    dt: float
    x0: tuple
    T: float


@dataclass(frozen=True)
class RunConfig:
    model: dict
    grid: GridBlock
    lyapunov: LyapunovBlock
    approximation: ApproxBlock
    simulation: SimBlock
    output: str = "out"
    source: str | None = field(default=None, compare=False)

    def to_dict(self) -> dict[str, Any]:
        """Mapping in the input layout; ``parse_config(cfg.to_dict()) == cfg``."""
        d = asdict(self)
        d.pop("source")
        ap = d["approximation"]
        ap["test_function"] = {"poly": ap.pop("test_poly"), "width": ap.pop("test_width")}
        return _plain(d)

    def diffusion_model(self) -> DiffusionModel:
        return DiffusionModel.from_config(self.model)

    def build_grid(self) -> GridSpace:
        V = Polynomial.from_terms(self.lyapunov.V, len(self.grid.bounds))
        d = len(self.grid.bounds)
        return build_grid(self.grid.bounds, self.grid.resolution, lambda x: V(np.asarray(x).reshape(-1, d)))

    def field(self, terms) -> np.ndarray:
        grid = self.build_grid()
        return Polynomial.from_terms(terms, grid.dim)(grid.points)

    def test_function(self, grid: GridSpace) -> np.ndarray:
        a = self.approximation
        g = Polynomial.from_terms(a.test_poly, grid.dim)(grid.points)
        if a.test_width is not None:
            g = g * np.exp(-np.sum(grid.points**2, axis=1) / (2.0 * a.test_width**2))
        return g


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _tupled(x):
    if isinstance(x, (list, tuple)):
        return tuple(_tupled(v) for v in x)
    return x


def _get(block: dict, key: str, where: str, kind=float, default=...):
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping")
    if key not in block or block[key] is None:
        if default is ...:
            raise ConfigError(f"{where}.{key}: missing")
        return default
    val = block[key]
    try:
        if kind is float:
            out = float(val)
            if not math.isfinite(out):
                raise ValueError
            return out
        if kind is int:
            if isinstance(val, bool) or int(val) != val:
                raise ValueError
            return int(val)
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: cannot read {val!r} as {kind.__name__}") from None


def _terms(val, where: str, dim: int) -> tuple:
    try:
        Polynomial.from_terms(val, dim)
    except Exception as exc:
        raise ConfigError(f"{where}: bad monomial table ({exc})") from None
    return _tupled(val)


def parse_config(doc: dict, source: str | None = None) -> RunConfig:
    """Validate a decoded config mapping and build a :class:`RunConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected a mapping")
    for key in ("model", "grid"):
        if key not in doc:
            raise ConfigError(f"{key}: missing block")
    unknown = set(doc) - {"model", "grid", "lyapunov", "approximation", "simulation", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    model = doc["model"]
    try:
        dm = DiffusionModel.from_config(model)
    except Exception as exc:
        raise ConfigError(f"model: {exc}") from None
    dim = dm.dim

    g = doc["grid"]
    bounds = _get(g, "bounds", "grid", kind=list)
    res = _get(g, "resolution", "grid", kind=list)
    if len(bounds) != dim or len(res) != dim:
        raise ConfigError(f"grid: bounds and resolution need {dim} entries")
    try:
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        res = tuple(int(r) for r in res)
    except (TypeError, ValueError):
        raise ConfigError("grid: bounds must be [lo, hi] pairs and resolution integers") from None
    if any(r < 3 for r in res):
        raise ConfigError("grid.resolution: need at least 3 nodes per axis")
    if any(hi <= lo for lo, hi in bounds):
        raise ConfigError("grid.bounds: empty interval")

    ly = doc.get("lyapunov", {})
    lyap = LyapunovBlock(
        V=_terms(_get(ly, "V", "lyapunov", kind=list), "lyapunov.V", dim),
        W=_terms(_get(ly, "W", "lyapunov", kind=list), "lyapunov.W", dim),
        delta=_get(ly, "delta", "lyapunov"),
        b=_get(ly, "b", "lyapunov"),
        C_radius=_get(ly, "C_radius", "lyapunov"),
        sup_V_on_C=_get(ly, "sup_V_on_C", "lyapunov", default=None),
    )
    if lyap.delta <= 0:
        raise ConfigError("lyapunov.delta: must be positive")

    ap = doc.get("approximation", {})
    tf = ap.get("test_function", {"poly": [[1.0, [1] + [0] * (dim - 1)]], "width": 2.0})
    approx = ApproxBlock(
        kappa=_get(ap, "kappa", "approximation", default=20.0),
        cells_per_axis=_get(ap, "cells_per_axis", "approximation", kind=int, default=64),
        epsilon=_get(ap, "epsilon", "approximation", default=0.1),
        alpha_delta=_get(ap, "alpha_delta", "approximation", default=0.5),
        times=_tupled([float(t) for t in ap.get("times", [0.25, 0.5, 1.0, 2.0, 4.0])]),
        test_poly=_terms(_get(tf, "poly", "approximation.test_function", kind=list), "approximation.test_function.poly", dim),
        test_width=_get(tf, "width", "approximation.test_function", default=None),
    )
    if approx.epsilon <= 0:
        raise ConfigError("approximation.epsilon: must be positive")
    if not 0.0 < approx.alpha_delta < 1.0:
        raise ConfigError("approximation.alpha_delta: must lie in (0, 1)")
    if approx.cells_per_axis < 1:
        raise ConfigError("approximation.cells_per_axis: must be >= 1")
    if approx.kappa < 1.0 / approx.alpha_delta:
        warnings.warn(f"kappa={approx.kappa} is below 1/alpha_delta={1 / approx.alpha_delta:.6g}", stacklevel=2)

    sm = doc.get("simulation", {})
    x0 = sm.get("x0", [0.0] * dim)
    sim = SimBlock(
        seed=_get(sm, "seed", "simulation", kind=int, default=0),
        n_paths=_get(sm, "n_paths", "simulation", kind=int, default=10_000),
        dt=_get(sm, "dt", "simulation", default=1e-3),
        x0=_tupled([float(c) for c in x0]),
        T=_get(sm, "T", "simulation", default=1.0),
    )
    if len(sim.x0) != dim:
        raise ConfigError(f"simulation.x0: need {dim} coordinates")
    if sim.dt <= 0 or sim.T <= 0 or sim.n_paths < 1:
        raise ConfigError("simulation: dt, T and n_paths must be positive")

    return RunConfig(
        model=_plain(dm.to_config()),
        grid=GridBlock(bounds, res),
        lyapunov=lyap,
        approximation=approx,
        simulation=sim,
        output=str(doc.get("output", "out")),
        source=source,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: YAML error at {where}: {exc.problem}") from None
    return parse_config(doc, source=str(path))
