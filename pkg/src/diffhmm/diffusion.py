"""Polynomial diffusion models, generators, drift certificates and SDE paths.

A model is ``dX = u(X) dt + M(X) dB`` with ``u`` and ``M`` given by tables of
monomials, so configs stay plain data.  The generator acting on a grid
function is

    D h = u . grad h + 1/2 trace(Sigma hess h),   Sigma = M M^T,

and the nonlinear generator is ``H(F) = exp(-F) D exp(F)``.  ``H`` is always
evaluated in the expanded form

    H(F) = u . grad F + 1/2 trace(Sigma hess F) + 1/2 grad F . Sigma grad F

because ``exp(F)`` overflows on the wide boxes where weighted norms live.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ._rng import run_blocks, substream
from .statespace import GridSpace

__all__ = [
    "Polynomial",
    "DiffusionModel",
    "PRESETS",
    "preset",
    "LyapunovCertificate",
    "SimulationError",
    "grad",
    "hessian",
    "generator_apply",
    "nonlinear_generator",
    "discrete_nonlinear_generator",
    "certify_dv3",
    "simulate_sde",
    "sde_endpoints",
]


# ---------------------------------------------------------------- polynomials


@dataclass(frozen=True)
class Polynomial:
    """Sum of monomials ``coeff * prod_k x_k**e_k``."""

    terms: tuple[tuple[float, tuple[int, ...]], ...]
    dim: int

    @classmethod
    def from_terms(cls, terms: Sequence, dim: int) -> "Polynomial":
        out = []
        for t in terms:
            coeff, expo = t
            expo = tuple(int(e) for e in np.atleast_1d(expo))
            if len(expo) != dim:
                raise ValueError(f"monomial {t!r} has {len(expo)} exponents, expected {dim}")
            if any(e < 0 for e in expo):
                raise ValueError(f"negative exponent in monomial {t!r}")
            out.append((float(coeff), expo))
        return cls(tuple(out), dim)

    @classmethod
    def constant(cls, c: float, dim: int) -> "Polynomial":
        return cls(((float(c), (0,) * dim),), dim)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        x = np.asarray(points, dtype=float).reshape(-1, self.dim)
        out = np.zeros(len(x))
        for c, e in self.terms:
            term = np.full(len(x), c)
            for k, ek in enumerate(e):
                if ek:
                    term = term * x[:, k] ** ek
            out += term
        return out

    def to_list(self) -> list:
        return [[c, list(e)] for c, e in self.terms]


# --------------------------------------------------------------------- models


@dataclass(frozen=True)
class DiffusionModel:
    """SDE coefficients as polynomial tables.

    ``drift`` has one polynomial per coordinate; ``diffusion`` is the d x k
    matrix ``M`` of polynomials.
    """

    dim: int
    drift: tuple[Polynomial, ...]
    diffusion: tuple[tuple[Polynomial, ...], ...]
    preset: str | None = None

    def __post_init__(self):
        if len(self.drift) != self.dim:
            raise ValueError("drift needs one polynomial per coordinate")
        if len(self.diffusion) != self.dim:
            raise ValueError("diffusion matrix needs one row per coordinate")
        k = {len(row) for row in self.diffusion}
        if len(k) != 1:
            raise ValueError("diffusion matrix rows have different lengths")

    @property
    def noise_dim(self) -> int:
        return len(self.diffusion[0])

    def drift_at(self, points: np.ndarray) -> np.ndarray:
        x = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.stack([p(x) for p in self.drift], axis=1)

    def M_at(self, points: np.ndarray) -> np.ndarray:
        x = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return np.stack(
            [np.stack([p(x) for p in row], axis=1) for row in self.diffusion], axis=1
        )

    def sigma_at(self, points: np.ndarray) -> np.ndarray:
        M = self.M_at(points)
        return np.einsum("nik,njk->nij", M, M)

    # config round trip
    @classmethod
    def from_config(cls, block: dict[str, Any]) -> "DiffusionModel":
        """Build from ``{"preset": name}`` or ``{dim, drift, diffusion}``.

        ``drift`` is a list (per coordinate) of monomial lists
        ``[[coeff, [e1, .., ed]], ...]``; ``diffusion`` is a list of rows,
        each a list of monomial lists.
        """
        if "preset" in block and block["preset"] is not None:
            return preset(block["preset"])
        try:
            d = int(block["dim"])
            drift = tuple(Polynomial.from_terms(t, d) for t in block["drift"])
            diff = tuple(
                tuple(Polynomial.from_terms(t, d) for t in row) for row in block["diffusion"]
            )
        except KeyError as e:
            raise ValueError(f"model block is missing key {e.args[0]!r}") from None
        return cls(d, drift, diff)

    def to_config(self) -> dict[str, Any]:
        if self.preset is not None:
            return {"preset": self.preset}
        return {
            "dim": self.dim,
            "drift": [p.to_list() for p in self.drift],
            "diffusion": [[p.to_list() for p in row] for row in self.diffusion],
        }


def _ou(dim: int, name: str) -> DiffusionModel:
    r2 = math.sqrt(2.0)
    drift = []
    diff = []
    for k in range(dim):
        e = [0] * dim
        e[k] = 1
        drift.append(Polynomial.from_terms([(-1.0, e)], dim))
        diff.append(
            tuple(
                Polynomial.constant(r2 if j == k else 0.0, dim) for j in range(dim)
            )
        )
    return DiffusionModel(dim, tuple(drift), tuple(diff), preset=name)


def _doublewell() -> DiffusionModel:
    drift = (Polynomial.from_terms([(1.0, [1]), (-1.0, [3])], 1),)
    diff = ((Polynomial.constant(math.sqrt(2.0), 1),),)
    return DiffusionModel(1, drift, diff, preset="doublewell1d")


PRESETS = {
    "ou1d": lambda: _ou(1, "ou1d"),
    "doublewell1d": _doublewell,
    "ou2d": lambda: _ou(2, "ou2d"),
}


def preset(name: str) -> DiffusionModel:
    """Named model: ``ou1d`` (u=-x, M=sqrt2), ``doublewell1d`` (u=x-x^3), ``ou2d``."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ------------------------------------------------------- finite differences


# Stencils are written in differences of neighbours so that constants are
# annihilated exactly, not just up to round-off.


def _d1(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    df = np.diff(f, axis=0)
    out = np.empty_like(f)
    out[1:-1] = (df[1:] + df[:-1]) / (2.0 * h)
    out[0] = (3.0 * df[0] - df[1]) / (2.0 * h)
    out[-1] = (3.0 * df[-1] - df[-2]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def _d2(f: np.ndarray, h: float, axis: int) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    df = np.diff(f, axis=0)
    out = np.empty_like(f)
    out[1:-1] = (df[1:] - df[:-1]) / h**2
    if f.shape[0] >= 4:
        out[0] = (-2.0 * df[0] + 3.0 * df[1] - df[2]) / h**2
        out[-1] = (2.0 * df[-1] - 3.0 * df[-2] + df[-3]) / h**2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def grad(values: np.ndarray, grid: GridSpace) -> np.ndarray:
    """(n, d) gradient; central inside, second-order one-sided at the edges."""
    f = grid.as_field(np.asarray(values, dtype=float))
    cols = [_d1(f, grid.spacing[k], k).ravel() for k in range(grid.dim)]
    return np.stack(cols, axis=1)


def hessian(values: np.ndarray, grid: GridSpace) -> np.ndarray:
    """(n, d, d) Hessian with the same stencils as :func:`grad`."""
    f = grid.as_field(np.asarray(values, dtype=float))
    d = grid.dim
    H = np.empty((grid.n_nodes, d, d))
    for k in range(d):
        H[:, k, k] = _d2(f, grid.spacing[k], k).ravel()
        for l in range(k + 1, d):
            mixed = _d1(_d1(f, grid.spacing[k], k), grid.spacing[l], l).ravel()
            H[:, k, l] = mixed
            H[:, l, k] = mixed
    return H


def generator_apply(model: DiffusionModel, h: np.ndarray, grid: GridSpace) -> np.ndarray:
    """Apply ``D = u.grad + 1/2 tr(Sigma hess)`` to a grid function."""
    if min(grid.shape) < 3:
        raise ValueError("need at least 3 nodes per axis")
    u = model.drift_at(grid.points)
    S = model.sigma_at(grid.points)
    return np.einsum("nk,nk->n", u, grad(h, grid)) + 0.5 * np.einsum(
        "nij,nij->n", S, hessian(h, grid)
    )


def nonlinear_generator(model: DiffusionModel, F: np.ndarray, grid: GridSpace) -> np.ndarray:
    """Fleming's nonlinear generator ``exp(-F) D exp(F)`` in gradient form."""
    F = np.asarray(F, dtype=float)
    if not np.all(np.isfinite(F)):
        raise ValueError("F must be finite on the grid")
    u = model.drift_at(grid.points)
    S = model.sigma_at(grid.points)
    g = grad(F, grid)
    return (
        np.einsum("nk,nk->n", u, g)
        + 0.5 * np.einsum("nij,nij->n", S, hessian(F, grid))
        + 0.5 * np.einsum("ni,nij,nj->n", g, S, g)
    )


def discrete_nonlinear_generator(D, F: np.ndarray) -> np.ndarray:
    """``exp(-F) D exp(F)`` for a rate matrix ``D``, without forming ``exp(F)``.

    Row ``i`` is ``sum_j D_ij exp(F_j - F_i)``; only nonzero entries of ``D``
    are exponentiated.
    """
    A = np.asarray(getattr(D, "entries", D), dtype=float)
    F = np.asarray(F, dtype=float)
    diff = F[None, :] - F[:, None]
    nz = A != 0.0
    ex = np.exp(np.where(nz, diff, 0.0))
    return np.sum(np.where(nz, A * ex, 0.0), axis=1)


# ------------------------------------------------------------ certificates


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    """Outcome of checking ``H(V) <= -delta W + b 1_C`` on the grid.

    ``b_prime = b * sup_C v`` is the constant of the relaxed drift bound
    ``D v <= -v + b_prime``.
    """

    V: np.ndarray
    W: np.ndarray
    delta: float
    b: float
    C: np.ndarray
    b_prime: float
    passed: bool
    worst_slack: float
    worst_node: int
    tol: float
    slack: np.ndarray = field(repr=False)

    @property
    def b_v(self) -> float:
        return self.b_prime


def certify_dv3(
    model: DiffusionModel | None,
    V: np.ndarray,
    W: np.ndarray,
    delta: float,
    b: float,
    C,
    grid: GridSpace,
    tol: float | None = None,
    sup_V_on_C: float | None = None,
    generator=None,
) -> LyapunovCertificate:
    """Check the drift condition node by node.

    Parameters
    ----------
    model : diffusion whose nonlinear generator is evaluated by finite
        differences; ignored when ``generator`` is given
    V, W : node values; ``W >= 1`` is required
    delta, b : drift constants
    C : node indices of the compact set
    tol : slack tolerance; default ``10 h^2 max(1, max|H(V)|)``
    sup_V_on_C : exact supremum of ``V`` over the continuous set ``C`` when
        known; otherwise the maximum over the nodes of ``C`` is used for
        ``b_prime``
    generator : rate matrix to use in place of the finite-difference
        generator (``H(V) = exp(-V) D_h exp(V)``)
    """
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    C = np.asarray(C, dtype=np.int64)
    if delta <= 0:
        raise ValueError("delta must be positive")
    if np.any(W < 1.0):
        i = int(np.argmin(W))
        raise ValueError(f"W must be >= 1 everywhere; W={W[i]:.6g} at node {i} {grid.points[i].tolist()}")
    if C.size == 0:
        raise ValueError("C is empty")

    if generator is not None:
        HV = discrete_nonlinear_generator(generator, V)
    else:
        HV = nonlinear_generator(model, V, grid)
    ind = np.zeros(grid.n_nodes)
    ind[C] = 1.0
    slack = HV + delta * W - b * ind
    if tol is None:
        tol = 10.0 * grid.h**2 * max(1.0, float(np.max(np.abs(HV))))
    worst = int(np.argmax(slack))

    Vmin = float(V.min())
    supV = float(V[C].max()) if sup_V_on_C is None else float(sup_V_on_C)
    b_prime = b * math.exp(supV - Vmin)
    return LyapunovCertificate(
        V=V,
        W=W,
        delta=float(delta),
        b=float(b),
        C=C,
        b_prime=b_prime,
        passed=bool(slack[worst] <= tol),
        worst_slack=float(slack[worst]),
        worst_node=worst,
        tol=float(tol),
        slack=slack,
    )


# -------------------------------------------------------------- simulation


class SimulationError(RuntimeError):
    """A path left the finite numbers; ``step`` is the offending step."""

    def __init__(self, msg: str, step: int):
        super().__init__(msg)
        self.step = step


def _reflect(x: np.ndarray, box: np.ndarray) -> np.ndarray:
    lo, hi = box[:, 0], box[:, 1]
    width = hi - lo
    # fold into [lo, lo + 2w) then mirror the upper half
    y = np.mod(x - lo, 2.0 * width)
    y = np.where(y > width, 2.0 * width - y, y)
    return lo + y


def _box(box) -> np.ndarray | None:
    if box is None:
        return None
    if isinstance(box, GridSpace):
        return np.asarray(box.bounds, dtype=float)
    return np.atleast_2d(np.asarray(box, dtype=float))


def _euler(model, x, steps, rng, box, step0=0):
    """Advance an (m, d) state by per-path step lengths ``steps`` (m,)."""
    m = x.shape[0]
    dW = rng.standard_normal((m, model.noise_dim)) * np.sqrt(steps)[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        x = x + model.drift_at(x) * steps[:, None] + np.einsum("nik,nk->ni", model.M_at(x), dW)
        if box is not None:
            x = _reflect(x, box)
    if not np.all(np.isfinite(x)):
        raise SimulationError(f"non-finite state at step {step0}", step0)
    return x


def simulate_sde(
    model: DiffusionModel,
    x0,
    dt: float,
    T: float,
    seed: int,
    box=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama path on ``[0, T]``.

    Returns ``(times, path)`` with ``path`` of shape ``(len(times), d)``.
    With ``box`` (bounds or a grid) the path is reflected at the faces.
    """
    if dt <= 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    rng = substream(seed, "sde-path", 0)
    b = _box(box)
    n = int(math.ceil(T / dt - 1e-12))
    times = np.minimum(np.arange(n + 1) * dt, T)
    path = np.empty((n + 1, model.dim))
    x = np.asarray(x0, dtype=float).reshape(1, model.dim)
    path[0] = x[0]
    for k in range(n):
        s = np.array([times[k + 1] - times[k]])
        x = _euler(model, x, s, rng, b, step0=k + 1)
        path[k + 1] = x[0]
    return times, path


def sde_endpoints(
    model: DiffusionModel,
    x0,
    dt: float,
    n_paths: int,
    seed: int,
    T: float | None = None,
    horizon_rate: float | None = None,
    box=None,
    threads: int = 1,
) -> np.ndarray:
    """Endpoints of independent Euler-Maruyama paths.

    Exactly one of ``T`` (fixed horizon) or ``horizon_rate`` (each path runs
    to an independent Exponential(rate) time) must be given.  Paths are
    simulated in blocks with their own substreams, so the output depends
    only on ``seed`` and not on ``threads``.
    """
    if (T is None) == (horizon_rate is None):
        raise ValueError("give exactly one of T or horizon_rate")
    if dt <= 0:
        raise ValueError("dt must be positive")
    b = _box(box)
    x0 = np.asarray(x0, dtype=float).reshape(model.dim)
    name = "sde-fixed" if T is not None else "sde-exp"

    def block(rng, start, count):
        if T is not None:
            H = np.full(count, float(T))
        else:
            H = rng.exponential(1.0 / horizon_rate, size=count)
        x = np.tile(x0, (count, 1))
        t = np.zeros(count)
        k = 0
        active = np.flatnonzero(t < H)
        while active.size:
            s = np.minimum(dt, H[active] - t[active])
            k += 1
            x[active] = _euler(model, x[active], s, rng, b, step0=k)
            t[active] += s
            active = active[H[active] - t[active] > 1e-12]
        return x

    parts = run_blocks(block, n_paths, seed, name, threads)
    return np.concatenate(parts, axis=0)
