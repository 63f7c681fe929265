"""Rate-matrix discretization of the generator and resolvent kernels.

The drift is upwinded and the diffusion uses central differences, which
gives a matrix ``D_h`` with nonnegative off-diagonals and zero row sums:
the generator of a continuous-time chain on the grid nodes.  Transitions
that would leave the box are dropped (reflecting closure).  Resolvents are
then exact dense inverses ``R_a = (a I - D_h)^{-1}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.linalg as sla
from scipy.sparse.csgraph import connected_components

from .diffusion import DiffusionModel, sde_endpoints
from .statespace import GridSpace, operator_norm_v

__all__ = [
    "GeneratorMatrix",
    "KernelMatrix",
    "MCEstimate",
    "discretize_generator",
    "resolvent_direct",
    "resolvent_mc",
    "check_resolvent_equation",
    "resolvent_density",
    "write_kernel_csv",
    "read_kernel_csv",
    "stationary_distribution",
]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Dense rate matrix on the grid nodes."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(self.entries))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def row_sum_zero(self) -> bool:
        return bool(np.max(np.abs(self.entries.sum(axis=1))) <= 1e-12 * max(1.0, np.abs(self.entries).max()))

    def __matmul__(self, other):
        return self.entries @ np.asarray(getattr(other, "entries", other))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Dense kernel on the grid: resolvent, semigroup, finite-rank or jump resolvent."""

    entries: np.ndarray
    alpha: float | None = None
    kind: str = "resolvent"
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(self.entries))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def __matmul__(self, other):
        return self.entries @ np.asarray(getattr(other, "entries", other))


def discretize_generator(model: DiffusionModel, grid: GridSpace) -> GeneratorMatrix:
    """Upwind / central-difference rate matrix for the model's generator.

    In 2-d a cross-diffusion term ``Sigma_12 d_xy`` uses the seven-point
    stencil that keeps diagonal neighbours nonnegative; it can still force
    an axial rate negative when ``|Sigma_12|`` is large against the axial
    diffusion, in which case a ValueError names the node (refine the grid).
    """
    if grid.dim != model.dim:
        raise ValueError(f"model is {model.dim}-d but grid is {grid.dim}-d")
    n = grid.n_nodes
    shape = grid.shape
    h = grid.spacing
    u = model.drift_at(grid.points)
    S = model.sigma_at(grid.points)
    if np.any(np.linalg.eigvalsh(S) < -1e-12):
        i = int(np.argmin(np.linalg.eigvalsh(S).min(axis=1)))
        raise ValueError(f"Sigma is not PSD at node {i} {grid.points[i].tolist()}")

    multi = np.stack(np.unravel_index(np.arange(n), shape), axis=1)
    rates: dict[tuple[int, ...], np.ndarray] = {}

    def add(offset, r):
        offset = tuple(offset)
        rates[offset] = rates.get(offset, 0.0) + r

    d = grid.dim
    for k in range(d):
        e = np.zeros(d, dtype=int)
        e[k] = 1
        diff = S[:, k, k] / (2.0 * h[k] ** 2)
        add(e, diff + np.maximum(u[:, k], 0.0) / h[k])
        add(-e, diff + np.maximum(-u[:, k], 0.0) / h[k])
    for k, l in itertools.combinations(range(d), 2):
        a = S[:, k, l]
        c = np.abs(a) / (2.0 * h[k] * h[l])
        ek = np.zeros(d, dtype=int)
        el = np.zeros(d, dtype=int)
        ek[k] = 1
        el[l] = 1
        pos = a > 0
        add(ek + el, np.where(pos, c, 0.0))
        add(-ek - el, np.where(pos, c, 0.0))
        add(ek - el, np.where(pos, 0.0, c))
        add(-ek + el, np.where(pos, 0.0, c))
        for e in (ek, -ek, el, -el):
            add(e, -c)

    D = np.zeros((n, n))
    rows = np.arange(n)
    for offset, r in rates.items():
        r = np.broadcast_to(r, (n,))
        tgt = multi + np.asarray(offset)
        ok = np.all((tgt >= 0) & (tgt < np.asarray(shape)), axis=1)
        if not np.any(ok):
            continue
        j = np.ravel_multi_index(tgt[ok].T, shape)
        np.add.at(D, (rows[ok], j), r[ok])

    off = D.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < -1e-12):
        i, j = np.unravel_index(np.argmin(off), off.shape)
        raise ValueError(
            f"negative rate {off[i, j]:.3g} from node {i} {grid.points[i].tolist()}; refine the grid"
        )
    off = np.maximum(off, 0.0)
    np.fill_diagonal(off, -off.sum(axis=1))
    return GeneratorMatrix(off)


def resolvent_direct(Dh, alpha: float) -> KernelMatrix:
    """``(alpha I - D)^{-1}`` by LU factorisation."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    A = np.asarray(getattr(Dh, "entries", Dh), dtype=float)
    n = A.shape[0]
    lu = sla.lu_factor(alpha * np.eye(n) - A, check_finite=False)
    R = sla.lu_solve(lu, np.eye(n), check_finite=False)
    return KernelMatrix(R, alpha=float(alpha), kind="resolvent")


@dataclass(frozen=True)
class MCEstimate:
    """Binned endpoint frequencies with per-bin standard errors."""

    freq: np.ndarray
    stderr: np.ndarray
    n_paths: int

    def z_scores(self, p: np.ndarray) -> np.ndarray:
        """Standardised discrepancies against probabilities ``p``.

        The error scale is the binomial standard error of ``p`` itself, so
        empty bins still get a meaningful scale.
        """
        p = np.asarray(p, dtype=float)
        se = np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / self.n_paths)
        se = np.maximum(se, 1.0 / self.n_paths)
        return (self.freq - p) / se


def resolvent_mc(
    model: DiffusionModel,
    alpha: float,
    x0,
    n_paths: int,
    dt: float,
    seed: int,
    grid: GridSpace,
    threads: int = 1,
) -> MCEstimate:
    """Estimate ``alpha R_alpha(x0, .)`` as the law of the path at an Exp(alpha) time.

    Endpoints are binned to the nearest grid node; paths reflect at the box.
    """
    if alpha <= 0 or n_paths < 1:
        raise ValueError("need alpha > 0 and n_paths >= 1")
    ends = sde_endpoints(
        model, x0, dt, n_paths, seed, horizon_rate=alpha, box=grid, threads=threads
    )
    nodes = np.atleast_1d(grid.nearest_node(ends))
    freq = np.bincount(nodes, minlength=grid.n_nodes) / n_paths
    se = np.sqrt(freq * (1.0 - freq) / n_paths)
    return MCEstimate(freq, se, n_paths)


def check_resolvent_equation(
    Ra: KernelMatrix, Rb: KernelMatrix, grid: GridSpace, commuted: bool = False
) -> float:
    """Weighted norm of ``R_a - R_b - (b - a) R_b R_a``.

    With ``commuted=True`` returns ``|||R_b R_a - R_a R_b|||_v`` instead.
    """
    if Ra.alpha is None or Rb.alpha is None:
        raise ValueError("both kernels need a resolvent parameter")
    A, B = Ra.entries, Rb.entries
    if commuted:
        return operator_norm_v(B @ A - A @ B, grid)
    res = A - B - (Rb.alpha - Ra.alpha) * (B @ A)
    return operator_norm_v(res, grid)


def resolvent_density(R: KernelMatrix, grid: GridSpace) -> np.ndarray:
    """Density values ``r(x_i, x_j) = R_ij / cell volume``."""
    return R.entries / grid.cell_volume


def write_kernel_csv(K: KernelMatrix, path, grid: GridSpace | None = None) -> Path:
    """Dump a kernel row-major with a one-line ``#`` header of metadata."""
    path = Path(path)
    header = [f"kind={K.kind}", f"alpha={'' if K.alpha is None else repr(float(K.alpha))}", f"n={K.n}"]
    if grid is not None:
        header.append("bounds=" + ";".join(f"{lo!r}:{hi!r}" for lo, hi in grid.bounds))
        header.append("shape=" + "x".join(str(m) for m in grid.shape))
    with path.open("w", newline="\n") as fh:
        fh.write("# " + ",".join(header) + "\n")
        np.savetxt(fh, K.entries, delimiter=",", fmt="%.17g")
    return path


def read_kernel_csv(path) -> KernelMatrix:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        meta = dict(kv.split("=", 1) for kv in first[1:].strip().split(","))
        A = np.loadtxt(fh, delimiter=",", ndmin=2)
    alpha = float(meta["alpha"]) if meta.get("alpha") else None
    return KernelMatrix(A, alpha=alpha, kind=meta.get("kind", "resolvent"), meta=meta)


def stationary_distribution(Q) -> np.ndarray:
    """Unique probability vector ``pi`` with ``pi Q = 0`` for a rate matrix ``Q``.

    Raises ValueError when the chain has more than one closed communicating
    class (the null space of ``Q^T`` is then not one-dimensional).
    """
    A = np.asarray(getattr(Q, "entries", Q), dtype=float)
    n = A.shape[0]
    adj = (A > 0) & ~np.eye(n, dtype=bool)
    ncomp, lab = connected_components(adj, directed=True, connection="strong")
    leaving = np.zeros(ncomp, dtype=bool)
    src, dst = np.nonzero(adj)
    leaving[lab[src][lab[src] != lab[dst]]] = True
    if int(np.sum(~leaving)) != 1:
        raise ValueError(f"rate matrix has {int(np.sum(~leaving))} closed classes; stationary law is not unique")
    M = A.T.copy()
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = sla.solve(M, rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
