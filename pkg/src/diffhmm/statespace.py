"""Tensor grids on boxes in R^d, weighted norms and cell partitions.

Every kernel in the package is a dense matrix indexed by the nodes of a
:class:`GridSpace`.  Nodes are stored in C order (last axis fastest), so a
2-d grid of shape ``(nx, ny)`` flattens node ``(i, j)`` to ``i * ny + j``.

The weight ``v = exp(V)`` lives on the grid.  ``V`` is shifted so that its
minimum over the nodes is zero, which makes ``v >= 1`` with equality at the
minimiser.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GridSpace",
    "CellPartition",
    "build_grid",
    "weighted_sup_norm",
    "operator_norm_v",
    "measure_norm_v",
    "sublevel_set",
    "partition_compact",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GridSpace:
    """Regular tensor grid on a box with a Lyapunov weight.

    Attributes
    ----------
    bounds : tuple of (lo, hi) per axis
    shape : number of nodes per axis
    points : (n, d) array of node coordinates
    spacing : (d,) grid steps
    V : (n,) min-shifted Lyapunov function at the nodes
    weights_v : (n,) ``exp(V)``; all entries >= 1
    """

    bounds: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    points: np.ndarray
    spacing: np.ndarray
    V: np.ndarray
    weights_v: np.ndarray
    V_shift: float = 0.0

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def h(self) -> float:
        """Smallest grid step."""
        return float(np.min(self.spacing))

    @property
    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(lo, hi, m) for (lo, hi), m in zip(self.bounds, self.shape)
        ]

    def as_field(self, values: np.ndarray) -> np.ndarray:
        """Reshape a node vector to the tensor shape of the grid."""
        return np.asarray(values).reshape(self.shape)

    def nearest_node(self, x: Sequence[float] | np.ndarray) -> np.ndarray | int:
        """Index of the node nearest to each point (points outside are clipped)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1 and (x.ndim == 0 or x.shape[0] == self.dim)
        xs = np.atleast_2d(x.reshape(-1, self.dim))
        idx = np.zeros(len(xs), dtype=np.int64)
        for k, ((lo, _), m) in enumerate(zip(self.bounds, self.shape)):
            ik = np.rint((xs[:, k] - lo) / self.spacing[k]).astype(np.int64)
            ik = np.clip(ik, 0, m - 1)
            idx = idx * m + ik
        return int(idx[0]) if single else idx

    def with_weight(self, V: Callable | np.ndarray | None) -> "GridSpace":
        """Same nodes, different Lyapunov function."""
        return build_grid(self.bounds, self.shape, V)


@dataclass(frozen=True, eq=False)
class CellPartition:
    """Disjoint cells ``C_1..C_N`` inside a hull, plus the exterior ``C_0``."""

    cells: tuple[np.ndarray, ...]
    exterior: np.ndarray
    hull: np.ndarray
    n_nodes: int
    boxes: tuple[tuple[int, ...], ...] = field(default=())

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def labels(self) -> np.ndarray:
        """Per-node cell label: 0 for the exterior, ``i`` for ``C_i``."""
        lab = np.zeros(self.n_nodes, dtype=np.int64)
        for i, c in enumerate(self.cells, start=1):
            lab[c] = i
        return lab

    def indicator_matrix(self) -> np.ndarray:
        """(n_nodes, N) matrix whose column i is the indicator of ``C_{i+1}``."""
        S = np.zeros((self.n_nodes, self.n_cells))
        for i, c in enumerate(self.cells):
            S[c, i] = 1.0
        return S


def build_grid(
    bounds: Sequence[Sequence[float]],
    resolution: int | Sequence[int],
    V: Callable[[np.ndarray], np.ndarray] | np.ndarray | None = None,
) -> GridSpace:
    """Build a regular grid on ``bounds`` with weight ``v = exp(V - min V)``.

    Parameters
    ----------
    bounds : per-axis ``(lo, hi)``; a single pair is read as 1-d
    resolution : nodes per axis (>= 3)
    V : callable on an (n, d) array of points, an array of node values,
        or None for ``V = 0``

    Raises
    ------
    ValueError
        On a resolution below 3, an empty interval, or a non-finite ``V``
        (the message lists the offending node coordinates).
    """
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    d = b.shape[0]
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (d,))
    if np.any(res < 3):
        raise ValueError(f"resolution must be >= 3 per axis, got {tuple(res)}")
    if np.any(b[:, 1] <= b[:, 0]):
        raise ValueError(f"empty interval in bounds {b.tolist()}")

    axes = [np.linspace(lo, hi, m) for (lo, hi), m in zip(b, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    spacing = (b[:, 1] - b[:, 0]) / (res - 1)

    if V is None:
        Vn = np.zeros(len(points))
    elif callable(V):
        Vn = np.asarray(V(points if d > 1 else points[:, 0]), dtype=float).reshape(-1)
    else:
        Vn = np.asarray(V, dtype=float).reshape(-1)
    if Vn.shape != (len(points),):
        raise ValueError(f"V has {Vn.size} values for {len(points)} nodes")
    bad = ~np.isfinite(Vn)
    if bad.any():
        where = points[bad][:5].tolist()
        raise ValueError(f"V is not finite at {int(bad.sum())} node(s), e.g. {where}")

    shift = float(Vn.min())
    Vs = Vn - shift
    return GridSpace(
        bounds=tuple((float(lo), float(hi)) for lo, hi in b),
        shape=tuple(int(m) for m in res),
        points=_frozen(points),
        spacing=_frozen(spacing),
        V=_frozen(Vs),
        weights_v=_frozen(np.exp(Vs)),
        V_shift=shift,
    )


def _weights(grid: GridSpace | None, v: np.ndarray | None) -> np.ndarray:
    if v is not None:
        return np.asarray(v, dtype=float)
    if grid is None:
        raise ValueError("need a grid or an explicit weight vector")
    return grid.weights_v


def _entries(K) -> np.ndarray:
    return np.asarray(getattr(K, "entries", K), dtype=float)


def weighted_sup_norm(g, grid: GridSpace | None = None, v: np.ndarray | None = None) -> float:
    """``max_i |g_i| / v_i``."""
    w = _weights(grid, v)
    g = np.asarray(g, dtype=float)
    if g.shape != w.shape:
        raise ValueError(f"length mismatch: {g.shape} vs {w.shape}")
    return float(np.max(np.abs(g) / w))


def operator_norm_v(K, grid: GridSpace | None = None, v: np.ndarray | None = None) -> float:
    """Induced operator norm on the weighted sup space.

    For a kernel matrix the supremum over ``||h||_v <= 1`` is attained at
    ``h = sign(K_ij) v_j`` row by row, so the norm is
    ``max_i sum_j |K_ij| v_j / v_i``.
    """
    w = _weights(grid, v)
    A = _entries(K)
    if A.shape != (w.size, w.size):
        raise ValueError(f"kernel shape {A.shape} does not match {w.size} nodes")
    return float(np.max((np.abs(A) @ w) / w))


def measure_norm_v(mu, grid: GridSpace | None = None, v: np.ndarray | None = None) -> float:
    """Dual norm of a signed measure given by node masses: ``sum_j |mu_j| v_j``."""
    w = _weights(grid, v)
    mu = np.asarray(mu, dtype=float)
    if mu.shape != w.shape:
        raise ValueError(f"length mismatch: {mu.shape} vs {w.shape}")
    return float(np.abs(mu) @ w)


def sublevel_set(F, r: float) -> np.ndarray:
    """Node indices with ``F_i <= r``."""
    F = np.asarray(F, dtype=float)
    return np.flatnonzero(F <= r)


def partition_compact(grid: GridSpace, hull, cells_per_axis: int) -> CellPartition:
    """Split ``hull`` into uniform boxes over its bounding box.

    The bounding box of the hull nodes is cut into ``cells_per_axis`` equal
    intervals per axis.  A node lying on an interior edge goes to the cell
    on its lower side.  Boxes that catch no hull node are dropped; nodes
    outside the hull form the exterior ``C_0``.
    """
    if cells_per_axis < 1:
        raise ValueError("cells_per_axis must be >= 1")
    hull = np.unique(np.asarray(hull, dtype=np.int64))
    if hull.size == 0:
        raise ValueError("hull is empty")

    pts = grid.points[hull]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    width = np.where(hi > lo, (hi - lo) / cells_per_axis, 1.0)
    # ceil(t) - 1 sends an exact edge to the lower cell; the slack absorbs
    # rounding in the node coordinates.
    t = (pts - lo) / width
    box = np.ceil(t - 1e-9).astype(np.int64) - 1
    box = np.clip(box, 0, cells_per_axis - 1)

    flat = np.zeros(len(hull), dtype=np.int64)
    for k in range(grid.dim):
        flat = flat * cells_per_axis + box[:, k]
    order = np.unique(flat)
    cells = tuple(np.sort(hull[flat == key]) for key in order)
    boxes = tuple(tuple(int(c) for c in np.unravel_index(key, (cells_per_axis,) * grid.dim)) for key in order)

    inside = np.zeros(grid.n_nodes, dtype=bool)
    inside[hull] = True
    return CellPartition(
        cells=cells,
        exterior=np.flatnonzero(~inside),
        hull=hull,
        n_nodes=grid.n_nodes,
        boxes=boxes,
    )
