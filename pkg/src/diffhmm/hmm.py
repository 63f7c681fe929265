"""Finite-rank generators and their hidden Markov model realisation.

The approximating generator has the form

    E = kappa [ -I + 1_{C_0} (x) nu_1 + sum_ij r_ij 1_{C_i} (x) nu_j ],

with disjoint cells ``C_1..C_N``, their complement ``C_0``, probability
measures ``nu_j`` on ``C_j`` and a row-stochastic matrix ``r``.  The
process with generator ``E`` is a hidden chain on ``{0..N}`` with rate
matrix ``q = -kappa (I - r~)`` (``r~`` sends state 0 to state 1), whose
observations are drawn from ``nu_k`` at each jump into state ``k``.

Construction follows the truncate-then-average route: restrict a
probability kernel to a sublevel set, split that set into uniform cells,
average the kernel mass between cells, and normalise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from ._rng import run_blocks, substream
from .jump import JumpGenerator, RowSampler
from .resolvent import KernelMatrix, stationary_distribution
from .statespace import CellPartition, GridSpace, operator_norm_v, partition_compact

__all__ = [
    "TruncationPlan",
    "FiniteRankKernel",
    "FiniteRankGenerator",
    "HMMPath",
    "truncation_plan",
    "finite_rank_approx",
    "build_hmm_generator",
    "hidden_chain",
    "hmm_semigroup_coeffs",
    "hmm_resolvent",
    "simulate_hmm",
    "hmm_mc",
    "hmm_stationary",
    "write_generator",
    "read_generator",
]

JITTER = 1e-6


def _probability_kernel(K) -> np.ndarray:
    """``alpha R_alpha`` for resolvents, the entries otherwise."""
    A = np.asarray(getattr(K, "entries", K), dtype=float)
    if getattr(K, "kind", None) == "resolvent" and getattr(K, "alpha", None):
        return K.alpha * A
    if isinstance(K, JumpGenerator):
        return K.P
    return A


# --------------------------------------------------------------- truncation


@dataclass(frozen=True, eq=False)
class TruncationPlan:
    r0: float
    Cr0: np.ndarray
    W0: np.ndarray
    v0: np.ndarray
    epsilon_tail: float


def truncation_plan(R, V, W, r0: float, grid: GridSpace, w0: str = "quarter") -> TruncationPlan:
    """Restrict to ``C_r0 = {v <= r0} & {W <= r0}`` and measure what is lost.

    ``W0`` is ``W**(1/4)`` (``w0='quarter'``) or identically one
    (``w0='constant'``); ``v0 = W0 v``.  The recorded tail is
    ``||| I_W0 (R - I_C R I_C) I_W0 |||_v0`` where ``I_F`` multiplies by ``F``.
    """
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    v = np.exp(V - V.min())
    C = np.flatnonzero((v <= r0) & (W <= r0))
    if C.size == 0:
        raise ValueError(f"C_r0 is empty for r0={r0}")
    if w0 == "quarter":
        W0 = W**0.25
    elif w0 == "constant":
        W0 = np.ones_like(W)
    else:
        raise ValueError(f"unknown W0 choice {w0!r}")
    v0 = W0 * v

    A = np.asarray(getattr(R, "entries", R), dtype=float)
    mask = np.zeros(len(V), dtype=bool)
    mask[C] = True
    inner = np.where(mask[:, None] & mask[None, :], A, 0.0)
    diff = W0[:, None] * (A - inner) * W0[None, :]
    eps = operator_norm_v(diff, v=v0)
    return TruncationPlan(float(r0), C, W0, v0, eps)


# ------------------------------------------------------------- finite rank


@dataclass(frozen=True, eq=False)
class FiniteRankKernel:
    """``T = sum_ij theta_ij 1_{C_i} (x) nu_j`` with uniform ``nu_j`` on cells.

    ``raw_row_sums`` are the row masses of ``theta`` before normalisation.
    """

    cells: CellPartition
    theta: np.ndarray
    nu: np.ndarray
    raw_row_sums: np.ndarray
    achieved_error: float

    @property
    def N(self) -> int:
        return self.theta.shape[0]

    def dense(self) -> np.ndarray:
        """Grid matrix of ``T``; rows in ``C_0`` are zero."""
        S = self.cells.indicator_matrix()
        return S @ self.theta @ self.nu


def _uniform_nu(cells: CellPartition) -> np.ndarray:
    nu = np.zeros((cells.n_cells, cells.n_nodes))
    for j, c in enumerate(cells.cells):
        nu[j, c] = 1.0 / c.size
    return nu


def finite_rank_approx(
    R,
    plan: TruncationPlan | None,
    cells_per_axis: int,
    grid: GridSpace,
    hull=None,
) -> FiniteRankKernel:
    """Cell-average a probability kernel on the truncation set.

    ``theta_ij`` is the mean over ``x`` in ``C_i`` of the kernel mass of
    ``C_j``; rows are then normalised so ``T`` is probabilistic on the hull.
    Resolvents are first scaled to ``alpha R_alpha``.  The achieved error is
    ``||| I_W0 (P - T) I_W0 |||_v0`` with the plan's weights, or the plain
    ``v``-norm without a plan.
    """
    P = _probability_kernel(R)
    if hull is None:
        if plan is None:
            hull = np.arange(grid.n_nodes)
        else:
            hull = plan.Cr0
    cells = partition_compact(grid, hull, cells_per_axis)
    S = cells.indicator_matrix()
    sizes = S.sum(axis=0)
    theta = (S.T @ P @ S) / sizes[:, None]
    raw = theta.sum(axis=1)
    if np.any(raw <= 0):
        raise ValueError("a cell sends no kernel mass into the hull")
    theta = theta / raw[:, None]
    nu = _uniform_nu(cells)

    T = S @ theta @ nu
    if plan is None:
        err = operator_norm_v(P - T, grid)
    else:
        err = operator_norm_v(plan.W0[:, None] * (P - T) * plan.W0[None, :], v=plan.v0)
    return FiniteRankKernel(cells, theta, nu, raw, err)


# ------------------------------------------------------------- generators


@dataclass(frozen=True, eq=False)
class FiniteRankGenerator:
    """Hidden-chain description of ``E`` plus its grid matrix when available.

    ``q`` is the (N+1) x (N+1) rate matrix with state 0 standing for ``C_0``.
    ``nu``, ``cells`` and ``E`` are None for a bare hidden chain.
    """

    kappa: float
    r: np.ndarray
    q: np.ndarray
    nu: np.ndarray | None = None
    cells: CellPartition | None = None
    E: np.ndarray | None = field(default=None, repr=False)
    generator_gap: float | None = None
    jitter: float = 0.0

    @property
    def N(self) -> int:
        return self.r.shape[0]

    @property
    def reduced(self) -> np.ndarray:
        """``kappa (r - I)`` on the N cell states."""
        return self.kappa * (self.r - np.eye(self.N))


def _q_matrix(kappa: float, r: np.ndarray) -> np.ndarray:
    N = r.shape[0]
    rt = np.zeros((N + 1, N + 1))
    rt[0, 1] = 1.0
    rt[1:, 1:] = r
    q = -kappa * (np.eye(N + 1) - rt)
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def hidden_chain(kappa: float, r) -> FiniteRankGenerator:
    """A bare hidden chain with event rate ``kappa`` and jump matrix ``r``."""
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("r must be square")
    if np.any(r < 0) or not np.allclose(r.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("r must be row-stochastic")
    return FiniteRankGenerator(float(kappa), r, _q_matrix(kappa, r))


def _assemble_E(kappa: float, r: np.ndarray, nu: np.ndarray, cells: CellPartition) -> np.ndarray:
    S = cells.indicator_matrix()
    K = S @ r @ nu
    if cells.exterior.size:
        K[cells.exterior] = nu[0]
    E = kappa * K
    E[np.diag_indices_from(E)] -= kappa
    # exact zero row sums
    E[np.diag_indices_from(E)] -= E.sum(axis=1)
    return E


def build_hmm_generator(
    T: FiniteRankKernel, kappa: float, grid: GridSpace, Dk: JumpGenerator | None = None
) -> FiniteRankGenerator:
    """Turn a probabilistic finite-rank kernel of ``kappa R_kappa`` into ``E``.

    ``T`` must approximate the scaled kernel ``kappa R_kappa`` (build it from
    the jump generator), not ``R_1``.  Zero entries of ``r`` are removed by
    mixing with the uniform matrix at weight 1e-6.  With ``Dk`` the gap
    ``|||D_k - E|||_v`` is measured and stored.
    """
    r = np.array(T.theta, dtype=float)
    r = r / r.sum(axis=1, keepdims=True)
    jitter = 0.0
    if np.any(r <= 0.0):
        jitter = JITTER
        r = (1.0 - jitter) * r + jitter / r.shape[1]
        r = r / r.sum(axis=1, keepdims=True)
    E = _assemble_E(kappa, r, T.nu, T.cells)
    gap = None
    if Dk is not None:
        if not np.isclose(Dk.kappa, kappa):
            raise ValueError("jump generator and kappa disagree")
        gap = operator_norm_v(Dk.entries - E, grid)
    return FiniteRankGenerator(
        kappa=float(kappa),
        r=r,
        q=_q_matrix(kappa, r),
        nu=T.nu,
        cells=T.cells,
        E=E,
        generator_gap=gap,
        jitter=jitter,
    )


def hmm_semigroup_coeffs(gen: FiniteRankGenerator, p, t: float) -> np.ndarray:
    """Cell weights at time ``t`` of a law started at ``sum_i p_i nu_i``.

    ``p`` is a row vector, so the result is ``p exp(-kappa (I - r) t)``.
    """
    p = np.asarray(p, dtype=float)
    if t < 0:
        raise ValueError("t must be >= 0")
    if not np.isclose(p.sum(), 1.0):
        raise ValueError("p must sum to one")
    return p @ sla.expm(gen.reduced * t)


def hmm_resolvent(
    gen: FiniteRankGenerator,
    alpha: float,
    bv: float,
    eps0: float | None = None,
    on_invalid: str = "raise",
) -> KernelMatrix:
    """``T_alpha = (alpha I - E)^{-1}`` with the norm bound of its validity region.

    The bound ``(1 + bv) / (alpha - (1 + bv) eps0)`` holds for
    ``alpha > (1 + bv) eps0``, where ``eps0`` defaults to the measured gap
    ``|||D_k - E|||_v``.  Outside that region the call raises, unless
    ``on_invalid='report'``, in which case the inverse (which always exists
    for a finite rate matrix) is returned with ``meta['valid'] = False``.
    """
    if gen.E is None:
        raise ValueError("generator has no grid matrix")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if eps0 is None:
        eps0 = gen.generator_gap if gen.generator_gap is not None else 0.0
    threshold = (1.0 + bv) * eps0
    valid = alpha > threshold
    if not valid and on_invalid == "raise":
        raise ValueError(
            f"alpha={alpha} is not above (1+b_v)*eps0={threshold:.6g}; the inverse bound does not apply"
        )
    n = gen.E.shape[0]
    lu = sla.lu_factor(alpha * np.eye(n) - gen.E, check_finite=False)
    Ta = sla.lu_solve(lu, np.eye(n), check_finite=False)
    bound = (1.0 + bv) / (alpha - threshold) if valid else float("inf")
    return KernelMatrix(
        Ta,
        alpha=float(alpha),
        kind="finiteRank",
        meta={"threshold": threshold, "bound": bound, "valid": bool(valid), "eps0": eps0},
    )


# --------------------------------------------------------------- simulation


@dataclass(frozen=True)
class HMMPath:
    """Event times with the hidden state entered and the observation drawn.

    ``observations[i]`` is -1 when no observation exists yet (started in
    state 0 without an initial node).
    """

    times: np.ndarray
    states: np.ndarray
    observations: np.ndarray
    T: float


def _samplers(gen: FiniteRankGenerator):
    N = gen.N
    rt = np.zeros((N + 1, N + 1))
    rt[0, 1] = 1.0
    rt[1:, 1:] = gen.r
    hidden = RowSampler(rt)
    obs = RowSampler(gen.nu) if gen.nu is not None else None
    return hidden, obs


def simulate_hmm(gen: FiniteRankGenerator, i0: int, T: float, seed: int, x0: int | None = None) -> HMMPath:
    """One run of the hidden chain and its observation process on ``[0, T]``.

    Events arrive at rate ``kappa`` in every state.  At an event from state
    ``i`` the next state is drawn from row ``i`` of ``r~`` (self-transitions
    included) and, when the new state is ``k >= 1``, a fresh observation is
    drawn from ``nu_k``.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if not 0 <= i0 <= gen.N:
        raise ValueError(f"hidden state must be in 0..{gen.N}")
    hidden, obs = _samplers(gen)
    rng = substream(seed, "hmm-path", 0)
    if x0 is not None:
        y = int(x0)
    elif i0 >= 1 and obs is not None:
        y = int(obs.sample(np.array([i0 - 1]), rng.random(1))[0])
    else:
        y = -1
    times, states, ys = [0.0], [int(i0)], [y]
    t = rng.exponential(1.0 / gen.kappa)
    while t <= T:
        k = int(hidden.sample(np.array([states[-1]]), rng.random(1))[0])
        if obs is not None and k >= 1:
            y = int(obs.sample(np.array([k - 1]), rng.random(1))[0])
        times.append(t)
        states.append(k)
        ys.append(y)
        t += rng.exponential(1.0 / gen.kappa)
    return HMMPath(np.array(times), np.array(states), np.array(ys), float(T))


def hmm_mc(
    gen: FiniteRankGenerator,
    i0: int,
    t: float,
    n_runs: int,
    seed: int,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hidden states, observations and event counts at time ``t`` over many runs.

    Runs start in hidden state ``i0`` with an observation drawn from
    ``nu_{i0}`` (or -1 when ``i0 = 0``).
    """
    hidden, obs = _samplers(gen)
    kappa = gen.kappa

    def block(rng, start, count):
        s = np.full(count, int(i0), dtype=np.int64)
        if obs is not None and i0 >= 1:
            y = obs.sample(np.full(count, i0 - 1), rng.random(count))
        else:
            y = np.full(count, -1, dtype=np.int64)
        ev = np.zeros(count, dtype=np.int64)
        clock = rng.exponential(1.0 / kappa, size=count)
        active = np.flatnonzero(clock <= t)
        while active.size:
            s[active] = hidden.sample(s[active], rng.random(active.size))
            if obs is not None:
                y[active] = obs.sample(s[active] - 1, rng.random(active.size))
            ev[active] += 1
            clock[active] += rng.exponential(1.0 / kappa, size=active.size)
            active = active[clock[active] <= t]
        return s, y, ev

    parts = run_blocks(block, n_runs, seed, "hmm-law", threads)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


# ---------------------------------------------------------------- stationary


def hmm_stationary(gen: FiniteRankGenerator, grid: GridSpace | None = None) -> np.ndarray:
    """Invariant law of the HMM on the grid, ``sum_i p_i nu_i``.

    State 0 has no inflow (no ``nu`` charges ``C_0``), so the stationary
    hidden law lives on the cell states and solves ``p (r - I) = 0``.
    Returns the grid vector, or the hidden law when ``nu`` is absent.
    """
    p = stationary_distribution(gen.reduced)
    if gen.nu is None:
        return p
    w = p @ gen.nu
    return w / w.sum()


# ------------------------------------------------------------ serialisation


def write_generator(gen: FiniteRankGenerator, path) -> Path:
    """Write kappa, cells, nu, r and q as JSON."""
    if gen.cells is None or gen.nu is None:
        raise ValueError("only grid-backed generators can be written")
    doc = {
        "kappa": gen.kappa,
        "n_nodes": gen.cells.n_nodes,
        "cells": [c.tolist() for c in gen.cells.cells],
        "nu": [gen.nu[j, c].tolist() for j, c in enumerate(gen.cells.cells)],
        "r": gen.r.tolist(),
        "q": gen.q.tolist(),
        "jitter": gen.jitter,
        "generator_gap": gen.generator_gap,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1))
    return path


def read_generator(path) -> FiniteRankGenerator:
    doc = json.loads(Path(path).read_text())
    n = int(doc["n_nodes"])
    cells_idx = tuple(np.asarray(c, dtype=np.int64) for c in doc["cells"])
    hull = np.sort(np.concatenate(cells_idx))
    inside = np.zeros(n, dtype=bool)
    inside[hull] = True
    cells = CellPartition(cells_idx, np.flatnonzero(~inside), hull, n)
    nu = np.zeros((len(cells_idx), n))
    for j, (c, w) in enumerate(zip(cells_idx, doc["nu"])):
        nu[j, c] = w
    r = np.asarray(doc["r"], dtype=float)
    kappa = float(doc["kappa"])
    return FiniteRankGenerator(
        kappa=kappa,
        r=r,
        q=np.asarray(doc["q"], dtype=float),
        nu=nu,
        cells=cells,
        E=_assemble_E(kappa, r, nu, cells),
        generator_gap=doc.get("generator_gap"),
        jitter=float(doc.get("jitter", 0.0)),
    )
