"""The Poisson-jump approximation of a diffusion.

Jumps arrive at rate ``kappa``; each jump moves the state according to the
probability kernel ``kappa R_kappa``.  The generator is

    D_kappa = kappa (kappa R_kappa - I),

a bounded rate matrix, so its resolvents are honest inverses and its
semigroup is a matrix exponential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from ._rng import run_blocks, substream
from .resolvent import KernelMatrix
from .statespace import GridSpace, operator_norm_v

__all__ = [
    "JumpGenerator",
    "JumpDriftCertificate",
    "RRApproxCheck",
    "RowSampler",
    "JumpPath",
    "jump_generator",
    "jump_resolvent_series",
    "verify_rrapprox_bound",
    "uniformization",
    "jump_semigroup",
    "simulate_jump",
    "jump_law_mc",
    "jump_drift_certificate",
    "write_bound_table",
]


@dataclass(frozen=True, eq=False)
class JumpGenerator:
    """``D_kappa = kappa (P - I)`` with ``P = kappa R_kappa`` row-stochastic."""

    kappa: float
    entries: np.ndarray
    P: np.ndarray
    source: KernelMatrix = field(repr=False)

    def __post_init__(self):
        for name in ("entries", "P"):
            a = np.array(getattr(self, name), dtype=float, copy=True)
            a.flags.writeable = False
            object.__setattr__(self, name, a)


def jump_generator(Rk: KernelMatrix, kappa: float) -> JumpGenerator:
    """Generator of the jump process built on the resolvent ``R_kappa``.

    Rows of ``kappa R_kappa`` are renormalised to sum to exactly one first,
    which removes solver round-off from every stochastic identity
    downstream.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if Rk.alpha is None or not math.isclose(Rk.alpha, kappa, rel_tol=1e-12):
        raise ValueError(f"resolvent parameter {Rk.alpha} does not match kappa={kappa}")
    P = kappa * Rk.entries
    P = P / P.sum(axis=1, keepdims=True)
    n = P.shape[0]
    return JumpGenerator(float(kappa), kappa * (P - np.eye(n)), P, Rk)


def jump_resolvent_series(
    Dk: JumpGenerator,
    alpha: float,
    grid: GridSpace,
    tol: float = 1e-10,
    max_terms: int = 10_000,
) -> KernelMatrix:
    """Resolvent of the jump process, by power series and by direct inverse.

    The series in powers of ``kappa R_kappa``::

        R_{k,a} = k/(k+a)^2 * sum_{n >= -1} (1 + a/k)^(-n) (k R_k)^(n+1)

    is summed until the weighted norm of the next term, times the geometric
    tail factor ``1/(1 - c)`` with ``c = kappa/(kappa + alpha)``, drops below
    ``tol``.
    The returned kernel is the direct inverse ``(a I - D_k)^{-1}``; the
    weighted gap between the two routes is kept in ``meta['series_gap']``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    k = Dk.kappa
    P = Dk.P
    n = P.shape[0]
    pref = k / (k + alpha) ** 2
    c = 1.0 / (1.0 + alpha / k)

    total = (1.0 + alpha / k) * np.eye(n)  # the n = -1 term
    Pn = P.copy()  # (k R_k)^(m+1) at step m
    weight = 1.0
    terms = 1
    while True:
        term = weight * Pn
        total += term
        terms += 1
        weight *= c
        Pn = Pn @ P
        if pref * weight * operator_norm_v(Pn, grid) / (1.0 - c) < tol:
            break
        if terms >= max_terms:
            raise RuntimeError(f"series did not converge within {max_terms} terms")
    series = pref * total

    lu = sla.lu_factor(alpha * np.eye(n) - Dk.entries, check_finite=False)
    direct = sla.lu_solve(lu, np.eye(n), check_finite=False)
    gap = operator_norm_v(series - direct, grid)
    return KernelMatrix(
        direct,
        alpha=float(alpha),
        kind="jumpResolvent",
        meta={"kappa": k, "series_gap": gap, "terms": terms, "series": series},
    )


@dataclass(frozen=True)
class RRApproxCheck:
    kappa: float
    alpha: float
    measured: float
    bound: float
    passed: bool


def verify_rrapprox_bound(
    Ra: KernelMatrix, Rka: KernelMatrix, b_prime: float, kappa: float, grid: GridSpace
) -> RRApproxCheck:
    """Compare ``|||R_{k,a} - R_a|||_v`` with ``4 (1 + b') / k``; needs ``a <= k``."""
    alpha = Ra.alpha
    if alpha is None or Rka.alpha is None or not math.isclose(alpha, Rka.alpha):
        raise ValueError("kernels must share the resolvent parameter")
    if alpha > kappa:
        raise ValueError(f"alpha={alpha} exceeds kappa={kappa}; the bound needs alpha <= kappa")
    measured = operator_norm_v(Rka.entries - Ra.entries, grid)
    bound = 4.0 * (1.0 + b_prime) / kappa
    return RRApproxCheck(float(kappa), float(alpha), measured, bound, bool(measured <= bound + 1e-9))


def uniformization(P: np.ndarray, rate: float, t: float, tol: float = 1e-15) -> np.ndarray:
    """``exp(t rate (P - I))`` as a Poisson mixture of powers of ``P``.

    Terms are added until the remaining Poisson tail mass is below ``tol``.
    Intended for moderate ``rate * t`` (weights underflow beyond ~700).
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    lam = rate * t
    if lam == 0.0:
        return np.eye(n)
    if lam > 700:
        raise ValueError("rate * t too large for plain uniformization")
    w = math.exp(-lam)
    acc = w * np.eye(n)
    mass = w
    Pk = np.eye(n)
    k = 0
    while 1.0 - mass > tol and k < 10 * (lam + 50):
        k += 1
        Pk = Pk @ P
        w *= lam / k
        acc += w * Pk
        mass += w
    return acc


def jump_semigroup(Dk: JumpGenerator, t: float, method: str = "expm") -> KernelMatrix:
    """Transition kernel ``exp(t D_k)``.

    ``method='expm'`` uses scaling and squaring and falls back to
    uniformization if the result is not a valid stochastic matrix;
    ``method='uniformization'`` forces the Poisson-mixture route.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if method == "uniformization":
        M = uniformization(Dk.P, Dk.kappa, t)
    elif method == "expm":
        M = sla.expm(t * Dk.entries)
        if not np.all(np.isfinite(M)) or M.min() < -1e-10:
            M = uniformization(Dk.P, Dk.kappa, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    return KernelMatrix(M, alpha=None, kind="semigroup", meta={"t": t, "kappa": Dk.kappa})


class RowSampler:
    """Draw the next node from rows of a stochastic matrix.

    Rows are stacked into one increasing array (row ``s`` shifted by ``s``)
    so a whole batch is a single ``searchsorted``.
    """

    def __init__(self, P: np.ndarray):
        P = np.asarray(P, dtype=float)
        cdf = np.cumsum(np.clip(P, 0.0, None), axis=1)
        cdf /= cdf[:, -1:]
        cdf[:, -1] = 1.0
        self.n_rows, self.n_cols = P.shape
        self._flat = (cdf + np.arange(self.n_rows)[:, None]).ravel()

    def sample(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        pos = np.searchsorted(self._flat, states + u, side="right")
        return np.minimum(pos - states * self.n_cols, self.n_cols - 1)


@dataclass(frozen=True)
class JumpPath:
    """Piecewise-constant path: ``nodes[i]`` holds on ``[times[i], times[i+1])``."""

    times: np.ndarray
    nodes: np.ndarray
    T: float


def simulate_jump(sampler: RowSampler | JumpGenerator, kappa: float, x0: int, T: float, seed: int) -> JumpPath:
    """One path: Exp(kappa) holding times, jumps drawn from the sampler row."""
    if T <= 0:
        raise ValueError("T must be positive")
    if isinstance(sampler, JumpGenerator):
        sampler = RowSampler(sampler.P)
    rng = substream(seed, "jump-path", 0)
    times = [0.0]
    nodes = [int(x0)]
    t = rng.exponential(1.0 / kappa)
    while t <= T:
        nxt = sampler.sample(np.array([nodes[-1]]), rng.random(1))[0]
        times.append(t)
        nodes.append(int(nxt))
        t += rng.exponential(1.0 / kappa)
    return JumpPath(np.array(times), np.array(nodes, dtype=np.int64), float(T))


def jump_law_mc(
    sampler: RowSampler | JumpGenerator,
    kappa: float,
    x0: int,
    t: float,
    n_runs: int,
    seed: int,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Positions at time ``t`` and jump counts of ``n_runs`` independent paths."""
    if isinstance(sampler, JumpGenerator):
        sampler = RowSampler(sampler.P)

    def block(rng, start, count):
        pos = np.full(count, int(x0), dtype=np.int64)
        njump = np.zeros(count, dtype=np.int64)
        clock = rng.exponential(1.0 / kappa, size=count)
        active = np.flatnonzero(clock <= t)
        while active.size:
            pos[active] = sampler.sample(pos[active], rng.random(active.size))
            njump[active] += 1
            clock[active] += rng.exponential(1.0 / kappa, size=active.size)
            active = active[clock[active] <= t]
        return pos, njump

    parts = run_blocks(block, n_runs, seed, "jump-law", threads)
    return np.concatenate([p for p, _ in parts]), np.concatenate([j for _, j in parts])


@dataclass(frozen=True)
class JumpDriftCertificate:
    """``D_k v <= -delta_k v + b_k`` with the closed-form constants.

    ``verified`` is None when no numerical check was requested.
    """

    delta_kappa: float
    b_kappa: float
    verified: bool | None = None
    worst_node: int | None = None
    worst_slack: float | None = None


def jump_drift_certificate(
    delta: float,
    b: float,
    kappa: float,
    Dk: JumpGenerator | None = None,
    grid: GridSpace | None = None,
    tol: float = 1e-8,
) -> JumpDriftCertificate:
    """Drift constants of the jump process from those of the diffusion.

    From ``D v <= -delta v + b`` one gets ``D_k v <= -delta_k v + b_k`` with
    ``delta_k = delta k / (delta + k)`` and ``b_k = k b / (delta + k)``.
    ``b`` must be the constant of the relaxed bound on ``v`` itself (the
    ``b_prime`` of a drift certificate) for the numerical check to be
    meaningful.  The check compares ``(D_k v + delta_k v - b_k) / v``
    against ``tol`` at every node.
    """
    if delta <= 0 or b <= 0 or kappa <= 0:
        raise ValueError("delta, b and kappa must all be positive")
    dk = delta * kappa / (delta + kappa)
    bk = kappa * b / (delta + kappa)
    if Dk is None or grid is None:
        return JumpDriftCertificate(dk, bk)
    v = grid.weights_v
    slack = (Dk.entries @ v + dk * v - bk) / v
    i = int(np.argmax(slack))
    return JumpDriftCertificate(dk, bk, bool(slack[i] <= tol), i, float(slack[i]))


def write_bound_table(rows: list[RRApproxCheck], path) -> Path:
    """CSV with columns kappa, alpha, measured, bound, passed."""
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        fh.write("kappa,alpha,measured,bound,passed\n")
        for r in rows:
            fh.write(f"{r.kappa:.17g},{r.alpha:.17g},{r.measured:.17g},{r.bound:.17g},{int(r.passed)}\n")
    return path
