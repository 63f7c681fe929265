"""Comparisons between the diffusion, its jump approximation and the HMM.

Everything here is measured in the weighted norms of :mod:`statespace`:
resolvent gaps ``|||R_a - T_a|||_v``, semigroup gaps ``||P^t g - Q^t g||_v``,
invariant-measure gaps ``||pi - varpi||_v``, spectra, fitted ergodicity
rates, and the converse construction that turns finite-rank witnesses back
into a drift certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.stats import norm

from .diffusion import DiffusionModel, LyapunovCertificate, certify_dv3, sde_endpoints
from .hmm import (
    FiniteRankGenerator,
    FiniteRankKernel,
    build_hmm_generator,
    finite_rank_approx,
    hmm_resolvent,
    hmm_stationary,
)
from .jump import JumpGenerator, jump_generator
from .resolvent import KernelMatrix, discretize_generator, resolvent_direct, stationary_distribution
from .statespace import GridSpace, measure_norm_v, operator_norm_v, weighted_sup_norm

__all__ = [
    "ApproximationReport",
    "SemigroupComparison",
    "SpectrumReport",
    "ErgodicityEstimate",
    "ConverseResult",
    "alpha_grid",
    "compare_resolvents",
    "compare_semigroups",
    "invariant_measure",
    "occupation_histogram",
    "gaussian_oracle",
    "density_gap",
    "compare_invariant",
    "spectrum",
    "hausdorff",
    "ergodicity_rate",
    "build_witnesses",
    "converse_lyapunov",
    "power_bound_check",
    "approximate",
]

ATOL = 1e-9


def _A(K) -> np.ndarray:
    return np.asarray(getattr(K, "entries", K), dtype=float)


def alpha_grid(delta: float) -> list[float]:
    """``[delta, 1, 1/delta]``, the endpoints of ``[delta, 1/delta]`` and its centre."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return [float(delta), 1.0, 1.0 / delta]


# ---------------------------------------------------------------- resolvents


def compare_resolvents(R_family: dict, T_family: dict, grid: GridSpace) -> dict[float, float]:
    """``|||R_a - T_a|||_v`` for every ``a`` present in both families."""
    common = sorted(set(R_family) & set(T_family))
    if not common:
        raise ValueError("families share no resolvent parameter")
    return {a: operator_norm_v(_A(R_family[a]) - _A(T_family[a]), grid) for a in common}


# ---------------------------------------------------------------- semigroups


@dataclass(frozen=True)
class SemigroupComparison:
    """Gaps per time point and the budget they are held against.

    ``budget_scale`` is ``||g||_v + ||D^2 g||_v``; ``jump_gaps`` and
    ``hmm_gaps`` split the total into the diffusion-to-jump and jump-to-HMM
    stages when a jump generator was supplied.
    """

    times: tuple
    gaps: np.ndarray
    budget_scale: float
    jump_gaps: np.ndarray | None = None
    hmm_gaps: np.ndarray | None = None


def _flow(A: np.ndarray, g: np.ndarray, t: float) -> np.ndarray:
    if t == 0.0:
        return g.copy()
    # dense expm: the sparse Krylov route estimates norms with random probes
    return sla.expm(t * A) @ g


def compare_semigroups(
    P,
    Q,
    g: np.ndarray,
    times: Sequence[float],
    Dh,
    grid: GridSpace,
    Pk=None,
) -> SemigroupComparison:
    """``||exp(tP) g - exp(tQ) g||_v`` for each ``t``, with generators ``P``, ``Q``.

    ``Dh`` supplies ``D^2 g = D_h (D_h g)`` for the budget.  With ``Pk`` (the
    jump generator) the two stage gaps are reported as well.
    """
    g = np.asarray(g, dtype=float)
    A, B, D = _A(P), _A(Q), _A(Dh)
    scale = weighted_sup_norm(g, grid) + weighted_sup_norm(D @ (D @ g), grid)
    gaps, jg, hg = [], [], []
    for t in times:
        pg = _flow(A, g, t)
        qg = _flow(B, g, t)
        gaps.append(weighted_sup_norm(pg - qg, grid))
        if Pk is not None:
            kg = _flow(_A(Pk), g, t)
            jg.append(weighted_sup_norm(pg - kg, grid))
            hg.append(weighted_sup_norm(kg - qg, grid))
    return SemigroupComparison(
        tuple(float(t) for t in times),
        np.array(gaps),
        scale,
        np.array(jg) if Pk is not None else None,
        np.array(hg) if Pk is not None else None,
    )


# ---------------------------------------------------------- invariant laws


def invariant_measure(Dh, grid: GridSpace | None = None) -> np.ndarray:
    """Probability vector with ``pi D_h = 0``; raises if it is not unique."""
    return stationary_distribution(Dh)


def occupation_histogram(
    model: DiffusionModel,
    grid: GridSpace,
    x0,
    dt: float,
    T: float,
    n_paths: int,
    seed: int,
    threads: int = 1,
) -> np.ndarray:
    """Empirical law of ``X(T)`` over many paths, binned to the nearest node.

    For ``T`` long against the relaxation time this estimates ``pi``.
    """
    ends = sde_endpoints(model, x0, dt, n_paths, seed, T=T, box=grid, threads=threads)
    nodes = np.atleast_1d(grid.nearest_node(ends))
    return np.bincount(nodes, minlength=grid.n_nodes) / n_paths


def gaussian_oracle(grid: GridSpace, mean: float = 0.0, sd: float = 1.0) -> np.ndarray:
    """Normal law binned by the midpoint rule: ``phi(x_i) h``, renormalised on the grid."""
    if grid.dim != 1:
        raise ValueError("the Gaussian oracle is 1-d")
    w = norm.pdf(grid.points[:, 0], loc=mean, scale=sd) * grid.cell_volume
    return w / w.sum()


def density_gap(pi: np.ndarray, ref: np.ndarray, grid: GridSpace) -> float:
    """``max |pi_i - ref_i| / (h v_i)``: the weighted sup distance of the densities."""
    return weighted_sup_norm((np.asarray(pi) - np.asarray(ref)) / grid.cell_volume, grid)


def compare_invariant(pi: np.ndarray, varpi: np.ndarray, grid: GridSpace) -> float:
    """``||pi - varpi||_v`` in the measure norm."""
    return measure_norm_v(np.asarray(pi) - np.asarray(varpi), grid)


# ------------------------------------------------------------------ spectra


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalues sorted by modulus (descending), ties by real part."""

    eigenvalues: np.ndarray
    operator: str
    rank: int
    reduced: np.ndarray | None = None


def _sort_spectrum(lam: np.ndarray, descending: bool = True) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    mod = np.round(np.abs(lam), 12)
    re = np.round(lam.real, 12)
    if descending:
        order = np.lexsort((-re, -mod))
    else:
        order = np.lexsort((-re, mod))
    return lam[order]


def spectrum(K, operator: str | None = None, alpha: float | None = None, descending: bool = True) -> SpectrumReport:
    """Full eigenvalue list of a kernel, generator or finite-rank generator.

    For a :class:`FiniteRankGenerator` the matrix is its grid generator and
    the N x N spectrum of ``kappa (r - I)`` is added; with ``alpha`` given
    the reduced values are mapped to the resolvent ``lambda -> 1/(alpha - lambda)``.
    Generators are usually read with ``descending=False`` so that eigenvalues
    nearest zero come first.
    """
    if isinstance(K, FiniteRankGenerator):
        red = np.linalg.eigvals(K.reduced)
        if alpha is not None:
            red = 1.0 / (alpha - red)
        red = _sort_spectrum(red, descending if alpha is not None else False)
        A = K.E
        if A is None:
            return SpectrumReport(red, operator or "hiddenChain", K.N, red)
        lam = np.linalg.eigvals(A)
        return SpectrumReport(_sort_spectrum(lam, descending), operator or "hmmGenerator", K.N, red)
    A = _A(K)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("spectrum needs a square matrix")
    lam = np.linalg.eigvals(A)
    tag = operator or getattr(K, "kind", "matrix")
    return SpectrumReport(_sort_spectrum(lam, descending), tag, A.shape[0])


def hausdorff(a, b) -> float:
    """Hausdorff distance between two finite sets of complex numbers."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


# ---------------------------------------------------------------- ergodicity


@dataclass(frozen=True)
class ErgodicityEstimate:
    """Fit of ``log |||P^t - 1 (x) pi|||_v ~ B0 - b0 t``."""

    b0: float
    B0: float
    fit_residual: float
    norms: np.ndarray
    times: np.ndarray
    degenerate: bool = False

    @property
    def decaying(self) -> bool:
        return (not self.degenerate) and self.b0 > 0


def ergodicity_rate(generator, pi: np.ndarray, grid: GridSpace, times: Sequence[float]) -> ErgodicityEstimate:
    """Least-squares decay rate of the distance to equilibrium.

    ``generator`` may also be a callable ``t -> P^t`` returning a matrix.
    The fit residual is the root mean square in log units.  If any norm is
    zero (the semigroup already equals ``1 (x) pi``) the fit is flagged
    degenerate.
    """
    times = np.asarray(times, dtype=float)
    if times.size < 3:
        raise ValueError("need at least 3 time points")
    pi = np.asarray(pi, dtype=float)
    n = pi.size
    norms = []
    for t in times:
        Pt = generator(t) if callable(generator) else sla.expm(t * _A(generator))
        norms.append(operator_norm_v(_A(Pt) - np.ones((n, 1)) * pi[None, :], grid))
    norms = np.array(norms)
    if np.any(norms <= 1e-14):
        return ErgodicityEstimate(0.0, -math.inf, math.inf, norms, times, degenerate=True)
    y = np.log(norms)
    X = np.column_stack([np.ones_like(times), -times])
    (B0, b0), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.sqrt(np.mean((X @ [B0, b0] - y) ** 2)))
    return ErgodicityEstimate(float(b0), float(B0), resid, norms, times)


# ------------------------------------------------------------------ converse


@dataclass(frozen=True, eq=False)
class ConverseResult:
    """Output of the converse construction.

    ``v_minus_norm`` is ``||v_-||_v`` and ``bound`` is ``|||R|||_v + 1``.
    """

    u_minus: np.ndarray
    v_minus: np.ndarray
    V_minus: np.ndarray
    W: np.ndarray
    W_minus: np.ndarray
    C: np.ndarray
    certificate: LyapunovCertificate
    v_minus_norm: float
    bound: float
    witness_gaps: tuple

    @property
    def bound_slack(self) -> float:
        return self.bound - self.v_minus_norm


def _dense(T) -> np.ndarray:
    if isinstance(T, FiniteRankKernel):
        return T.dense()
    return _A(T)


def build_witnesses(R: KernelMatrix, grid: GridSpace, n_max: int = 4, start_cells: int = 2, max_cells: int | None = None):
    """Finite-rank witnesses ``T_n`` with ``|||R - T_n|||_v <= 2^-n``, n = 1..n_max.

    Each ``T_n`` cell-averages ``R`` over the whole grid (``Y_n`` = all
    nodes); the cell count is doubled until the gap is met.  ``R`` should be
    ``R_1`` so that the cell-averaged probability kernel and ``R`` agree in
    scale.
    """
    if R.alpha is None or not math.isclose(R.alpha, 1.0):
        raise ValueError("witnesses are built from R_1")
    if max_cells is None:
        max_cells = max(grid.shape)
    hull = np.arange(grid.n_nodes)
    out = []
    cells = start_cells
    for n in range(1, n_max + 1):
        target = 2.0**-n
        while True:
            T = finite_rank_approx(R, None, cells, grid, hull=hull)
            gap = operator_norm_v(R.entries - T.dense(), grid)
            if gap <= target:
                break
            if cells >= max_cells:
                raise RuntimeError(f"witness {n}: gap {gap:.3g} above {target:.3g} at {cells} cells")
            cells = min(2 * cells, max_cells)
        out.append((hull, T))
    return out


def converse_lyapunov(
    R: KernelMatrix,
    witnesses: Sequence,
    grid: GridSpace,
    Dh=None,
    model: DiffusionModel | None = None,
    tol: float | None = None,
) -> ConverseResult:
    """Drift certificate rebuilt from finite-rank witnesses.

    With ``v_n = v 1_{Y_n^c}``:  ``u_- = v + sum_n v_n``, ``v_- = R u_-``,
    ``V_- = log v_-`` and ``W = max(u_-/v_- - 1, 1)``, ``C = {W <= 1}``.
    Since ``D R_1 = R_1 - I``, ``H(V_-) = 1 - u_-/v_-`` and the pair
    satisfies the drift condition with ``delta = 1``, ``b = 2``.  The check
    uses the rate matrix ``Dh`` when given (exact on the grid) and the
    finite-difference nonlinear generator of ``model`` otherwise.  On a grid
    every node function is its own largest minorant, so ``W_- = W``.
    """
    if R.alpha is None or not math.isclose(R.alpha, 1.0):
        raise ValueError("the converse construction uses R_1")
    A = R.entries
    v = grid.weights_v
    gaps = []
    u = v.copy()
    for n, (Y, T) in enumerate(witnesses, start=1):
        gap = operator_norm_v(A - _dense(T), grid)
        if gap > 2.0**-n + ATOL:
            raise ValueError(f"witness {n} has gap {gap:.6g} > 2^-{n}")
        gaps.append(gap)
        out = np.ones(grid.n_nodes, dtype=bool)
        out[np.asarray(Y, dtype=np.int64)] = False
        u = u + v * out
    vm = A @ u
    Vm = np.log(vm)
    W = np.maximum(u / vm - 1.0, 1.0)
    C = np.flatnonzero(W <= 1.0)
    cert = certify_dv3(model, Vm, W, 1.0, 2.0, C, grid, tol=tol, generator=Dh)
    vnorm = weighted_sup_norm(vm, grid)
    bound = operator_norm_v(A, grid) + 1.0
    return ConverseResult(u, vm, Vm, W, W.copy(), C, cert, vnorm, bound, tuple(gaps))


# ------------------------------------------------------------- power bound


def power_bound_check(R_family: dict, b_prime: float, n_list: Iterable[int], grid: GridSpace) -> list[dict]:
    """``|||(a R_a)^n|||_v`` against ``1 + b'`` for each ``a`` and ``n``."""
    rows = []
    for a in sorted(R_family):
        P = a * _A(R_family[a])
        for n in sorted(n_list):
            val = operator_norm_v(np.linalg.matrix_power(P, n), grid)
            rows.append(
                {"alpha": a, "n": n, "norm": val, "bound": 1.0 + b_prime, "passed": val <= 1.0 + b_prime + ATOL}
            )
    return rows


# ----------------------------------------------------------------- pipeline


@dataclass(frozen=True, eq=False)
class ApproximationReport:
    """Everything measured by one run of the approximation ladder."""

    alpha_grid: tuple
    resolvent_gaps: dict
    semigroup: SemigroupComparison
    measure_gap: float
    epsilon_target: float
    kappa: float
    n_cells: int
    generator_gap: float
    resolvent_valid: dict
    threshold: float
    objects: dict = field(default_factory=dict, repr=False)

    @property
    def semigroup_passed(self) -> bool:
        return bool(np.max(self.semigroup.gaps) <= self.epsilon_target * self.semigroup.budget_scale + ATOL)

    @property
    def resolvent_passed(self) -> bool:
        return max(self.resolvent_gaps.values()) <= self.epsilon_target + ATOL

    @property
    def measure_passed(self) -> bool:
        return self.measure_gap <= self.epsilon_target + ATOL

    @property
    def passed(self) -> bool:
        return self.resolvent_passed and self.semigroup_passed and self.measure_passed


def approximate(
    model: DiffusionModel,
    grid: GridSpace,
    kappa: float,
    cells_per_axis: int,
    alphas: Sequence[float],
    g: np.ndarray,
    times: Sequence[float],
    epsilon: float,
    b_v: float,
    Dh=None,
) -> ApproximationReport:
    """Run diffusion -> jump process -> HMM and measure every gap.

    The HMM is built from ``kappa R_kappa`` with cells covering the whole
    grid, ``T_a`` is computed even outside the validity region of its norm
    bound (that region is recorded per ``a``), and the semigroup comparison
    uses ``g`` at the given times.
    """
    Dh = discretize_generator(model, grid) if Dh is None else Dh
    Rk = resolvent_direct(Dh, kappa)
    Dk = jump_generator(Rk, kappa)
    T = finite_rank_approx(Dk, None, cells_per_axis, grid)
    gen = build_hmm_generator(T, kappa, grid, Dk)

    R_family = {a: resolvent_direct(Dh, a) for a in alphas}
    T_family = {a: hmm_resolvent(gen, a, b_v, on_invalid="report") for a in alphas}
    gaps = compare_resolvents(R_family, T_family, grid)
    valid = {a: T_family[a].meta["valid"] for a in alphas}
    threshold = T_family[alphas[0]].meta["threshold"]

    semi = compare_semigroups(Dh, gen.E, g, times, Dh, grid, Pk=Dk)
    pi = invariant_measure(Dh)
    varpi = hmm_stationary(gen)
    mgap = compare_invariant(pi, varpi, grid)
    return ApproximationReport(
        alpha_grid=tuple(float(a) for a in alphas),
        resolvent_gaps=gaps,
        semigroup=semi,
        measure_gap=mgap,
        epsilon_target=float(epsilon),
        kappa=float(kappa),
        n_cells=gen.N,
        generator_gap=float(gen.generator_gap),
        resolvent_valid=valid,
        threshold=float(threshold),
        objects={"Dh": Dh, "Dk": Dk, "gen": gen, "R": R_family, "T": T_family, "pi": pi, "varpi": varpi},
    )
