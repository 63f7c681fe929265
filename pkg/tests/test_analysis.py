import math

import numpy as np
import pytest

from diffhmm.analysis import (
    alpha_grid,
    approximate,
    build_witnesses,
    compare_invariant,
    compare_resolvents,
    compare_semigroups,
    converse_lyapunov,
    density_gap,
    ergodicity_rate,
    gaussian_oracle,
    hausdorff,
    invariant_measure,
    power_bound_check,
    spectrum,
)
from diffhmm.diffusion import preset
from diffhmm.hmm import build_hmm_generator, finite_rank_approx, hidden_chain
from diffhmm.jump import jump_generator
from diffhmm.resolvent import discretize_generator, resolvent_direct
from diffhmm.statespace import build_grid, weighted_sup_norm

from conftest import B_PRIME_OU


def test_alpha_grid():
    assert alpha_grid(0.5) == [0.5, 1.0, 2.0]
    a = alpha_grid(0.9)
    assert a[0] == 0.9 and a[1] == 1.0 and a[2] == pytest.approx(1 / 0.9)


def test_compare_resolvents_identical(Dh, grid):
    fam = {a: resolvent_direct(Dh, a) for a in (0.5, 1.0)}
    gaps = compare_resolvents(fam, fam, grid)
    assert gaps == {0.5: 0.0, 1.0: 0.0}


# ------------------------------------------------------------- semigroups


def test_semigroup_gap_trivial_cases(Dh, grid):
    Dk = jump_generator(resolvent_direct(Dh, 10.0), 10.0)
    one = np.ones(grid.n_nodes)
    cmp = compare_semigroups(Dh, Dk, one, [0.5, 1.0], Dh, grid)
    assert np.all(cmp.gaps <= 1e-10)
    assert cmp.budget_scale == pytest.approx(1.0, abs=1e-8)
    x = grid.points[:, 0]
    cmp0 = compare_semigroups(Dh, Dk, x * np.exp(-(x**2) / 8), [0.0], Dh, grid)
    assert cmp0.gaps[0] == 0.0


def test_semigroup_stage_split(Dh, grid):
    Dk = jump_generator(resolvent_direct(Dh, 10.0), 10.0)
    gen = build_hmm_generator(finite_rank_approx(Dk, None, 64, grid), 10.0, grid, Dk)
    x = grid.points[:, 0]
    g = x * np.exp(-(x**2) / 8)
    cmp = compare_semigroups(Dh, gen.E, g, [0.5, 1.0, 2.0], Dh, grid, Pk=Dk)
    assert np.all(cmp.gaps <= cmp.jump_gaps + cmp.hmm_gaps + 1e-12)
    assert np.all(cmp.jump_gaps > 0) and np.all(cmp.hmm_gaps > 0)


# ---------------------------------------------------------- invariant laws


def test_ou_invariant_against_gaussian(Dh, grid):
    pi = invariant_measure(Dh)
    assert pi.sum() == pytest.approx(1.0, abs=1e-12) and pi.min() >= 0
    ref = gaussian_oracle(grid)
    assert ref.sum() == pytest.approx(1.0)
    assert density_gap(pi, ref, grid) <= 0.01
    assert pi @ grid.weights_v <= B_PRIME_OU


def test_invariant_converges_with_h(Dh_coarse, coarse_grid, Dh, grid):
    coarse = density_gap(invariant_measure(Dh_coarse), gaussian_oracle(coarse_grid), coarse_grid)
    fine = density_gap(invariant_measure(Dh), gaussian_oracle(grid), grid)
    assert fine < coarse


def test_doublewell_modes():
    g = build_grid([(-3, 3)], [301], lambda x: x**2 / 4)
    pi = invariant_measure(discretize_generator(preset("doublewell1d"), g))
    x = g.points[:, 0]
    left = np.argmax(np.where(x < 0, pi, -1))
    right = np.argmax(np.where(x > 0, pi, -1))
    assert abs(x[left] + 1) <= 0.05 and abs(x[right] - 1) <= 0.05
    assert pi[g.nearest_node([0.0])] < pi[left]
    np.testing.assert_allclose(pi, pi[::-1], rtol=0.05)


def test_compare_invariant():
    g = build_grid([(-1, 1)], [3], lambda x: np.abs(x))
    assert compare_invariant([0.2, 0.6, 0.2], [0.2, 0.6, 0.2], g) == 0.0
    assert compare_invariant([1, 0, 0], [0, 0, 1], g) == pytest.approx(2 * math.e)


# ---------------------------------------------------------------- spectra


def test_spectrum_sorting_and_hausdorff():
    rep = spectrum(np.diag([0.1, -2.0, 1.0, 0.5]))
    np.testing.assert_allclose(rep.eigenvalues.real, [-2.0, 1.0, 0.5, 0.1])
    asc = spectrum(np.diag([0.1, -2.0, 1.0]), descending=False)
    np.testing.assert_allclose(asc.eigenvalues.real, [0.1, 1.0, -2.0])
    assert hausdorff([0, 1], [0, 1]) == 0.0
    assert hausdorff([0, 1], [0, 1.5]) == pytest.approx(0.5)
    assert hausdorff([0], [0, 3]) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        spectrum(np.ones((2, 3)))


def test_two_state_chain_spectrum():
    rep = spectrum(hidden_chain(1.0, [[0, 1], [1, 0]]))
    np.testing.assert_allclose(np.sort(rep.eigenvalues.real), [-2.0, 0.0], atol=1e-12)
    res = spectrum(hidden_chain(1.0, [[0, 1], [1, 0]]), alpha=1.0)
    np.testing.assert_allclose(np.sort(res.reduced.real), [1 / 3, 1.0], atol=1e-12)


def test_reduced_spectrum_inside_full(Dh, grid):
    Dk = jump_generator(resolvent_direct(Dh, 10.0), 10.0)
    gen = build_hmm_generator(finite_rank_approx(Dk, None, 16, grid), 10.0, grid, Dk)
    rep = spectrum(gen)
    assert rep.rank == 16 and rep.reduced.size == 16
    # the nontrivial grid spectrum is the reduced one plus -kappa
    full = rep.eigenvalues
    assert hausdorff(rep.reduced, full[np.abs(full + 10.0) > 1e-6]) <= 1e-6


def test_ou_resolvent_spectrum(R1):
    lam = spectrum(R1).eigenvalues.real
    np.testing.assert_allclose(lam[:3], [1.0, 0.5, 1 / 3], rtol=0.02)


# ------------------------------------------------------------- ergodicity


def test_ou_ergodicity_rate(Dh_coarse, coarse_grid):
    pi = invariant_measure(Dh_coarse)
    est = ergodicity_rate(Dh_coarse, pi, coarse_grid, [1.0, 2.0, 3.0, 4.0, 5.0])
    assert est.decaying
    assert est.b0 == pytest.approx(1.0, abs=0.1)
    assert est.fit_residual <= 0.1


def test_ergodicity_degenerate_and_bad_input(coarse_grid):
    n = coarse_grid.n_nodes
    pi = np.full(n, 1 / n)
    est = ergodicity_rate(lambda t: np.tile(pi, (n, 1)), pi, coarse_grid, [1, 2, 3])
    assert est.degenerate and not est.decaying
    with pytest.raises(ValueError):
        ergodicity_rate(lambda t: np.eye(n), pi, coarse_grid, [1, 2])


# ---------------------------------------------------------------- converse


@pytest.fixture(scope="module")
def converse(R1, grid, Dh):
    wit = build_witnesses(R1, grid, n_max=4)
    return wit, converse_lyapunov(R1, wit, grid, Dh=Dh)


def test_witness_gaps(converse, R1, grid):
    wit, res = converse
    assert len(wit) == 4
    assert all(g <= 2.0**-n for n, g in enumerate(res.witness_gaps, start=1))
    ranks = [T.N for _, T in wit]
    assert ranks == sorted(ranks)


def test_converse_certificate(converse, grid):
    _, res = converse
    assert res.certificate.passed, res.certificate.worst_slack
    assert np.all(res.W >= 1.0) and np.array_equal(res.W, res.W_minus)
    assert res.v_minus_norm <= res.bound
    assert res.bound_slack >= 0
    assert np.all(res.u_minus >= grid.weights_v)


def test_converse_rejects_bad_witnesses(R1, grid, Dh):
    from diffhmm.hmm import finite_rank_approx as fra

    coarse = [(np.arange(grid.n_nodes), fra(R1, None, 1, grid, hull=np.arange(grid.n_nodes)))]
    with pytest.raises(ValueError, match="gap"):
        converse_lyapunov(R1, coarse, grid, Dh=Dh)
    with pytest.raises(ValueError):
        converse_lyapunov(resolvent_direct(Dh, 2.0), coarse, grid, Dh=Dh)


# ------------------------------------------------------------- power bound


def test_power_bound_rows(Dh, grid):
    fam = {a: resolvent_direct(Dh, a) for a in (0.5, 1.0, 2.0)}
    rows = power_bound_check(fam, B_PRIME_OU, [1, 2, 4, 8, 16], grid)
    assert len(rows) == 15
    assert all(r["passed"] for r in rows)
    assert all(1 - 1e-12 <= r["norm"] <= r["bound"] for r in rows)


# --------------------------------------------------------------- pipeline


def test_pipeline_small(ou, coarse_grid, Dh_coarse):
    x = coarse_grid.points[:, 0]
    g = x * np.exp(-(x**2) / 8)
    rep = approximate(ou, coarse_grid, 20.0, 64, alpha_grid(0.5), g, [0.5, 1.0], 0.5, B_PRIME_OU, Dh=Dh_coarse)
    assert set(rep.resolvent_gaps) == {0.5, 1.0, 2.0}
    assert rep.passed
    strict = approximate(ou, coarse_grid, 20.0, 4, alpha_grid(0.5), g, [0.5], 1e-6, B_PRIME_OU, Dh=Dh_coarse)
    assert not strict.passed
    assert not any(strict.resolvent_valid.values())
    assert weighted_sup_norm(g, coarse_grid) > 0
