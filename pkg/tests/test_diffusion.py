import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffhmm.diffusion import (
    DiffusionModel,
    SimulationError,
    certify_dv3,
    generator_apply,
    nonlinear_generator,
    preset,
    sde_endpoints,
    simulate_sde,
)
from diffhmm.statespace import build_grid

from conftest import B_PRIME_OU


def ou_pair(grid):
    x = grid.points[:, 0]
    V = x**2 / 4
    W = 1 + x**2 / 8
    C = np.flatnonzero(np.abs(x) <= 2 * math.sqrt(3) + 1e-12)
    return V, W, C


def test_presets():
    ou = preset("ou1d")
    x = np.array([[-1.0], [2.0]])
    np.testing.assert_allclose(ou.drift_at(x)[:, 0], [1.0, -2.0])
    np.testing.assert_allclose(ou.sigma_at(x)[:, 0, 0], [2.0, 2.0])
    dw = preset("doublewell1d")
    np.testing.assert_allclose(dw.drift_at(x)[:, 0], [0.0, 2.0 - 8.0])
    ou2 = preset("ou2d")
    np.testing.assert_allclose(ou2.sigma_at(np.zeros((1, 2)))[0], 2 * np.eye(2))
    with pytest.raises(ValueError, match="unknown preset"):
        preset("nope")


def test_model_config_round_trip():
    block = {"dim": 1, "drift": [[[1.0, [1]], [-1.0, [3]]]], "diffusion": [[[[1.5, [0]]]]]}
    m = DiffusionModel.from_config(block)
    again = DiffusionModel.from_config(m.to_config())
    x = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(again.drift_at(x), m.drift_at(x))
    np.testing.assert_allclose(again.sigma_at(x), m.sigma_at(x))
    assert DiffusionModel.from_config({"preset": "ou1d"}).to_config() == {"preset": "ou1d"}


# ----------------------------------------------------------- generator


def test_generator_on_simple_functions(ou, grid):
    x = grid.points[:, 0]
    np.testing.assert_allclose(generator_apply(ou, x, grid), -x, atol=1e-9)
    assert np.all(generator_apply(ou, np.full_like(x, 3.7), grid) == 0.0)
    dw = preset("doublewell1d")
    assert np.all(generator_apply(dw, np.ones_like(x), grid) == 0.0)


def test_generator_quadratic_closed_form(ou, grid):
    x = grid.points[:, 0]
    np.testing.assert_allclose(generator_apply(ou, x**2, grid), -2 * x**2 + 2, atol=1e-8)


def test_generator_second_order_convergence(ou):
    # x^4: D h = -4x^4 + 12 x^2; the stencil error is O(h^2)
    errs = []
    for m in (61, 121, 241):
        g = build_grid([(-3, 3)], [m])
        x = g.points[:, 0]
        err = generator_apply(ou, x**4, g) - (-4 * x**4 + 12 * x**2)
        errs.append(np.max(np.abs(err[1:-1])))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 3.5 < r1 < 4.5 and 3.5 < r2 < 4.5


def test_nonlinear_generator_examples(ou, grid):
    x = grid.points[:, 0]
    assert np.all(nonlinear_generator(ou, np.zeros_like(x), grid) == 0.0)
    assert np.all(np.abs(nonlinear_generator(ou, np.full_like(x, math.log(7.0)), grid)) == 0.0)
    np.testing.assert_allclose(nonlinear_generator(ou, x**2 / 4, grid), -(x**2) / 4 + 0.5, atol=1e-8)


def test_nonlinear_generator_matches_exponential_form():
    dw = preset("doublewell1d")
    g = build_grid([(-0.5, 0.5)], [2001])
    x = g.points[:, 0]
    F = np.sin(2 * x) + x**2
    H = nonlinear_generator(dw, F, g)
    direct = np.exp(-F) * generator_apply(dw, np.exp(F), g)
    inner = slice(2, -2)
    rel = np.max(np.abs(H - direct)[inner]) / np.max(np.abs(H[inner]))
    assert rel <= 1e-6


# --------------------------------------------------------- certificate


def test_ou_certificate_passes(ou, fine_grid):
    V, W, C = ou_pair(fine_grid)
    cert = certify_dv3(ou, V, W, 1.0, 1.5, C, fine_grid, sup_V_on_C=3.0)
    assert cert.passed
    assert cert.worst_slack <= 0.01
    assert math.isclose(cert.b_prime, B_PRIME_OU, rel_tol=1e-12)


def test_ou_certificate_fails_without_b(ou, fine_grid):
    V, W, C = ou_pair(fine_grid)
    cert = certify_dv3(ou, V, W, 1.0, 0.0, C, fine_grid)
    assert not cert.passed
    assert cert.worst_slack == pytest.approx(1.5, abs=1e-6)
    assert abs(fine_grid.points[cert.worst_node, 0]) < 1e-9


def test_trivial_certificate_for_any_model(grid):
    n = grid.n_nodes
    for m in (preset("ou1d"), preset("doublewell1d")):
        cert = certify_dv3(m, np.zeros(n), np.ones(n), 1.0, 1.0, np.arange(n), grid)
        assert cert.passed


def test_certificate_rejects_bad_premises(ou, grid):
    V, W, C = ou_pair(grid)
    with pytest.raises(ValueError, match="W must be >= 1"):
        certify_dv3(ou, V, W - 0.5, 1.0, 1.5, C, grid)
    with pytest.raises(ValueError):
        certify_dv3(ou, V, W, 0.0, 1.5, C, grid)
    with pytest.raises(ValueError):
        certify_dv3(ou, V, W, 1.0, 1.5, [], grid)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.1, 2.0),
    st.floats(0.0, 3.0),
    st.floats(1.0, 4.0),
    st.floats(1.0, 2.0),
    st.floats(0.0, 2.0),
    st.floats(0.0, 1.0),
)
def test_certificate_monotone(delta, b, radius, shrink, db, dr):
    ou = preset("ou1d")
    g = build_grid([(-6, 6)], [241], lambda x: x**2 / 4)
    x = g.points[:, 0]
    V, W = x**2 / 4, 1 + x**2 / 8
    C = np.flatnonzero(np.abs(x) <= radius)
    C2 = np.flatnonzero(np.abs(x) <= radius + dr)
    base = certify_dv3(ou, V, W, delta, b, C, g, tol=1e-6)
    looser = certify_dv3(ou, V, W, delta / shrink, b + db, C2, g, tol=1e-6)
    assert looser.worst_slack <= base.worst_slack + 1e-12
    if base.passed:
        assert looser.passed


# ----------------------------------------------------------- simulation


@pytest.mark.slow
def test_ou_stationary_second_moment(ou):
    ends = sde_endpoints(ou, [0.0], 1e-3, 100_000, seed=11, T=5.0)
    x2 = ends[:, 0] ** 2
    se = x2.std(ddof=1) / math.sqrt(x2.size)
    assert abs(x2.mean() - 1.0) <= 4 * se


def test_ou_mean_from_far_start(ou):
    ends = sde_endpoints(ou, [10.0], 1e-3, 10_000, seed=5, T=1.0, box=[(-12.0, 12.0)])
    se = ends[:, 0].std(ddof=1) / math.sqrt(ends.shape[0])
    assert abs(ends[:, 0].mean() - 10 * math.exp(-1)) <= 4 * se


def test_zero_model_path_is_constant():
    zero = DiffusionModel.from_config({"dim": 1, "drift": [[[0.0, [0]]]], "diffusion": [[[[0.0, [0]]]]]})
    t, path = simulate_sde(zero, [0.3], 0.01, 1.0, seed=1)
    assert t[-1] == pytest.approx(1.0)
    assert np.all(path == 0.3)


def test_path_reproducible_and_reflected(ou):
    t1, p1 = simulate_sde(ou, [0.0], 0.01, 2.0, seed=3, box=[(-0.5, 0.5)])
    t2, p2 = simulate_sde(ou, [0.0], 0.01, 2.0, seed=3, box=[(-0.5, 0.5)])
    assert np.array_equal(p1, p2)
    assert np.all(np.abs(p1) <= 0.5)


def test_explosion_reports_step():
    blow = DiffusionModel.from_config({"dim": 1, "drift": [[[1.0, [3]]]], "diffusion": [[[[0.0, [0]]]]]})
    with pytest.raises(SimulationError) as info:
        simulate_sde(blow, [10.0], 0.1, 5.0, seed=0)
    assert info.value.step >= 1


def test_endpoints_independent_of_threads(ou):
    a = sde_endpoints(ou, [0.0], 0.01, 9000, seed=4, horizon_rate=1.0, threads=1)
    b = sde_endpoints(ou, [0.0], 0.01, 9000, seed=4, horizon_rate=1.0, threads=3)
    assert np.array_equal(a, b)
