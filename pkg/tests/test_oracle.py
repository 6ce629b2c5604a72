import numpy as np
import pytest

from rdpf.bounds import scalar_gaussian_pr
from rdpf.errors import DomainError, InvalidParameterError
from rdpf.oracle import (
    build_grid,
    grid_dual_solve,
    grid_eot_solve,
    grid_full_marginal_solve,
    grid_primal_scaling,
    relaxation_ladder,
)

from conftest import bivariate, scalar


@pytest.fixture(scope="module")
def gauss64():
    return build_grid(scalar(), G=64)


@pytest.fixture(scope="module")
def expo64():
    return build_grid(scalar("exponential"), G=64)


def test_grid_shape_and_weights(gauss64):
    assert gauss64.size == 64 * 64
    assert gauss64.r.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(gauss64.r > 0)


def test_scalar_only():
    with pytest.raises(InvalidParameterError):
        build_grid(bivariate())


def test_reference_distortion_gives_zero_rate(gauss64):
    D = float(gauss64.r @ gauss64.delta)
    rate, mult = grid_dual_solve(gauss64, D, 4)
    assert rate == pytest.approx(0.0, abs=1e-9)
    assert np.allclose(mult.to_vector(), 0.0, atol=1e-6)


def test_gaussian_benchmark_close_to_closed_form(gauss64):
    rate, _ = grid_dual_solve(gauss64, 1.0, 4)
    assert rate == pytest.approx(scalar_gaussian_pr(1.0, 1.0), abs=0.02)


@pytest.mark.parametrize("D", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("which", ["gauss64", "expo64"])
def test_strong_duality(request, which, D):
    grid = request.getfixturevalue(which)
    dual, _ = grid_dual_solve(grid, D, 4)
    primal, q = grid_primal_scaling(grid, D, 4)
    assert abs(dual - primal) <= 1e-6
    assert np.all(q > 0)
    assert float(q @ np.log(q / grid.r)) == pytest.approx(primal, abs=1e-12)


def test_mae_duality():
    grid = build_grid(scalar("laplace"), kind="mae", G=48)
    dual, _ = grid_dual_solve(grid, 0.6, 3)
    primal, _ = grid_primal_scaling(grid, 0.6, 3)
    assert abs(dual - primal) <= 1e-6


def test_no_constraints_returns_reference(gauss64):
    rate, q = grid_primal_scaling(gauss64, None, 0)
    assert rate == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(q, gauss64.r, rtol=1e-12)


def test_distortion_outside_grid(gauss64):
    with pytest.raises(DomainError):
        grid_dual_solve(gauss64, 1e3, 4)


def test_ladder_nondecreasing(gauss64, expo64):
    for grid in (gauss64, expo64):
        ladder = relaxation_ladder(grid, 1.0, 6)
        r = np.array(ladder.rates)
        assert np.all(np.diff(r) >= -1e-9)
        assert ladder.full_marginal_rate >= r[-1] - 1e-9
        assert ladder.orders == tuple(range(1, 7))


def test_ladder_bounds(gauss64):
    with pytest.raises(InvalidParameterError):
        relaxation_ladder(gauss64, 1.0, 9)


def test_full_marginal_dominates_high_order(gauss64):
    full = grid_full_marginal_solve(gauss64, 1.0)
    assert full >= grid_dual_solve(gauss64, 1.0, 8)[0] - 1e-9


def test_grid_refinement():
    r = [grid_dual_solve(build_grid(scalar(), G=G), 1.0, 4)[0] for G in (32, 64, 128)]
    assert abs(r[2] - r[1]) <= abs(r[1] - r[0])


def test_eot_slope_correspondence(gauss64):
    # Solving the D-constrained dual and pinning theta at the optimum must
    # reproduce the same coupling.
    rate, mult = grid_dual_solve(gauss64, 1.0, 4)
    eps = -1.0 / mult.theta
    d_eot, eot_rate, d_hat = grid_eot_solve(gauss64, eps, 4)
    assert d_hat == pytest.approx(1.0, abs=1e-7)
    assert eot_rate == pytest.approx(rate, abs=1e-7)
    assert d_eot == pytest.approx(1.0 + eps * rate, abs=1e-6)


def test_eot_small_epsilon(gauss64):
    d_eot, _, _ = grid_eot_solve(gauss64, 0.01, 4)
    assert d_eot <= 0.15


def test_eot_rejects_nonpositive_epsilon(gauss64):
    with pytest.raises(InvalidParameterError):
        grid_eot_solve(gauss64, 0.0, 4)
