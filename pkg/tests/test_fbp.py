import csv
import math

import numpy as np
import pytest

from htqueue.errors import BoundaryNotFound, DomainError, GridTooCoarse
from htqueue.fbp import BellmanSolution, free_boundary, solve_bellman, value_at
from htqueue.scenario import ScenarioParams, reduction, validate

from conftest import random_scenario


def _solve(p, N=2000, **kw):
    d = validate(p, allow_zero_costs=True)
    return solve_bellman(d, reduction(p, d), N, **kw)


def linear_cost_oracle(c, alpha, rbar, s2, btol):
    """Driftless problem with hbar(w) = c w (one class).

    V(w) = c w/alpha + A cosh(kw) + B sinh(kw), k = sqrt(2 alpha/s2), with
    V'(0) = 0 and smooth fit V''(x*) = 0 gives
        V'(w) = (c/alpha) (1 - cosh(k (x* - w)) / cosh(k x*)),
        cosh(k x*) = c / (c - alpha rbar),   V(0) = c tanh(k x*) / (alpha k).
    Also returns where V' first reaches rbar - btol, which is what a
    tolerance-based boundary search sees.
    """
    k = math.sqrt(2 * alpha / s2)
    xs = math.acosh(c / (c - alpha * rbar)) / k
    V0 = c * math.tanh(k * xs) / (alpha * k)
    x_tol = xs - math.acosh(1 + alpha * btol / (c - alpha * rbar)) / k
    return xs, V0, x_tol


def test_single_class_closed_form():
    p = ScenarioParams(I=1, lambda_i=(1,), mu_i=(1,), h_i=(1,), r_i=(0.5,), b_i=(3,), alpha=1.0)
    sol = _solve(p)
    xs, V0, x_tol = linear_cost_oracle(1.0, 1.0, 0.5, 2.0, sol.boundary_tol)
    assert sol.V[0] == pytest.approx(V0, abs=2e-6)
    assert sol.xstar == pytest.approx(x_tol, abs=2e-3)
    # a tighter boundary tolerance approaches the analytic boundary
    tight = free_boundary(BellmanSolution(sol.grid, sol.V, sol.Vp, math.nan, 0.0, sol.rbar, 1e-7))
    assert abs(tight - xs) < abs(sol.xstar - xs)
    w = np.linspace(0, x_tol, 50)
    k = 1.0
    Vp_exact = 1.0 - np.cosh(k * (xs - w)) / np.cosh(k * xs)
    assert np.allclose(np.interp(w, sol.grid, sol.Vp), Vp_exact, atol=1e-4)


def test_solution_invariants(example1):
    sol = _solve(example1)
    tol = 1e-6 * sol.rbar
    assert np.all(sol.Vp >= -tol) and np.all(sol.Vp <= sol.rbar + tol)
    assert abs(sol.Vp[0]) <= sol.boundary_tol
    assert abs(sol.Vp[-1] - sol.rbar) <= sol.boundary_tol
    assert np.all(np.diff(sol.V, 2) >= -1e-9)
    assert 0 < sol.xstar < sol.xbar
    assert sol.residual_max <= 10 * sol.meta["tol"]
    assert value_at(sol, sol.xstar) <= value_at(sol, sol.xbar)


def test_complementarity(example1):
    d = validate(example1)
    red = reduction(example1, d)
    sol = solve_bellman(d, red)
    w, V, dw = sol.grid, sol.V, sol.dw
    Vpp = (V[2:] - 2 * V[1:-1] + V[:-2]) / dw**2
    fwd = (V[2:] - V[1:-1]) / dw
    bwd = (V[1:-1] - V[:-2]) / dw
    pde = 0.5 * d.sigmabar2 * Vpp - d.alpha * V[1:-1] + red.hbar(w[1:-1])
    # in value units (divided by the stencil diagonal), like residual_max
    diag = d.sigmabar2 / dw**2 + d.alpha
    terms = np.stack([np.abs(pde) / diag, np.abs(fwd) * dw, np.abs(red.rbar - bwd) * dw])
    assert np.all(terms.min(axis=0) <= 1e-8)


def test_refinement_is_cauchy(example1):
    xs = [_solve(example1, N).xstar for N in (400, 800, 1600)]
    g1, g2 = abs(xs[1] - xs[0]), abs(xs[2] - xs[1])
    assert g2 <= g1 / 2


def test_residual_does_not_grow_with_refinement(example1):
    # the residual sits at the sweep tolerance; allow that much jitter
    r = [_solve(example1, N).residual_max for N in (400, 800, 1600)]
    assert all(b <= a + 1e-10 for a, b in zip(r, r[1:]))


def test_zero_holding_cost():
    p = ScenarioParams(I=2, lambda_i=(0.5, 0.5), mu_i=(1, 1), h_i=(0, 0), r_i=(1, 1), b_i=(2, 2), alpha=1.0)
    sol = _solve(p)
    # nothing is worth rejecting early; what is left is the cost of pushing at xbar:
    # V = rbar cosh(kw) / (k sinh(k xbar)), k = sqrt(2 alpha / s2), here k = 1
    exact = np.cosh(sol.grid) / np.sinh(sol.xbar)
    assert np.allclose(sol.V, exact, atol=2e-5)
    assert np.all(sol.Vp[:-2] < sol.rbar - sol.boundary_tol)
    assert sol.xstar == pytest.approx(sol.xbar, abs=2 * sol.dw)


def test_grid_too_coarse(example1):
    with pytest.raises(GridTooCoarse):
        _solve(example1, 100)


def test_value_at(example1):
    sol = _solve(example1, 400)
    assert value_at(sol, 0.0) == sol.V[0]
    mid = 0.5 * (sol.grid[10] + sol.grid[11])
    assert value_at(sol, mid) == pytest.approx(0.5 * (sol.V[10] + sol.V[11]), rel=1e-14)
    with pytest.raises(DomainError):
        value_at(sol, -0.1)
    with pytest.raises(DomainError):
        value_at(sol, sol.xbar + 0.1)


def test_free_boundary_edge_cases():
    grid = np.linspace(0, 1, 11)
    full = BellmanSolution(grid, grid * 2, np.full(11, 2.0), math.nan, 0.0, 2.0, 1e-4)
    assert free_boundary(full) == grid[1]
    short = BellmanSolution(grid, grid, np.full(11, 1.0), math.nan, 0.0, 2.0, 1e-4)
    with pytest.raises(BoundaryNotFound):
        free_boundary(short)


def test_monotone_in_rbar(example1):
    lo = _solve(example1, 800)
    hi = _solve(example1.replace(r_i=tuple(1.1 * np.array(example1.r_i))), 800)
    w = np.linspace(0, lo.xbar, 100)
    assert np.all(value_at(hi, w) >= value_at(lo, w) - 1e-9)
    assert hi.xstar >= lo.xstar


def test_random_instances_invariants():
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = random_scenario(rng, I=2)
        sol = _solve(p, 1000)
        assert 0 < sol.xstar <= sol.xbar
        assert np.all(np.diff(sol.V) >= -1e-12)
        assert sol.Vp.max() <= sol.rbar * (1 + 1e-6)


def test_csv_export(tmp_path, example1):
    sol = _solve(example1, 300)
    f = tmp_path / "v.csv"
    sol.to_csv(f)
    rows = list(csv.reader(open(f)))
    assert rows[0] == ["w", "V", "Vp"]
    assert len(rows) == 301
    assert float(rows[5][1]) == sol.V[4]
