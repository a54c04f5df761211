"""Numerical solution of the one-dimensional free-boundary Bellman problem.

We solve, on [0, xbar],

    min( 0.5*s2*f'' + m*f' - alpha*f + hbar,  f',  rbar - f' ) = 0,
    f'(0) = 0,  f'(xbar) = rbar,

by projected SOR on a monotone (upwind) finite-difference scheme. In the
"largest subsolution" form used by the sweep, node k is updated to

    min( relaxed PDE value,  f[k+1],  f[k-1] + rbar*dw )

which reads as a controlled chain: diffuse, push up for free, or reject
at price rbar per unit of workload.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import BoundaryNotFound, DomainError, GridTooCoarse, NoConvergence
from .scenario import DerivedConstants, ReductionObjects


@dataclass
class BellmanSolution:
    grid: np.ndarray
    V: np.ndarray
    Vp: np.ndarray
    xstar: float
    residual_max: float
    rbar: float
    boundary_tol: float
    meta: dict = field(default_factory=dict)

    @property
    def dw(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def xbar(self) -> float:
        return float(self.grid[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["w", "V", "Vp"])
            for row in zip(self.grid, self.V, self.Vp):
                wr.writerow([repr(float(x)) for x in row])

    def summary(self) -> dict:
        return {
            "xstar": self.xstar,
            "V0": float(self.V[0]),
            "xbar": self.xbar,
            "rbar": self.rbar,
            "grid_size": int(self.grid.size),
            "residual_max": self.residual_max,
            **{k: v for k, v in self.meta.items() if k != "elapsed_s"},
        }


@njit(cache=True)
def _psor(f, hb, a_lo, a_hi, diag, rdw, omega, tol, max_iters):
    N = f.size - 1
    for it in range(max_iters):
        delta = 0.0
        for k in range(N + 1):
            if k == 0:
                # Neumann ghost f[-1] = f[1]
                p = ((a_lo[0] + a_hi[0]) * f[1] + hb[0]) / diag
            elif k == N:
                # ghost f[N+1] = f[N-1] + 2*rbar*dw
                p = (a_hi[N] * (f[N - 1] + 2.0 * rdw) + a_lo[N] * f[N - 1] + hb[N]) / diag
            else:
                p = (a_hi[k] * f[k + 1] + a_lo[k] * f[k - 1] + hb[k]) / diag
            new = f[k] + omega * (p - f[k])
            if k < N and f[k + 1] < new:
                new = f[k + 1]
            if k > 0 and f[k - 1] + rdw < new:
                new = f[k - 1] + rdw
            d = abs(new - f[k])
            if d > delta:
                delta = d
            f[k] = new
        if delta < tol:
            return it + 1, delta
    return max_iters, delta


def _pde_value(f, hb, a_lo, a_hi, diag, rdw):
    """The Gauss-Seidel target of every node (PDE solved for f[k])."""
    fm = np.empty_like(f)
    fp = np.empty_like(f)
    fm[1:] = f[:-1]
    fm[0] = f[1]
    fp[:-1] = f[1:]
    fp[-1] = f[-2] + 2.0 * rdw
    return (a_hi * fp + a_lo * fm + hb) / diag


def solve_bellman(
    derived: DerivedConstants,
    red: ReductionObjects,
    grid_size: int = 2000,
    tol: float = 1e-10,
    *,
    omega: float | None = None,
    max_iters: int = 2_000_000,
    boundary_tol: float | None = None,
) -> BellmanSolution:
    if grid_size < 200:
        raise GridTooCoarse(f"grid_size must be >= 200, got {grid_size}")
    t0 = time.perf_counter()
    xbar = red.xbar
    N = grid_size - 1
    dw = xbar / N
    w = np.linspace(0.0, xbar, grid_size)
    hb = red.hbar(w)
    s2, m, alpha, rbar = derived.sigmabar2, derived.mbar, derived.alpha, red.rbar
    a = 0.5 * s2 / dw**2
    a_hi = np.full(grid_size, a + max(m, 0.0) / dw)
    a_lo = np.full(grid_size, a + max(-m, 0.0) / dw)
    diag = 2.0 * a + abs(m) / dw + alpha
    if omega is None:
        # close to the optimal SOR factor for the 1-D Laplacian; the sweep is
        # robust to a somewhat smaller value, which we take for safety
        omega = 2.0 / (1.0 + math.sin(math.pi / N)) - 5.0 / N
        omega = min(max(omega, 1.0), 1.99)
    rdw = rbar * dw
    # start from the all-reject supersolution's lower envelope: f = 0
    f = np.zeros(grid_size)
    iters, delta = _psor(f, hb, a_lo, a_hi, diag, rdw, omega, tol, max_iters)
    if delta >= tol:
        raise NoConvergence(f"PSOR stalled after {iters} sweeps (update {delta:.3g} >= tol {tol:g})")

    p = _pde_value(f, hb, a_lo, a_hi, diag, rdw)
    Vp = _central_derivative(f, dw, rbar)
    slack = 1e-9 * max(1.0, float(np.abs(f).max()))
    reject = np.zeros(grid_size, dtype=bool)
    reject[1:] = f[1:] >= f[:-1] + rdw - slack
    pushed = np.zeros(grid_size, dtype=bool)
    pushed[:-1] = f[:-1] >= f[1:] - slack
    free = ~(reject | pushed)
    # residual in value units: PDE residual divided by the stencil diagonal
    residual_max = float(np.abs(p - f)[free].max()) if free.any() else 0.0
    if residual_max > 10 * tol:
        raise GridTooCoarse(f"PDE residual {residual_max:.3g} exceeds 10*tol after convergence")
    btol = 1e-4 * rbar if boundary_tol is None else boundary_tol
    sol = BellmanSolution(
        grid=w, V=f, Vp=Vp, xstar=float("nan"), residual_max=residual_max, rbar=rbar,
        boundary_tol=btol,
        meta={"iterations": int(iters), "tol": tol, "omega": omega, "method": "psor-upwind",
              "elapsed_s": time.perf_counter() - t0},
    )
    sol.xstar = free_boundary(sol)
    return sol


def _central_derivative(f, dw, rbar):
    g = np.empty(f.size + 2)
    g[1:-1] = f
    g[0] = f[1]
    g[-1] = f[-2] + 2.0 * rbar * dw
    return (g[2:] - g[:-2]) / (2.0 * dw)


def free_boundary(sol: BellmanSolution) -> float:
    """Smallest y with Vp >= rbar - boundary_tol on [y, xbar], interpolated inside the bracketing cell."""
    level = sol.rbar - sol.boundary_tol
    Vp = sol.Vp
    if Vp[-1] < level:
        raise BoundaryNotFound(f"Vp(xbar) = {Vp[-1]:.6g} is below rbar - tol = {level:.6g}")
    below = np.nonzero(Vp < level)[0]
    if below.size == 0:
        return float(sol.grid[1])
    j = int(below[-1])
    w0, w1 = sol.grid[j], sol.grid[j + 1]
    v0, v1 = Vp[j], Vp[j + 1]
    if v1 == v0:
        return float(w1)
    return float(w0 + (level - v0) * (w1 - w0) / (v1 - v0))


def value_at(sol: BellmanSolution, w) -> np.ndarray | float:
    w_arr = np.asarray(w, dtype=float)
    slack = 1e-12 * max(1.0, sol.xbar)
    if np.any(w_arr < -slack) or np.any(w_arr > sol.xbar + slack):
        raise DomainError(f"w outside [0, {sol.xbar:.6g}]")
    out = np.interp(w_arr, sol.grid, sol.V)
    return float(out) if out.ndim == 0 else out
