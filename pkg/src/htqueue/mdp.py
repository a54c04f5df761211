"""Two-class M/M/1 finite-buffer MDP: value iteration, histograms, ratio curve.

Costs are kept on the diffusion scale (holding h.x/sqrt(n) per unit time,
r_i/sqrt(n) per rejected class-i arrival) so the optimal value is directly
comparable with the reduced-problem value V(x0). Actions per state: which
class to serve (whole effort to one class; idling only in the empty state)
and, per class, whether to admit an arrival. A full buffer forces rejection.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NoConvergence, UnsupportedPrimitives
from .scenario import ScenarioParams, reduction, validate


@dataclass(frozen=True)
class MdpSpec:
    B: tuple[int, int]
    lam: np.ndarray
    mu: np.ndarray
    h: np.ndarray
    r: np.ndarray
    alpha: float
    n: int
    x0: tuple[int, int] = (0, 0)

    @property
    def Lambda(self) -> float:
        return float(self.lam.sum() + self.mu.sum())

    @property
    def shape(self):
        return (self.B[0] + 1, self.B[1] + 1)


@dataclass
class MdpSolution:
    V: np.ndarray
    serve: np.ndarray  # 0 idle, 1 or 2 = class served
    admit: np.ndarray  # (B1+1, B2+1, 2) bool
    iterations: int
    bellman_residual: float
    tol: float


def mdp_spec(params: ScenarioParams) -> MdpSpec:
    """Grid and rates of the n-th system for a two-class exponential scenario."""
    if params.I != 2:
        raise UnsupportedPrimitives(f"the MDP oracle handles two classes, got I={params.I}")
    for name, dists, c2 in (("interarrival", params.ia_dist, params.C2_IA_i),
                            ("service", params.st_dist, params.C2_ST_i)):
        if any(dd != "exponential" for dd in dists) or any(abs(c - 1.0) > 1e-12 for c in c2):
            raise UnsupportedPrimitives(f"the MDP oracle needs exponential {name} times")
    d = validate(params, allow_zero_costs=True)
    sn = math.sqrt(params.n)
    B = tuple(int(math.floor(b * sn + 1e-9)) for b in params.b_i)
    x0 = tuple(int(math.floor(x * sn + 1e-9)) for x in params.x0_i)
    return MdpSpec(B=B, lam=np.array(d.lambda_n), mu=np.array(d.mu_n), h=np.array(params.h_i),
                   r=np.array(params.r_i), alpha=params.alpha, n=params.n, x0=x0)


@njit(cache=True, nogil=True)
def _bellman(V, out, serve, admit, lam1, lam2, mu1, mu2, ch1, ch2, cr1, cr2, Lam, alpha):
    B1 = V.shape[0] - 1
    B2 = V.shape[1] - 1
    delta = 0.0
    for x1 in range(B1 + 1):
        for x2 in range(B2 + 1):
            v = V[x1, x2]
            tot = ch1 * x1 + ch2 * x2
            rj = cr1 + v
            if x1 < B1 and V[x1 + 1, x2] <= rj:
                tot += lam1 * V[x1 + 1, x2]
                admit[x1, x2, 0] = True
            else:
                tot += lam1 * rj
                admit[x1, x2, 0] = False
            rj = cr2 + v
            if x2 < B2 and V[x1, x2 + 1] <= rj:
                tot += lam2 * V[x1, x2 + 1]
                admit[x1, x2, 1] = True
            else:
                tot += lam2 * rj
                admit[x1, x2, 1] = False
            s = 0
            best = (Lam - lam1 - lam2) * v
            if x1 > 0:
                best = mu1 * V[x1 - 1, x2] + (Lam - lam1 - lam2 - mu1) * v
                s = 1
            if x2 > 0:
                q = mu2 * V[x1, x2 - 1] + (Lam - lam1 - lam2 - mu2) * v
                if s == 0 or q < best:
                    best = q
                    s = 2
            serve[x1, x2] = s
            new = (tot + best) / (Lam + alpha)
            d = abs(new - v)
            if d > delta:
                delta = d
            out[x1, x2] = new
    return delta


@njit(cache=True, nogil=True)
def _iterate(V, serve, admit, lam1, lam2, mu1, mu2, ch1, ch2, cr1, cr2, Lam, alpha, stop, max_iters):
    W = np.empty_like(V)
    for it in range(max_iters):
        delta = _bellman(V, W, serve, admit, lam1, lam2, mu1, mu2, ch1, ch2, cr1, cr2, Lam, alpha)
        V[:, :] = W
        if delta < stop:
            return it + 1, delta
    return max_iters, delta


def _coeffs(spec: MdpSpec):
    sn = math.sqrt(spec.n)
    return (float(spec.lam[0]), float(spec.lam[1]), float(spec.mu[0]), float(spec.mu[1]),
            float(spec.h[0] / sn), float(spec.h[1] / sn), float(spec.r[0] / sn), float(spec.r[1] / sn),
            spec.Lambda, float(spec.alpha))


def value_iteration(spec: MdpSpec, tol: float = 1e-8, max_iters: int = 10_000_000) -> MdpSolution:
    """Uniformized discounted value iteration from V = 0.

    Stops when the sup-norm update is below tol (1 - g) / (2 g), g = Lambda/(Lambda + alpha),
    which puts the iterate within tol/2 of the fixed point.
    """
    if not spec.Lambda > 0:
        raise UnsupportedPrimitives("uniformization constant must be positive")
    g = spec.Lambda / (spec.Lambda + spec.alpha)
    stop = tol * (1.0 - g) / (2.0 * g)
    V = np.zeros(spec.shape)
    serve = np.zeros(spec.shape, np.int64)
    admit = np.zeros(spec.shape + (2,), np.bool_)
    c = _coeffs(spec)
    iters, delta = _iterate(V, serve, admit, *c, stop, max_iters)
    if not delta < stop:
        raise NoConvergence(f"value iteration: update {delta:.3g} after {iters} sweeps")
    # policy and residual from one more application of the operator
    W = np.empty_like(V)
    _bellman(V, W, serve, admit, *c)
    res = float(np.abs(W - V).max())
    return MdpSolution(V=V, serve=serve, admit=admit, iterations=int(iters), bellman_residual=res, tol=tol)


def evaluate_policy(spec: MdpSpec, serve: np.ndarray, admit: np.ndarray) -> np.ndarray:
    """Value of a fixed stationary policy by a dense linear solve (small grids)."""
    lam1, lam2, mu1, mu2, ch1, ch2, cr1, cr2, Lam, alpha = _coeffs(spec)
    n1, n2 = spec.shape
    N = n1 * n2
    if N > 2500:
        raise UnsupportedPrimitives(f"dense policy evaluation limited to 2500 states, got {N}")
    idx = np.arange(N).reshape(n1, n2)
    M = np.zeros((N, N))
    rhs = np.zeros(N)
    for x1 in range(n1):
        for x2 in range(n2):
            k = idx[x1, x2]
            M[k, k] += Lam + alpha
            rhs[k] = ch1 * x1 + ch2 * x2
            stay = Lam
            for cls, lam, cr, dx in ((0, lam1, cr1, (1, 0)), (1, lam2, cr2, (0, 1))):
                if admit[x1, x2, cls]:
                    M[k, idx[x1 + dx[0], x2 + dx[1]]] -= lam
                    stay -= lam
                else:
                    rhs[k] += lam * cr
            s = serve[x1, x2]
            if s == 1:
                M[k, idx[x1 - 1, x2]] -= mu1
                stay -= mu1
            elif s == 2:
                M[k, idx[x1, x2 - 1]] -= mu2
                stay -= mu2
            M[k, k] -= stay
    return np.linalg.solve(M, rhs).reshape(n1, n2)


# ----------------------------------------------------------------------
@njit(cache=True, nogil=True)
def _ctmc(gen, serve, admit, lam1, lam2, mu1, mu2, x1, x2, T, hist):
    t = 0.0
    while True:
        s = serve[x1, x2]
        mu = mu1 if s == 1 else (mu2 if s == 2 else 0.0)
        rate = lam1 + lam2 + mu
        if rate <= 0.0:
            hist[x1, x2] += T - t
            return
        dt = gen.exponential() / rate
        if t + dt >= T:
            hist[x1, x2] += T - t
            return
        hist[x1, x2] += dt
        t += dt
        u = gen.random() * rate
        if u < lam1:
            if admit[x1, x2, 0]:
                x1 += 1
        elif u < lam1 + lam2:
            if admit[x1, x2, 1]:
                x2 += 1
        elif s == 1:
            x1 -= 1
        else:
            x2 -= 1


def simulate_optimal(spec: MdpSpec, solution: MdpSolution, T: float, seed: int = 0) -> np.ndarray:
    """Time-weighted occupancy histogram of the CTMC under the extracted policy on [0, T]."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(11, spec.n))
    gen = np.random.Generator(np.random.Philox(ss))
    hist = np.zeros(spec.shape)
    _ctmc(gen, solution.serve, solution.admit, float(spec.lam[0]), float(spec.lam[1]), float(spec.mu[0]),
          float(spec.mu[1]), int(spec.x0[0]), int(spec.x0[1]), float(T), hist)
    return hist / hist.sum()


def curve_distance(params: ScenarioParams) -> np.ndarray:
    """Distance (in states) of every grid point to the minimizing curve gamma scaled by sqrt(n)."""
    red = reduction(params, validate(params, allow_zero_costs=True))
    sn = math.sqrt(params.n)
    verts = red.gamma(red.hbar_breaks) * sn  # polyline vertices in cell units
    shape = tuple(int(math.floor(b * sn + 1e-9)) + 1 for b in params.b_i)
    P = np.stack(np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij"), axis=-1).astype(float)
    best = np.full(shape, np.inf)
    for p, q in zip(verts[:-1], verts[1:]):
        seg = q - p
        L2 = float(seg @ seg)
        s = np.clip(((P - p) @ seg) / L2, 0.0, 1.0) if L2 > 0 else np.zeros(shape)
        dist = np.linalg.norm(P - (p + s[..., None] * seg), axis=-1)
        best = np.minimum(best, dist)
    return best


def curve_mass(hist: np.ndarray, params: ScenarioParams, radius: float = 2.0, cell: float | None = None) -> float:
    """Histogram mass within ``radius`` cells of the scaled minimizing curve.

    ``cell`` is the cell width on the diffusion scale; the default 1/sqrt(n)
    is one state of this grid. Comparing several n on the cells of the
    coarsest grid keeps the neighbourhood width fixed on the diffusion scale.
    """
    cell = 1.0 / math.sqrt(params.n) if cell is None else cell
    dist = curve_distance(params)
    return float(hist[dist <= radius * cell * math.sqrt(params.n) + 1e-9].sum())


# ----------------------------------------------------------------------
def ratio_curve(params: ScenarioParams, n_list, seed: int = 0, *, replications: int = 200,
                T_horizon: float = 50.0, tol: float = 1e-8, workers: int = 1) -> list[dict]:
    """J^n(threshold policy) / V^n_opt(x0) for each n, with the Monte-Carlo standard error."""
    from .qsim.sim import cost_estimate

    def one(n):
        p = params.replace(n=int(n))
        spec = mdp_spec(p)
        sol = value_iteration(spec, tol)
        vopt = float(sol.V[spec.x0])
        J, se = cost_estimate(p, "ao", replications, T_horizon, seed)
        return {"n": int(n), "ratio": J / vopt, "std_error": se / vopt, "J": J, "J_se": se, "V_opt": vopt,
                "iterations": sol.iterations}

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(one, n_list))
    return [one(n) for n in n_list]
