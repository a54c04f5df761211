"""Two-sided Skorohod map on sampled paths, RBM simulation, and Monte-Carlo
evaluation of the reduced (one-dimensional) control cost.

Sampled paths are treated as piecewise constant between samples; for such
paths the clamp recursion below is the exact solution of the Skorohod
problem, so no fixed-point iteration is needed.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import BiasBudgetExceeded, ConfigError, EmptyPath, InvalidInterval
from .scenario import DerivedConstants, ReductionObjects


@dataclass(frozen=True)
class Path:
    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("Path.dt must be positive")
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ConfigError("Path.values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ReflectionTriple:
    phi: Path
    eta1: Path
    eta2: Path


@njit(cache=True)
def _skorohod(psi, a, b, phi, e1, e2):
    x = psi[0]
    lo = 0.0
    hi = 0.0
    if x < a:
        lo = a - x
        x = a
    elif x > b:
        hi = x - b
        x = b
    phi[0] = x
    e1[0] = lo
    e2[0] = hi
    for k in range(1, psi.size):
        y = x + (psi[k] - psi[k - 1])
        if y < a:
            lo += a - y
            y = a
        elif y > b:
            hi += y - b
            y = b
        x = y
        phi[k] = x
        e1[k] = lo
        e2[k] = hi


def skorohod_arrays(psi: np.ndarray, a: float, b: float):
    psi = np.ascontiguousarray(psi, dtype=float)
    if psi.size == 0:
        raise EmptyPath("cannot reflect an empty path")
    if not a < b:
        raise InvalidInterval(f"need a < b, got [{a}, {b}]")
    phi = np.empty_like(psi)
    e1 = np.empty_like(psi)
    e2 = np.empty_like(psi)
    _skorohod(psi, float(a), float(b), phi, e1, e2)
    return phi, e1, e2


def skorohod_two_sided(psi: Path, a: float, b: float) -> ReflectionTriple:
    phi, e1, e2 = skorohod_arrays(psi.values, a, b)
    return ReflectionTriple(Path(psi.t0, psi.dt, phi), Path(psi.t0, psi.dt, e1), Path(psi.t0, psi.dt, e2))


def lipschitz_ratio(psi1: np.ndarray, psi2: np.ndarray, a: float, b: float) -> float:
    """Empirical Lipschitz constant of the map on one pair of paths.

    Returns (|phi1-phi2| + |eta1 diff| + |eta2 diff|)_sup / |psi1 - psi2|_sup.
    """
    p1, l1, u1 = skorohod_arrays(psi1, a, b)
    p2, l2, u2 = skorohod_arrays(psi2, a, b)
    num = np.abs(p1 - p2).max() + np.abs(l1 - l2).max() + np.abs(u1 - u2).max()
    den = np.abs(np.asarray(psi1) - np.asarray(psi2)).max()
    return float(num / den) if den > 0 else 0.0


# ----------------------------------------------------------------------
def _generator(seed: int, stream: int, rep: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(rep)))
    return np.random.Generator(np.random.Philox(ss))


def _normals(seed: int, stream: int, rep: int, size: int) -> np.ndarray:
    return _generator(seed, stream, rep).standard_normal(size)


def rbm_simulate(mbar: float, sigmabar: float, x0: float, c: float, dt: float, T: float, seed: int,
                 rep: int = 0):
    """One reflected (mbar, sigmabar)-BM path on [0, c] started from x0.

    Returns the Paths (X, Y, Z): state, lower pushing, upper pushing. A start
    above c is an initial jump booked to Z(0).
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if not c > 0:
        raise InvalidInterval("reflection interval [0, c] needs c > 0")
    steps = int(math.ceil(T / dt))
    z = _normals(seed, 0, rep, steps)
    psi = np.empty(steps + 1)
    psi[0] = x0
    psi[1:] = x0 + np.cumsum(mbar * dt + sigmabar * math.sqrt(dt) * z)
    tri = skorohod_two_sided(Path(0.0, dt, psi), 0.0, c)
    return tri.phi, tri.eta1, tri.eta2


def write_trajectory_csv(path, X: Path, Y: Path, Z: Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "X", "Y", "Z"])
        for row in zip(X.times, X.values, Y.values, Z.values):
            wr.writerow([repr(float(v)) for v in row])


# ----------------------------------------------------------------------
@njit(cache=True)
def _cost_path(gen, K, x0, c, drift, sig, dt, breaks, slopes, intercepts, disc, alpha, rbar, bridge):
    """Integrated-form discounted cost of one reflected path.

    The cost is sum_k disc_k * (alpha * Ih_k + alpha^2 * rbar * IZ_k) * dt with
    Ih, IZ left-endpoint running integrals of hbar(X) and Z. With ``bridge``
    the pushing in each step uses the Brownian-bridge extreme of the step
    (exact when a single boundary is touched); otherwise the sampled path is
    clamped as in skorohod_two_sided.
    """
    nb = breaks.size
    x = x0
    zc = 0.0
    if x > c:
        zc = x - c
        x = c
    elif x < 0.0:
        x = 0.0
    ih = 0.0
    iz = 0.0
    acc = 0.0
    s2dt = sig * sig * dt
    reach = 8.0 * sig * math.sqrt(dt) + abs(drift)
    for k in range(K):
        acc += disc[k] * (alpha * ih + alpha * alpha * rbar * iz) * dt
        j = 0
        while j < nb - 2 and x > breaks[j + 1]:
            j += 1
        ih += (intercepts[j] + slopes[j] * (x - breaks[j])) * dt
        iz += zc * dt
        w = drift + sig * math.sqrt(dt) * gen.standard_normal()
        if bridge:
            y = x + w
            if x < reach:
                lo = 0.5 * (w - math.sqrt(w * w - 2.0 * s2dt * math.log(1.0 - gen.random())))
                if x + lo < 0.0:
                    y -= x + lo
            if x > c - reach:
                hi = 0.5 * (w + math.sqrt(w * w - 2.0 * s2dt * math.log(1.0 - gen.random())))
                if x + hi > c:
                    zc += x + hi - c
                    y -= x + hi - c
            if y < 0.0:
                y = 0.0
            elif y > c:
                zc += y - c
                y = c
        else:
            y = x + w
            if y < 0.0:
                y = 0.0
            elif y > c:
                zc += y - c
                y = c
        x = y
    return acc


def _hbar_pieces(red: ReductionObjects):
    breaks = np.ascontiguousarray(red.hbar_breaks)
    slopes = np.ascontiguousarray(red.hbar_slopes)
    intercepts = np.concatenate([[0.0], np.cumsum(slopes * np.diff(breaks))])[:-1]
    return breaks, slopes, intercepts


def truncation_bias_bound(derived: DerivedConstants, red: ReductionObjects, xstar: float,
                          x0: float, T: float) -> float:
    """Bound on what the truncated integrated form omits beyond T.

    The omitted part is exp(-alpha T) * (Ih(T) + rbar Z(T) + alpha rbar IZ(T));
    we use Ih(T) <= hbar(xbar) T and the linear-growth bound
    E Z(t) <= (x0 - xstar)^+ + (|mbar| + sigmabar^2/xstar) t + sigmabar sqrt(t).
    """
    a = derived.alpha
    zb = max(x0 - xstar, 0.0) + (abs(derived.mbar) + derived.sigmabar2 / xstar) * T + derived.sigmabar * math.sqrt(T)
    return math.exp(-a * T) * (float(red.hbar(red.xbar)) * T + red.rbar * zb * (1.0 + a * T))


def bcp_cost_mc(derived: DerivedConstants, red: ReductionObjects, xstar: float, x0: float,
                dt: float | None = None, T_trunc: float | None = None, replications: int = 10_000,
                seed: int = 0, *, bias_budget: float = 1e-4, scheme: str = "bridge") -> tuple[float, float]:
    """Monte-Carlo discounted cost of the RBM-on-[0, xstar] control.

    Returns (estimate, standard error). Path r uses the RNG stream keyed by
    (seed, r), so the result does not depend on how replications are split.
    ``scheme`` is "bridge" (default) or "euler" (plain clamp of the sampled
    path, biased by O(sqrt(dt)) at the boundaries).
    """
    if scheme not in ("bridge", "euler"):
        raise ConfigError(f"unknown scheme {scheme!r}")
    alpha = derived.alpha
    if dt is None:
        dt = 1e-4 / alpha
    if not (0 < xstar <= red.xbar + 1e-12):
        raise InvalidInterval(f"xstar must lie in (0, xbar], got {xstar}")
    if T_trunc is None:
        T_trunc = math.log(1e8) / alpha
        while truncation_bias_bound(derived, red, xstar, x0, T_trunc) > bias_budget:
            T_trunc += 1.0 / alpha
    bound = truncation_bias_bound(derived, red, xstar, x0, T_trunc)
    if bound > bias_budget:
        raise BiasBudgetExceeded(f"truncation bias bound {bound:.3g} exceeds budget {bias_budget:.3g}")
    K = int(math.ceil(T_trunc / dt))
    disc = np.exp(-alpha * dt * np.arange(K))
    breaks, slopes, intercepts = _hbar_pieces(red)
    out = np.empty(replications)
    for r in range(replications):
        out[r] = _cost_path(_generator(seed, 1, r), K, float(x0), float(xstar), derived.mbar * dt,
                            derived.sigmabar, dt, breaks, slopes, intercepts, disc, alpha, red.rbar,
                            scheme == "bridge")
    est = float(out.mean())
    se = float(out.std(ddof=1) / math.sqrt(replications)) if replications > 1 else float("nan")
    return est, se


def cost_summary_json(path, estimate, std_error, replications, dt, T_trunc, seed) -> None:
    doc = {"estimate": estimate, "std_error": std_error, "replications": replications,
           "dt": dt, "T_trunc": T_trunc, "seed": seed}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
