"""Simulation front end: scenario -> engine arrays -> SimRecord."""
from __future__ import annotations

import functools
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import BiasBudgetExceeded, ConfigError, HorizonNonPositive, InvariantViolation
from ..fbp import solve_bellman
from ..scenario import DerivedConstants, ReductionObjects, ScenarioParams, reduction, validate
from . import engine
from .primitives import primitive_table

_STREAM = 7  # keeps the simulator's RNG streams apart from the RBM ones


def class_generators(seed: int, rep: int, I: int):
    """Per-class (interarrival, service) generators for replication ``rep``.

    Each class draws its primitives from its own stream, so the sequences
    of interarrival and service requirements are the same under every
    policy (common random numbers).
    """
    def gen(kind, i):
        ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_STREAM, int(rep), kind, i))
        return np.random.Generator(np.random.Philox(ss))
    return tuple(gen(0, i) for i in range(I)), tuple(gen(1, i) for i in range(I))


@dataclass(frozen=True)
class CustomerLog:
    """Per-customer stamps. Class-i customer k (0-based, FIFO) is initial if
    k < X0[i]; the j-th admitted one is customer X0[i] + j, so its departure
    stamp is dep[i][X0[i] + j] when that departure happened before the horizon."""
    X0: np.ndarray
    adm: tuple  # per class, admission epochs
    dep: tuple  # per class, departure epochs
    rej_t: np.ndarray
    rej_class: np.ndarray
    rej_forced: np.ndarray
    horizon: float

    @property
    def I(self) -> int:
        return len(self.adm)


@dataclass
class SimRecord:
    fingerprint: str
    fingerprint_base: str  # scenario hash with n left out
    seed: int
    rep: int
    n: int
    policy: str
    horizon: float
    sample_dt: float
    astar: float
    t: np.ndarray
    X: np.ndarray  # (S, I) integer queue lengths
    Z: np.ndarray  # (S, I) integer cumulative rejections
    T: np.ndarray  # (S, I) cumulative effort
    theta_n: np.ndarray
    mu_n: np.ndarray
    rho: np.ndarray
    costs: dict
    counts: dict
    events: int
    log: CustomerLog
    workload: np.ndarray = field(init=False)

    def __post_init__(self):
        self.workload = self.Xhat @ self.theta_n

    @property
    def sqrt_n(self) -> float:
        return math.sqrt(self.n)

    @property
    def Xhat(self) -> np.ndarray:
        return self.X / self.sqrt_n

    @property
    def Zhat(self) -> np.ndarray:
        return self.Z / self.sqrt_n

    @property
    def Yhat(self) -> np.ndarray:
        return (self.mu_n / self.sqrt_n) * (self.rho * self.t[:, None] - self.T)

    @property
    def forced_rejections(self) -> np.ndarray:
        return self.counts["forced"]

    def digest(self) -> str:
        """Hash of every array and scalar in the record (determinism checks)."""
        hsh = hashlib.sha256()
        for a in (self.t, self.X, self.Z, self.T, self.log.rej_t, self.log.rej_class, self.log.rej_forced,
                  *self.log.adm, *self.log.dep):
            hsh.update(np.ascontiguousarray(a).tobytes())
        for k in sorted(self.costs):
            hsh.update(repr(self.costs[k]).encode())
        hsh.update(repr((self.fingerprint, self.seed, self.rep, self.events)).encode())
        return hsh.hexdigest()

    def trajectory_rows(self):
        """Rows (t, Xhat_1..Xhat_I, workload, Zhat_1..Zhat_I)."""
        return np.column_stack([self.t, self.Xhat, self.workload, self.Zhat])


# ----------------------------------------------------------------------
@functools.lru_cache(maxsize=64)
def _xstar_cached(key: str, params: ScenarioParams) -> float:
    derived = validate(params, allow_zero_costs=True)
    return solve_bellman(derived, reduction(params, derived)).xstar


def free_boundary_for(params: ScenarioParams) -> float:
    """xstar of the reduced problem (independent of n; cached)."""
    p1 = params.replace(n=1)
    return _xstar_cached(p1.fingerprint(), p1)


def default_astar(params: ScenarioParams, red: ReductionObjects | None = None) -> float:
    red = reduction(params, validate(params, allow_zero_costs=True)) if red is None else red
    return min(free_boundary_for(params), red.theta_a)


@dataclass(frozen=True)
class _Setup:
    params: ScenarioParams
    derived: DerivedConstants
    red: ReductionObjects
    policy: str
    astar: float
    lam_n: np.ndarray
    prim_ia: np.ndarray
    prim_st: np.ndarray
    cap: np.ndarray
    a_sc: np.ndarray
    X0: np.ndarray


def setup(params: ScenarioParams, policy: str = "ao", astar: float | None = None) -> _Setup:
    if policy not in engine.POLICIES:
        raise ConfigError(f"unknown policy {policy!r}; choose from {sorted(engine.POLICIES)}")
    derived = validate(params, allow_zero_costs=True)
    red = reduction(params, derived)
    if astar is None:
        astar = default_astar(params, red) if policy == "ao" else math.inf
    sn = math.sqrt(params.n)
    b = np.array(params.b_i)
    cap = np.floor(b * sn + 1e-9).astype(np.int64)
    X0 = np.floor(np.array(params.x0_i) * sn + 1e-9).astype(np.int64)
    return _Setup(
        params=params, derived=derived, red=red, policy=policy, astar=float(astar),
        lam_n=np.array(derived.lambda_n), prim_ia=primitive_table(params.ia_dist, params.C2_IA_i),
        prim_st=primitive_table(params.st_dist, params.C2_ST_i), cap=cap, a_sc=red.a * sn, X0=X0,
    )


def _capacity(rate, horizon, C2):
    m = rate * horizon
    return int(m + 10.0 * math.sqrt(max(C2, 1.0) * m + 1.0) + 64)


def _execute(su: _Setup, horizon: float, sample_dt: float, seed: int, rep: int, check: bool) -> SimRecord:
    params, d = su.params, su.derived
    I = params.I
    sn = math.sqrt(params.n)
    S = int(math.floor(horizon / sample_dt + 1e-9)) + 1
    grow = 1
    while True:
        arr_cap = max(_capacity(su.lam_n[i], horizon, params.C2_IA_i[i]) for i in range(I)) * grow
        dep_cap = arr_cap + int(su.X0.max())
        sX = np.zeros((S, I), np.int64)
        sZ = np.zeros((S, I), np.int64)
        sT = np.zeros((S, I))
        adm_t = np.empty((I, arr_cap))
        dep_t = np.empty((I, dep_cap))
        rej_t = np.empty(arr_cap * I)
        rej_c = np.empty(arr_cap * I, np.int64)
        rej_f = np.empty(arr_cap * I, np.bool_)
        cnt = np.zeros((6, I), np.int64)
        acc = np.zeros(7)
        misc = np.zeros(3, np.int64)
        g_ia, g_st = class_generators(seed, rep, I)
        status = engine.simulate(
            g_ia, g_st, su.prim_ia, su.prim_st, su.lam_n, np.array(d.mu_n), np.array(d.rho),
            np.array(d.theta_n), sn, su.cap, su.a_sc, su.red.order.astype(np.int64), int(su.red.istar),
            su.astar, engine.POLICIES[su.policy], su.X0, float(horizon), float(sample_dt),
            float(params.alpha), np.array(params.h_i), np.array(params.r_i), bool(check),
            sX, sZ, sT, adm_t, dep_t, rej_t, rej_c, rej_f, cnt, acc, misc,
        )
        if status != engine.OVERFLOW:
            break
        grow *= 2
    if status != engine.OK:
        raise InvariantViolation(
            f"{engine.VIOLATIONS.get(status, status)} broken at event {misc[2]} "
            f"(scenario {params.fingerprint()}, seed {seed}, rep {rep})")
    a = params.alpha
    tail = math.exp(-a * horizon) * (acc[engine.ACC_HX] + acc[engine.ACC_RZ] + a * acc[engine.ACC_IRZ])
    costs = {
        "direct_holding": float(acc[engine.ACC_DIRECT_H]),
        "direct_rejection": float(acc[engine.ACC_DIRECT_R]),
        "integrated_holding": float(acc[engine.ACC_INT_H]),
        "integrated_rejection": float(acc[engine.ACC_INT_R]),
        "tail": float(tail),
        "holding_integral": float(acc[engine.ACC_HX]),  # undiscounted int_0^T h.Xhat dt
    }
    costs["direct"] = costs["direct_holding"] + costs["direct_rejection"]
    costs["integrated"] = costs["integrated_holding"] + costs["integrated_rejection"]
    nrej = int(misc[0])
    log = CustomerLog(
        X0=su.X0.copy(),
        adm=tuple(adm_t[i, :cnt[4, i]].copy() for i in range(I)),
        dep=tuple(dep_t[i, :cnt[5, i]].copy() for i in range(I)),
        rej_t=rej_t[:nrej].copy(), rej_class=rej_c[:nrej].copy(), rej_forced=rej_f[:nrej].copy(),
        horizon=float(horizon),
    )
    counts = {"arrivals": cnt[0].copy(), "departures": cnt[1].copy(), "rejections": cnt[2].copy(),
              "forced": cnt[3].copy()}
    return SimRecord(
        fingerprint=params.fingerprint(), fingerprint_base=params.fingerprint_without_n(),
        seed=int(seed), rep=int(rep), n=params.n, policy=su.policy,
        horizon=float(horizon), sample_dt=float(sample_dt), astar=su.astar,
        t=sample_dt * np.arange(S), X=sX, Z=sZ, T=sT, theta_n=np.array(d.theta_n), mu_n=np.array(d.mu_n),
        rho=np.array(d.rho), costs=costs, counts=counts, events=int(misc[1]), log=log,
    )


def run(params: ScenarioParams, policy: str = "ao", T_horizon: float = 50.0, sample_dt: float = 0.01,
        seed: int = 0, *, rep: int = 0, astar: float | None = None, check_invariants: bool = True) -> SimRecord:
    """Simulate the n-th system (n = params.n) on [0, T_horizon].

    ``policy`` is "ao" (threshold rejection plus the rho-proportional
    priority allocation, with a = b - epsilon), "fixed_priority" (cmu
    priority, forced rejections only) or "serve_first" (class 1 only; an
    adversarial baseline). ``astar`` defaults to min(xstar, theta.a).
    """
    if not (T_horizon > 0 and math.isfinite(T_horizon)):
        raise HorizonNonPositive(f"T_horizon must be positive, got {T_horizon}")
    if not sample_dt > 0:
        raise ConfigError("sample_dt must be positive")
    su = setup(params, policy, astar)
    return _execute(su, T_horizon, sample_dt, seed, rep, check_invariants)


def truncation_bound(params: ScenarioParams, T_horizon: float) -> float:
    """Bound on the discounted cost beyond T_horizon.

    Holding is at most h.b per unit time; scaled rejections accrue at most
    at rate sum_i r_i lambda^n_i / sqrt(n) (every arrival rejected).
    """
    d = validate(params, allow_zero_costs=True)
    rate = float(np.dot(params.h_i, params.b_i) + np.dot(params.r_i, d.lambda_n) / math.sqrt(params.n))
    return math.exp(-params.alpha * T_horizon) * rate / params.alpha


def cost_estimate(params: ScenarioParams, policy: str = "ao", replications: int = 100,
                  T_horizon: float = 50.0, seed: int = 0, *, astar: float | None = None,
                  bias_budget: float = 1e-3, workers: int = 1, details: bool = False):
    """Monte-Carlo estimate of J^n with its standard error.

    Both the direct and the integrated form are accumulated; for every
    replication they must agree up to the finite-horizon tail term.
    With ``details`` a dict of per-replication arrays is returned as a third
    element.
    """
    if not (T_horizon > 0 and math.isfinite(T_horizon)):
        raise HorizonNonPositive(f"T_horizon must be positive, got {T_horizon}")
    bound = truncation_bound(params, T_horizon)
    if bound > bias_budget:
        raise BiasBudgetExceeded(f"truncation bound {bound:.3g} exceeds budget {bias_budget:.3g}; "
                                 f"increase T_horizon")
    su = setup(params, policy, astar)

    def one(r):
        rec = _execute(su, T_horizon, T_horizon, seed, r, False)
        return rec.costs, rec.counts["forced"].sum()

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(one, range(replications)))
    else:
        res = [one(r) for r in range(replications)]
    direct = np.array([c["direct"] for c, _ in res])
    integ = np.array([c["integrated"] for c, _ in res])
    tail = np.array([c["tail"] for c, _ in res])
    gap = np.abs(direct - integ - tail)
    scale = 1e-9 * (1.0 + np.abs(direct))
    if np.any(gap > scale):
        raise InvariantViolation(f"direct and integrated cost forms disagree by {gap.max():.3g}")
    est = float(direct.mean())
    se = float(direct.std(ddof=1) / math.sqrt(replications)) if replications > 1 else float("nan")
    if details:
        return est, se, {"direct": direct, "integrated": integ, "tail": tail,
                         "forced": np.array([f for _, f in res]), "truncation_bound": bound,
                         "astar": su.astar}
    return est, se


def ssc_deviation(record: SimRecord, red: ReductionObjects) -> float:
    """sup over the sampling grid of |Xhat(t) - gamma^a(theta_n.Xhat(t))| (Euclidean norm)."""
    w = np.clip(record.workload, 0.0, red.xbar)
    dev = record.Xhat - red.gamma_a(w)
    return float(np.sqrt((dev**2).sum(axis=1)).max())


# ----------------------------------------------------------------------
def policy_ao(params: ScenarioParams, astar: float, X) -> tuple[np.ndarray, np.ndarray]:
    """Decision of the threshold policy in state X (integer queue lengths of system n).

    Returns (reject, B): reject[i] tells whether a class-i arrival now would
    be turned away, B the effort allocation.
    """
    su = setup(params, "ao", astar)
    return _decide(su, X)


def policy_fixed_priority(params: ScenarioParams, X) -> np.ndarray:
    return _decide(setup(params, "fixed_priority"), X)[1]


def _decide(su: _Setup, X):
    X = np.asarray(X, dtype=np.int64)
    d = su.derived
    B = np.zeros(su.params.I)
    engine.allocate(engine.POLICIES[su.policy], X, su.red.order.astype(np.int64), su.a_sc, np.array(d.rho), B)
    code = engine.POLICIES[su.policy]
    rej = np.array([engine.admission(code, i, X, su.cap, int(su.red.istar), su.astar, np.array(d.theta_n),
                                     math.sqrt(su.params.n)) > 0 for i in range(su.params.I)])
    return rej, B
