"""Model parameters, validation and the workload-reduction objects.

Classes are indexed 0..I-1 internally; user-facing messages use 1-based
labels. The cmu priority order, the minimizing curve and the reduced
holding cost all live here because every other module needs them.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    InitialStateOutsideDomain,
    LoadNotCritical,
    NonPositiveParameter,
    UnknownConfigKey,
)

SCHEMA = "htqueue.scenario/1"
DISTRIBUTIONS = ("exponential", "erlang", "hyperexp2", "gamma", "lognormal", "uniform")

_VECTOR_FIELDS = (
    "lambda_i", "lambda_hat_i", "mu_i", "mu_hat_i", "C2_IA_i", "C2_ST_i",
    "h_i", "r_i", "b_i", "x0_i",
)


def _floats(v) -> tuple[float, ...]:
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class ScenarioParams:
    I: int
    lambda_i: tuple[float, ...]
    mu_i: tuple[float, ...]
    h_i: tuple[float, ...]
    r_i: tuple[float, ...]
    b_i: tuple[float, ...]
    alpha: float
    n: int = 1
    epsilon: float = 0.0
    x0_i: tuple[float, ...] | None = None
    lambda_hat_i: tuple[float, ...] | None = None
    mu_hat_i: tuple[float, ...] | None = None
    C2_IA_i: tuple[float, ...] | None = None
    C2_ST_i: tuple[float, ...] | None = None
    # optional extras
    sigmabar2: float | None = None
    load_tol: float = 1e-9
    ia_dist: tuple[str, ...] | None = None
    st_dist: tuple[str, ...] | None = None
    d_i: tuple[float, ...] | None = None
    name: str = ""

    def __post_init__(self):
        I = int(self.I)
        object.__setattr__(self, "I", I)
        object.__setattr__(self, "n", int(self.n))
        for f in ("alpha", "epsilon", "load_tol"):
            object.__setattr__(self, f, float(getattr(self, f)))
        defaults = {
            "x0_i": 0.0, "lambda_hat_i": 0.0, "mu_hat_i": 0.0,
            "C2_IA_i": 1.0, "C2_ST_i": 1.0,
        }
        for f in _VECTOR_FIELDS:
            v = getattr(self, f)
            if v is None:
                v = (defaults[f],) * I
            v = _floats(v)
            if len(v) != I:
                raise ConfigError(f"{f} has length {len(v)}, expected I={I}")
            object.__setattr__(self, f, v)
        for f in ("ia_dist", "st_dist"):
            v = getattr(self, f)
            v = ("exponential",) * I if v is None else tuple(str(s) for s in v)
            if len(v) != I:
                raise ConfigError(f"{f} has length {len(v)}, expected I={I}")
            bad = [s for s in v if s not in DISTRIBUTIONS]
            if bad:
                raise ConfigError(f"{f}: unknown distribution(s) {bad}; choose from {DISTRIBUTIONS}")
            object.__setattr__(self, f, v)
        if self.d_i is not None:
            object.__setattr__(self, "d_i", _floats(self.d_i))
        if self.sigmabar2 is not None:
            object.__setattr__(self, "sigmabar2", float(self.sigmabar2))

    def replace(self, **changes) -> "ScenarioParams":
        return dataclasses.replace(self, **changes)

    # --- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = {"schema": SCHEMA}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioParams":
        d = dict(d)
        schema = d.pop("schema", None)
        if schema is None:
            raise ConfigError("scenario document lacks the required 'schema' field")
        if schema != SCHEMA:
            raise ConfigError(f"unsupported scenario schema {schema!r} (expected {SCHEMA!r})")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise UnknownConfigKey(f"unknown scenario key(s): {', '.join(unknown)}")
        for req in ("I", "lambda_i", "mu_i", "h_i", "r_i", "b_i", "alpha"):
            if req not in d:
                raise ConfigError(f"scenario is missing required field {req!r}")
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def fingerprint_without_n(self) -> str:
        d = self.to_dict()
        d.pop("n")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def load_scenario(path) -> ScenarioParams:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return ScenarioParams.from_dict(doc)


def save_scenario(params: ScenarioParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2, sort_keys=True) + "\n")


def builtin_scenario(name: str) -> ScenarioParams:
    """Load one of the bundled scenarios ('example1', 'example2')."""
    p = Path(__file__).with_name("data") / f"{name}.json"
    if not p.exists():
        raise ConfigError(f"no bundled scenario named {name!r}")
    return load_scenario(p)


# ----------------------------------------------------------------------
@dataclass(frozen=True)
class DerivedConstants:
    I: int
    n: int
    alpha: float
    rho: np.ndarray
    theta: np.ndarray
    theta_n: np.ndarray
    m: np.ndarray
    sigma2: np.ndarray
    mbar: float
    sigmabar2: float
    xbar: float
    lambda_n: np.ndarray
    mu_n: np.ndarray
    relaxed_load: bool = False

    @property
    def sigmabar(self) -> float:
        return math.sqrt(self.sigmabar2)


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def validate(params: ScenarioParams, *, allow_zero_costs: bool = False) -> DerivedConstants:
    """Check the model invariants and compute the derived constants.

    ``allow_zero_costs`` admits h_i = 0 or r_i = 0, which the degenerate
    test cases use; production scenarios keep them strictly positive.
    """
    I = params.I
    if I < 1:
        raise ConfigError("I must be >= 1")
    if params.n < 1:
        raise NonPositiveParameter("scale index n must be >= 1")
    lam = np.array(params.lambda_i)
    mu = np.array(params.mu_i)
    h = np.array(params.h_i)
    r = np.array(params.r_i)
    b = np.array(params.b_i)
    for name, v in (("lambda_i", lam), ("mu_i", mu), ("b_i", b)):
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise NonPositiveParameter(f"{name} must be strictly positive, got {v.tolist()}")
    for name, v in (("h_i", h), ("r_i", r)):
        if not np.all(np.isfinite(v)) or np.any(v < 0) or (not allow_zero_costs and np.any(v == 0)):
            raise NonPositiveParameter(f"{name} must be strictly positive, got {v.tolist()}")
    if not (params.alpha > 0 and math.isfinite(params.alpha)):
        raise NonPositiveParameter(f"alpha must be positive, got {params.alpha}")
    for name in ("C2_IA_i", "C2_ST_i"):
        v = np.array(getattr(params, name))
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise NonPositiveParameter(f"{name} must lie in (0, inf), got {v.tolist()}")
    if params.sigmabar2 is not None and not params.sigmabar2 > 0:
        raise NonPositiveParameter("sigmabar2 override must be positive")

    rho = lam / mu
    load = float(rho.sum())
    if not params.load_tol > 0:
        raise ConfigError("load_tol must be positive")
    if abs(load - 1.0) > params.load_tol:
        raise LoadNotCritical(f"sum of rho_i = {load:.12g} differs from 1 by more than {params.load_tol:g}")

    if not (0.0 <= params.epsilon < b.min()):
        raise ConfigError(f"epsilon must lie in [0, min b_i) = [0, {b.min():g}), got {params.epsilon}")
    x0 = np.array(params.x0_i)
    if np.any(x0 < 0) or np.any(x0 > b):
        raise InitialStateOutsideDomain(f"x0 = {x0.tolist()} is outside [0, b] with b = {b.tolist()}")
    if params.d_i is not None and np.any(np.array(params.d_i) <= 0):
        raise NonPositiveParameter("deadlines d_i must be positive")

    n = params.n
    sn = math.sqrt(n)
    lam_hat = np.array(params.lambda_hat_i)
    mu_hat = np.array(params.mu_hat_i)
    lambda_n = n * lam + sn * lam_hat
    mu_n = n * mu + sn * mu_hat
    if np.any(lambda_n <= 0) or np.any(mu_n <= 0):
        raise NonPositiveParameter(f"n-th system rates must be positive (n={n})")
    theta = 1.0 / mu
    m = lam_hat - rho * mu_hat
    sigma2 = lam * (np.array(params.C2_IA_i) + np.array(params.C2_ST_i))
    sigmabar2 = float(np.sum(theta**2 * sigma2)) if params.sigmabar2 is None else params.sigmabar2
    return DerivedConstants(
        I=I, n=n, alpha=params.alpha,
        rho=_ro(rho), theta=_ro(theta),
        # normalized so that theta_n -> theta; multiplies the scaled state X/sqrt(n)
        theta_n=_ro(n / mu_n),
        m=_ro(m), sigma2=_ro(sigma2),
        mbar=float(theta @ m), sigmabar2=sigmabar2, xbar=float(theta @ b),
        lambda_n=_ro(lambda_n), mu_n=_ro(mu_n),
        relaxed_load=params.load_tol > 1e-9,
    )


def class_order(params: ScenarioParams) -> np.ndarray:
    """Classes sorted by h_i*mu_i, largest first; ties keep the original index order."""
    hmu = np.array(params.h_i) * np.array(params.mu_i)
    return np.argsort(-hmu, kind="stable")


def rejection_class(params: ScenarioParams) -> tuple[int, float]:
    rmu = np.array(params.r_i) * np.array(params.mu_i)
    istar = int(np.argmin(rmu))  # argmin returns the first minimizer
    return istar, float(rmu[istar])


# ----------------------------------------------------------------------
def _fill(w, theta, cap, fill_order):
    """Fill capacities cap[fill_order[0]], cap[fill_order[1]], ... with workload w."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape + (len(theta),))
    start = 0.0
    for i in fill_order:
        work = theta[i] * cap[i]
        out[..., i] = np.clip(w - start, 0.0, work) / theta[i]
        start += work
    return out


@dataclass(frozen=True)
class ReductionObjects:
    order: np.ndarray  # priority order, highest h*mu first
    istar: int
    rbar: float
    theta: np.ndarray
    h: np.ndarray
    b: np.ndarray
    a: np.ndarray
    epsilon: float
    xbar: float
    theta_a: float
    bhat: np.ndarray  # bhat[j] = sum of theta_i b_i over priority positions > j
    ahat: np.ndarray
    hbar_breaks: np.ndarray
    hbar_slopes: np.ndarray
    astar: float | None = None
    xstar: float | None = None
    zeta_star: np.ndarray = field(default=None)

    @property
    def fill_order(self) -> np.ndarray:
        return self.order[::-1]

    def _check(self, w):
        w = np.asarray(w, dtype=float)
        slack = 1e-12 * max(1.0, self.xbar)
        if np.any(~np.isfinite(w)) or np.any(w < -slack) or np.any(w > self.xbar + slack):
            raise DomainError(f"workload outside [0, {self.xbar:.6g}]")
        return np.clip(w, 0.0, self.xbar)

    def gamma(self, w):
        w = self._check(w)
        return _fill(w, self.theta, self.b, self.fill_order)

    def gamma_a(self, w):
        w = self._check(w)
        out = _fill(np.minimum(w, self.theta_a), self.theta, self.a, self.fill_order)
        span = self.xbar - self.theta_a
        if span > 0:
            frac = np.clip((w - self.theta_a) / span, 0.0, 1.0)[..., None]
            out = np.where(w[..., None] > self.theta_a, self.a + frac * (self.b - self.a), out)
        return out

    def hbar(self, w):
        return self.gamma(w) @ self.h

    def with_free_boundary(self, xstar: float) -> "ReductionObjects":
        return dataclasses.replace(self, xstar=float(xstar), astar=float(min(xstar, self.theta_a)))


def reduction(params: ScenarioParams, derived: DerivedConstants | None = None) -> ReductionObjects:
    if derived is None:
        derived = validate(params)
    order = class_order(params)
    istar, rbar = rejection_class(params)
    theta = np.array(derived.theta)
    b = np.array(params.b_i)
    a = b - params.epsilon
    h = np.array(params.h_i)
    I = params.I
    # bhat[j] for priority positions j = 0..I
    bhat = np.zeros(I + 1)
    ahat = np.zeros(I + 1)
    for j in range(I - 1, -1, -1):
        i = order[j]
        bhat[j] = bhat[j + 1] + theta[i] * b[i]
        ahat[j] = ahat[j + 1] + theta[i] * a[i]
    fill = order[::-1]
    breaks = np.concatenate([[0.0], np.cumsum(theta[fill] * b[fill])])
    slopes = (h * np.array(params.mu_i))[fill]
    zeta = np.zeros(I)
    zeta[istar] = params.mu_i[istar]
    return ReductionObjects(
        order=order, istar=istar, rbar=rbar, theta=theta, h=h, b=b, a=a,
        epsilon=params.epsilon, xbar=float(theta @ b), theta_a=float(theta @ a),
        bhat=bhat, ahat=ahat, hbar_breaks=breaks, hbar_slopes=slopes, zeta_star=zeta,
    )


def hbar_eval(red: ReductionObjects, w):
    return red.hbar(w)


def gamma_eval(red: ReductionObjects, w):
    return red.gamma(w)


def gamma_a_eval(red: ReductionObjects, w):
    return red.gamma_a(w)
