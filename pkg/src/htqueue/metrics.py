"""Throughput times, pathwise Little's-law residuals and compliance statistics.

Theta_i(t) is the sojourn time of the first class-i customer admitted
strictly after t. On a finite horizon two things can go wrong:
  - no admission after t ("undefined"): excluded from every statistic;
  - that customer is still in the system at the horizon ("censored"): we
    only know Theta >= horizon - AT. Censored points are excluded from the
    Little residual but kept, as lower bounds, in the compliance statistic
    (a lower bound above the deadline is already a violation).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import MismatchedScenarios, NoAdmissions
from .qsim.sim import CustomerLog, SimRecord


@dataclass
class ThroughputTimes:
    t: np.ndarray
    n: int
    Theta: np.ndarray  # (S, I); nan where undefined
    AT: np.ndarray
    DT: np.ndarray  # nan where censored
    undefined: np.ndarray
    censored: np.ndarray

    @property
    def Theta_hat(self) -> np.ndarray:
        return math.sqrt(self.n) * self.Theta


def admission_departures(log: CustomerLog, i: int) -> np.ndarray:
    """Departure stamp of every admitted class-i customer (nan if after the horizon)."""
    adm, dep = log.adm[i], log.dep[i]
    idx = log.X0[i] + np.arange(adm.size)
    out = np.full(adm.size, np.nan)
    ok = idx < dep.size
    out[ok] = dep[idx[ok]]
    return out


def departure_by_count(log: CustomerLog, i: int, AT: float) -> float:
    """DT from the counting definition: the first time D_i reaches D_i(AT) + X_i(AT)."""
    dep, adm = log.dep[i], log.adm[i]
    D_at = int(np.searchsorted(dep, AT, side="right"))
    X_at = int(log.X0[i]) + int(np.searchsorted(adm, AT, side="right")) - D_at
    k = D_at + X_at  # number of departures needed
    return float(dep[k - 1]) if k <= dep.size else math.nan


def throughput_times(log: CustomerLog, t_grid, n: int, *, strict: bool = True) -> ThroughputTimes:
    """Theta on t_grid. With strict=False a class without admissions is
    returned as undefined everywhere instead of raising NoAdmissions."""
    t_grid = np.asarray(t_grid, dtype=float)
    I = log.I
    S = t_grid.size
    Theta = np.full((S, I), np.nan)
    AT = np.full((S, I), np.nan)
    DT = np.full((S, I), np.nan)
    undefined = np.zeros((S, I), bool)
    censored = np.zeros((S, I), bool)
    for i in range(I):
        adm = log.adm[i]
        if adm.size == 0:
            if strict:
                raise NoAdmissions(i)
            undefined[:, i] = True
            continue
        dts = admission_departures(log, i)
        k = np.searchsorted(adm, t_grid, side="right")
        undefined[:, i] = k >= adm.size
        kk = np.minimum(k, adm.size - 1)
        at = adm[kk]
        dt = dts[kk]
        cens = ~undefined[:, i] & np.isnan(dt)
        censored[:, i] = cens
        th = np.where(cens, log.horizon - at, dt - at)
        th[undefined[:, i]] = np.nan
        Theta[:, i] = th
        AT[:, i] = np.where(undefined[:, i], np.nan, at)
        DT[:, i] = np.where(undefined[:, i] | cens, np.nan, dt)
    return ThroughputTimes(t_grid, int(n), Theta, AT, DT, undefined, censored)


def littles_residual(record: SimRecord, lam, log: CustomerLog | None = None,
                     T: float | None = None) -> np.ndarray:
    """Per-class sup_t |Xhat_i(t) - lambda_i Theta_hat_i(t)| over the sampling grid up to T.

    A class that is empty throughout and never admits anyone has residual 0;
    one that holds customers but admits nobody raises NoAdmissions.
    """
    log = record.log if log is None else log
    T = record.horizon if T is None else T
    sel = record.t <= T + 1e-12
    tt = throughput_times(log, record.t[sel], record.n, strict=False)
    for i in range(log.I):
        if log.adm[i].size == 0 and np.any(record.X[sel, i] > 0):
            raise NoAdmissions(i)
    resid = np.abs(record.Xhat[sel] - np.asarray(lam, dtype=float) * tt.Theta_hat)
    keep = ~(tt.undefined | tt.censored)
    return np.where(keep, resid, 0.0).max(axis=0)


def little_average_gap(record: SimRecord, lam) -> np.ndarray:
    """|time-average Xhat_i - lambda_i time-average Theta_hat_i| on the points used by littles_residual."""
    tt = throughput_times(record.log, record.t, record.n, strict=False)
    keep = ~(tt.undefined | tt.censored)
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(record.log.I)
    for i in range(out.size):
        k = keep[:, i]
        if k.any():
            out[i] = abs(record.Xhat[k, i].mean() - lam[i] * tt.Theta_hat[k, i].mean())
    return out


def compliance_statistic(record: SimRecord, d) -> np.ndarray:
    """Per-class sup_t (Theta_hat_i(t) - d_i)^+; censored points enter as lower bounds."""
    tt = throughput_times(record.log, record.t, record.n)
    d = np.asarray(d, dtype=float)
    exc = np.clip(tt.Theta_hat - d, 0.0, None)
    exc = np.where(tt.undefined | ~np.isfinite(exc), 0.0, exc)
    return exc.max(axis=0)


# ----------------------------------------------------------------------
def sign_test(series: dict, k: int = 8, m: int = 10) -> dict:
    """Seed-paired trend test across consecutive n.

    ``series`` maps n to per-seed statistics (same seed order for every n).
    For each consecutive pair (n, n') the statistic must decrease in at least
    a k/m fraction of the untied seeds; pairs where every seed ties at zero
    pass (the statistic has already vanished).
    """
    ns = sorted(series)
    if len(ns) < 2:
        return {"verdict": "insufficient series", "pairs": []}
    pairs = []
    ok = True
    for n1, n2 in zip(ns, ns[1:]):
        s1 = np.asarray(series[n1], dtype=float)
        s2 = np.asarray(series[n2], dtype=float)
        if s1.shape != s2.shape:
            raise MismatchedScenarios(f"series for n={n1} and n={n2} have different seed counts")
        dec = int(np.sum(s2 < s1))
        ties = int(np.sum(s2 == s1))
        untied = s1.size - ties
        if untied == 0:
            passed = bool(np.all(s1 == 0))
        else:
            passed = dec >= math.ceil(k / m * untied - 1e-12)
        ok &= passed
        pairs.append({"n": n1, "n_next": n2, "decreases": dec, "ties": ties, "seeds": int(s1.size),
                      "passed": bool(passed)})
    return {"verdict": "decreasing" if ok else "not decreasing", "pairs": pairs, "k": k, "m": m}


@dataclass
class ComplianceReport:
    deadlines: list
    b: list
    n_list: list
    compliance: dict  # n -> per seed, per class sup (Theta_hat - d)^+
    little: dict  # n -> per seed, per class sup |E|
    compliance_trend: dict
    little_trend: dict
    fingerprint: str
    seeds: list = field(default_factory=list)

    def max_statistic(self, n) -> np.ndarray:
        return np.asarray(self.compliance[n]).max(axis=1)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["compliance"] = {str(k): np.asarray(v).tolist() for k, v in self.compliance.items()}
        doc["little"] = {str(k): np.asarray(v).tolist() for k, v in self.little.items()}
        return json.dumps(doc, indent=2, sort_keys=True)


def _by_seed(records, values):
    """Mean of ``values`` over the replications of each seed, seeds in first-seen order."""
    seeds = list(dict.fromkeys(r.seed for r in records))
    v = np.asarray(values, dtype=float)
    return seeds, np.array([v[[k for k, r in enumerate(records) if r.seed == s]].mean() for s in seeds])


def compliance_check(records: dict, d, lam, *, k: int = 8, m: int = 10) -> ComplianceReport:
    """Compliance and Little statistics for records[n] = [records].

    All records must come from one scenario up to n. The trend tests pair
    runs by seed; several replications of one seed are averaged first.
    """
    bases = {r.fingerprint_base for rs in records.values() for r in rs}
    if len(bases) > 1:
        raise MismatchedScenarios(f"records come from {len(bases)} different scenarios")
    seeds = None
    comp, lit, comp_s, lit_s = {}, {}, {}, {}
    for n in sorted(records):
        rs = records[n]
        comp[n] = np.array([compliance_statistic(r, d) for r in rs])
        lit[n] = np.array([littles_residual(r, lam) for r in rs])
        s, comp_s[n] = _by_seed(rs, comp[n].max(axis=1))
        _, lit_s[n] = _by_seed(rs, lit[n].max(axis=1))
        if seeds is None:
            seeds = s
        elif s != seeds:
            raise MismatchedScenarios(f"seed list for n={n} differs from the first n")
    d = np.asarray(d, dtype=float)
    return ComplianceReport(
        deadlines=d.tolist(), b=(np.asarray(lam, dtype=float) * d).tolist(), n_list=sorted(records),
        compliance=comp, little=lit,
        compliance_trend=sign_test(comp_s, k, m), little_trend=sign_test(lit_s, k, m),
        fingerprint=next(iter(bases)) if bases else "", seeds=list(seeds or []),
    )
