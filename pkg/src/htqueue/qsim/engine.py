"""Event loop of the n-th system (numba).

State per class: integer queue length X_i, cumulative allocated effort T_i,
next arrival clock, and the next renewal epoch of the potential service
process (a departure happens when T_i reaches it). The allocation B is
recomputed at events only, so T advances linearly in between and the
discounted holding cost is integrated in closed form.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .primitives import draw

AO, FIXED_PRIORITY, SERVE_FIRST = 0, 1, 2
POLICIES = {"ao": AO, "fixed_priority": FIXED_PRIORITY, "serve_first": SERVE_FIRST}

OK, OVERFLOW = 0, -1
VIOLATIONS = {
    1: "flow conservation X = X(0) + A - D - Z",
    2: "buffer containment 0 <= X_i <= floor(b_i sqrt(n))",
    3: "allocation outside the admissible set",
    4: "work conservation",
    5: "priority premium B_i > rho_i on the served high-priority classes",
    6: "theta.Y nondecreasing",
}

# layout of the accumulator vector
ACC_DIRECT_H, ACC_DIRECT_R, ACC_INT_H, ACC_INT_R, ACC_HX, ACC_RZ, ACC_IRZ = range(7)


@njit(cache=True, nogil=True)
def allocate(policy, X, order, a_sc, rho, B):
    """Fill B for the state X; returns the priority position of the low class (AO) or -1."""
    I = X.size
    for i in range(I):
        B[i] = 0.0
    if policy == AO:
        L = I - 1
        for k in range(I - 1, -1, -1):
            if X[order[k]] < a_sc[order[k]]:
                L = k
                break
        s = 0.0
        for k in range(I):
            i = order[k]
            if k != L and X[i] > 0:
                s += rho[i]
        if s > 0.0:
            for k in range(I):
                i = order[k]
                if k != L and X[i] > 0:
                    B[i] = rho[i] / s
        else:
            i = order[I - 1]
            if X[i] > 0:
                B[i] = 1.0
        return L
    if policy == FIXED_PRIORITY:
        for k in range(I):
            i = order[k]
            if X[i] > 0:
                B[i] = 1.0
                break
        return -1
    # SERVE_FIRST: class 1 only, never anything else
    if X[0] > 0:
        B[0] = 1.0
    return -1


@njit(cache=True, nogil=True)
def admission(policy, i, X, cap, istar, astar, theta_n, sqrt_n):
    """0 admit, 1 threshold rejection, 2 forced rejection."""
    if X[i] + 1 > cap[i]:
        return 2
    if policy == AO and i == istar:
        w = 0.0
        for j in range(X.size):
            w += theta_n[j] * X[j]
        if w / sqrt_n >= astar:
            return 1
    return 0


@njit(cache=True, nogil=True)
def _violation(policy, X, X0, A, D, Z, cap, B, L, order, rho):
    I = X.size
    for i in range(I):
        if X[i] != X0[i] + A[i] - D[i] - Z[i]:
            return 1
    for i in range(I):
        if X[i] < 0 or X[i] > cap[i]:
            return 2
    tot = 0.0
    busy = False
    for i in range(I):
        if B[i] < 0.0 or (X[i] == 0 and B[i] != 0.0):
            return 3
        tot += B[i]
        if X[i] > 0:
            busy = True
    if tot > 1.0 + 1e-12:
        return 3
    if policy == AO:
        if busy and abs(tot - 1.0) > 1e-12:
            return 4
        for k in range(I):
            i = order[k]
            if k != L and X[i] > 0 and not B[i] > rho[i]:
                return 5
    return 0


@njit(cache=True, nogil=True)
def simulate(gens_ia, gens_st, prim_ia, prim_st, lam_n, mu_n, rho, theta_n, sqrt_n, cap, a_sc,
             order, istar, astar, policy, X0, horizon, sample_dt, alpha, h, r, check,
             sX, sZ, sT, adm_t, dep_t, rej_t, rej_c, rej_f, cnt, acc, misc):
    """Run one replication on [0, horizon]. Returns OK, OVERFLOW or a violation code.

    cnt rows: arrivals, departures, rejections, forced rejections, admissions,
    logged departures. misc: rejections logged, events, event index of a
    violation.
    """
    I = X0.size
    X = X0.copy()
    A = np.zeros(I, np.int64)
    D = np.zeros(I, np.int64)
    Z = np.zeros(I, np.int64)
    Zf = np.zeros(I, np.int64)
    nadm = np.zeros(I, np.int64)
    ndep = np.zeros(I, np.int64)
    T = np.zeros(I)
    thr = np.empty(I)
    nxt = np.empty(I)
    B = np.zeros(I)
    for i in range(I):
        thr[i] = draw(gens_st[i], int(prim_st[i, 0]), prim_st[i, 1], prim_st[i, 2]) / mu_n[i]
        if lam_n[i] > 0.0:
            nxt[i] = draw(gens_ia[i], int(prim_ia[i, 0]), prim_ia[i, 1], prim_ia[i, 2]) / lam_n[i]
        else:
            nxt[i] = np.inf
    for k in range(acc.size):
        acc[k] = 0.0
    L = allocate(policy, X, order, a_sc, rho, B)
    rhosum = 0.0
    for i in range(I):
        rhosum += rho[i]
    yslack = sqrt_n * max(0.0, 1.0 - rhosum)
    hx = 0.0
    for i in range(I):
        hx += h[i] * X[i] / sqrt_n
    rz = 0.0
    HX = 0.0
    IRZ = 0.0
    y = 0.0
    t = 0.0
    events = 0
    nrej = 0
    j = 0
    S = sX.shape[0]
    status = OK
    if check:
        status = _violation(policy, X, X0, A, D, Z, cap, B, L, order, rho)
    while status == OK:
        tn = np.inf
        kind = -1
        c = -1
        for i in range(I):
            if nxt[i] < tn:
                tn = nxt[i]
                kind = 0
                c = i
        for i in range(I):
            if B[i] > 0.0:
                td = t + (thr[i] - T[i]) / B[i]
                if td < tn:
                    tn = td
                    kind = 1
                    c = i
        last = tn > horizon
        if last:
            tn = horizon
        while j < S and (j * sample_dt < tn or (last and j * sample_dt <= horizon)):
            s = j * sample_dt
            for i in range(I):
                sX[j, i] = X[i]
                sZ[j, i] = Z[i]
                sT[j, i] = T[i] + B[i] * (s - t)
            j += 1
        dt = tn - t
        if dt > 0.0:
            e0 = math.exp(-alpha * t)
            u = alpha * dt
            em = -math.expm1(-u)
            E0 = e0 * em / alpha
            E1 = e0 * (em - u * math.exp(-u)) / (alpha * alpha)
            acc[ACC_DIRECT_H] += hx * E0
            acc[ACC_INT_H] += alpha * (HX * E0 + hx * E1)
            acc[ACC_INT_R] += alpha * alpha * (IRZ * E0 + rz * E1)
            HX += hx * dt
            IRZ += rz * dt
            for i in range(I):
                T[i] += B[i] * dt
        t = tn
        if last:
            break
        events += 1
        i = c
        if kind == 0:
            A[i] += 1
            dec = admission(policy, i, X, cap, istar, astar, theta_n, sqrt_n)
            if dec == 0:
                if nadm[i] >= adm_t.shape[1]:
                    status = OVERFLOW
                    break
                adm_t[i, nadm[i]] = t
                nadm[i] += 1
                X[i] += 1
            else:
                if nrej >= rej_t.size:
                    status = OVERFLOW
                    break
                Z[i] += 1
                if dec == 2:
                    Zf[i] += 1
                rej_t[nrej] = t
                rej_c[nrej] = i
                rej_f[nrej] = dec == 2
                nrej += 1
                acc[ACC_DIRECT_R] += r[i] / sqrt_n * math.exp(-alpha * t)
                rz += r[i] / sqrt_n
            nxt[i] = t + draw(gens_ia[i], int(prim_ia[i, 0]), prim_ia[i, 1], prim_ia[i, 2]) / lam_n[i]
        else:
            if ndep[i] >= dep_t.shape[1]:
                status = OVERFLOW
                break
            T[i] = thr[i]
            X[i] -= 1
            D[i] += 1
            dep_t[i, ndep[i]] = t
            ndep[i] += 1
            thr[i] += draw(gens_st[i], int(prim_st[i, 0]), prim_st[i, 1], prim_st[i, 2]) / mu_n[i]
        hx = 0.0
        for k in range(I):
            hx += h[k] * X[k] / sqrt_n
        L = allocate(policy, X, order, a_sc, rho, B)
        if check:
            status = _violation(policy, X, X0, A, D, Z, cap, B, L, order, rho)
            Tsum = 0.0
            for k in range(I):
                Tsum += T[k]
            ynew = sqrt_n * (rhosum * t - Tsum)
            if status == OK and ynew < y - (yslack * dt + 1e-9 * (1.0 + abs(ynew))):
                status = 6
            y = ynew
    acc[ACC_HX] = HX
    acc[ACC_RZ] = rz
    acc[ACC_IRZ] = IRZ
    for i in range(I):
        cnt[0, i] = A[i]
        cnt[1, i] = D[i]
        cnt[2, i] = Z[i]
        cnt[3, i] = Zf[i]
        cnt[4, i] = nadm[i]
        cnt[5, i] = ndep[i]
    misc[0] = nrej
    misc[1] = events
    misc[2] = events if status > 0 else -1
    return status
