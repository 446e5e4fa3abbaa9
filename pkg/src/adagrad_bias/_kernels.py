"""Compiled inner loops.

Direction convergence is logarithmic in t, so runs need 10^6-10^7 steps; a
per-step Python loop is two orders of magnitude too slow for that.
"""

import math

import numpy as np
from numba import njit

EXPONENTIAL = 0
LOGISTIC = 1

STOP_MAX_ITERS = 0
STOP_GRAD_TOL = 1
STOP_NONFINITE = 2


@njit(cache=True)
def _loss_and_slope(kind, u):
    if kind == EXPONENTIAL:
        e = math.exp(-u)
        return e, -e
    if u >= 0.0:
        e = math.exp(-u)
        return math.log1p(e), -e / (1.0 + e)
    e = math.exp(u)
    return -u + math.log1p(e), -1.0 / (1.0 + e)


@njit(cache=True)
def _grad_into(Z, kind, w, g):
    n, p = Z.shape
    for i in range(p):
        g[i] = 0.0
    loss = 0.0
    for k in range(n):
        m = 0.0
        for i in range(p):
            m += Z[k, i] * w[i]
        lv, dl = _loss_and_slope(kind, m)
        loss += lv
        for i in range(p):
            g[i] += dl * Z[k, i]
    return loss


@njit(cache=True)
def _norm(v):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * v[i]
    return math.sqrt(s)


@njit(cache=True)
def _all_finite(v):
    for i in range(v.shape[0]):
        if not math.isfinite(v[i]):
            return False
    return True


@njit(cache=True)
def _record(k, t, w, g, h, S, loss, rec):
    rec_t, rec_w, rec_g, rec_h, rec_S, rec_loss = rec
    rec_t[k] = t
    rec_loss[k] = loss
    for i in range(w.shape[0]):
        rec_w[k, i] = w[i]
        rec_g[k, i] = g[i]
        rec_h[k, i] = h[i]
        rec_S[k, i] = S[i]


@njit(cache=True)
def run_kernel(Z, kind, adaptive, eta, eps, w0, max_iters, grad_tol, stride):
    """Iterate GD (adaptive=False) or diagonal AdaGrad from ``w0``.

    State convention: at step t the accumulator S already contains g(t)^2,
    and h(t) = 1/sqrt(S(t) + eps) is the preconditioner used for the step
    t -> t+1.
    """
    p = Z.shape[1]
    cap = max_iters // stride + 2
    rec_t = np.empty(cap, dtype=np.int64)
    rec_w = np.empty((cap, p))
    rec_g = np.empty((cap, p))
    rec_h = np.empty((cap, p))
    rec_S = np.empty((cap, p))
    rec_loss = np.empty(cap)
    rec = (rec_t, rec_w, rec_g, rec_h, rec_S, rec_loss)

    w = w0.copy()
    g = np.empty(p)
    h = np.ones(p)
    S = np.empty(p)
    w_new = np.empty(p)
    g_new = np.empty(p)

    loss = _grad_into(Z, kind, w, g)
    for i in range(p):
        S[i] = g[i] * g[i]
        if adaptive:
            h[i] = 1.0 / math.sqrt(S[i] + eps)
    _record(0, 0, w, g, h, S, loss, rec)
    n_rec = 1
    t = 0
    stop = STOP_MAX_ITERS

    while t < max_iters:
        if _norm(g) < grad_tol:
            stop = STOP_GRAD_TOL
            break
        for i in range(p):
            w_new[i] = w[i] - eta * h[i] * g[i]
        loss_new = _grad_into(Z, kind, w_new, g_new)
        if not (_all_finite(w_new) and _all_finite(g_new) and math.isfinite(loss_new)):
            stop = STOP_NONFINITE
            break
        for i in range(p):
            w[i] = w_new[i]
            g[i] = g_new[i]
            S[i] += g[i] * g[i]
            if adaptive:
                h[i] = 1.0 / math.sqrt(S[i] + eps)
        loss = loss_new
        t += 1
        if t % stride == 0:
            _record(n_rec, t, w, g, h, S, loss, rec)
            n_rec += 1

    if rec_t[n_rec - 1] != t:
        _record(n_rec, t, w, g, h, S, loss, rec)
        n_rec += 1

    return (
        rec_t[:n_rec],
        rec_w[:n_rec],
        rec_g[:n_rec],
        rec_h[:n_rec],
        rec_S[:n_rec],
        rec_loss[:n_rec],
        t,
        w,
        g,
        S,
        loss,
        stop,
    )


@njit(cache=True)
def kkt_residual(C, alpha, u):
    """Scale-aware KKT error of (alpha, u) for min |u|^2 s.t. <u, c_n> >= 1.

    Max of the primal violation, complementary slackness sum_n a_n |<u,c_n> - 1|
    relative to max(1, sum a) (which equals |u|^2 at the optimum) and the
    stationarity error |u - C^T a| relative to max(1, |u|).
    """
    n, p = C.shape
    res = 0.0
    slack = 0.0
    mass = 0.0
    for k in range(n):
        m = 0.0
        for i in range(p):
            m += C[k, i] * u[i]
        if 1.0 - m > res:
            res = 1.0 - m
        slack += alpha[k] * abs(m - 1.0)
        mass += alpha[k]
    slack /= max(1.0, mass)
    if slack > res:
        res = slack
    st = 0.0
    un = 0.0
    for i in range(p):
        s = 0.0
        for k in range(n):
            s += alpha[k] * C[k, i]
        st += (u[i] - s) ** 2
        un += u[i] * u[i]
    st = math.sqrt(st) / max(1.0, math.sqrt(un))
    if st > res:
        res = st
    return res


@njit(cache=True)
def dual_coordinate_ascent(C, alpha0, tol, max_sweeps, alpha_bound):
    """Maximize sum(a) - |C^T a|^2 / 2 over a >= 0, one exact coordinate at a time.

    Warm-starts from ``alpha0`` (nonnegative).

    Returns (alpha, u, residual, sweeps, status) with status 0 = converged,
    1 = sweep cap hit, 2 = dual iterates exceeded ``alpha_bound``.
    """
    n, p = C.shape
    q = np.empty(n)
    for k in range(n):
        s = 0.0
        for i in range(p):
            s += C[k, i] * C[k, i]
        q[k] = s
    alpha = alpha0.copy()
    u = np.zeros(p)
    for i in range(p):
        s = 0.0
        for k in range(n):
            s += alpha[k] * C[k, i]
        u[i] = s
    res = np.inf
    sweep = 0
    while sweep < max_sweeps:
        sweep += 1
        for k in range(n):
            m = 0.0
            for i in range(p):
                m += C[k, i] * u[i]
            new = alpha[k] + (1.0 - m) / q[k]
            if new < 0.0:
                new = 0.0
            step = new - alpha[k]
            if step != 0.0:
                alpha[k] = new
                for i in range(p):
                    u[i] += step * C[k, i]
        # rebuild u from alpha to stop rounding drift in the running sum
        if sweep % 64 == 0:
            for i in range(p):
                s = 0.0
                for k in range(n):
                    s += alpha[k] * C[k, i]
                u[i] = s
        total = 0.0
        for k in range(n):
            total += alpha[k]
        if total > alpha_bound:
            return alpha, u, res, sweep, 2
        res = kkt_residual(C, alpha, u)
        if res < tol:
            return alpha, u, res, sweep, 0
    return alpha, u, res, sweep, 1
