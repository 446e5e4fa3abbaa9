"""Minimum-norm margin problems ``min |b * w|^2  s.t.  <w, c_n> >= 1``.

The unweighted case (b = 1) is the hard-margin SVM without intercept.  A
diagonal weight is handled by the substitution ``u = b * w`` which turns it
into an unweighted problem over the constraints ``c_n / b``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import _kernels

KKT_TOL = 1e-10
MAX_SWEEPS = 1_000_000
DUAL_BOUND = 1e12
DEDUP_TOL = 1e-12
BRUTE_FORCE_MAX_N = 20
BRUTE_FORCE_MAX_P = 8

_CHUNK = 2_000


class MarginError(ValueError):
    """Base class for margin-problem failures."""


class InfeasibleError(MarginError):
    """No w satisfies <w, c_n> >= 1 for all n."""


class StagnationError(MarginError):
    """The iteration cap was reached with the KKT residual above tolerance."""


@dataclass(frozen=True)
class MarginProblem:
    constraints: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        c = np.array(self.constraints, dtype=np.float64)
        if c.ndim == 1:
            c = c[None, :]
        if c.ndim != 2 or c.shape[0] == 0 or c.shape[1] == 0:
            raise MarginError(f"constraints must be a non-empty N x p matrix, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise MarginError("constraints contain non-finite entries")
        if np.any(np.all(c == 0.0, axis=1)):
            raise MarginError("constraints must be nonzero vectors")
        object.__setattr__(self, "constraints", c)
        if self.weights is not None:
            b = np.array(self.weights, dtype=np.float64)
            if b.shape != (c.shape[1],):
                raise MarginError(f"weights have shape {b.shape}, expected ({c.shape[1]},)")
            if not np.all(np.isfinite(b)) or np.any(b <= 0):
                raise MarginError("weights must be finite and strictly positive")
            object.__setattr__(self, "weights", b)

    @property
    def transformed(self) -> np.ndarray:
        """Constraints of the equivalent unweighted problem in u = b * w."""
        if self.weights is None:
            return self.constraints
        return self.constraints / self.weights


@dataclass(frozen=True)
class MarginSolution:
    w_star: np.ndarray
    dual: np.ndarray
    active_set: tuple[int, ...]
    kkt_residual: float
    # minimizer of the unweighted problem over the transformed constraints
    u_star: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "w_star": [float(v) for v in self.w_star],
                "dual": [float(v) for v in self.dual],
                "active_set": list(self.active_set),
                "kkt_residual": float(self.kkt_residual),
            },
            indent=2,
        )


def _dedup(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique rows (first occurrence kept) and the index map original -> unique."""
    keep: list[int] = []
    owner = np.empty(C.shape[0], dtype=np.int64)
    for n, row in enumerate(C):
        for j, k in enumerate(keep):
            if np.max(np.abs(C[k] - row)) <= DEDUP_TOL:
                owner[n] = j
                break
        else:
            owner[n] = len(keep)
            keep.append(n)
    return np.asarray(keep, dtype=np.int64), owner


def _expand_dual(alpha_unique, keep, n_total):
    dual = np.zeros(n_total)
    dual[keep] = alpha_unique
    return dual


def _active_set(C, u):
    m = C @ u
    tol = 1e-6 * (1.0 + np.linalg.norm(C, axis=1))
    return tuple(int(n) for n in np.flatnonzero(np.abs(m - 1.0) <= tol))


def _is_infeasible(C: np.ndarray) -> bool:
    """LP test: max t s.t. <w, c_n> >= t, |w_i| <= 1.  Infeasible iff t* = 0."""
    n, p = C.shape
    scale = np.max(np.linalg.norm(C, axis=1))
    A = np.hstack([-C / scale, np.ones((n, 1))])
    res = linprog(
        c=np.r_[np.zeros(p), -1.0],
        A_ub=A,
        b_ub=np.zeros(n),
        bounds=[(-1.0, 1.0)] * p + [(None, 1.0)],
        method="highs",
    )
    if res.status != 0:
        raise MarginError(f"feasibility LP failed: {res.message}")
    return -res.fun <= 1e-12


def _polish(C, alpha, u=None):
    """Best exact solve on a candidate support; returns (alpha, u, residual) or None.

    Candidates are the (thresholded) support of ``alpha`` and the near-active
    constraints.  Each is solved as the min-norm point of its equality face;
    while a multiplier comes out negative the most negative constraint is
    dropped and the face re-solved.
    """
    m = C @ (C.T @ alpha if u is None else u)
    scale = np.max(alpha) if np.any(alpha > 0) else 1.0
    candidates = {tuple(np.flatnonzero(alpha > 0))}
    candidates.update(tuple(np.flatnonzero(alpha > tau * scale)) for tau in (1e-9, 1e-6))
    candidates.update(tuple(np.flatnonzero(np.abs(m - 1.0) <= tau)) for tau in (1e-6, 1e-4))
    best = None
    for support in candidates:
        idx = list(support)
        while idx:
            Ck = C[idx]
            # lstsq on C_K keeps the condition number of C_K, not its square
            u_face = np.linalg.lstsq(Ck, np.ones(len(idx)), rcond=None)[0]
            a_face = np.linalg.lstsq(Ck.T, u_face, rcond=None)[0]
            if np.all(a_face >= 0):
                a = np.zeros_like(alpha)
                a[idx] = a_face
                r = _kernels.kkt_residual(C, a, u_face)
                if best is None or r < best[2]:
                    best = (a, u_face, r)
                break
            del idx[int(np.argmin(a_face))]
    return best


def _nnls(A, b, max_iter=None):
    """Lawson-Hanson active-set NNLS: ``min |A x - b|`` over ``x >= 0``.

    scipy 1.15's ``nnls`` stops at points violating its own optimality
    conditions on some least-distance instances here, so the textbook
    algorithm is kept locally (subproblems by ``lstsq`` on the columns).
    """
    m, n = A.shape
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    tol = 10 * np.finfo(float).eps * np.abs(A).sum(axis=0).max() * max(m, n)
    max_iter = 3 * n if max_iter is None else max_iter
    w = A.T @ (b - A @ x)
    it = 0
    while np.any(~passive) and np.max(np.where(passive, -np.inf, w)) > tol and it < max_iter:
        it += 1
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            idx = np.flatnonzero(passive)
            s = np.zeros(n)
            s[idx] = np.linalg.lstsq(A[:, idx], b, rcond=None)[0]
            if np.all(s[idx] > 0):
                break
            neg = idx[s[idx] <= 0]
            step = np.min(x[neg] / (x[neg] - s[neg]))
            x = x + step * (s - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not np.any(passive):
                s = x
                break
        x = s
        w = A.T @ (b - A @ x)
    return x


def _least_distance(C):
    """Exact solve as a least-distance program; returns (alpha, u, residual) or None.

    ``min |u|  s.t.  C u >= 1`` reduces to nonnegative least squares on
    ``E = [C^T; 1^T]``, ``f = e_{p+1}``: with residual ``r = E a - f`` the
    minimizer is ``u = -r[:p] / r[p]`` and the multipliers are ``a / -r[p]``.
    Used when coordinate ascent crawls (nearly parallel constraints).
    """
    n, p = C.shape
    # unit-norm rows keep the NNLS columns comparably scaled
    norms = np.linalg.norm(C, axis=1)
    Cn = C / norms[:, None]
    E = np.vstack([Cn.T, (1.0 / norms)[None, :]])
    f = np.zeros(p + 1)
    f[p] = 1.0
    a = _nnls(E, f)
    r = E @ a - f
    if not r[p] < 0:
        return None
    alpha = a / norms / -r[p]
    u = -r[:p] / r[p]
    return _polish(C, alpha, u)


def _solve_unweighted(C: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    if _is_infeasible(C):
        raise InfeasibleError("constraint system <w, c_n> >= 1 has no solution")
    alpha = np.zeros(C.shape[0])
    sweeps = 0
    res = np.inf
    while sweeps < MAX_SWEEPS:
        alpha, u, res, done, status = _kernels.dual_coordinate_ascent(
            C, alpha, KKT_TOL, min(_CHUNK, MAX_SWEEPS - sweeps), DUAL_BOUND
        )
        sweeps += done
        if status == 2:
            raise InfeasibleError("dual iterates diverged; constraints are infeasible")
        # coordinate ascent converges linearly; an exact solve on its support
        # recovers the last digits (and rescues slow, ill-conditioned duals)
        polished = _polish(C, alpha)
        if polished is not None:
            a_p, u_p, r_p = polished
            if r_p < KKT_TOL and r_p <= res:
                return a_p, u_p, r_p
        if status == 0:
            return alpha, u, res
        exact = _least_distance(C)
        if exact is not None and exact[2] < KKT_TOL:
            return exact
    raise StagnationError(
        f"dual coordinate ascent stopped after {sweeps} sweeps with KKT residual {res:.3e}"
    )


def solve_hard_margin(problem: MarginProblem) -> MarginSolution:
    if problem.weights is not None:
        raise MarginError("solve_hard_margin expects an unweighted problem")
    C = problem.constraints
    keep, _ = _dedup(C)
    alpha_u, u, _ = _solve_unweighted(C[keep])
    dual = _expand_dual(alpha_u, keep, C.shape[0])
    return MarginSolution(
        w_star=u,
        dual=dual,
        active_set=_active_set(C, u),
        kkt_residual=float(_kernels.kkt_residual(C, dual, u)),
        u_star=u,
    )


def solve_weighted_margin(problem: MarginProblem) -> MarginSolution:
    """Minimize ``|b * w|^2`` over the margin constraints.

    With ``b = 1/sqrt(h_inf)`` the transformed constraints are the
    preconditioner-rescaled features ``sqrt(h_inf) * c_n``.
    """
    if problem.weights is None:
        return solve_hard_margin(problem)
    b = problem.weights
    inner = solve_hard_margin(MarginProblem(problem.transformed))
    return MarginSolution(
        w_star=inner.w_star / b,
        dual=inner.dual,
        active_set=inner.active_set,
        kkt_residual=inner.kkt_residual,
        u_star=inner.w_star,
    )


def brute_force_margin(problem: MarginProblem) -> MarginSolution:
    """Exact solve by enumerating candidate active sets.

    Subsets are visited by size, then in lexicographic order; each linearly
    independent subset gives the minimum-norm point on its equality face, and
    the candidate is kept when it is primal feasible with nonnegative
    multipliers.  Some optimal dual always has independent support, so the
    enumeration cannot miss the optimum.
    """
    C_full = problem.constraints
    n_total, p = C_full.shape
    if n_total > BRUTE_FORCE_MAX_N or p > BRUTE_FORCE_MAX_P:
        raise MarginError(
            f"brute force limited to N <= {BRUTE_FORCE_MAX_N}, p <= {BRUTE_FORCE_MAX_P}"
        )
    C_all = problem.transformed
    keep, _ = _dedup(C_all)
    C = C_all[keep]
    n = C.shape[0]

    best = None
    for size in range(1, min(n, p) + 1):
        for subset in itertools.combinations(range(n), size):
            Ck = C[list(subset)]
            if np.linalg.matrix_rank(Ck) < size:
                continue
            # face point and multipliers from C_K itself; the Gram matrix
            # would square the condition number
            u = np.linalg.lstsq(Ck, np.ones(size), rcond=None)[0]
            a_k = np.linalg.lstsq(Ck.T, u, rcond=None)[0]
            if np.any(a_k < -1e-12 * max(1.0, np.max(np.abs(a_k)))):
                continue
            if np.any(C @ u < 1.0 - 1e-9):
                continue
            norm = float(u @ u)
            if best is None or norm < best[0] * (1.0 - 1e-14):
                alpha = np.zeros(n)
                alpha[list(subset)] = np.maximum(a_k, 0.0)
                best = (norm, u, alpha)
    if best is None:
        raise InfeasibleError("no feasible active set; constraints are infeasible")

    _, u, alpha_u = best
    dual = _expand_dual(alpha_u, keep, n_total)
    b = problem.weights if problem.weights is not None else np.ones(p)
    return MarginSolution(
        w_star=u / b,
        dual=dual,
        active_set=_active_set(C_all, u),
        kkt_residual=float(_kernels.kkt_residual(C_all, dual, u)),
        u_star=u,
    )


def feasibility(problem: MarginProblem) -> tuple[bool, np.ndarray | None]:
    """Whether ``<w, c_n> >= 1`` is solvable; the witness is the margin solution."""
    C = problem.constraints
    if _is_infeasible(C):
        return False, None
    return True, solve_hard_margin(MarginProblem(C)).w_star
