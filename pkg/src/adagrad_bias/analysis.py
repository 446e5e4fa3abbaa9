"""Direction diagnostics, trajectory checkers and closed-form reference examples."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .maxmargin import MarginProblem, solve_hard_margin, solve_weighted_margin
from .model import Dataset, Hyperparams, LossModel, make_dataset
from .optim import (
    InducedSequence,
    Optimizer,
    Trajectory,
    estimate_h_infinity,
    induced_sequence,
    run,
)


def angle(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("angle is undefined for a zero vector")
    a, b = u / nu, v / nv
    # equals arccos(<a, b>) but keeps full precision near 0 and pi, where
    # arccos only resolves angles down to ~1e-8
    return float(2.0 * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


@dataclass(frozen=True)
class ProjectionSplit:
    reference: np.ndarray
    p_component: np.ndarray
    q_component: np.ndarray
    p_norm: float
    q_norm: float


def projection_split(v, u_hat) -> ProjectionSplit:
    """Split ``v`` into its component along the unit vector ``u_hat`` and the rest."""
    v = np.asarray(v, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if abs(np.linalg.norm(u_hat) - 1.0) > 1e-10:
        raise ValueError("reference direction must have unit norm")
    pv = (v @ u_hat) * u_hat
    qv = v - pv
    return ProjectionSplit(u_hat, pv, qv, float(np.linalg.norm(pv)), float(np.linalg.norm(qv)))


# --------------------------------------------------------------------------
# checkers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    holds: bool
    onset_step: int | None
    worst_violation: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "holds": bool(self.holds),
            "onset_step": None if self.onset_step is None else int(self.onset_step),
            "worst_violation": float(self.worst_violation),
            "details": to_jsonable(self.details),
        }


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def onset_index(ok) -> int | None:
    """First index from which ``ok`` stays true through the end, or None."""
    ok = np.asarray(ok, dtype=bool)
    if ok.size == 0:
        return 0
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    return 0 if bad.size == 0 else int(bad[-1]) + 1


def _global(name, ok, violation, t, details) -> CheckOutcome:
    # properties that must hold at every recorded step; the eventual onset is
    # only reported as a diagnostic
    k = onset_index(ok)
    holds = bool(np.all(ok))
    if k is None:
        eventual = None
    else:
        eventual = int(t[k]) if k < len(t) else 0
    details = dict(details, eventual_onset=eventual)
    return CheckOutcome(name, holds, 0 if holds else None, float(violation), details)


def check_descent(traj: Trajectory) -> CheckOutcome:
    diffs = np.diff(traj.loss)
    ok = diffs < 0
    worst = float(np.max(diffs, initial=0.0)) if not np.all(ok) else 0.0
    return _global("descent", ok, max(worst, 0.0), traj.t[:-1], {"pairs": int(diffs.size)})


def check_summability(traj: Trajectory) -> CheckOutcome:
    """Half-run increment of ``sum_t |g(t)|^2`` must be under 10% of the total."""
    T = traj.terminal_state.t
    total = float(np.sum(traj.S[-1]))
    if T < 2:
        return CheckOutcome("summability", True, 0, 0.0, {"total": total, "vacuous": True})
    mid = traj.index_nearest(T / 2)
    increment = total - float(np.sum(traj.S[mid]))
    ratio = increment / total if total > 0 else 0.0
    holds = ratio < 0.1
    return CheckOutcome(
        "summability",
        holds,
        0 if holds else None,
        max(ratio - 0.1, 0.0),
        {"total": total, "last_half_increment": increment, "ratio": ratio},
    )


def check_divergence_and_margins(traj: Trajectory, data: Dataset) -> CheckOutcome:
    T = traj.terminal_state.t
    mid = traj.index_nearest(T / 2)
    wn = np.linalg.norm(traj.w, axis=1)
    gn = traj.grad_norms
    grows = bool(wn[-1] > wn[mid])
    loss_drops = bool(traj.loss[-1] < traj.loss[mid])
    grad_drops = bool(gn[-1] < gn[mid])
    m = traj.w @ data.signed_features.T
    min_margin = m.min(axis=1)
    k = onset_index(min_margin > 0)
    onset = None if k is None else int(traj.t[k])
    holds = grows and loss_drops and grad_drops and onset is not None
    return CheckOutcome(
        "divergence_and_margins",
        holds,
        onset if holds else None,
        float(max(0.0, -min_margin[-1])),
        {
            "norm_grows": grows,
            "loss_drops": loss_drops,
            "grad_drops": grad_drops,
            "margin_onset": onset,
            "final_min_margin": float(min_margin[-1]),
        },
    )


def check_preconditioner_convergence(traj: Trajectory, epsilon: float) -> CheckOutcome:
    if traj.optimizer is not Optimizer.ADAGRAD:
        raise ValueError("preconditioner convergence applies to AdaGrad trajectories")
    dh = np.diff(traj.h, axis=0)
    monotone = np.all(dh <= 0, axis=1)
    worst_rise = float(np.max(dh, initial=0.0))
    h_inf, drift = estimate_h_infinity(traj, epsilon)
    positive = bool(np.all(h_inf > 0))
    mid = traj.index_nearest(traj.terminal_state.t / 2)
    binding = 0 < mid < len(traj.t) - 1
    tail_ok = drift < 0.05 or not binding
    holds = bool(np.all(monotone)) and positive and tail_ok
    return CheckOutcome(
        "preconditioner_convergence",
        holds,
        0 if holds else None,
        max(worst_rise, drift - 0.05 if binding else 0.0, 0.0),
        {
            "monotone": bool(np.all(monotone)),
            "positive": positive,
            "tail_error": drift,
            "tail_binding": binding,
            "h_inf": h_inf,
        },
    )


RTOL = 1e-12


def check_projection_bounds(seq: InducedSequence, u_hat, xi) -> CheckOutcome:
    """Projection inequalities of the rescaled iterates, each from a finite onset.

    ``u_hat`` is the minimizer of ``|u|^2`` subject to ``<u, xi_n> >= 1``.  With
    ``e = u_hat/|u_hat|`` and ``kappa = max_n |xi_n| * |u_hat|`` (the largest
    feature norm in units of the hard margin), checks at every recorded step:

    - ``<delta, e> >= |delta| / kappa``
    - ``|delta|/2 <= |d| <= 3|delta|/2``
    - ``<d, e> >= |d| / (4 kappa)``
    - ``|<v, e>| >= |v| / (8 kappa)``
    """
    if seq is None or seq.v.size == 0:
        raise ValueError("induced quantities are missing")
    u_hat = np.asarray(u_hat, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    e = u_hat / np.linalg.norm(u_hat)
    kappa = float(np.max(np.linalg.norm(xi, axis=1)) * np.linalg.norm(u_hat))

    nd = np.linalg.norm(seq.delta, axis=1)
    ndd = np.linalg.norm(seq.d, axis=1)
    nv = np.linalg.norm(seq.v, axis=1)
    pdelta = seq.delta @ e
    pd = seq.d @ e
    pv = np.abs(seq.v @ e)

    # equality cases (delta parallel to e, beta(t) = 1) must survive rounding
    lo, hi = 1.0 - RTOL, 1.0 + RTOL
    tests = {
        "delta_projection": (pdelta > 0) & (pdelta >= lo * nd / kappa),
        "step_ratio": (ndd >= lo * 0.5 * nd) & (ndd <= hi * 1.5 * nd),
        "step_projection": (pd > 0) & (pd >= lo * ndd / (4 * kappa)),
        "iterate_projection": pv >= lo * nv / (8 * kappa),
    }
    # violations are relative to the scale of the bounded quantity
    with np.errstate(invalid="ignore", divide="ignore"):
        violations = {
            "delta_projection": np.nan_to_num((nd / kappa - pdelta) / nd),
            "step_ratio": np.nan_to_num(np.maximum(0.5 * nd - ndd, ndd - 1.5 * nd) / nd),
            "step_projection": np.nan_to_num((ndd / (4 * kappa) - pd) / ndd),
            "iterate_projection": np.nan_to_num((nv / (8 * kappa) - pv) / nv),
        }
    details = {"kappa": kappa}
    onsets = []
    worst = 0.0
    for name, ok in tests.items():
        k = onset_index(ok)
        onset = None if k is None else int(seq.t[min(k, len(seq.t) - 1)])
        details[name] = {
            "onset_step": onset,
            "worst_violation": float(max(0.0, np.max(violations[name], initial=0.0))),
        }
        onsets.append(onset)
        worst = max(worst, details[name]["worst_violation"])
    holds = all(o is not None for o in onsets)
    return CheckOutcome("projection_bounds", holds, max(onsets) if holds else None, worst, details)


def projection_bounds_for_run(traj: Trajectory, model: LossModel, data: Dataset) -> CheckOutcome:
    h_inf, _ = estimate_h_infinity(traj, traj.hp.epsilon)
    seq = induced_sequence(traj, h_inf, model, data)
    sol = solve_hard_margin(MarginProblem(seq.xi))
    return check_projection_bounds(seq, sol.w_star, seq.xi)


# --------------------------------------------------------------------------
# directions
# --------------------------------------------------------------------------

DIRECTION_NAMES = ("adagrad_empirical", "adagrad_predicted", "gd_empirical", "svm")


@dataclass(frozen=True)
class DirectionReport:
    adagrad_dir_empirical: np.ndarray
    adagrad_dir_predicted: np.ndarray
    gd_dir_empirical: np.ndarray
    svm_dir: np.ndarray
    angles: dict
    h_inf_tail_error: float
    h_inf: np.ndarray
    adagrad_predicted_w: np.ndarray
    svm_w: np.ndarray

    def direction(self, name: str) -> np.ndarray:
        return {
            "adagrad_empirical": self.adagrad_dir_empirical,
            "adagrad_predicted": self.adagrad_dir_predicted,
            "gd_empirical": self.gd_dir_empirical,
            "svm": self.svm_dir,
        }[name]

    def to_dict(self) -> dict:
        return to_jsonable(
            {
                "adagrad_dir_empirical": self.adagrad_dir_empirical,
                "adagrad_dir_predicted": self.adagrad_dir_predicted,
                "gd_dir_empirical": self.gd_dir_empirical,
                "svm_dir": self.svm_dir,
                "angles": self.angles,
                "h_inf_tail_error": self.h_inf_tail_error,
                "h_inf": self.h_inf,
                "adagrad_predicted_w": self.adagrad_predicted_w,
                "svm_w": self.svm_w,
            }
        )


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def direction_report(adagrad: Trajectory, gd: Trajectory, data: Dataset) -> DirectionReport:
    h_inf, tail = estimate_h_infinity(adagrad, adagrad.hp.epsilon)
    z = data.signed_features
    w_tilde = solve_weighted_margin(MarginProblem(z, 1.0 / np.sqrt(h_inf))).w_star
    w_hat = solve_hard_margin(MarginProblem(z)).w_star
    dirs = {
        "adagrad_empirical": adagrad.final_direction,
        "adagrad_predicted": _unit(w_tilde),
        "gd_empirical": gd.final_direction,
        "svm": _unit(w_hat),
    }
    angles = {a: {b: (0.0 if a == b else angle(dirs[a], dirs[b])) for b in dirs} for a in dirs}
    return DirectionReport(
        adagrad_dir_empirical=dirs["adagrad_empirical"],
        adagrad_dir_predicted=dirs["adagrad_predicted"],
        gd_dir_empirical=dirs["gd_empirical"],
        svm_dir=dirs["svm"],
        angles=angles,
        h_inf_tail_error=tail,
        h_inf=h_inf,
        adagrad_predicted_w=w_tilde,
        svm_w=w_hat,
    )


def compare_directions(
    data: Dataset,
    model: LossModel,
    hp: Hyperparams,
    thinning: int = 100,
    override: bool = False,
) -> DirectionReport:
    """Run AdaGrad and GD with the same settings and compare their directions
    with the weighted and unweighted margin solutions."""
    ada = run(Optimizer.ADAGRAD, model, data, hp, thinning=thinning, override=override)
    gd = run(Optimizer.GD, model, data, hp, thinning=thinning, override=override)
    return direction_report(ada, gd, data)


# --------------------------------------------------------------------------
# reference examples
# --------------------------------------------------------------------------


def example31_data(theta: float) -> Dataset:
    """Two mirrored samples ``x_1 = (cos t, sin t)``, ``x_2 = -x_1`` with labels +1, -1."""
    x1 = np.array([math.cos(theta), math.sin(theta)])
    return make_dataset(np.vstack([x1, -x1]), [1.0, -1.0])


def example31_oracle(theta: float, reflected: bool = False):
    """Closed-form (gd_dir, adagrad_dir, h_inf_dir) for the mirrored pair.

    ``reflected=True`` covers ``theta`` in (pi/2, pi), where the first
    coordinate of x_1 changes sign.
    """
    lo, hi = (math.pi / 2, math.pi) if reflected else (0.0, math.pi / 2)
    if not lo < theta < hi:
        raise ValueError(f"theta must lie in ({lo:.6g}, {hi:.6g})")
    c, s = math.cos(theta), math.sin(theta)
    gd_dir = np.array([c, s])
    r = math.sqrt(0.5)
    ada_dir = np.array([-r if reflected else r, r])
    h_dir = _unit([1.0 / abs(c), 1.0 / s])
    return gd_dir, ada_dir, h_dir


def example32_oracle(r1: float, r2: float, theta1: float, theta2: float):
    """Corner ``(alpha*, beta*)`` where both margin constraints of the two-point example are tight."""
    if not (r1 > 0 and r2 > 0):
        raise ValueError("radii must be positive")
    if not (math.pi / 2 <= theta1 < math.pi and theta1 - math.pi < theta2 <= 0):
        raise ValueError("need pi/2 <= theta1 < pi and theta1 - pi < theta2 <= 0")
    den = math.sin(theta1 - theta2)
    if den == 0.0:
        raise ValueError("sin(theta1 - theta2) vanishes")
    alpha = (math.sin(theta1) / r2 - math.sin(theta2) / r1) / den
    beta = (math.cos(theta2) / r1 - math.cos(theta1) / r2) / den
    return alpha, beta


def two_point_data(r1: float, r2: float, theta1: float, theta2: float) -> Dataset:
    """Positive samples ``r_k (cos theta_k, sin theta_k)``."""
    x = [
        [r1 * math.cos(theta1), r1 * math.sin(theta1)],
        [r2 * math.cos(theta2), r2 * math.sin(theta2)],
    ]
    return make_dataset(x, [1.0, 1.0])


def example32_data(r1: float, r2: float, theta1: float, theta2: float) -> Dataset:
    example32_oracle(r1, r2, theta1, theta2)  # range checks
    return two_point_data(r1, r2, theta1, theta2)


def figure1_data() -> Dataset:
    return two_point_data(1.0, 1.0, 3 * math.pi / 8, 9 * math.pi / 20)


def figure2_data() -> Dataset:
    return example32_data(1.0, 1.0, 5 * math.pi / 8, -math.pi / 8)


# --------------------------------------------------------------------------
# corner cone
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CornerCertificate:
    holds: bool
    anchor: np.ndarray | None
    sign_pattern: dict
    cone_contains_feasible_set: bool
    probes_agree: bool
    probe_seed: int
    n_probes: int
    details: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.holds

    def to_dict(self) -> dict:
        return to_jsonable(
            {
                "holds": self.holds,
                "anchor": None if self.anchor is None else self.anchor,
                "sign_pattern": self.sign_pattern,
                "cone_contains_feasible_set": self.cone_contains_feasible_set,
                "probes_agree": self.probes_agree,
                "probe_seed": self.probe_seed,
                "n_probes": self.n_probes,
                "details": self.details,
            }
        )


def _unique_rows(Z, tol=1e-12):
    keep = []
    for row in Z:
        if not any(np.max(np.abs(row - k)) <= tol for k in keep):
            keep.append(row)
    return np.array(keep)


def sign_pattern_conditions(Z: np.ndarray, a: np.ndarray) -> dict:
    """Sufficient sign-pattern conditions for the feasible set to sit in the corner cone at ``a``.

    Coordinates are first flipped so that ``a > 0``.  Then p constraints must
    have a positive entry in "their" coordinate and negative entries elsewhere
    (i), be linearly independent (ii), meet with equality at a strictly
    positive point (iii), and every remaining constraint must be a positive
    combination of them with coefficients summing to at least 1 (iv).
    """
    n, p = Z.shape
    out = {"applicable": False, "i": None, "ii": None, "iii": None, "iv": None, "basis": None}
    if n < p or np.any(a == 0):
        return out
    out["applicable"] = True
    X = Z * np.sign(a)
    pattern = np.where(X > 0, 1, np.where(X < 0, -1, 0))
    candidates = []
    for i in range(p):
        want = -np.ones(p, dtype=int)
        want[i] = 1
        candidates.append([k for k in range(n) if np.array_equal(pattern[k], want)])
    if any(not c for c in candidates):
        out["i"] = False
        return out
    out["i"] = True
    first = None
    for basis in itertools.product(*candidates):
        if len(set(basis)) < p:
            continue
        Xp = X[list(basis)]
        ii = bool(np.linalg.matrix_rank(Xp) == p)
        iii = iv = False
        if ii:
            corner = np.linalg.solve(Xp, np.ones(p))
            iii = bool(np.all(corner > 0))
            rest = [k for k in range(n) if k not in basis]
            if rest:
                coef = np.linalg.solve(Xp.T, X[rest].T)
                iv = bool(np.all(coef > 0) and np.all(coef.sum(axis=0) >= 1 - 1e-12))
            else:
                iv = True
        result = {"ii": ii, "iii": iii, "iv": iv, "basis": list(basis)}
        if first is None:
            first = result
        if ii and iii and iv:
            out.update(result)
            return out
    out.update(first)
    return out


def _cone_contains(Z: np.ndarray, a: np.ndarray) -> tuple[bool, list]:
    """Exact test that every feasible w has ``sign(a_i) w_i >= |a_i|`` (one LP per coordinate)."""
    n, p = Z.shape
    mins = []
    ok = True
    for i in range(p):
        c = np.zeros(p)
        c[i] = np.sign(a[i])
        res = linprog(c, A_ub=-Z, b_ub=-np.ones(n), bounds=[(None, None)] * p, method="highs")
        if res.status == 3:
            mins.append(None)
            ok = False
            continue
        if res.status != 0:
            raise RuntimeError(f"cone LP failed: {res.message}")
        mins.append(float(res.fun))
        if res.fun < abs(a[i]) - 1e-9 * (1.0 + abs(a[i])):
            ok = False
    return ok, mins


def corner_condition(data: Dataset, seed: int = 0, n_probes: int = 16) -> CornerCertificate:
    """Whether every diagonal weighting of the margin problem has the same minimizer.

    True when the feasible set lies in the orthant cone anchored at the
    unweighted solution ``a`` (all ``a_i != 0``), verified by one LP per
    coordinate, and weighted solves at ``n_probes`` log-uniform weight vectors
    all return ``a``.  The sign-pattern conditions are evaluated and reported
    as a certificate when they apply.
    """
    Z = _unique_rows(data.signed_features)
    a = solve_hard_margin(MarginProblem(Z)).w_star
    nonzero = bool(np.all(np.abs(a) > 1e-12 * (1.0 + np.linalg.norm(a))))
    pattern = sign_pattern_conditions(Z, a) if nonzero else {"applicable": False}
    if nonzero:
        cone_ok, mins = _cone_contains(Z, a)
    else:
        cone_ok, mins = False, []
    rng = np.random.default_rng(seed)
    gaps = []
    for _ in range(n_probes):
        b = np.exp(rng.uniform(math.log(1e-2), math.log(1e2), size=Z.shape[1]))
        w = solve_weighted_margin(MarginProblem(Z, b)).w_star
        gaps.append(float(np.linalg.norm(w - a) / (1.0 + np.linalg.norm(a))))
    probes_ok = bool(max(gaps) <= 1e-6)
    return CornerCertificate(
        holds=bool(nonzero and cone_ok and probes_ok),
        anchor=a,
        sign_pattern=pattern,
        cone_contains_feasible_set=bool(cone_ok),
        probes_agree=probes_ok,
        probe_seed=seed,
        n_probes=n_probes,
        details={"anchor_nonzero": nonzero, "cone_minima": mins, "probe_gaps": gaps},
    )


__all__ = [
    "CheckOutcome",
    "CornerCertificate",
    "DirectionReport",
    "ProjectionSplit",
    "angle",
    "check_descent",
    "check_divergence_and_margins",
    "check_preconditioner_convergence",
    "check_projection_bounds",
    "check_summability",
    "compare_directions",
    "corner_condition",
    "direction_report",
    "example31_data",
    "example31_oracle",
    "example32_data",
    "example32_oracle",
    "figure1_data",
    "figure2_data",
    "projection_bounds_for_run",
    "projection_split",
    "to_jsonable",
    "two_point_data",
]
