"""Gradient descent and diagonal AdaGrad on the margin loss, with trajectories."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .model import (
    Dataset,
    Hyperparams,
    LossKind,
    LossModel,
    check_assumptions,
    loss_gradient,
)


class Optimizer(str, enum.Enum):
    ADAGRAD = "adagrad"
    GD = "gd"


class StopReason(str, enum.Enum):
    MAX_ITERS = "max_iters"
    GRAD_TOL = "grad_tol"


class RunError(RuntimeError):
    """A run could not start or produced a non-finite iterate.

    ``last_state`` holds the last finite state when the run overflowed.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class AssumptionViolation(RunError):
    pass


@dataclass(frozen=True)
class OptimizerState:
    """Iterate ``w(t)``, gradient ``g(t)`` and ``S(t) = sum_{tau<=t} g(tau)^2``."""

    t: int
    w: np.ndarray
    g: np.ndarray
    S: np.ndarray

    def preconditioner(self, epsilon: float) -> np.ndarray:
        return 1.0 / np.sqrt(self.S + epsilon)


def initial_state(model: LossModel, data: Dataset, hp: Hyperparams) -> OptimizerState:
    w = hp.initial_point(data.n_features)
    g = loss_gradient(model, data, w)
    return OptimizerState(t=0, w=w, g=g, S=g * g)


def _advance(state, model, data, hp, h) -> OptimizerState:
    # overflow is reported below, not warned about
    with np.errstate(over="ignore", invalid="ignore"):
        w = state.w - hp.eta * h * state.g
        g = loss_gradient(model, data, w)
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(g))):
        raise RunError(f"non-finite iterate after step {state.t}", last_state=state)
    return OptimizerState(t=state.t + 1, w=w, g=g, S=state.S + g * g)


def adagrad_step(state: OptimizerState, model: LossModel, data: Dataset, hp: Hyperparams):
    """One update ``w <- w - eta * h * g`` with ``h_i = 1/sqrt(S_i + eps)``."""
    return _advance(state, model, data, hp, state.preconditioner(hp.epsilon))


def gd_step(state: OptimizerState, model: LossModel, data: Dataset, hp: Hyperparams):
    return _advance(state, model, data, hp, np.ones_like(state.w))


@dataclass(frozen=True)
class Trajectory:
    """Thinned record of a run: step 0, every ``thinning``-th step and the final step.

    Row k of ``w``, ``g``, ``h``, ``S`` and ``loss`` is the state at step ``t[k]``;
    ``h`` is the preconditioner applied at that step (all ones for GD) and
    ``S`` the running sum of squared gradient coordinates through that step.
    """

    optimizer: Optimizer
    t: np.ndarray
    w: np.ndarray
    g: np.ndarray
    h: np.ndarray
    S: np.ndarray
    loss: np.ndarray
    thinning: int
    terminal_state: OptimizerState
    stop_reason: StopReason
    hp: Hyperparams = field(repr=False)
    assumptions_overridden: bool = False

    @property
    def directions(self) -> np.ndarray:
        norms = np.linalg.norm(self.w, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(norms > 0, self.w / norms, np.nan)

    @property
    def grad_norms(self) -> np.ndarray:
        return np.linalg.norm(self.g, axis=1)

    @property
    def final_direction(self) -> np.ndarray:
        w = self.terminal_state.w
        return w / np.linalg.norm(w)

    def index_nearest(self, step: float) -> int:
        return int(np.argmin(np.abs(self.t - step)))

    def state_at(self, k: int) -> OptimizerState:
        return OptimizerState(t=int(self.t[k]), w=self.w[k], g=self.g[k], S=self.S[k])


def run(
    optimizer,
    model: LossModel,
    data: Dataset,
    hp: Hyperparams,
    thinning: int = 100,
    override: bool = False,
) -> Trajectory:
    optimizer = Optimizer(optimizer)
    if thinning < 1:
        raise ValueError("thinning must be a positive integer")
    w0 = hp.initial_point(data.n_features)
    if optimizer is Optimizer.ADAGRAD and hp.epsilon == 0.0:
        g0 = loss_gradient(model, data, w0)
        if np.any(g0 == 0.0):
            raise RunError("epsilon = 0 needs every coordinate of g(0) nonzero")
    report = check_assumptions(model, data, hp)
    step_ok = report.eta_ok if optimizer is Optimizer.ADAGRAD else report.gd_eta_ok
    if not override:
        if not report.separable:
            raise AssumptionViolation("data are not linearly separable")
        if not step_ok:
            bound = report.eta_bound if optimizer is Optimizer.ADAGRAD else report.gd_eta_bound
            raise AssumptionViolation(f"step size {hp.eta} exceeds the bound {bound:.6g}")

    kind = _kernels.EXPONENTIAL if model.kind is LossKind.EXPONENTIAL else _kernels.LOGISTIC
    (t, W, G, H, SS, L, t_end, w, g, S, _, stop) = _kernels.run_kernel(
        np.ascontiguousarray(data.signed_features),
        kind,
        optimizer is Optimizer.ADAGRAD,
        float(hp.eta),
        float(hp.epsilon),
        w0,
        int(hp.max_iters),
        float(hp.grad_tol),
        int(thinning),
    )
    terminal = OptimizerState(t=int(t_end), w=w, g=g, S=S)
    if stop == _kernels.STOP_NONFINITE:
        raise RunError(f"non-finite iterate after step {t_end}", last_state=terminal)
    reason = StopReason.GRAD_TOL if stop == _kernels.STOP_GRAD_TOL else StopReason.MAX_ITERS
    return Trajectory(
        optimizer=optimizer,
        t=t,
        w=W,
        g=G,
        h=H,
        S=SS,
        loss=L,
        thinning=int(thinning),
        terminal_state=terminal,
        stop_reason=reason,
        hp=hp,
        assumptions_overridden=bool(override and not (report.separable and step_ok)),
    )


def estimate_h_infinity(traj: Trajectory, epsilon: float) -> tuple[np.ndarray, float]:
    """Terminal preconditioner and its relative drift since the middle of the run."""
    if traj.optimizer is not Optimizer.ADAGRAD:
        raise ValueError("h_inf is only defined for AdaGrad trajectories")
    h_inf = traj.terminal_state.preconditioner(epsilon)
    mid = traj.index_nearest(traj.terminal_state.t / 2)
    tail_error = float(np.max((traj.h[mid] - h_inf) / h_inf))
    return h_inf, tail_error


@dataclass(frozen=True)
class InducedQuantities:
    h_inf: np.ndarray
    xi: np.ndarray
    v: np.ndarray
    beta_t: np.ndarray
    delta: np.ndarray
    d: np.ndarray
    induced_loss: float


def induced_loss(model: LossModel, xi: np.ndarray, v) -> float:
    return float(np.sum(model.value(xi @ v)))


def _check_h_inf(h_inf) -> np.ndarray:
    h_inf = np.asarray(h_inf, dtype=np.float64)
    if not np.all(h_inf > 0):
        raise ValueError("h_inf must be componentwise positive")
    return h_inf


def induced_quantities(
    state: OptimizerState,
    h_inf,
    model: LossModel,
    data: Dataset,
    hp: Hyperparams,
    h: np.ndarray | None = None,
) -> InducedQuantities:
    """Rescaled-coordinates view of AdaGrad at ``state``.

    With ``v = w / sqrt(h_inf)`` and features ``xi_n = sqrt(h_inf) * z_n``,
    AdaGrad is gradient descent on ``sum_n l(<v, xi_n>)`` with the per-coordinate
    step factor ``h(t) / h_inf``.  ``h`` defaults to the state's own preconditioner.
    """
    h_inf = _check_h_inf(h_inf)
    root = np.sqrt(h_inf)
    xi = data.signed_features * root
    v = state.w / root
    if h is None:
        h = state.preconditioner(hp.epsilon)
    beta_t = h / h_inf
    grad_ind = model.derivative(xi @ v) @ xi
    delta = -hp.eta * grad_ind
    return InducedQuantities(
        h_inf=h_inf,
        xi=xi,
        v=v,
        beta_t=beta_t,
        delta=delta,
        d=beta_t * delta,
        induced_loss=induced_loss(model, xi, v),
    )


@dataclass(frozen=True)
class InducedSequence:
    """Induced quantities at every recorded step of an AdaGrad trajectory (row-wise)."""

    t: np.ndarray
    xi: np.ndarray
    v: np.ndarray
    beta_t: np.ndarray
    delta: np.ndarray
    d: np.ndarray


def induced_sequence(traj: Trajectory, h_inf, model: LossModel, data: Dataset) -> InducedSequence:
    h_inf = _check_h_inf(h_inf)
    root = np.sqrt(h_inf)
    xi = data.signed_features * root
    v = traj.w / root
    beta_t = traj.h / h_inf
    # grad of the induced loss is sqrt(h_inf) * grad L(w)
    delta = -traj.hp.eta * traj.g * root
    return InducedSequence(t=traj.t, xi=xi, v=v, beta_t=beta_t, delta=delta, d=beta_t * delta)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    p = traj.w.shape[1]
    header = (
        ["t", "loss", "grad_norm"]
        + [f"w_{i + 1}" for i in range(p)]
        + [f"h_{i + 1}" for i in range(p)]
        + [f"dir_{i + 1}" for i in range(p)]
    )
    dirs = traj.directions
    gn = traj.grad_norms
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k in range(len(traj.t)):
            row = [str(int(traj.t[k])), repr(float(traj.loss[k])), repr(float(gn[k]))]
            row += [repr(float(v)) for v in traj.w[k]]
            row += [repr(float(v)) for v in traj.h[k]]
            row += [repr(float(v)) for v in dirs[k]]
            writer.writerow(row)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    return {name: body[:, j] for j, name in enumerate(header)}


def with_overrides(hp: Hyperparams, **changes) -> Hyperparams:
    return replace(hp, **changes)


__all__ = [
    "AssumptionViolation",
    "InducedQuantities",
    "InducedSequence",
    "Optimizer",
    "OptimizerState",
    "RunError",
    "StopReason",
    "Trajectory",
    "adagrad_step",
    "estimate_h_infinity",
    "gd_step",
    "induced_loss",
    "induced_quantities",
    "induced_sequence",
    "initial_state",
    "run",
    "with_overrides",
    "write_trajectory_csv",
]
