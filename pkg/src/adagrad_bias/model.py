"""Datasets, margin losses and assumption checks for separable linear classification."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed features/labels."""


@dataclass(frozen=True)
class Dataset:
    """Features ``x_n`` (rows), labels ``y_n`` and the folded ``z_n = y_n x_n``."""

    features: np.ndarray
    labels: np.ndarray
    signed_features: np.ndarray = field(repr=False)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def make_dataset(features, labels) -> Dataset:
    x = np.array(features, dtype=np.float64)
    y = np.array(labels, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DatasetError(f"features must be a non-empty N x p matrix, got shape {x.shape}")
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise DatasetError(f"expected {x.shape[0]} labels, got shape {y.shape}")
    if not np.all(np.isfinite(x)):
        raise DatasetError("features contain non-finite entries")
    if not np.all((y == 1.0) | (y == -1.0)):
        raise DatasetError("labels must be -1 or +1")
    z = y[:, None] * x
    for arr in (x, y, z):
        arr.setflags(write=False)
    return Dataset(features=x, labels=y, signed_features=z)


def save_dataset_csv(data: Dataset, path) -> None:
    p = data.n_features
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(p)] + ["y"])
        for xrow, yv in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in xrow] + [repr(int(yv))])


def load_dataset_csv(path) -> Dataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = rows[0]
    p = len(header) - 1
    if p < 1 or header[-1] != "y" or header[:-1] != [f"x{i + 1}" for i in range(p)]:
        raise DatasetError(f"{path}: header must be x1,...,xp,y")
    body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    if body.size == 0:
        raise DatasetError(f"{path}: no samples")
    return make_dataset(body[:, :p], body[:, p])


class LossKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class LossModel:
    """A margin loss ``l(u)`` with its exponential-tail constants.

    The tail constants satisfy ``|l'(u) + c e^{-a u}| <= e^{-(a+b) u}`` for ``u > d``.
    """

    kind: LossKind
    tail_a: float
    tail_b: float
    tail_c: float
    tail_d: float

    @classmethod
    def exponential(cls) -> "LossModel":
        return cls(LossKind.EXPONENTIAL, 1.0, 1.0, 1.0, 0.0)

    @classmethod
    def logistic(cls) -> "LossModel":
        return cls(LossKind.LOGISTIC, 1.0, 1.0, 1.0, 1.0)

    @classmethod
    def from_name(cls, name: str) -> "LossModel":
        kind = LossKind(name)
        return cls.exponential() if kind is LossKind.EXPONENTIAL else cls.logistic()

    def value(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind is LossKind.EXPONENTIAL:
            return np.exp(-u)
        # log(1 + e^{-u}) without overflow for large |u|
        return np.logaddexp(0.0, -u)

    def derivative(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind is LossKind.EXPONENTIAL:
            return -np.exp(-u)
        return -_sigmoid(-u)

    def second_derivative(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.kind is LossKind.EXPONENTIAL:
            return np.exp(-u)
        s = _sigmoid(u)
        return s * (1.0 - s)

    def tail_residual(self, u):
        """``|l'(u) + c e^{-a u}|`` in closed form.

        Direct subtraction loses every significant digit once ``e^{-u}`` dwarfs
        the residual, so the residual is evaluated analytically.
        """
        u = np.asarray(u, dtype=np.float64)
        if self.kind is LossKind.EXPONENTIAL:
            return np.zeros_like(u)
        # dividing exp(-2u) by a number >= 1 keeps the rounded value <= the bound
        return np.exp(-2.0 * u) / (1.0 + np.exp(-u))

    def tail_bound(self, u):
        u = np.asarray(u, dtype=np.float64)
        return np.exp(-(self.tail_a + self.tail_b) * u)


def _sigmoid(u):
    # numerically stable 1 / (1 + e^{-u})
    out = np.empty_like(u, dtype=np.float64)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_w(data: Dataset, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (data.n_features,):
        raise DatasetError(f"w has shape {w.shape}, expected ({data.n_features},)")
    return w


def margins(data: Dataset, w) -> np.ndarray:
    return data.signed_features @ _check_w(data, w)


def loss_value(model: LossModel, data: Dataset, w) -> float:
    return float(np.sum(model.value(margins(data, w))))


def loss_gradient(model: LossModel, data: Dataset, w) -> np.ndarray:
    return model.derivative(margins(data, w)) @ data.signed_features


@dataclass
class Hyperparams:
    eta: float
    epsilon: float = 1e-8
    w0: np.ndarray | None = None
    max_iters: int = 1_000_000
    grad_tol: float = 1e-12

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        self.max_iters = int(self.max_iters)
        if self.w0 is not None:
            self.w0 = np.array(self.w0, dtype=np.float64)

    def initial_point(self, p: int) -> np.ndarray:
        if self.w0 is None:
            return np.zeros(p)
        if self.w0.shape != (p,):
            raise ValueError(f"w0 has shape {self.w0.shape}, expected ({p},)")
        return self.w0.copy()


@dataclass(frozen=True)
class AssumptionReport:
    separable: bool
    witness: np.ndarray | None
    smoothness_beta: float
    eta_bound: float
    eta_ok: bool
    beta_is_heuristic: bool
    gd_eta_bound: float
    gd_eta_ok: bool


def smoothness_constant(model: LossModel, data: Dataset, w0) -> tuple[float, bool]:
    """Smoothness constant of the total loss and whether it is only a local estimate."""
    sq_norms = np.sum(data.signed_features**2, axis=1)
    if model.kind is LossKind.LOGISTIC:
        return 0.25 * float(np.sum(sq_norms)), False
    curv = model.second_derivative(margins(data, w0))
    return float(np.sum(curv * sq_norms)), True


def check_assumptions(model: LossModel, data: Dataset, hp: Hyperparams) -> AssumptionReport:
    from .maxmargin import MarginProblem, feasibility

    separable, witness = feasibility(MarginProblem(data.signed_features))
    w0 = hp.initial_point(data.n_features)
    beta, heuristic = smoothness_constant(model, data, w0)
    g0 = loss_gradient(model, data, w0)
    bound = 2.0 * float(np.min(np.sqrt(g0**2 + hp.epsilon))) / beta
    gd_bound = 2.0 / beta
    return AssumptionReport(
        separable=separable,
        witness=witness,
        smoothness_beta=beta,
        eta_bound=bound,
        eta_ok=bool(hp.eta < bound),
        beta_is_heuristic=heuristic,
        gd_eta_bound=gd_bound,
        gd_eta_ok=bool(hp.eta < gd_bound),
    )


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = math.sqrt(float(v @ v))
    if n == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return v / n


def planted_dataset(n: int, p: int, seed: int, margin_floor: float = 0.1) -> Dataset:
    """Random linearly separable data around a planted unit separator.

    Points are standard normal with random labels.  A point on the wrong side
    of the separator is reflected through its hyperplane, and a point closer
    than ``margin_floor`` is pushed out along the separator normal.
    """
    if n < 1 or p < 1:
        raise DatasetError("need n >= 1 and p >= 1")
    rng = np.random.default_rng(seed)
    s = unit(rng.standard_normal(p))
    x = rng.standard_normal((n, p))
    y = rng.choice([-1.0, 1.0], size=n)
    m = y * (x @ s)
    x = x - 2.0 * np.minimum(m, 0.0)[:, None] * y[:, None] * s
    m = np.abs(m)
    x = x + np.maximum(margin_floor - m, 0.0)[:, None] * y[:, None] * s
    return make_dataset(x, y)
