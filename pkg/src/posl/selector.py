"""Discrete selection and ensemble meta-learners over candidate predictions.

Three modes map validation predictions to weights on the simplex:

* ``discrete``: one-hot on the learner with the smallest mean risk.
* ``convex``: weights minimizing weighted squared error over the simplex.
* ``conditional``: softmax weights that depend linearly on baseline ``X``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateDesign, DimensionMismatch, NoMass, NonFinite, ValidationError
from .risk import RiskTable, mean_risk

__all__ = [
    "MODES",
    "TIE_TOLERANCE",
    "EnsembleWeights",
    "MetaDesign",
    "ConditionalConfig",
    "discrete_select",
    "one_hot",
    "uniform",
    "nnls_weights",
    "simplex_objective",
    "fit_conditional",
    "combine",
]

MODES = ("discrete", "convex", "conditional")
TIE_TOLERANCE = 1e-12
# exhaustive face search is exact; above this size use projected gradient
MAX_ENUMERATED = 12


@dataclass(frozen=True, eq=False)
class EnsembleWeights:
    """Weights over ``learners``.

    In conditional mode ``alpha`` holds the weights at the centre of the
    training ``X`` and :meth:`at` evaluates the softmax at any ``X``.
    """

    learners: tuple
    alpha: np.ndarray
    mode: str = "convex"
    beta: Optional[np.ndarray] = None
    x_center: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        a = np.asarray(self.alpha, dtype=float)
        if a.shape != (len(self.learners),):
            raise DimensionMismatch(f"{a.shape[0]} weights for {len(self.learners)} learners")
        if np.any(a < -1e-12) or abs(a.sum() - 1.0) > 1e-8:
            raise ValidationError(f"weights off the simplex: {a}")
        if self.mode == "discrete" and not (np.count_nonzero(a) == 1 and a.max() == 1.0):
            raise ValidationError(f"discrete weights must be one-hot: {a}")
        a = np.clip(a, 0.0, None)
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "learners", tuple(self.learners))

    def at(self, X=None) -> np.ndarray:
        """Weights at baseline ``X`` (a vector, or rows of a matrix)."""
        if self.mode != "conditional" or self.beta is None:
            return np.array(self.alpha)
        if X is None:
            raise DimensionMismatch("conditional weights need X")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Xs = (np.atleast_2d(X) - self.x_center) / self.x_scale
        if Xs.shape[1] != self.beta.shape[1] - 1:
            raise DimensionMismatch(f"X has {Xs.shape[1]} columns, fitted on {self.beta.shape[1] - 1}")
        A = _softmax(Xs, self.beta)
        return A[0] if single else A

    def as_dict(self, X=None) -> dict:
        return dict(zip(self.learners, self.at(X).tolist()))


@dataclass(frozen=True, eq=False)
class MetaDesign:
    """Validation rows with every learner's prediction side by side."""

    learners: tuple
    preds: np.ndarray
    y: np.ndarray
    weight: Optional[np.ndarray] = None
    X: Optional[np.ndarray] = None
    subject: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = None
    m: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.asarray(self.preds, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if P.ndim == 1:
            P = P.reshape(-1, 1)
        if P.shape != (len(y), len(self.learners)):
            raise DimensionMismatch(f"preds {P.shape} for {len(y)} rows, {len(self.learners)} learners")
        w = np.ones(len(y)) if self.weight is None else np.asarray(self.weight, dtype=float).ravel()
        if w.shape != y.shape:
            raise DimensionMismatch("weight length differs from y")
        if np.any(w < 0) or np.any(w > 1):
            raise ValidationError("row weights must lie in [0, 1]")
        if self.X is not None:
            X = np.asarray(self.X, dtype=float)
            X = X.reshape(len(y), -1)
            object.__setattr__(self, "X", X)
        object.__setattr__(self, "learners", tuple(self.learners))
        object.__setattr__(self, "preds", P)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weight", w)

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class ConditionalConfig:
    iterations: int = 500
    step: float = 0.01
    # halve the step and retry instead of accepting an increase
    step_acceptance: bool = True
    standardize: bool = True


def one_hot(learners: Sequence[str], chosen: str) -> EnsembleWeights:
    learners = tuple(learners)
    a = np.zeros(len(learners))
    a[learners.index(chosen)] = 1.0
    return EnsembleWeights(learners, a, "discrete")


def uniform(learners: Sequence[str], mode: str = "convex") -> EnsembleWeights:
    learners = tuple(learners)
    return EnsembleWeights(learners, np.full(len(learners), 1.0 / len(learners)), mode)


def discrete_select(table: RiskTable, m: Optional[int] = None,
                    eligible: Optional[Sequence[str]] = None,
                    subject: Optional[int] = None) -> str:
    """Learner with the smallest mean risk; near-ties go to the earliest registered."""
    names = table.learners if eligible is None else [k for k in table.learners if k in set(eligible)]
    best, best_risk = None, np.inf
    for name in names:
        try:
            r = mean_risk(table, name, m, subject)
        except NoMass:
            continue
        if best is None or r < best_risk - TIE_TOLERANCE * max(1.0, abs(best_risk)):
            best, best_risk = name, r
    if best is None:
        where = "" if m is None else f" at m={m}"
        raise NoMass(f"no learner has loss mass{where}")
    return best


def simplex_objective(design: MetaDesign, alpha) -> float:
    r = design.y - design.preds @ np.asarray(alpha, dtype=float)
    return float(np.sum(design.weight * r * r))


def _face_minimizer(Q, c, support):
    """Minimize ``a'Qa - 2c'a`` on the affine hull of a simplex face."""
    k = len(support)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = Q[np.ix_(support, support)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.append(c[support], 1.0)
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:k]


def _project_simplex(v):
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _projected_gradient(design, start, iterations=5000):
    P, y, w = design.preds, design.y, design.weight
    Q = P.T @ (w[:, None] * P)
    c = P.T @ (w * y)
    L = 2.0 * max(np.linalg.eigvalsh(Q)[-1], 1e-300)
    x = z = start.copy()
    tk = 1.0
    for _ in range(iterations):
        x_new = _project_simplex(z - (2.0 * (Q @ z - c)) / L)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        z = x_new + ((tk - 1.0) / t_new) * (x_new - x)
        if np.max(np.abs(x_new - x)) < 1e-14:
            x = x_new
            break
        x, tk = x_new, t_new
    return x


def nnls_weights(design: MetaDesign) -> EnsembleWeights:
    """Weighted least squares over the probability simplex.

    Every face of the simplex is searched for its affine-hull minimizer and
    the feasible candidate with the lowest objective wins, so the result is
    never worse than the best single learner.  Libraries larger than
    ``MAX_ENUMERATED`` use accelerated projected gradient started at the best
    vertex instead.
    """
    if len(design.learners) == 0:
        raise DegenerateDesign("no learners")
    if len(design) == 0 or not np.any(design.weight > 0):
        raise DegenerateDesign("no row carries positive weight")
    K = len(design.learners)
    eye = np.eye(K)
    vertex_obj = [simplex_objective(design, eye[k]) for k in range(K)]
    k0 = int(np.argmin(vertex_obj))
    best, best_obj = eye[k0], vertex_obj[k0]
    if K == 1:
        return EnsembleWeights(design.learners, best, "convex")

    P, y, w = design.preds, design.y, design.weight
    if K <= MAX_ENUMERATED:
        Q = P.T @ (w[:, None] * P)
        c = P.T @ (w * y)
        for size in range(2, K + 1):
            for support in combinations(range(K), size):
                a_s = _face_minimizer(Q, c, list(support))
                if not np.all(np.isfinite(a_s)) or np.any(a_s < -1e-10):
                    continue
                a = np.zeros(K)
                a[list(support)] = np.clip(a_s, 0.0, None)
                a /= a.sum()
                obj = simplex_objective(design, a)
                if obj < best_obj:
                    best, best_obj = a, obj
    else:
        a = _projected_gradient(design, best)
        obj = simplex_objective(design, a)
        if obj < best_obj:
            best = a
    return EnsembleWeights(design.learners, best, "convex")


def _softmax(Xs, beta):
    S = beta[:, 0][None, :] + Xs @ beta[:, 1:].T
    S -= S.max(axis=1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=1, keepdims=True)


def _conditional_objective(beta, F, P, y, w):
    A = _softmax(F[:, 1:], beta)
    r = np.sum(A * P, axis=1) - y
    return float(np.sum(w * r * r)), A, r


def fit_conditional(design: MetaDesign, config: ConditionalConfig = ConditionalConfig()) -> EnsembleWeights:
    """Softmax weights ``alpha_k(X) ∝ exp(b_k0 + b_k'X)`` by gradient descent.

    ``X`` is standardized internally; ``beta`` starts at zero (uniform
    weights).  With step acceptance an increasing step is halved and retried,
    so the objective never rises above its starting value.
    """
    K = len(design.learners)
    if K < 2:
        raise ValidationError("conditional weights need at least two learners")
    if design.X is None:
        raise ValidationError("conditional weights need X")
    if len(design) == 0 or not np.any(design.weight > 0):
        raise DegenerateDesign("no row carries positive weight")
    X = design.X
    if config.standardize:
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    else:
        center, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    F = np.hstack([np.ones((len(X), 1)), (X - center) / scale])
    P, y, w = design.preds, design.y, design.weight

    beta = np.zeros((K, F.shape[1]))
    obj, A, r = _conditional_objective(beta, F, P, y, w)
    if not np.isfinite(obj):
        raise NonFinite("conditional objective is not finite at the starting point")
    step = config.step
    for _ in range(config.iterations):
        G = 2.0 * (w * r)[:, None] * P
        dS = A * (G - np.sum(A * G, axis=1, keepdims=True))
        grad = dS.T @ F
        while True:
            cand = beta - step * grad
            c_obj, c_A, c_r = _conditional_objective(cand, F, P, y, w)
            if not np.isfinite(c_obj):
                if not config.step_acceptance:
                    raise NonFinite("conditional objective became non-finite")
            elif c_obj <= obj or not config.step_acceptance:
                break
            step *= 0.5
            if step < 1e-12:
                cand, c_obj, c_A, c_r = beta, obj, A, r
                break
        if cand is beta:
            break
        beta, obj, A, r = cand, c_obj, c_A, c_r
    alpha0 = _softmax(np.zeros((1, F.shape[1] - 1)), beta)[0]
    return EnsembleWeights(design.learners, alpha0 / alpha0.sum(), "conditional",
                           beta, center, scale)


def combine(weights: EnsembleWeights, preds, X=None) -> float:
    """Weighted combination of one prediction per learner."""
    preds = np.asarray(preds, dtype=float).ravel()
    if len(preds) != len(weights.learners):
        raise DimensionMismatch(f"{len(preds)} predictions for {len(weights.learners)} learners")
    return float(np.dot(weights.at(X), preds))
