"""Candidate learners with a uniform fit / update / predict contract.

Four families are available:

``lag_linear``
    Ordinary least squares of ``y`` on ``[1, Z, X]``; keeps a (optionally
    bounded) buffer of rows and refits on update.
``ridge_rls``
    Ridge regression with an unpenalized intercept, updated through its
    sufficient statistics ``F'F`` and ``F'y`` so batches never need revisiting.
``exp_smooth``
    Simple exponential smoothing of each subject's level.
``global_mean``
    Running mean of ``y``.

Historical-scope learners pool every subject they are given and include the
baseline covariates ``X`` by default.  Individual-scope learners are fitted on
a single subject and leave ``X`` out, since it is constant within a subject.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import PanelRecord, SummarySpec, make_summary, summary_matrix
from .errors import (DimensionMismatch, InsufficientHistory, MixedSubjects,
                     SingularDesign, StaleBatch, ValidationError)

logger = logging.getLogger(__name__)

FAMILIES = ("lag_linear", "ridge_rls", "exp_smooth", "global_mean")
SCOPES = ("historical", "individual")
JITTER = 1e-8

__all__ = [
    "LearnerSpec",
    "TrainingRows",
    "FittedLearner",
    "build_rows",
    "fit",
    "update",
    "predict",
    "predict_rows",
    "forecast_recursive",
    "coefficients",
]


@dataclass(frozen=True)
class LearnerSpec:
    """Declarative description of a candidate learner.

    The lag order of the linear families is ``summary.memory``.
    """

    family: str
    scope: str = "individual"
    summary: SummarySpec = SummarySpec("lag_window", 1, y_only=True)
    ridge: float = 0.0
    smoothing: float = 0.5
    use_baseline: Optional[bool] = None
    buffer: Optional[int] = None
    name: Optional[str] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown learner family {self.family!r}")
        if self.scope not in SCOPES:
            raise ValidationError(f"unknown learner scope {self.scope!r}")
        if self.ridge < 0:
            raise ValidationError("ridge penalty must be >= 0")
        if not 0 < self.smoothing <= 1:
            raise ValidationError("smoothing factor must be in (0, 1]")
        if self.buffer is not None and self.buffer < 1:
            raise ValidationError("buffer must be >= 1")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        tag = "H" if self.scope == "historical" else "I"
        if self.family in ("lag_linear", "ridge_rls"):
            extra = f"_p{self.summary.memory}"
            if self.family == "ridge_rls":
                extra += f"_l{self.ridge:g}"
        elif self.family == "exp_smooth":
            extra = f"_a{self.smoothing:g}"
        else:
            extra = ""
        return f"{tag}:{self.family}{extra}"

    @property
    def with_baseline(self) -> bool:
        if self.use_baseline is None:
            return self.scope == "historical"
        return self.use_baseline

    @property
    def uses_summary(self) -> bool:
        return self.family in ("lag_linear", "ridge_rls")

    @property
    def min_history(self) -> int:
        return self.summary.min_history if self.uses_summary else 0


@dataclass(frozen=True, eq=False)
class TrainingRows:
    """Stacked ``(subject, t, X, Z, y)`` rows."""

    subject: np.ndarray
    times: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    @classmethod
    def empty(cls, n_x: int = 0, n_z: int = 0) -> "TrainingRows":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, n_x)),
                   np.zeros((0, n_z)), np.zeros(0))

    def take(self, mask) -> "TrainingRows":
        return TrainingRows(self.subject[mask], self.times[mask], self.X[mask],
                            self.Z[mask], self.y[mask])

    @staticmethod
    def concat(parts) -> "TrainingRows":
        nonempty = [p for p in parts if len(p)]
        if not nonempty:
            return parts[0] if parts else TrainingRows.empty()
        parts = nonempty
        return TrainingRows(*(np.concatenate([getattr(p, f) for p in parts])
                              for f in ("subject", "times", "X", "Z", "y")))


def build_rows(records, spec: LearnerSpec, start: Optional[int] = None,
               stop: Optional[int] = None) -> TrainingRows:
    """Rows for every outcome time in ``[start, stop]`` that has enough history.

    Summaries only look at the record itself, so pass a truncated record to
    keep later observations out of reach.
    """
    if isinstance(records, PanelRecord):
        records = [records]
    parts = []
    summary = spec.summary if spec.uses_summary else SummarySpec("lag_window", 1, y_only=True)
    for rec in records:
        if spec.uses_summary:
            times, Z, y = summary_matrix(rec, summary, start, stop)
        else:
            mask = np.ones(len(rec.times), bool)
            if start is not None:
                mask &= rec.times >= start
            if stop is not None:
                mask &= rec.times <= stop
            times, y = rec.times[mask].copy(), rec.outcomes[mask].copy()
            Z = np.zeros((len(times), 0))
        X = np.broadcast_to(rec.baseline, (len(times), len(rec.baseline))).copy()
        parts.append(TrainingRows(np.full(len(times), rec.subject_id, np.int64),
                                  times.astype(np.int64), X, Z, y))
    if not parts:
        return TrainingRows.empty()
    return TrainingRows.concat(parts)


@dataclass(frozen=True, eq=False)
class FittedLearner:
    spec: LearnerSpec
    state: dict = field(repr=False)
    trained_through: int
    train_count: int
    first_time: int
    jittered: bool = False

    @property
    def label(self) -> str:
        return self.spec.label


def _design(spec: LearnerSpec, X, Z) -> np.ndarray:
    cols = [np.ones((len(Z), 1)), Z]
    if spec.with_baseline:
        cols.append(X)
    return np.hstack(cols)


def _check_scope(spec: LearnerSpec, rows: TrainingRows):
    if spec.scope == "individual" and len(np.unique(rows.subject)) > 1:
        raise MixedSubjects(f"{spec.label}: rows from subjects {sorted(set(rows.subject.tolist()))}")


def _solve(A: np.ndarray, b: np.ndarray, penalty: np.ndarray):
    """Solve ``(A + penalty) beta = b``; raise on a rank-deficient system."""
    M = A + penalty
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise SingularDesign("normal equations are rank deficient")
    return np.linalg.solve(M, b)


def _lstsq(F: np.ndarray, y: np.ndarray):
    """Least squares; rank-deficient designs get a ``JITTER`` ridge."""
    if np.linalg.matrix_rank(F) < F.shape[1]:
        A = F.T @ F + JITTER * np.eye(F.shape[1])
        return np.linalg.solve(A, F.T @ y), True
    beta, *_ = np.linalg.lstsq(F, y, rcond=None)
    return beta, False


def _ridge_coef(state: dict, lam: float):
    d = state["A"].shape[0]
    pen = lam * np.eye(d)
    pen[0, 0] = 0.0
    try:
        return _solve(state["A"], state["b"], pen), False
    except SingularDesign:
        return np.linalg.solve(state["A"] + pen + JITTER * np.eye(d), state["b"]), True


def _smooth(levels: dict, rows: TrainingRows, alpha: float) -> dict:
    levels = dict(levels)
    order = np.lexsort((rows.times, rows.subject))
    for sid, y in zip(rows.subject[order], rows.y[order]):
        sid = int(sid)
        if sid in levels:
            levels[sid] = alpha * y + (1.0 - alpha) * levels[sid]
        else:
            levels[sid] = float(y)
    return levels


def fit(spec: LearnerSpec, rows: TrainingRows) -> FittedLearner:
    """Train ``spec`` on ``rows``."""
    if len(rows) == 0:
        raise InsufficientHistory(f"{spec.label}: no training rows")
    _check_scope(spec, rows)
    jittered = False
    if spec.family == "global_mean":
        state = {"sum": float(np.sum(rows.y)), "n": len(rows)}
    elif spec.family == "exp_smooth":
        state = {"levels": _smooth({}, rows, spec.smoothing)}
    elif spec.family == "ridge_rls":
        F = _design(spec, rows.X, rows.Z)
        state = {"A": F.T @ F, "b": F.T @ rows.y}
        state["coef"], jittered = _ridge_coef(state, spec.ridge)
    else:
        F = _design(spec, rows.X, rows.Z)
        y = rows.y
        if spec.buffer is not None:
            F, y = F[-spec.buffer:], y[-spec.buffer:]
        coef, jittered = _lstsq(F, y)
        state = {"F": F, "y": y, "coef": coef}
    if jittered:
        logger.debug("%s: singular design resolved with ridge jitter", spec.label)
    if spec.scope == "individual":
        state["subject"] = int(rows.subject[0])
    return FittedLearner(spec, state, int(rows.times.max()), len(rows),
                         int(rows.times.min()), jittered)


def update(f: FittedLearner, rows: TrainingRows) -> FittedLearner:
    """Absorb a new batch without revisiting earlier data."""
    if len(rows) == 0:
        return f
    if rows.times.min() <= f.trained_through:
        raise StaleBatch(
            f"{f.label}: batch starts at t={int(rows.times.min())}, "
            f"already trained through t={f.trained_through}"
        )
    spec = f.spec
    _check_scope(spec, rows)
    if spec.scope == "individual":
        seen = f.state.get("subject")
        if seen is not None and int(rows.subject[0]) != seen:
            raise MixedSubjects(f"{spec.label}: fitted on subject {seen}, got {int(rows.subject[0])}")
    jittered = False
    if spec.family == "global_mean":
        state = {"sum": f.state["sum"] + float(np.sum(rows.y)), "n": f.state["n"] + len(rows)}
    elif spec.family == "exp_smooth":
        state = {"levels": _smooth(f.state["levels"], rows, spec.smoothing)}
    elif spec.family == "ridge_rls":
        F = _design(spec, rows.X, rows.Z)
        state = {"A": f.state["A"] + F.T @ F, "b": f.state["b"] + F.T @ rows.y}
        state["coef"], jittered = _ridge_coef(state, spec.ridge)
    else:
        F = np.vstack([f.state["F"], _design(spec, rows.X, rows.Z)])
        y = np.concatenate([f.state["y"], rows.y])
        if spec.buffer is not None:
            F, y = F[-spec.buffer:], y[-spec.buffer:]
        coef, jittered = _lstsq(F, y)
        state = {"F": F, "y": y, "coef": coef}
    return FittedLearner(spec, _tag(state, f, rows), int(rows.times.max()),
                         f.train_count + len(rows), f.first_time, jittered)


def _tag(state, f, rows):
    if f.spec.scope == "individual":
        state["subject"] = int(rows.subject[0])
    return state


def _predict_matrix(f: FittedLearner, X, Z, subject=None) -> np.ndarray:
    spec = f.spec
    n = len(Z)
    if spec.family == "global_mean":
        return np.full(n, f.state["sum"] / f.state["n"])
    if spec.family == "exp_smooth":
        levels = f.state["levels"]
        fallback = float(np.mean(list(levels.values())))
        if subject is None or spec.scope == "individual":
            value = next(iter(levels.values())) if spec.scope == "individual" else fallback
            return np.full(n, value)
        return np.array([levels.get(int(s), fallback) for s in subject], dtype=float)
    F = _design(spec, X, Z)
    coef = f.state["coef"]
    if F.shape[1] != len(coef):
        raise DimensionMismatch(f"{f.label}: {F.shape[1]} features, fitted on {len(coef)}")
    return F @ coef


def predict(f: FittedLearner, X, Z, t: Optional[int] = None, subject_id: Optional[int] = None) -> float:
    """Prediction of ``Y(t)`` from baseline ``X`` and summary ``Z(t-1)``."""
    X = np.atleast_1d(np.asarray(X, dtype=float)).reshape(1, -1)
    Z = np.atleast_1d(np.asarray(Z, dtype=float)).reshape(1, -1)
    subject = None if subject_id is None else [subject_id]
    return float(_predict_matrix(f, X, Z, subject)[0])


def predict_rows(f: FittedLearner, rows: TrainingRows) -> np.ndarray:
    return _predict_matrix(f, rows.X, rows.Z, rows.subject)


def forecast_recursive(f: FittedLearner, record: PanelRecord, horizon: int) -> np.ndarray:
    """Iterated forecasts for the ``horizon`` times after the record ends.

    Each prediction is fed back as the outcome of its time step; covariates
    ``W`` are carried forward from the last observation.
    """
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    spec = f.spec
    if not spec.uses_summary:
        if spec.family == "exp_smooth" and len(record) == 0 and spec.scope == "individual":
            raise InsufficientHistory(f"{f.label}: empty record")
        value = predict(f, record.baseline, np.zeros(0), subject_id=record.subject_id)
        return np.full(horizon, value)
    summary = spec.summary
    if len(record) < summary.min_history:
        raise InsufficientHistory(
            f"{f.label}: subject {record.subject_id} has {len(record)} observations, "
            f"need {summary.min_history}"
        )
    times = list(record.times)
    cov = record.covariates
    w_last = cov[-1] if len(cov) else np.zeros(record.n_covariates)
    ys = list(record.outcomes)
    rows_w = [c for c in cov]
    out = np.empty(horizon)
    tail = max(summary.memory, 1) if summary.kind == "lag_window" else None
    for h in range(horizon):
        t_next = times[-1] + 1
        if tail is None:
            ext = PanelRecord(record.subject_id, record.baseline, times, np.asarray(rows_w),
                              ys, record.entry_time, max(record.exit_time, times[-1]))
        else:
            ext = PanelRecord(record.subject_id, record.baseline, times[-tail:],
                              np.asarray(rows_w[-tail:]), ys[-tail:], record.entry_time,
                              max(record.exit_time, times[-1]))
        z = make_summary(ext, summary, t_next).values
        out[h] = predict(f, record.baseline, z, t_next, record.subject_id)
        times.append(t_next)
        ys.append(out[h])
        rows_w.append(w_last)
    return out


def coefficients(f: FittedLearner) -> Optional[np.ndarray]:
    """Linear coefficients ``[intercept, Z..., X...]``, or ``None``."""
    coef = f.state.get("coef")
    return None if coef is None else np.asarray(coef).copy()
