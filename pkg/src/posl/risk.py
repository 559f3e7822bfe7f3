"""Weighted losses, decay weights and online cross-validated risk tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NoMass, StaleUpdate, ValidationError

__all__ = [
    "LossRecord",
    "DecaySpec",
    "RiskTable",
    "squared_error",
    "decay_weight",
    "decay_weights",
    "accumulate",
    "mean_risk",
    "risk_rows",
    "write_risks_csv",
]


@dataclass(frozen=True)
class LossRecord:
    learner_id: str
    subject_id: int
    chron_time: int
    subject_time: int
    loss: float
    weight: float = 1.0

    def __post_init__(self):
        if not self.loss >= 0:
            raise ValidationError(f"loss must be >= 0, got {self.loss}")
        if not 0 <= self.weight <= 1:
            raise ValidationError(f"weight must be in [0, 1], got {self.weight}")


@dataclass(frozen=True)
class DecaySpec:
    """Piecewise loss weighting by lag ``current_m - loss_m``.

    Lags up to ``full_weight_window`` weigh 1, lags of ``zero_weight_cutoff``
    or more weigh 0, and lags in between weigh ``(1 - rate) ** lag``.
    """

    full_weight_window: int = 30
    zero_weight_cutoff: int = 180
    rate: float = 0.001

    def __post_init__(self):
        if not self.full_weight_window < self.zero_weight_cutoff:
            raise ValidationError("full_weight_window must be < zero_weight_cutoff")
        if not 0 < self.rate < 1:
            raise ValidationError("rate must be in (0, 1)")


def squared_error(y: float, yhat: float, weight: float = 1.0) -> float:
    if weight < 0:
        raise ValidationError("weight must be >= 0")
    return weight * (y - yhat) ** 2


def decay_weight(current_m: int, loss_m: int, spec: DecaySpec = DecaySpec()) -> float:
    if loss_m > current_m:
        raise ValidationError(f"loss time {loss_m} is after current time {current_m}")
    if loss_m <= current_m - spec.zero_weight_cutoff:
        return 0.0
    if loss_m >= current_m - spec.full_weight_window:
        return 1.0
    # np.power, as in decay_weights, so scalar and vector agree bit for bit
    return float(np.power(1.0 - spec.rate, float(current_m - loss_m)))


def decay_weights(current_m, loss_m, spec: DecaySpec = DecaySpec()) -> np.ndarray:
    """Vectorized :func:`decay_weight`; ``current_m`` broadcasts."""
    lag = np.asarray(current_m) - np.asarray(loss_m)
    w = np.power(1.0 - spec.rate, lag.astype(float))
    w = np.where(lag <= spec.full_weight_window, 1.0, w)
    return np.where(lag >= spec.zero_weight_cutoff, 0.0, w)


_FIELDS = ("subject", "chron", "m", "loss", "weight")


def _empty_store():
    return {"subject": np.zeros(0, np.int64), "chron": np.zeros(0, np.int64),
            "m": np.zeros(0, np.int64), "loss": np.zeros(0), "weight": np.zeros(0)}


@dataclass(frozen=True, eq=False)
class RiskTable:
    """Immutable snapshot of every learner's stored validation losses.

    Cumulative weighted loss and weight are derived on demand so that decay
    weights can follow the current subject time.  With ``decay=None`` the
    stored weights are used as they are.
    """

    learners: tuple = ()
    store: dict = field(default_factory=dict, repr=False)
    entries: dict = field(default_factory=dict, repr=False)
    decay: Optional[DecaySpec] = None
    last_updated: int = 0

    @classmethod
    def new(cls, learners: Sequence[str] = (), decay: Optional[DecaySpec] = None) -> "RiskTable":
        return cls(tuple(learners), {k: _empty_store() for k in learners}, {}, decay, 0)

    def _effective(self, learner: str, subject: Optional[int] = None):
        s = self.store.get(learner)
        if s is None or len(s["loss"]) == 0:
            return np.zeros(0, np.int64), np.zeros(0), np.zeros(0)
        mask = slice(None) if subject is None else s["subject"] == subject
        m, loss, w = s["m"][mask], s["loss"][mask], s["weight"][mask]
        if self.decay is not None:
            subj = s["subject"][mask]
            entry = np.array([self.entries[int(i)] for i in subj], dtype=np.int64)
            w = w * decay_weights(self.last_updated - entry, m, self.decay)
        return m, loss, w

    def strata(self, learner: str, subject: Optional[int] = None) -> dict:
        """``m -> (cum_loss, cum_weight)`` in increasing ``m``."""
        m, loss, w = self._effective(learner, subject)
        out = {}
        if len(m) == 0:
            return out
        order = np.argsort(m, kind="stable")
        m, wl, w = m[order], (w * loss)[order], w[order]
        keys, starts = np.unique(m, return_index=True)
        cl = np.add.reduceat(wl, starts)
        cw = np.add.reduceat(w, starts)
        for k, a, b in zip(keys, cl, cw):
            out[int(k)] = (float(a), float(b))
        return out

    def totals(self, learner: str, m: Optional[int] = None,
               subject: Optional[int] = None):
        """``(cum_loss, cum_weight)`` overall or within stratum ``m``.

        The overall total is the sum of the stratum totals in increasing
        ``m``, so the stratified totals add up to it exactly.
        """
        st = self.strata(learner, subject)
        if m is not None:
            return st.get(int(m), (0.0, 0.0))
        return sum(v[0] for v in st.values()), sum(v[1] for v in st.values())

    def n_records(self, learner: str) -> int:
        s = self.store.get(learner)
        return 0 if s is None else len(s["loss"])


def accumulate(table: RiskTable, fold_losses: Iterable[LossRecord], t: int) -> RiskTable:
    """New table with ``fold_losses`` added and clock moved to ``t``."""
    if t < table.last_updated:
        raise StaleUpdate(f"update at t={t} before last update t={table.last_updated}")
    learners = list(table.learners)
    grouped: dict = {}
    entries = dict(table.entries)
    for rec in fold_losses:
        if rec.learner_id not in learners:
            learners.append(rec.learner_id)
        grouped.setdefault(rec.learner_id, []).append(rec)
        entries.setdefault(int(rec.subject_id), int(rec.chron_time) - int(rec.subject_time))
    store = {}
    for name in learners:
        old = table.store.get(name, _empty_store())
        new = grouped.get(name)
        if new:
            add = {
                "subject": np.array([r.subject_id for r in new], np.int64),
                "chron": np.array([r.chron_time for r in new], np.int64),
                "m": np.array([r.subject_time for r in new], np.int64),
                "loss": np.array([r.loss for r in new], float),
                "weight": np.array([r.weight for r in new], float),
            }
            merged = {k: np.concatenate([old[k], add[k]]) for k in _FIELDS}
        else:
            merged = old
        if table.decay is not None and len(merged["loss"]):
            cur = t - np.array([entries[int(i)] for i in merged["subject"]], dtype=np.int64)
            keep = decay_weights(cur, merged["m"], table.decay) > 0
            keep &= merged["weight"] > 0
            if not keep.all():
                merged = {k: v[keep] for k, v in merged.items()}
        elif len(merged["loss"]):
            keep = merged["weight"] > 0
            if not keep.all():
                merged = {k: v[keep] for k, v in merged.items()}
        store[name] = merged
    return RiskTable(tuple(learners), store, entries, table.decay, int(t))


def mean_risk(table: RiskTable, learner_id: str, m: Optional[int] = None,
              subject: Optional[int] = None) -> float:
    """Cumulative weighted loss divided by cumulative weight."""
    cl, cw = table.totals(learner_id, m, subject)
    if cw <= 0:
        where = "" if m is None else f" at m={m}"
        raise NoMass(f"{learner_id}: no loss mass{where}")
    return cl / cw


def risk_rows(table: RiskTable, subject: Optional[int] = None, per_m: bool = False) -> list:
    """Rows ``(t, learner, m, cum_loss, cum_weight, mean_risk)``; ``m`` is None overall."""
    rows = []
    for name in table.learners:
        st = table.strata(name, subject)
        cl = sum(v[0] for v in st.values())
        cw = sum(v[1] for v in st.values())
        rows.append((table.last_updated, name, None, cl, cw, cl / cw if cw > 0 else float("nan")))
        if per_m:
            for m, (a, b) in st.items():
                rows.append((table.last_updated, name, m, a, b, a / b if b > 0 else float("nan")))
    return rows


def write_risks_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "learner", "m", "cum_loss", "cum_weight", "mean_risk"])
        for t, name, m, cl, cw, r in rows:
            w.writerow([t, name, "" if m is None else m, repr(float(cl)), repr(float(cw)),
                        repr(float(r))])
    return path
