"""Panel time-series data model, summary measures and subject-time arithmetic.

A panel holds one :class:`PanelRecord` per subject.  Each record carries the
subject's baseline covariates ``X``, a contiguous integer time axis on
``[entry_time, exit_time]`` and, per time, a covariate vector ``W(t)`` and a
scalar outcome ``Y(t)``.  Chronological time ``t`` maps to subject time
``m = t - entry_time``.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import InsufficientHistory, NotYetEnrolled, ValidationError

__all__ = [
    "PanelRecord",
    "Panel",
    "SummarySpec",
    "SummaryVector",
    "make_summary",
    "summary_matrix",
    "chron_to_subject_time",
    "active_set",
    "enrollment_counts",
    "read_panel_csv",
    "write_panel_csv",
]


def _frozen(a, dtype, ndim):
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PanelRecord:
    """One subject's baseline covariates and observed stream.

    ``covariates`` has shape ``(n_times, q)``; ``q`` may be zero.
    ``exit_time`` defaults to the last observed time (or ``entry_time`` for an
    empty stream).
    """

    subject_id: int
    baseline: np.ndarray
    times: np.ndarray
    covariates: np.ndarray
    outcomes: np.ndarray
    entry_time: int = 0
    exit_time: Optional[int] = None

    def __post_init__(self):
        times = _frozen(self.times, np.int64, 1)
        outcomes = _frozen(self.outcomes, np.float64, 1)
        cov = np.asarray(self.covariates, dtype=np.float64)
        if cov.size == 0:
            cov = np.zeros((len(times), 0))
        elif cov.ndim == 1:
            cov = cov.reshape(len(times), -1)
        if cov.ndim != 2 or cov.shape[0] != len(times):
            raise ValidationError(
                f"subject {self.subject_id}: covariates of shape {cov.shape} "
                f"for {len(times)} times"
            )
        cov = _frozen(cov, np.float64, 2)
        baseline = _frozen(np.atleast_1d(np.asarray(self.baseline, dtype=float)), np.float64, 1)
        if len(outcomes) != len(times):
            raise ValidationError(
                f"subject {self.subject_id}: {len(outcomes)} outcomes for {len(times)} times"
            )
        if len(times) > 1 and np.any(np.diff(times) != 1):
            if np.any(np.diff(times) <= 0):
                raise ValidationError(f"subject {self.subject_id}: times not strictly increasing")
            raise ValidationError(f"subject {self.subject_id}: gaps in the time axis are not supported")
        entry = int(self.entry_time)
        if self.exit_time is None:
            exit_ = int(times[-1]) if len(times) else entry
        else:
            exit_ = int(self.exit_time)
        if not 0 <= entry <= exit_:
            raise ValidationError(
                f"subject {self.subject_id}: need 0 <= entry ({entry}) <= exit ({exit_})"
            )
        if len(times) and (times[0] < entry or times[-1] > exit_):
            raise ValidationError(
                f"subject {self.subject_id}: observed times outside [{entry}, {exit_}]"
            )
        if not (np.all(np.isfinite(outcomes)) and np.all(np.isfinite(cov))):
            raise ValidationError(f"subject {self.subject_id}: non-finite observations")
        object.__setattr__(self, "subject_id", int(self.subject_id))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "baseline", baseline)
        object.__setattr__(self, "entry_time", entry)
        object.__setattr__(self, "exit_time", exit_)

    def __len__(self):
        return len(self.times)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def observations(self) -> np.ndarray:
        """``O(t) = (W(t), Y(t))`` stacked row-wise, shape ``(n, q + 1)``."""
        return np.column_stack([self.covariates, self.outcomes])

    @property
    def last_time(self) -> Optional[int]:
        return int(self.times[-1]) if len(self.times) else None

    def truncate(self, t: int) -> "PanelRecord":
        """Record restricted to observations at times ``<= t``."""
        k = int(np.searchsorted(self.times, t, side="right"))
        return PanelRecord(
            self.subject_id, self.baseline, self.times[:k], self.covariates[:k],
            self.outcomes[:k], self.entry_time, self.exit_time,
        )

    def window(self, start: int, stop: int) -> "PanelRecord":
        """Observations with ``start <= t <= stop``; entry/exit are kept."""
        i = int(np.searchsorted(self.times, start, side="left"))
        k = int(np.searchsorted(self.times, stop, side="right"))
        return PanelRecord(
            self.subject_id, self.baseline, self.times[i:k], self.covariates[i:k],
            self.outcomes[i:k], self.entry_time, self.exit_time,
        )

    def extend(self, times, covariates, outcomes) -> "PanelRecord":
        """New record with extra observations appended."""
        times = np.asarray(times, dtype=np.int64).ravel()
        outcomes = np.asarray(outcomes, dtype=float).ravel()
        cov = np.asarray(covariates, dtype=float).reshape(len(times), self.n_covariates)
        exit_ = self.exit_time
        if len(times) and exit_ < times[-1]:
            exit_ = int(times[-1])
        return PanelRecord(
            self.subject_id, self.baseline,
            np.concatenate([self.times, times]),
            np.vstack([self.covariates, cov]),
            np.concatenate([self.outcomes, outcomes]),
            self.entry_time, exit_,
        )


@dataclass(frozen=True, eq=False)
class Panel:
    records: tuple
    horizon_tau: Optional[int] = None

    def __post_init__(self):
        records = tuple(self.records)
        ids = [r.subject_id for r in records]
        dup = [i for i, c in Counter(ids).items() if c > 1]
        if dup:
            raise ValidationError(f"duplicate subject ids: {sorted(dup)}")
        last = max((r.last_time or 0 for r in records), default=0)
        tau = last if self.horizon_tau is None else int(self.horizon_tau)
        if tau < last:
            raise ValidationError(f"horizon {tau} precedes the last observed time {last}")
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "horizon_tau", tau)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def subject_ids(self) -> list:
        return [r.subject_id for r in self.records]

    def get(self, subject_id: int) -> PanelRecord:
        for r in self.records:
            if r.subject_id == subject_id:
                return r
        raise KeyError(subject_id)

    def subset(self, subject_ids: Iterable[int]) -> "Panel":
        keep = set(subject_ids)
        return Panel(tuple(r for r in self.records if r.subject_id in keep), self.horizon_tau)

    def without(self, subject_ids: Iterable[int]) -> "Panel":
        drop = set(subject_ids)
        return Panel(tuple(r for r in self.records if r.subject_id not in drop), self.horizon_tau)


@dataclass(frozen=True)
class SummarySpec:
    """How to summarize a subject's past into a fixed-length vector.

    ``lag_window`` concatenates the last ``memory`` observations; with
    ``y_only`` only the outcome lags are used.  ``running_mean`` averages all
    past observations component-wise.
    """

    kind: str = "lag_window"
    memory: int = 1
    include_baseline: bool = False
    y_only: bool = False

    def __post_init__(self):
        if self.kind not in ("lag_window", "running_mean"):
            raise ValidationError(f"unknown summary kind {self.kind!r}")
        if int(self.memory) < 1:
            raise ValidationError("summary memory must be >= 1")

    @property
    def min_history(self) -> int:
        return self.memory if self.kind == "lag_window" else 1

    def width(self, n_covariates: int, n_baseline: int = 0) -> int:
        per_obs = 1 if self.y_only else n_covariates + 1
        w = per_obs * (self.memory if self.kind == "lag_window" else 1)
        return w + (n_baseline if self.include_baseline else 0)


@dataclass(frozen=True, eq=False)
class SummaryVector:
    subject_id: int
    as_of_time: int
    values: np.ndarray


def _obs(record: PanelRecord, spec: SummarySpec) -> np.ndarray:
    if spec.y_only:
        return record.outcomes.reshape(-1, 1)
    return record.observations


def make_summary(record: PanelRecord, spec: SummarySpec, t: int) -> SummaryVector:
    """Summary ``Z(t-1)`` of the observations strictly before ``t``."""
    n_before = int(np.searchsorted(record.times, t, side="left"))
    if n_before < spec.min_history:
        raise InsufficientHistory(
            f"subject {record.subject_id}: {n_before} observations before t={t}, "
            f"need {spec.min_history}"
        )
    obs = _obs(record, spec)[:n_before]
    if spec.kind == "lag_window":
        values = obs[n_before - spec.memory:].ravel()
    else:
        values = obs.mean(axis=0)
    if spec.include_baseline:
        values = np.concatenate([values, record.baseline])
    return SummaryVector(record.subject_id, int(t) - 1, np.asarray(values, dtype=float))


def summary_matrix(record: PanelRecord, spec: SummarySpec, start: Optional[int] = None,
                   stop: Optional[int] = None):
    """Summaries for every observed time that has enough history.

    Returns ``(times, Z, y)`` where row ``j`` of ``Z`` summarizes the
    observations strictly before ``times[j]`` and ``y[j]`` is the outcome at
    ``times[j]``.  ``start``/``stop`` restrict the outcome times (inclusive).
    """
    obs = _obs(record, spec)
    n = len(record.times)
    first = spec.min_history
    idx = np.arange(first, n)
    if start is not None:
        idx = idx[record.times[idx] >= start]
    if stop is not None:
        idx = idx[record.times[idx] <= stop]
    if spec.kind == "lag_window":
        m = spec.memory
        if len(idx):
            win = np.lib.stride_tricks.sliding_window_view(obs, m, axis=0)
            # win[j] covers obs[j:j+m] with shape (d, m); reorder to obs-major.
            Z = win[idx - m].transpose(0, 2, 1).reshape(len(idx), -1)
        else:
            Z = np.zeros((0, m * obs.shape[1]))
    else:
        csum = np.cumsum(obs, axis=0)
        Z = csum[idx - 1] / idx[:, None] if len(idx) else np.zeros((0, obs.shape[1]))
    if spec.include_baseline:
        Z = np.column_stack([Z, np.broadcast_to(record.baseline, (len(idx), len(record.baseline)))])
    return record.times[idx].copy(), np.ascontiguousarray(Z, dtype=float), record.outcomes[idx].copy()


def chron_to_subject_time(entry: int, t: int) -> int:
    if t < entry:
        raise NotYetEnrolled(f"t={t} precedes entry time {entry}")
    return int(t) - int(entry)


def active_set(panel: Panel, t: int) -> set:
    """Subjects enrolled and not yet exited at ``t``."""
    return {r.subject_id for r in panel if r.entry_time <= t <= r.exit_time}


def enrollment_counts(panel: Panel, t: int):
    """``n(t)`` and the subject-time occupancy map ``m -> n_m(t)``."""
    n_t = sum(1 for r in panel if r.entry_time <= t)
    n_m: dict = {}
    for r in panel:
        if r.entry_time > t:
            continue
        for s in r.times[r.times <= t]:
            m = int(s) - r.entry_time
            n_m[m] = n_m.get(m, 0) + 1
    return n_t, dict(sorted(n_m.items()))


_NUMBERED = re.compile(r"^([xw])(\d+)$")


def read_panel_csv(path, horizon_tau: Optional[int] = None) -> Panel:
    """Load a panel from ``id,t,entry,exit,x1..xp,w1..wq,y`` CSV.

    ``entry``/``exit`` columns are optional (defaults 0 and the last time).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for need in ("id", "t", "y"):
            if need not in cols:
                raise ValidationError(f"{path}: missing column {need!r}")
        xcols = sorted((c for c in cols if _NUMBERED.match(c) and c[0] == "x"),
                       key=lambda c: int(c[1:]))
        wcols = sorted((c for c in cols if _NUMBERED.match(c) and c[0] == "w"),
                       key=lambda c: int(c[1:]))
        rows: dict = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                sid = int(row["id"])
                rows.setdefault(sid, []).append((
                    int(row["t"]),
                    int(row["entry"]) if row.get("entry") not in (None, "") else None,
                    int(row["exit"]) if row.get("exit") not in (None, "") else None,
                    [float(row[c]) for c in xcols],
                    [float(row[c]) for c in wcols],
                    float(row["y"]),
                ))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    records = []
    for sid in sorted(rows):
        obs = sorted(rows[sid], key=lambda r: r[0])
        baselines = {tuple(o[3]) for o in obs}
        if len(baselines) > 1:
            raise ValidationError(f"{path}: baseline covariates vary within subject {sid}")
        entries = {o[1] for o in obs if o[1] is not None}
        exits = {o[2] for o in obs if o[2] is not None}
        if len(entries) > 1 or len(exits) > 1:
            raise ValidationError(f"{path}: entry/exit vary within subject {sid}")
        records.append(PanelRecord(
            sid,
            np.array(obs[0][3]),
            np.array([o[0] for o in obs]),
            np.array([o[4] for o in obs]).reshape(len(obs), len(wcols)),
            np.array([o[5] for o in obs]),
            entries.pop() if entries else 0,
            exits.pop() if exits else None,
        ))
    return Panel(tuple(records), horizon_tau)


def _fmt(v) -> str:
    return repr(float(v))


def write_panel_csv(panel: Panel, path) -> Path:
    """Write ``panel`` sorted by ``(id, t)``."""
    path = Path(path)
    p = max((len(r.baseline) for r in panel), default=0)
    q = max((r.n_covariates for r in panel), default=0)
    header = ["id", "t", "entry", "exit"] + [f"x{j + 1}" for j in range(p)] \
        + [f"w{j + 1}" for j in range(q)] + ["y"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in sorted(panel, key=lambda r: r.subject_id):
            xs = [_fmt(v) for v in r.baseline]
            for j, t in enumerate(r.times):
                w.writerow([r.subject_id, int(t), r.entry_time, r.exit_time, *xs,
                            *(_fmt(v) for v in r.covariates[j]), _fmt(r.outcomes[j])])
    return path
