"""Time-series cross-validation splits over (subject, time) pairs.

Every split labels each ``(subject, time)`` pair as training, validation or
unused.  Time windows use 1-based inclusive ranges; fold ``v`` of a rolling
origin split trains on ``1 .. n0 + m(v-1)``, skips ``h`` gap points and
validates on the next ``n1`` points.  Rolling window splits keep the training
window at exactly ``n0`` points.  The V-fold variants additionally split
subjects into groups so training and validation never share a subject.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np

from .core import Panel
from .errors import SpecDoesNotFit, TooFewSubjects, ValidationError

__all__ = [
    "FoldSpec",
    "FoldAssignment",
    "TimeWindow",
    "time_windows",
    "subject_groups",
    "rolling_origin_folds",
    "rolling_window_folds",
    "vfold_variant_folds",
    "dynamic_stream_folds",
    "make_folds",
    "write_folds_csv",
]

SCHEMES = ("rolling_origin", "rolling_window", "rolling_origin_vfold", "rolling_window_vfold")


@dataclass(frozen=True)
class FoldSpec:
    scheme: str = "rolling_origin"
    first_window: int = 10
    validation_size: int = 5
    batch: int = 5
    gap: int = 0
    sample_folds: int = 2
    shuffle_seed: Optional[int] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown fold scheme {self.scheme!r}")
        if self.first_window < 1 or self.validation_size < 1 or self.batch < 1:
            raise ValidationError("first_window, validation_size and batch must be >= 1")
        if self.gap < 0:
            raise ValidationError("gap must be >= 0")
        if self.is_vfold and self.sample_folds < 2:
            raise ValidationError("sample_folds must be >= 2 for V-fold schemes")

    @property
    def is_vfold(self) -> bool:
        return self.scheme.endswith("_vfold")

    @property
    def rolling_window(self) -> bool:
        return self.scheme.startswith("rolling_window")


@dataclass(frozen=True)
class TimeWindow:
    """Training and validation ranges of one time fold (inclusive, 1-based)."""

    v: int
    train_lo: int
    train_hi: int
    val_lo: int
    val_hi: int

    def shift(self, offset: int) -> "TimeWindow":
        return TimeWindow(self.v, self.train_lo + offset, self.train_hi + offset,
                          self.val_lo + offset, self.val_hi + offset)


@dataclass(frozen=True)
class FoldAssignment:
    fold_index: int
    train: frozenset
    validation: frozenset
    unused: frozenset
    sample_fold: Optional[int] = None

    def role(self, subject_id: int, t: int) -> int:
        """``0`` train, ``1`` validation, ``-1`` otherwise."""
        key = (subject_id, t)
        if key in self.train:
            return 0
        if key in self.validation:
            return 1
        return -1

    def train_times(self, subject_id: int) -> List[int]:
        return sorted(s for i, s in self.train if i == subject_id)

    def validation_times(self, subject_id: int) -> List[int]:
        return sorted(s for i, s in self.validation if i == subject_id)


def time_windows(spec: FoldSpec, t: int) -> List[TimeWindow]:
    """All time folds whose validation window ends at or before ``t``."""
    out = []
    v = 1
    while True:
        train_hi = spec.first_window + spec.batch * (v - 1)
        val_hi = train_hi + spec.gap + spec.validation_size
        if val_hi > t:
            break
        train_lo = train_hi - spec.first_window + 1 if spec.rolling_window else 1
        out.append(TimeWindow(v, train_lo, train_hi, train_hi + spec.gap + 1, val_hi))
        v += 1
    return out


def subject_groups(subjects: Iterable[int], n_groups: int, seed: Optional[int] = None) -> list:
    """Round-robin partition of sorted ids into ``n_groups`` lists."""
    ids = sorted(subjects)
    if seed is not None:
        ids = list(np.random.default_rng(seed).permutation(ids))
    groups = [[] for _ in range(n_groups)]
    for k, sid in enumerate(ids):
        groups[k % n_groups].append(int(sid))
    return groups


def _pairs(subjects, lo, hi):
    return {(i, s) for i in subjects for s in range(lo, hi + 1)}


def _assemble(windows, subjects, t, splitter) -> List[FoldAssignment]:
    universe = _pairs(subjects, 1, t)
    folds = []
    for w in windows:
        for train_ids, val_ids, vprime in splitter:
            train = _pairs(train_ids, w.train_lo, w.train_hi)
            val = _pairs(val_ids, w.val_lo, w.val_hi)
            folds.append(FoldAssignment(w.v, frozenset(train), frozenset(val),
                                        frozenset(universe - train - val), vprime))
    return folds


def _time_folds(spec: FoldSpec, subjects, t: int) -> List[FoldAssignment]:
    windows = time_windows(spec, t)
    if not windows:
        raise SpecDoesNotFit(
            f"no fold fits by t={t}: need t >= {spec.first_window + spec.gap + spec.validation_size}"
        )
    subjects = sorted(subjects)
    return _assemble(windows, subjects, t, [(subjects, subjects, None)])


def rolling_origin_folds(spec: FoldSpec, subjects, t: int) -> List[FoldAssignment]:
    """Rolling origin split: the training window grows by ``batch`` per fold."""
    return _time_folds(FoldSpec("rolling_origin", spec.first_window, spec.validation_size,
                                spec.batch, spec.gap), subjects, t)


def rolling_window_folds(spec: FoldSpec, subjects, t: int) -> List[FoldAssignment]:
    """Rolling window split: a fixed-size training window slides by ``batch``."""
    return _time_folds(FoldSpec("rolling_window", spec.first_window, spec.validation_size,
                                spec.batch, spec.gap), subjects, t)


def vfold_variant_folds(spec: FoldSpec, subjects, t: int) -> List[FoldAssignment]:
    """Time folds crossed with a subject partition.

    For time fold ``v`` and subject group ``v'`` the model trains on every
    subject outside group ``v'`` and validates on the members of ``v'``.
    Folds are ordered by ``v`` then ``v'``.
    """
    subjects = sorted(subjects)
    if len(subjects) < spec.sample_folds:
        raise TooFewSubjects(f"{len(subjects)} subjects for {spec.sample_folds} sample folds")
    windows = time_windows(spec, t)
    if not windows:
        raise SpecDoesNotFit(f"no fold fits by t={t}")
    groups = subject_groups(subjects, spec.sample_folds, spec.shuffle_seed)
    splitter = []
    for g, members in enumerate(groups, start=1):
        others = [i for i in subjects if i not in set(members)]
        splitter.append((others, members, g))
    return _assemble(windows, subjects, t, splitter)


def dynamic_stream_folds(spec: FoldSpec, panel: Panel, t: int) -> List[FoldAssignment]:
    """Folds laid out on each subject's own time axis.

    Subject ``i`` uses the same window arithmetic shifted by its entry time,
    so subject time ``m`` sits at chronological ``E_i + m``.  A subject joins
    fold ``v`` only when its whole validation window is observed by
    ``min(t, T_i)``.  Folds with no participating subject are dropped.
    """
    per_subject = {}
    observed = {}
    for r in panel:
        seen = r.times[r.times <= min(t, r.exit_time)]
        observed[r.subject_id] = set(int(s) for s in seen)
        horizon = int(seen[-1]) - r.entry_time if len(seen) else 0
        per_subject[r.subject_id] = {
            w.v: w.shift(r.entry_time) for w in time_windows(spec, horizon)
            if all(s in observed[r.subject_id]
                   for s in range(w.train_lo + r.entry_time, w.val_hi + r.entry_time + 1)
                   if not (w.train_hi + r.entry_time < s < w.val_lo + r.entry_time))
        }
    n_folds = max((max(ws, default=0) for ws in per_subject.values()), default=0)
    if n_folds == 0:
        raise SpecDoesNotFit(f"no active subject admits a fold by t={t}")

    subjects = sorted(per_subject)
    universe = _pairs(subjects, 1, t)
    for sid, seen in observed.items():
        universe |= {(sid, s) for s in seen}

    if spec.is_vfold:
        if len(subjects) < spec.sample_folds:
            raise TooFewSubjects(f"{len(subjects)} subjects for {spec.sample_folds} sample folds")
        groups = subject_groups(subjects, spec.sample_folds, spec.shuffle_seed)
        splitter = [([i for i in subjects if i not in set(g)], g, k)
                    for k, g in enumerate(groups, start=1)]
    else:
        splitter = [(subjects, subjects, None)]

    folds = []
    for v in range(1, n_folds + 1):
        for train_ids, val_ids, vprime in splitter:
            train, val = set(), set()
            for sid in train_ids:
                w = per_subject[sid].get(v)
                if w is not None:
                    train |= {(sid, s) for s in range(w.train_lo, w.train_hi + 1)}
            for sid in val_ids:
                w = per_subject[sid].get(v)
                if w is not None:
                    val |= {(sid, s) for s in range(w.val_lo, w.val_hi + 1)}
            if not val:
                continue
            folds.append(FoldAssignment(v, frozenset(train), frozenset(val),
                                        frozenset(universe - train - val), vprime))
    if not folds:
        raise SpecDoesNotFit(f"no active subject admits a fold by t={t}")
    return folds


def make_folds(spec: FoldSpec, subjects, t: int) -> List[FoldAssignment]:
    """Dispatch on ``spec.scheme`` for a static panel."""
    if spec.is_vfold:
        return vfold_variant_folds(spec, subjects, t)
    if spec.rolling_window:
        return rolling_window_folds(spec, subjects, t)
    return rolling_origin_folds(spec, subjects, t)


def write_folds_csv(folds: List[FoldAssignment], path) -> Path:
    """Audit table ``fold,id,t,role``; ``fold`` is the 1-based list position."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "id", "t", "role"])
        for k, fold in enumerate(folds, start=1):
            rows = [(i, s, "train") for i, s in fold.train]
            rows += [(i, s, "val") for i, s in fold.validation]
            rows += [(i, s, "unused") for i, s in fold.unused]
            for i, s, role in sorted(rows):
                w.writerow([k, i, s, role])
    return path
