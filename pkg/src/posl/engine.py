"""Streaming orchestration: batches in, personalized ensemble forecasts out.

Each :func:`step` moves the clock to a new time ``t`` and, in order,

1. appends the batch to each target's record;
2. scores every learner on the validation windows completed in ``(clock, t]``
   using fits that only saw the matching training window;
3. adds those losses to the risk table;
4. refits the historical learners if a refresh time was crossed;
5. updates each target's individual learners with the new rows;
6. recomputes the ensemble weights per target and emits forecasts.

Individual learners are fitted only on windows holding at least ``warmup``
observations.  On earlier windows they are scored with the window's outcome
mean as a stand-in prediction (``cold_start="mean"``), so when they become
eligible their record starts from that plain baseline rather than from
nothing.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import learners as L
from .core import Panel, PanelRecord, SummarySpec
from .cv import FoldSpec, TimeWindow, time_windows
from .errors import (InsufficientHistory, NoMass, POSLError, SingularDesign,
                     StaleBatch, ValidationError)
from .risk import DecaySpec, LossRecord, RiskTable, accumulate, decay_weights, risk_rows
from .selector import (MODES, ConditionalConfig, EnsembleWeights, MetaDesign, combine,
                       discrete_select, fit_conditional, nnls_weights, one_hot, uniform)

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_HISTORICAL",
    "DEFAULT_INDIVIDUAL",
    "EngineConfig",
    "EngineState",
    "StepRecord",
    "init",
    "step",
    "run_stream",
    "oracle_eval",
    "weight_masses",
    "first_active_step",
    "config_from_dict",
    "config_to_dict",
    "load_config",
    "write_forecasts_csv",
    "write_weights_csv",
    "write_engine_risks_csv",
    "write_oracle_csv",
]


def _lags(p):
    return SummarySpec("lag_window", p, y_only=True)


DEFAULT_HISTORICAL = (
    L.LearnerSpec("lag_linear", "historical", _lags(5)),
    L.LearnerSpec("ridge_rls", "historical", _lags(2), ridge=10.0),
    L.LearnerSpec("global_mean", "historical"),
)
DEFAULT_INDIVIDUAL = (
    L.LearnerSpec("lag_linear", "individual", _lags(5)),
    L.LearnerSpec("ridge_rls", "individual", _lags(2), ridge=1.0),
    L.LearnerSpec("exp_smooth", "individual", smoothing=0.3),
    L.LearnerSpec("global_mean", "individual"),
)


@dataclass(frozen=True)
class EngineConfig:
    historical_learners: Tuple[L.LearnerSpec, ...] = DEFAULT_HISTORICAL
    individual_learners: Tuple[L.LearnerSpec, ...] = DEFAULT_INDIVIDUAL
    historical_refresh_times: Tuple[int, ...] = (0,)
    batch_size: int = 5
    warmup: int = 60
    forecast_horizon: int = 5
    fold_spec: FoldSpec = FoldSpec("rolling_origin", 10, 5, 5, 0)
    decay: Optional[DecaySpec] = DecaySpec()
    mode: str = "convex"
    per_m_selection: bool = False
    conditional: ConditionalConfig = ConditionalConfig()
    # refreshes after time 0 refit on historical plus target data through t
    pooled_includes_targets: bool = True
    # regression learners need this many rows per coefficient before scoring
    min_rows_per_coef: int = 2
    risk_strata: bool = False
    # "mean": a learner without enough training rows predicts the training mean
    # of the window; "skip": it is not scored
    cold_start: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "historical_learners", tuple(self.historical_learners))
        object.__setattr__(self, "individual_learners", tuple(self.individual_learners))
        object.__setattr__(self, "historical_refresh_times",
                           tuple(sorted(int(t) for t in self.historical_refresh_times)))
        if not self.historical_learners:
            raise ValidationError("historical_learners: at least one learner is required")
        for s in self.historical_learners:
            if s.scope != "historical":
                raise ValidationError(f"historical_learners: {s.label} has scope {s.scope}")
        for s in self.individual_learners:
            if s.scope != "individual":
                raise ValidationError(f"individual_learners: {s.label} has scope {s.scope}")
        labels = [s.label for s in self.historical_learners + self.individual_learners]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"learner labels must be unique, got {labels}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.forecast_horizon < 1:
            raise ValidationError("forecast_horizon must be >= 1")
        max_lag = max((s.min_history for s in self.individual_learners), default=0)
        if self.warmup < max_lag:
            raise ValidationError(f"warmup ({self.warmup}) must be >= largest learner lag ({max_lag})")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.fold_spec.is_vfold:
            raise ValidationError("fold_spec: streaming runs use rolling_origin or rolling_window")
        if self.cold_start not in ("mean", "skip"):
            raise ValidationError(f"cold_start must be 'mean' or 'skip', got {self.cold_start!r}")
        if self.min_rows_per_coef < 1:
            raise ValidationError("min_rows_per_coef must be >= 1")

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(s.label for s in self.historical_learners + self.individual_learners)


@dataclass(frozen=True, eq=False)
class MetaChunk:
    """Validation rows scored during one step, one column per registered learner."""

    step_t: int
    subject: np.ndarray
    times: np.ndarray
    m: np.ndarray
    y: np.ndarray
    preds: np.ndarray
    ensemble: np.ndarray


@dataclass(frozen=True, eq=False)
class StepRecord:
    t: int
    eligible: Dict[int, tuple]
    weights: Dict[int, EnsembleWeights]
    selected: Dict[int, Optional[str]]
    forecasts: Tuple[tuple, ...]
    risks: Tuple[tuple, ...] = ()
    dropped: Dict[int, tuple] = field(default_factory=dict)
    # fits behind each target's forecasts; fitted learners are immutable
    fits: Dict[int, Dict[str, L.FittedLearner]] = field(default_factory=dict, repr=False)


@dataclass(frozen=True, eq=False)
class EngineState:
    config: EngineConfig
    historical_panel: Panel
    historical: Dict[str, L.FittedLearner]
    targets: Dict[int, PanelRecord]
    exits: Dict[int, Optional[int]]
    individual: Dict[int, Dict[str, L.FittedLearner]]
    risk: RiskTable
    weights: Dict[int, EnsembleWeights]
    clock: int = 0
    meta: Tuple[MetaChunk, ...] = ()
    steps: Tuple[StepRecord, ...] = ()

    @property
    def labels(self) -> Tuple[str, ...]:
        return self.config.labels

    def meta_arrays(self, upto: Optional[int] = None) -> Optional[MetaChunk]:
        chunks = [c for c in self.meta if upto is None or c.step_t <= upto]
        if not chunks:
            return None
        cat = lambda f: np.concatenate([getattr(c, f) for c in chunks])
        step_t = np.concatenate([np.full(len(c.y), c.step_t, np.int64) for c in chunks])
        return MetaChunk(step_t, cat("subject"), cat("times"), cat("m"), cat("y"),
                         np.vstack([c.preds for c in chunks]), cat("ensemble"))


def _n_coef(spec: L.LearnerSpec, rec: PanelRecord) -> int:
    if not spec.uses_summary:
        return 1
    width = spec.summary.width(rec.n_covariates, len(rec.baseline))
    return 1 + width + (len(rec.baseline) if spec.with_baseline else 0)


def _enough(spec: L.LearnerSpec, rows: L.TrainingRows, rec: PanelRecord, cfg: EngineConfig) -> bool:
    if not spec.uses_summary:
        return len(rows) >= 1
    return len(rows) >= cfg.min_rows_per_coef * _n_coef(spec, rec)


def _fit_historical(cfg: EngineConfig, records: Sequence[PanelRecord]) -> Dict[str, L.FittedLearner]:
    out = {}
    for spec in cfg.historical_learners:
        rows = L.build_rows(records, spec)
        out[spec.label] = L.fit(spec, rows)
    return out


def _empty_target(rec: PanelRecord) -> PanelRecord:
    return PanelRecord(rec.subject_id, rec.baseline, np.zeros(0, np.int64),
                       np.zeros((0, rec.n_covariates)), np.zeros(0), rec.entry_time)


def init(panel_historical: Panel, targets: Iterable = (), config: EngineConfig = EngineConfig(),
         clock: int = 0) -> EngineState:
    """Fit historical learners on the pooled panel and register targets.

    ``targets`` holds one :class:`PanelRecord` per target; only its id,
    baseline, entry and exit times are used, observations arrive through
    :func:`step`.  Ids may not overlap the historical panel.
    """
    if len(panel_historical) == 0:
        raise ValidationError("historical panel is empty")
    recs = {}
    exits = {}
    for rec in targets:
        if rec.subject_id in recs or rec.subject_id in panel_historical.subject_ids:
            raise ValidationError(f"target id {rec.subject_id} is duplicated")
        recs[rec.subject_id] = _empty_target(rec)
        exits[rec.subject_id] = rec.exit_time if len(rec) else None
    labels = config.labels
    return EngineState(
        config=config,
        historical_panel=panel_historical,
        historical=_fit_historical(config, list(panel_historical)),
        targets=recs,
        exits=exits,
        individual={i: {} for i in recs},
        risk=replace(RiskTable.new(labels, config.decay), last_updated=int(clock)),
        weights={},
        clock=int(clock),
    )


def _new_windows(cfg: EngineConfig, rec: PanelRecord, lo: int, hi: int) -> List[TimeWindow]:
    """Windows (chronological) whose validation ends in ``(lo, hi]`` and are fully observed."""
    if len(rec) == 0:
        return []
    E = rec.entry_time
    first, last = int(rec.times[0]), int(rec.times[-1])
    out = []
    for w in time_windows(cfg.fold_spec, last - E):
        w = w.shift(E)
        if lo < w.val_hi <= hi and w.train_lo >= first and w.val_hi <= last:
            out.append(w)
    return out


def _window_fit(state: EngineState, spec: L.LearnerSpec, rec: PanelRecord,
                w: TimeWindow) -> Optional[L.FittedLearner]:
    cfg = state.config
    if spec.scope == "historical":
        return state.historical[spec.label]
    live = state.individual.get(rec.subject_id, {}).get(spec.label)
    if (live is not None and not cfg.fold_spec.rolling_window
            and live.trained_through == w.train_hi):
        return live
    n_train = int(np.sum((rec.times >= w.train_lo) & (rec.times <= w.train_hi)))
    if n_train < cfg.warmup:
        return None
    rows = L.build_rows(rec.truncate(w.train_hi), spec, start=w.train_lo)
    if not _enough(spec, rows, rec, cfg):
        return None
    return L.fit(spec, rows)


def _evaluate(state: EngineState, rec: PanelRecord, w: TimeWindow, step_t: int):
    """Losses and meta rows for one validation window of one target."""
    cfg = state.config
    specs = cfg.historical_learners + cfg.individual_learners
    val_times = np.arange(w.val_lo, w.val_hi + 1)
    preds = np.full((len(val_times), len(specs)), np.nan)
    upto = rec.truncate(w.val_hi)
    for k, spec in enumerate(specs):
        try:
            f = _window_fit(state, spec, rec, w)
            if f is None:
                if cfg.cold_start == "mean":
                    past = rec.outcomes[(rec.times >= w.train_lo) & (rec.times <= w.train_hi)]
                    if len(past):
                        preds[:, k] = float(np.mean(past))
                continue
            rows = L.build_rows(upto, spec, start=w.val_lo)
            if len(rows) == 0:
                continue
            p = L.predict_rows(f, rows)
        except (InsufficientHistory, SingularDesign) as exc:
            logger.info("t=%d subject %d: %s not scored (%s)", step_t, rec.subject_id, spec.label, exc)
            continue
        preds[np.searchsorted(val_times, rows.times), k] = p
    y = upto.outcomes[np.searchsorted(upto.times, val_times)]
    m = val_times - rec.entry_time

    ens = np.full(len(val_times), np.nan)
    wts = state.weights.get(rec.subject_id)
    if wts is not None:
        cols = [cfg.labels.index(k) for k in wts.learners]
        for r in range(len(val_times)):
            p = preds[r, cols]
            if np.all(np.isfinite(p)):
                ens[r] = combine(wts, p, rec.baseline)

    losses = []
    for k, label in enumerate(cfg.labels):
        for r in range(len(val_times)):
            if np.isfinite(preds[r, k]):
                losses.append(LossRecord(label, rec.subject_id, int(val_times[r]), int(m[r]),
                                         float((y[r] - preds[r, k]) ** 2)))
    chunk = MetaChunk(step_t, np.full(len(val_times), rec.subject_id, np.int64),
                      val_times.astype(np.int64), m.astype(np.int64), y.astype(float), preds, ens)
    return losses, chunk


def _update_individual(cfg: EngineConfig, rec: PanelRecord, fits: Dict[str, L.FittedLearner]):
    out = dict(fits)
    if len(rec) < cfg.warmup:
        return out
    for spec in cfg.individual_learners:
        f = out.get(spec.label)
        try:
            if f is None:
                rows = L.build_rows(rec, spec)
                if _enough(spec, rows, rec, cfg):
                    out[spec.label] = L.fit(spec, rows)
            else:
                rows = L.build_rows(rec, spec, start=f.trained_through + 1)
                out[spec.label] = L.update(f, rows)
        except (InsufficientHistory, SingularDesign) as exc:
            logger.info("subject %d: %s not updated (%s)", rec.subject_id, spec.label, exc)
    return out


def _eligible(state: EngineState, sid: int, meta: Optional[MetaChunk]) -> List[str]:
    cfg = state.config
    out = [s.label for s in cfg.historical_learners if s.label in state.historical]
    rec = state.targets[sid]
    if len(rec) < cfg.warmup or meta is None:
        return out
    mine = meta.subject == sid
    for spec in cfg.individual_learners:
        if spec.label not in state.individual[sid]:
            continue
        col = cfg.labels.index(spec.label)
        if np.any(np.isfinite(meta.preds[mine, col])):
            out.append(spec.label)
    return out


def _convex_or_conditional(state: EngineState, sid: int, eligible: List[str],
                           meta: MetaChunk, t: int, m_stratum: Optional[int] = None):
    cfg = state.config
    cols = [cfg.labels.index(k) for k in eligible]
    rows = np.all(np.isfinite(meta.preds[:, cols]), axis=1)
    if cfg.mode != "conditional":
        rows &= meta.subject == sid
    if m_stratum is not None:
        strat = rows & (meta.m == m_stratum)
        if strat.sum() >= len(eligible):
            rows = strat
    entries = np.array([state.targets[int(i)].entry_time for i in meta.subject], dtype=np.int64)
    w = np.ones(len(meta.y))
    if cfg.decay is not None:
        w = decay_weights(t - entries, meta.m, cfg.decay)
    rows &= w > 0
    if not rows.any():
        return None
    if cfg.mode == "conditional" and len(eligible) >= 2:
        X = np.vstack([state.targets[int(i)].baseline for i in meta.subject[rows]])
        design = MetaDesign(tuple(eligible), meta.preds[np.ix_(rows, cols)], meta.y[rows],
                            w[rows], X)
        return fit_conditional(design, cfg.conditional)
    design = MetaDesign(tuple(eligible), meta.preds[np.ix_(rows, cols)], meta.y[rows], w[rows])
    return nnls_weights(design)


def _weights_for(state: EngineState, sid: int, eligible: List[str], meta: Optional[MetaChunk],
                 t: int, m_stratum: Optional[int] = None) -> Tuple[EnsembleWeights, Optional[str]]:
    cfg = state.config
    hist_labels = {s.label for s in cfg.historical_learners}
    hist = [k for k in eligible if k in hist_labels] or list(eligible)
    try:
        selected = None
        if m_stratum is not None:
            try:
                selected = discrete_select(state.risk, m_stratum, eligible)
            except NoMass:
                selected = None
        if selected is None:
            selected = discrete_select(state.risk, None, eligible, subject=sid)
    except NoMass:
        selected = None
    if selected is None or meta is None:
        # no scored fold yet: historical learners only
        if cfg.mode == "discrete":
            return one_hot(eligible, hist[0]), None
        return uniform(hist), None
    if cfg.mode == "discrete":
        return one_hot(eligible, selected), selected
    try:
        w = _convex_or_conditional(state, sid, eligible, meta, t, m_stratum)
    except POSLError as exc:
        logger.warning("t=%d subject %d: weights fell back to discrete (%s)", t, sid, exc)
        w = None
    if w is None:
        w = one_hot(eligible, selected)
    return w, selected


def _forecast_one(f: L.FittedLearner, rec: PanelRecord, H: int) -> Optional[np.ndarray]:
    try:
        out = L.forecast_recursive(f, rec, H)
    except (InsufficientHistory, SingularDesign):
        return None
    return out if np.all(np.isfinite(out)) else None


def _is_active(state: EngineState, sid: int, t: int) -> bool:
    rec = state.targets[sid]
    exit_t = state.exits.get(sid)
    return rec.entry_time <= t and (exit_t is None or t <= exit_t)


def _append(rec: PanelRecord, data, t: int) -> PanelRecord:
    if isinstance(data, PanelRecord):
        times, cov, y = data.times, data.covariates, data.outcomes
    else:
        times, cov, y = data
    times = np.asarray(times, dtype=np.int64)
    if len(times) == 0:
        return rec
    last = rec.last_time if rec.last_time is not None else rec.entry_time - 1
    if times.min() <= last:
        raise StaleBatch(f"subject {rec.subject_id}: batch time {int(times.min())} "
                         f"is not after last observation {last}")
    if times.max() > t:
        raise StaleBatch(f"subject {rec.subject_id}: batch time {int(times.max())} is after clock {t}")
    if cov is None or np.size(cov) == 0:
        cov = np.zeros((len(times), rec.n_covariates))
    else:
        cov = np.asarray(cov, dtype=float).reshape(len(times), -1)
    if len(rec) == 0:
        return PanelRecord(rec.subject_id, rec.baseline, times, cov, y, rec.entry_time,
                           int(times[-1]))
    return rec.extend(times, cov, y)


def step(state: EngineState, batch: Mapping, t: Optional[int] = None):
    """Advance the clock to ``t`` with ``batch = {target_id: record or (times, W, y)}``.

    Returns ``(new_state, forecasts)``; each forecast row is
    ``(id, t, horizon_step, yhat)`` for time ``t + horizon_step``.
    """
    cfg = state.config
    if t is None:
        t = state.clock + cfg.batch_size
    t = int(t)
    if t <= state.clock:
        raise StaleBatch(f"step to t={t} does not advance clock {state.clock}")
    unknown = set(batch) - set(state.targets)
    if unknown:
        raise ValidationError(f"batch has unregistered subjects {sorted(unknown)}")

    # (a) append
    targets = dict(state.targets)
    for sid, data in batch.items():
        targets[sid] = _append(targets[sid], data, t)
    mid = replace(state, targets=targets)

    # (b) score completed validation windows with pre-step fits
    losses, chunks = [], []
    for sid in sorted(targets):
        rec = targets[sid]
        for w in _new_windows(cfg, rec, state.clock, t):
            fl, chunk = _evaluate(mid, rec, w, t)
            losses.extend(fl)
            chunks.append(chunk)
    risk = accumulate(state.risk, losses, t)

    # (c) historical refresh
    historical = state.historical
    if any(state.clock < ts <= t for ts in cfg.historical_refresh_times):
        pooled = list(state.historical_panel)
        if cfg.pooled_includes_targets:
            pooled += [r for r in targets.values() if len(r)]
        historical = _fit_historical(cfg, pooled)

    # (d) individual updates
    individual = {sid: _update_individual(cfg, targets[sid], state.individual[sid])
                  if sid in batch else state.individual[sid] for sid in targets}

    new = replace(mid, risk=risk, historical=historical, individual=individual,
                  clock=t, meta=state.meta + tuple(chunks))
    meta = new.meta_arrays()

    # (e) weights and (f) forecasts
    H = cfg.forecast_horizon
    weights, selected, eligible_map, dropped, forecasts = {}, {}, {}, {}, []
    step_fits = {}
    for sid in sorted(targets):
        if not _is_active(new, sid, t):
            continue
        rec = targets[sid]
        eligible = _eligible(new, sid, meta)
        paths = {}
        for k in eligible:
            f = historical.get(k) or individual[sid].get(k)
            path = _forecast_one(f, rec, H)
            if path is not None:
                paths[k] = path
        failed = tuple(k for k in eligible if k not in paths)
        if failed:
            logger.info("t=%d subject %d: dropped %s from selection", t, sid, failed)
            dropped[sid] = failed
        eligible = [k for k in eligible if k in paths]
        eligible_map[sid] = tuple(eligible)
        step_fits[sid] = {k: historical.get(k) or individual[sid].get(k) for k in eligible}
        if not eligible:
            logger.warning("t=%d subject %d: no learner can forecast", t, sid)
            continue
        per_h = []
        for h in range(1, H + 1):
            m_h = (t + h - rec.entry_time) if cfg.per_m_selection else None
            if h == 1 or cfg.per_m_selection:
                wts, sel = _weights_for(new, sid, eligible, meta, t, m_h)
                if h == 1:
                    weights[sid], selected[sid] = wts, sel
            per_h.append(wts)
        for h in range(1, H + 1):
            preds = np.array([paths[k][h - 1] for k in per_h[h - 1].learners])
            forecasts.append((sid, t, h, combine(per_h[h - 1], preds, rec.baseline)))

    rrows = []
    for sid in sorted(weights):
        rrows.extend(r + (sid,) for r in risk_rows(risk, sid, cfg.risk_strata))
    rec_step = StepRecord(t, eligible_map, weights, selected, tuple(forecasts), tuple(rrows),
                          dropped, step_fits)
    all_weights = dict(state.weights)
    all_weights.update(weights)
    new = replace(new, weights=all_weights, steps=state.steps + (rec_step,))
    return new, list(forecasts)


def run_stream(historical: Panel, targets: Panel, config: EngineConfig = EngineConfig(),
               t_end: Optional[int] = None) -> EngineState:
    """Feed the target records to the engine one batch at a time."""
    state = init(historical, list(targets), config)
    last = max((r.last_time for r in targets if len(r)), default=0)
    t_end = last if t_end is None else int(t_end)
    t = 0
    while t < t_end:
        t_next = min(t + config.batch_size, t_end)
        batch = {}
        for r in targets:
            sel = (r.times > t) & (r.times <= t_next)
            if sel.any():
                batch[r.subject_id] = (r.times[sel], r.covariates[sel], r.outcomes[sel])
        state, _ = step(state, batch, t_next)
        t = t_next
    return state


def weight_masses(state: EngineState) -> List[tuple]:
    """Rows ``(t, id, historical_mass, individual_mass)`` per step and target."""
    hist = {s.label for s in state.config.historical_learners}
    out = []
    for rec in state.steps:
        for sid, w in sorted(rec.weights.items()):
            a = w.at(state.targets[sid].baseline)
            hm = float(sum(x for k, x in zip(w.learners, a) if k in hist))
            out.append((rec.t, sid, hm, float(sum(a)) - hm))
    return out


def first_active_step(state: EngineState, sid: int) -> Optional[int]:
    """Clock of the first step where an individual learner was eligible."""
    ind = {s.label for s in state.config.individual_learners}
    for rec in state.steps:
        if any(k in ind for k in rec.eligible.get(sid, ())):
            return rec.t
    return None


def _distances(d: dict, sel: str, labels) -> Optional[Tuple[str, float]]:
    if sel not in d:
        return None
    oracle = min(d, key=lambda k: (d[k], labels.index(k)))
    d_or, d_sel = d[oracle], d[sel]
    return oracle, 1.0 if d_sel == d_or else (math.inf if d_or == 0 else d_sel / d_or)


def oracle_eval(state: EngineState, truth, basis: str = "series") -> List[dict]:
    """Distance of every eligible learner to the true conditional mean.

    ``d0`` is a mean of ``(prediction - psi0)^2``.  With ``basis="series"``
    it is taken for each learner's fit at step ``t`` over the target's whole
    observed series, one step ahead from the observed history; for a
    stationary target this approximates the excess risk of the fit.  With
    ``basis="validation"`` it is the decay-weighted mean over the validation
    points scored through ``t``, using the predictions made when each point
    was scored.

    The oracle is the eligible learner with the smallest ``d0`` and ``ratio``
    compares the risk-selected learner against it.  An ``ensemble`` row
    reports the combined predictor.
    """
    if basis not in ("series", "validation"):
        raise ValidationError(f"basis must be 'series' or 'validation', got {basis!r}")
    if basis == "validation":
        return _oracle_validation(state, truth)
    cfg = state.config
    specs = {s.label: s for s in cfg.historical_learners + cfg.individual_learners}
    start = max(s.min_history for s in specs.values())
    grids = {}
    out = []
    for rec in state.steps:
        for sid, sel in sorted(rec.selected.items()):
            fits = rec.fits.get(sid)
            if sel is None or not fits:
                continue
            if sid not in grids:
                target = state.targets[sid]
                rows = {k: L.build_rows(target, spec, start=int(target.times[0]) + start)
                        for k, spec in specs.items()}
                times = next(iter(rows.values())).times
                psi = np.array([truth.value(sid, int(s)) for s in times])
                grids[sid] = (rows, psi)
            rows, psi = grids[sid]
            if len(psi) == 0:
                continue
            preds = {k: L.predict_rows(f, rows[k]) for k, f in fits.items()}
            d = {k: float(np.mean((p - psi) ** 2)) for k, p in preds.items()
                 if np.all(np.isfinite(p))}
            found = _distances(d, sel, cfg.labels)
            if found is None:
                continue
            oracle, ratio = found
            for k in sorted(d, key=cfg.labels.index):
                out.append({"t": rec.t, "id": sid, "learner": k, "d0": d[k],
                            "is_selected": k == sel, "is_oracle": k == oracle, "ratio": ratio})
            wts = rec.weights[sid]
            if all(k in d for k in wts.learners):
                alpha = wts.at(state.targets[sid].baseline)
                ens = sum(a * preds[k] for a, k in zip(alpha, wts.learners))
                out.append(_ensemble_row(rec.t, sid, float(np.mean((ens - psi) ** 2)), d[oracle]))
    return out


def _ensemble_row(t, sid, d_ens, d_or) -> dict:
    return {"t": t, "id": sid, "learner": "ensemble", "d0": d_ens, "is_selected": False,
            "is_oracle": False, "ratio": d_ens / d_or if d_or > 0 else math.inf}


def _oracle_validation(state: EngineState, truth) -> List[dict]:
    meta = state.meta_arrays()
    if meta is None:
        return []
    cfg = state.config
    psi = np.array([truth.value(int(i), int(s)) for i, s in zip(meta.subject, meta.times)])
    out = []
    for rec in state.steps:
        for sid, sel in sorted(rec.selected.items()):
            if sel is None:
                continue
            rows = (meta.subject == sid) & (meta.step_t <= rec.t)
            w = np.ones(len(meta.y))
            if cfg.decay is not None:
                w = decay_weights(rec.t - state.targets[sid].entry_time, meta.m, cfg.decay)
            d = {}
            for k in rec.eligible[sid]:
                p = meta.preds[:, cfg.labels.index(k)]
                ok = rows & np.isfinite(p) & (w > 0)
                if ok.any():
                    d[k] = float(np.sum(w[ok] * (p[ok] - psi[ok]) ** 2) / np.sum(w[ok]))
            found = _distances(d, sel, cfg.labels)
            if found is None:
                continue
            oracle, ratio = found
            for k in sorted(d, key=cfg.labels.index):
                out.append({"t": rec.t, "id": sid, "learner": k, "d0": d[k],
                            "is_selected": k == sel, "is_oracle": k == oracle, "ratio": ratio})
            ok = rows & np.isfinite(meta.ensemble) & (w > 0)
            if ok.any():
                d_ens = float(np.sum(w[ok] * (meta.ensemble[ok] - psi[ok]) ** 2) / np.sum(w[ok]))
                out.append(_ensemble_row(rec.t, sid, d_ens, d[oracle]))
    return out


# configuration files -------------------------------------------------------

_LEARNER_KEYS = {"family", "scope", "lags", "summary", "ridge", "smoothing", "use_baseline",
                 "buffer", "name"}
_CONFIG_KEYS = {"historical_learners", "individual_learners", "historical_refresh_times",
                "batch_size", "warmup", "forecast_horizon", "fold_spec", "decay", "mode",
                "per_m_selection", "conditional", "pooled_includes_targets",
                "min_rows_per_coef", "risk_strata", "cold_start", "seed"}


def _learner_from_dict(d: dict, scope: str, where: str) -> L.LearnerSpec:
    if not isinstance(d, dict):
        raise ValidationError(f"{where}: expected an object")
    extra = set(d) - _LEARNER_KEYS
    if extra:
        raise ValidationError(f"{where}: unknown keys {sorted(extra)}")
    if "family" not in d:
        raise ValidationError(f"{where}.family: required")
    if d.get("scope", scope) != scope:
        raise ValidationError(f"{where}.scope: must be {scope!r}")
    summary = SummarySpec("lag_window", 1, y_only=True)
    if "summary" in d:
        summary = SummarySpec(**d["summary"])
    elif "lags" in d:
        summary = SummarySpec("lag_window", int(d["lags"]), y_only=True)
    kw = {k: d[k] for k in ("ridge", "smoothing", "use_baseline", "buffer", "name") if k in d}
    try:
        return L.LearnerSpec(d["family"], scope, summary, **kw)
    except (ValidationError, TypeError) as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _learner_to_dict(s: L.LearnerSpec) -> dict:
    d = {"family": s.family, "summary": asdict(s.summary)}
    if s.family == "ridge_rls":
        d["ridge"] = s.ridge
    if s.family == "exp_smooth":
        d["smoothing"] = s.smoothing
    for k in ("use_baseline", "buffer", "name"):
        if getattr(s, k) is not None:
            d[k] = getattr(s, k)
    return d


def config_from_dict(d: dict) -> EngineConfig:
    """Build a config from a plain mapping, reporting the offending field."""
    if not isinstance(d, dict):
        raise ValidationError("config: expected an object")
    extra = set(d) - _CONFIG_KEYS
    if extra:
        raise ValidationError(f"config: unknown keys {sorted(extra)}")
    kw = {}
    for key, scope in (("historical_learners", "historical"), ("individual_learners", "individual")):
        if key in d:
            kw[key] = tuple(_learner_from_dict(x, scope, f"{key}[{j}]")
                            for j, x in enumerate(d[key]))
    for key in ("historical_refresh_times",):
        if key in d:
            kw[key] = tuple(int(x) for x in d[key])
    for key in ("batch_size", "warmup", "forecast_horizon", "min_rows_per_coef"):
        if key in d:
            if not isinstance(d[key], int) or isinstance(d[key], bool):
                raise ValidationError(f"{key}: expected an integer, got {d[key]!r}")
            kw[key] = d[key]
    for key in ("per_m_selection", "pooled_includes_targets", "risk_strata"):
        if key in d:
            kw[key] = bool(d[key])
    for key in ("mode", "cold_start"):
        if key in d:
            kw[key] = d[key]
    for key, cls in (("fold_spec", FoldSpec), ("conditional", ConditionalConfig)):
        if key in d:
            try:
                kw[key] = cls(**d[key])
            except (TypeError, ValidationError) as exc:
                raise ValidationError(f"{key}: {exc}") from None
    if "decay" in d:
        try:
            kw["decay"] = None if d["decay"] is None else DecaySpec(**d["decay"])
        except (TypeError, ValidationError) as exc:
            raise ValidationError(f"decay: {exc}") from None
    return EngineConfig(**kw)


def config_to_dict(cfg: EngineConfig) -> dict:
    return {
        "historical_learners": [_learner_to_dict(s) for s in cfg.historical_learners],
        "individual_learners": [_learner_to_dict(s) for s in cfg.individual_learners],
        "historical_refresh_times": list(cfg.historical_refresh_times),
        "batch_size": cfg.batch_size,
        "warmup": cfg.warmup,
        "forecast_horizon": cfg.forecast_horizon,
        "fold_spec": asdict(cfg.fold_spec),
        "decay": None if cfg.decay is None else asdict(cfg.decay),
        "mode": cfg.mode,
        "per_m_selection": cfg.per_m_selection,
        "conditional": asdict(cfg.conditional),
        "pooled_includes_targets": cfg.pooled_includes_targets,
        "min_rows_per_coef": cfg.min_rows_per_coef,
        "risk_strata": cfg.risk_strata,
        "cold_start": cfg.cold_start,
    }


def load_config(path) -> EngineConfig:
    """Read a JSON run configuration."""
    with Path(path).open() as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(d)


# outputs --------------------------------------------------------------------

def _writer(path):
    fh = Path(path).open("w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _r(x) -> str:
    return repr(float(x))


def write_forecasts_csv(state: EngineState, path, actual: Optional[Panel] = None) -> Path:
    """``id,t,horizon_step,yhat,y_true_if_known``; ``t`` is the forecast origin."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["id", "t", "horizon_step", "yhat", "y_true_if_known"])
        for rec in state.steps:
            for sid, t, h, yhat in rec.forecasts:
                truth = ""
                if actual is not None and sid in actual.subject_ids:
                    r = actual.get(sid)
                    k = int(np.searchsorted(r.times, t + h))
                    if k < len(r.times) and r.times[k] == t + h:
                        truth = _r(r.outcomes[k])
                w.writerow([sid, t, h, _r(yhat), truth])
    return Path(path)


def write_weights_csv(state: EngineState, path) -> Path:
    """``t,learner,weight,id``; learners outside the eligible set get weight 0."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "learner", "weight", "id"])
        for rec in state.steps:
            for sid, wts in sorted(rec.weights.items()):
                a = dict(zip(wts.learners, wts.at(state.targets[sid].baseline)))
                for k in state.labels:
                    w.writerow([rec.t, k, _r(a.get(k, 0.0)), sid])
    return Path(path)


def write_engine_risks_csv(state: EngineState, path) -> Path:
    """``t,learner,m,cum_loss,cum_weight,mean_risk,id``; ``m`` blank overall."""
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "learner", "m", "cum_loss", "cum_weight", "mean_risk", "id"])
        for rec in state.steps:
            for t, k, m, cl, cw, r, sid in rec.risks:
                w.writerow([t, k, "" if m is None else m, _r(cl), _r(cw), _r(r), sid])
    return Path(path)


def write_oracle_csv(rows: List[dict], path) -> Path:
    fh, w = _writer(path)
    with fh:
        w.writerow(["t", "id", "learner", "d0", "is_selected", "is_oracle", "ratio"])
        for r in rows:
            w.writerow([r["t"], r["id"], r["learner"], _r(r["d0"]), int(r["is_selected"]),
                        int(r["is_oracle"]), _r(r["ratio"])])
    return Path(path)
