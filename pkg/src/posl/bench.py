"""Seeded comparison of the personalized ensemble against two pooled baselines.

Methods
-------
``posl``
    The streaming engine with historical and individual learners.
``online_sl``
    The same engine with historical-scope learners only, refitted on all
    series pooled (target included) at every batch.
``vfold_sl``
    Historical learners fitted once on the historical panel, combined with
    weights from subject-level V-fold cross-validation; never updated.

All methods see the same simulated panel and forecast ``H`` steps ahead from
every update time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from . import learners as L
from .core import Panel
from .cv import subject_groups
from .engine import EngineConfig, _fit_historical, first_active_step, run_stream, weight_masses
from .selector import MetaDesign, combine, nnls_weights
from .simgen import build_simulation

__all__ = ["METHODS", "replicate_seed", "vfold_weights", "run_replicate", "ReplicateResult"]

METHODS = ("posl", "online_sl", "vfold_sl")


def replicate_seed(seed: int, replicate: int) -> int:
    """Integer seed of replicate ``r``, independent across replicates."""
    return int(np.random.SeedSequence([int(seed), int(replicate)]).generate_state(1)[0])


def vfold_weights(cfg: EngineConfig, panel: Panel, n_folds: int = 5):
    """Convex weights of the historical learners from subject-level V-fold CV."""
    ids = panel.subject_ids
    groups = [g for g in subject_groups(ids, min(n_folds, len(ids))) if g]
    labels = [s.label for s in cfg.historical_learners]
    preds, ys = [], []
    for g in groups:
        train = [panel.get(i) for i in ids if i not in set(g)]
        if not train:
            train = [panel.get(i) for i in ids]
        fits = _fit_historical(cfg, train)
        for sid in g:
            rec = panel.get(sid)
            # rows every learner can predict: drop the longest warm-up
            start = int(rec.times[0]) + max(s.min_history for s in cfg.historical_learners)
            cols = []
            y = None
            for spec in cfg.historical_learners:
                rows = L.build_rows(rec, spec, start=start)
                cols.append(L.predict_rows(fits[spec.label], rows))
                y = rows.y
            preds.append(np.column_stack(cols))
            ys.append(y)
    design = MetaDesign(tuple(labels), np.vstack(preds), np.concatenate(ys))
    return nnls_weights(design)


@dataclass
class ReplicateResult:
    replicate: int
    seed: int
    mse: List[tuple]
    masses: List[tuple]
    first_active: Optional[int]


def _mse_rows(forecasts: Dict[int, np.ndarray], y: np.ndarray, t_grid, method: str, replicate: int):
    rows = []
    for t in t_grid:
        f = forecasts.get(t)
        if f is None:
            continue
        actual = y[t:t + len(f)]  # times t+1..t+H in a 1-based series
        rows.append((t, method, float(np.mean((f - actual) ** 2)), replicate))
    return rows


def _engine_forecasts(state, sid: int) -> Dict[int, np.ndarray]:
    out: Dict[int, list] = {}
    for rec in state.steps:
        for fid, t, h, yhat in rec.forecasts:
            if fid == sid:
                out.setdefault(t, []).append((h, yhat))
    return {t: np.array([v for _, v in sorted(items)]) for t, items in out.items()}


def run_replicate(which: int, replicate: int, seed: int, n_historical: int, tau: int,
                  config: EngineConfig = EngineConfig(),
                  methods=METHODS) -> ReplicateResult:
    rseed = replicate_seed(seed, replicate)
    sim = build_simulation(which, n_historical, tau, rseed)
    target = sim.target
    sid = target.subject_id
    H = config.forecast_horizon
    y = target.outcomes
    t_grid = [t for t in range(config.batch_size, tau + 1, config.batch_size)
              if t >= config.fold_spec.first_window and t + H <= tau]
    stream = Panel([target])
    mse: List[tuple] = []
    masses: List[tuple] = []
    first = None

    if "posl" in methods:
        state = run_stream(sim.historical, stream, config)
        mse += _mse_rows(_engine_forecasts(state, sid), y, t_grid, "posl", replicate)
        masses = [(replicate, t, hm, im) for t, i, hm, im in weight_masses(state) if i == sid]
        first = first_active_step(state, sid)

    if "online_sl" in methods:
        pooled = replace(config, individual_learners=(),
                         historical_refresh_times=tuple(range(0, tau + 1, config.batch_size)),
                         pooled_includes_targets=True)
        state = run_stream(sim.historical, stream, pooled)
        mse += _mse_rows(_engine_forecasts(state, sid), y, t_grid, "online_sl", replicate)

    if "vfold_sl" in methods:
        weights = vfold_weights(config, sim.historical)
        fits = _fit_historical(config, list(sim.historical))
        fc = {}
        for t in t_grid:
            rec = target.truncate(t)
            paths = [L.forecast_recursive(fits[k], rec, H) for k in weights.learners]
            fc[t] = np.array([combine(weights, [p[h] for p in paths]) for h in range(H)])
        mse += _mse_rows(fc, y, t_grid, "vfold_sl", replicate)

    order = {m: k for k, m in enumerate(METHODS)}
    mse.sort(key=lambda r: (r[0], order[r[1]]))
    return ReplicateResult(replicate, rseed, mse, masses, first)
