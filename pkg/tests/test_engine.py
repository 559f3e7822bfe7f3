import json
from dataclasses import replace

import numpy as np
import pytest

from posl import learners as L
from posl.core import Panel, SummarySpec
from posl.engine import (DEFAULT_HISTORICAL, EngineConfig, config_from_dict, config_to_dict,
                         first_active_step, init, load_config, oracle_eval, run_stream, step,
                         weight_masses, write_engine_risks_csv, write_forecasts_csv,
                         write_oracle_csv, write_weights_csv)
from posl.errors import StaleBatch, ValidationError
from posl.simgen import TruthTrace, build_simulation

from conftest import ar_series, make_record

LAGS = SummarySpec("lag_window", 3, y_only=True)


@pytest.fixture(scope="module")
def sim():
    return build_simulation(1, 3, 150, 5)


@pytest.fixture(scope="module")
def state(sim):
    return run_stream(sim.historical, Panel([sim.target]))


def test_historical_only_before_warmup(state, sim):
    sid = sim.target.subject_id
    ind = {s.label for s in state.config.individual_learners}
    for rec in state.steps:
        if rec.t < state.config.warmup:
            assert not ind & set(rec.eligible[sid])
    for t, _, hm, im in weight_masses(state):
        if t < state.config.warmup:
            assert im == 0.0 and hm == pytest.approx(1.0)
    assert first_active_step(state, sid) >= state.config.warmup


def test_weights_on_simplex_every_step(state):
    for rec in state.steps:
        for w in rec.weights.values():
            a = w.at(())
            assert np.all(a >= -1e-12) and abs(a.sum() - 1) < 1e-9


def test_risk_clock_follows_steps(sim):
    st = init(sim.historical, [sim.target])
    y = sim.target.outcomes
    for t in (5, 10, 15):
        st, _ = step(st, {sim.target.subject_id: (np.arange(t - 4, t + 1), None, y[t - 5:t])}, t)
        assert st.risk.last_updated == t == st.clock


def test_forecasts_for_active_targets(state, sim):
    H = state.config.forecast_horizon
    for rec in state.steps:
        rows = [f for f in rec.forecasts if f[0] == sim.target.subject_id]
        assert [h for _, t, h, _ in rows] == list(range(1, H + 1))
        assert all(t == rec.t and np.isfinite(v) for _, t, _, v in rows)


def test_single_historical_learner():
    rng = np.random.default_rng(1)
    hist = Panel([make_record(ar_series([0.5], 60, rng), sid=i) for i in (1, 2)])
    target = make_record(ar_series([0.5], 40, rng), sid=9)
    cfg = EngineConfig(historical_learners=(L.LearnerSpec("global_mean", "historical"),),
                       individual_learners=(), warmup=0)
    st = run_stream(hist, Panel([target]), cfg)
    for rec in st.steps:
        assert rec.weights[9].learners == ("H:global_mean",)
        np.testing.assert_array_equal(rec.weights[9].at(()), [1.0])


def test_identical_learners_select_first():
    rng = np.random.default_rng(2)
    hist = Panel([make_record(ar_series([0.5], 60, rng), sid=i) for i in (1, 2)])
    target = make_record(ar_series([0.5], 60, rng), sid=9)
    a = L.LearnerSpec("lag_linear", "historical", LAGS, name="first")
    b = replace(a, name="second")
    cfg = EngineConfig(historical_learners=(a, b), individual_learners=(), mode="discrete")
    st = run_stream(hist, Panel([target]), cfg)
    chosen = [r.selected[9] for r in st.steps if r.selected.get(9)]
    assert chosen and set(chosen) == {"first"}


def test_discrete_mode_one_hot(sim):
    st = run_stream(sim.historical, Panel([sim.target]), EngineConfig(mode="discrete"))
    for rec in st.steps:
        for sid, w in rec.weights.items():
            a = w.at(())
            assert sorted(a)[-1] == 1.0 and np.count_nonzero(a) == 1
            if rec.selected[sid] is not None:
                assert w.learners[int(np.argmax(a))] == rec.selected[sid]


def test_conditional_mode_runs(sim):
    st = run_stream(sim.historical, Panel([sim.target]), EngineConfig(mode="conditional"))
    assert all(np.isfinite(f[3]) for rec in st.steps for f in rec.forecasts)


def test_stale_batches(sim):
    st = init(sim.historical, [sim.target])
    sid = sim.target.subject_id
    y = sim.target.outcomes
    st, _ = step(st, {sid: (np.arange(1, 6), None, y[:5])}, 5)
    with pytest.raises(StaleBatch):
        step(st, {sid: (np.arange(3, 8), None, y[2:7])}, 10)
    with pytest.raises(StaleBatch):
        step(st, {sid: (np.arange(6, 12), None, y[5:11])}, 10)
    with pytest.raises(StaleBatch):
        step(st, {}, 5)
    with pytest.raises(ValidationError):
        step(st, {999: (np.arange(6, 11), None, y[5:10])}, 10)


def test_target_id_collision(sim):
    with pytest.raises(ValidationError):
        init(sim.historical, [sim.historical.get(1)])


def test_oracle_ratio_at_least_one(state, sim):
    rows = oracle_eval(state, sim.truth)
    sel = [r for r in rows if r["is_selected"]]
    assert sel and all(r["ratio"] >= 1.0 for r in rows if r["learner"] != "ensemble")
    for r in rows:
        if r["is_oracle"]:
            assert r["d0"] == min(x["d0"] for x in rows
                                  if x["t"] == r["t"] and x["learner"] != "ensemble")


def test_learner_equal_to_truth_is_oracle(state, sim):
    # truth defined as one historical learner's one-step predictions
    label = DEFAULT_HISTORICAL[0].label
    spec = DEFAULT_HISTORICAL[0]
    target = state.targets[sim.target.subject_id]
    start = int(target.times[0]) + max(s.min_history for s in DEFAULT_HISTORICAL
                                       + state.config.individual_learners)
    rows = L.build_rows(target, spec, start=start)
    pred = L.predict_rows(state.historical[label], rows)
    truth = TruthTrace.single(pred, subject_id=target.subject_id, start=int(rows.times[0]))
    out = [r for r in oracle_eval(state, truth) if r["learner"] == label]
    assert out and all(r["is_oracle"] and r["d0"] == 0.0 for r in out)


def test_oracle_validation_basis(state, sim):
    rows = oracle_eval(state, sim.truth, basis="validation")
    assert rows and all(r["ratio"] >= 1.0 for r in rows if r["learner"] != "ensemble")
    with pytest.raises(ValidationError):
        oracle_eval(state, sim.truth, basis="nope")


def test_config_round_trip(tmp_path):
    cfg = EngineConfig(mode="discrete", per_m_selection=True, batch_size=3)
    d = config_to_dict(cfg)
    back = config_from_dict(json.loads(json.dumps(d)))
    assert config_to_dict(back) == d
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    assert config_to_dict(load_config(p)) == d


@pytest.mark.parametrize("bad,field", [
    ({"batch_size": "5"}, "batch_size"),
    ({"mode": "vote"}, "mode"),
    ({"surprise": 1}, "surprise"),
    ({"historical_learners": [{"family": "forest"}]}, "historical_learners[0]"),
    ({"individual_learners": [{"family": "global_mean", "scope": "historical"}]},
     "individual_learners[0].scope"),
    ({"decay": {"rate": 2.0}}, "decay"),
])
def test_config_errors_name_field(bad, field):
    with pytest.raises(ValidationError, match=field.replace("[", r"\[").replace("]", r"\]")):
        config_from_dict(bad)


def test_config_rejects_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        load_config(p)


def test_staggered_targets():
    rng = np.random.default_rng(3)
    hist = Panel([make_record(ar_series([0.4], 120, rng), sid=i) for i in (1, 2)])
    a = make_record(ar_series([0.4], 100, rng), sid=10, start=1, entry=0, exit_time=100)
    b = make_record(ar_series([0.4], 70, rng), sid=11, start=31, entry=30, exit_time=100)
    c = make_record(ar_series([0.4], 40, rng), sid=12, start=11, entry=10, exit_time=50)
    st = run_stream(hist, Panel([a, b, c]), EngineConfig(warmup=20))
    for rec in st.steps:
        active = {sid for sid, *_ in rec.forecasts}
        expected = {s for s, r in ((10, a), (11, b), (12, c)) if r.entry_time <= rec.t <= r.exit_time}
        assert active == expected
    # subject time of every scored row is measured from its own entry
    meta = st.meta_arrays()
    for sid, r in ((11, b), (12, c)):
        mine = meta.subject == sid
        np.testing.assert_array_equal(meta.m[mine], meta.times[mine] - r.entry_time)


def test_output_csvs(state, sim, tmp_path):
    f = write_forecasts_csv(state, tmp_path / "f.csv", actual=Panel([sim.target]))
    w = write_weights_csv(state, tmp_path / "w.csv")
    r = write_engine_risks_csv(state, tmp_path / "r.csv")
    o = write_oracle_csv(oracle_eval(state, sim.truth), tmp_path / "o.csv")
    head = {p.name: p.read_text().splitlines()[0] for p in (f, w, r, o)}
    assert head["f.csv"].startswith("id,t,horizon_step,yhat")
    assert all(len(p.read_text().splitlines()) > 1 for p in (f, w, r, o))
