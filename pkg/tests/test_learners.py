import numpy as np
import pytest

from posl import learners as L
from posl.core import Panel, SummarySpec
from posl.errors import DimensionMismatch, InsufficientHistory, MixedSubjects, StaleBatch

from conftest import ar_series, make_record

LAG1 = SummarySpec("lag_window", 1, y_only=True)


def _ar1_record(n=50, start_value=1.0):
    return make_record(start_value * 0.5 ** np.arange(n))


def test_global_mean_constant():
    f = L.fit(L.LearnerSpec("global_mean"), L.build_rows(make_record([1, 2, 3]), L.LearnerSpec("global_mean")))
    assert L.predict(f, [], []) == 2.0
    assert L.predict(f, [], [], t=99) == 2.0


def test_lag_linear_recovers_noiseless_ar1():
    spec = L.LearnerSpec("lag_linear", summary=LAG1)
    f = L.fit(spec, L.build_rows(_ar1_record(), spec))
    coef = L.coefficients(f)
    assert abs(coef[1] - 0.5) < 1e-8
    assert abs(L.predict(f, [], [4.0]) - 2.0) < 1e-6


def test_lag_linear_recovers_ar3():
    # noiseless AR(3) started from a generic state; 10p points suffice
    a = np.array([0.5, -0.3, 0.2])
    y = [1.0, -0.4, 0.7]
    for _ in range(60):
        y.append(a @ np.array(y[-3:])[::-1])
    spec = L.LearnerSpec("lag_linear", summary=SummarySpec("lag_window", 3, y_only=True))
    f = L.fit(spec, L.build_rows(make_record(y), spec))
    # lag columns are oldest first
    np.testing.assert_allclose(L.coefficients(f)[1:], a[::-1], atol=1e-6)


def test_forecast_recursive_ar1():
    spec = L.LearnerSpec("lag_linear", summary=LAG1)
    f = L.fit(spec, L.build_rows(_ar1_record(), spec))
    rec = make_record([1.0, 8.0])
    np.testing.assert_allclose(L.forecast_recursive(f, rec, 5), [4, 2, 1, 0.5, 0.25], atol=1e-6)
    one = L.forecast_recursive(f, rec, 1)[0]
    assert one == L.predict(f, [], [8.0], t=3)


def test_forecast_constant_for_mean():
    spec = L.LearnerSpec("global_mean")
    f = L.fit(spec, L.build_rows(make_record([1, 2, 3]), spec))
    np.testing.assert_array_equal(L.forecast_recursive(f, make_record([5.0]), 5), np.full(5, 2.0))


def test_forecast_needs_history():
    spec = L.LearnerSpec("lag_linear", summary=SummarySpec("lag_window", 3, y_only=True))
    f = L.fit(spec, L.build_rows(make_record(np.arange(20.0) % 7), spec))
    with pytest.raises(InsufficientHistory):
        L.forecast_recursive(f, make_record([1.0, 2.0]), 2)


def test_ridge_large_penalty_is_intercept_only(rng):
    spec = L.LearnerSpec("ridge_rls", summary=SummarySpec("lag_window", 2, y_only=True), ridge=1e12)
    rec = make_record(ar_series([0.6], 200, rng, level=3.0))
    f = L.fit(spec, L.build_rows(rec, spec))
    coef = L.coefficients(f)
    assert np.all(np.abs(coef[1:]) < 1e-6)
    rows = L.build_rows(rec, spec)
    assert abs(coef[0] - rows.y.mean()) < 1e-4


def test_ridge_update_matches_normal_equations(rng):
    spec = L.LearnerSpec("ridge_rls", "historical", SummarySpec("lag_window", 2, y_only=True), ridge=2.5)
    recs = [make_record(ar_series([0.4, 0.2], 60, rng), sid=i, baseline=[i, 1.0 / i]) for i in (1, 2, 3)]
    rows = L.build_rows(recs, spec)
    first = rows.take(rows.times <= 30)
    second = rows.take(rows.times > 30)
    f = L.update(L.fit(spec, first), second)
    F = np.column_stack([np.ones(len(rows)), rows.Z, rows.X])
    pen = 2.5 * np.eye(F.shape[1])
    pen[0, 0] = 0.0
    oracle = np.linalg.solve(F.T @ F + pen, F.T @ rows.y)
    np.testing.assert_allclose(L.coefficients(f), oracle, atol=1e-8)


def test_global_mean_update():
    spec = L.LearnerSpec("global_mean")
    f = L.fit(spec, L.build_rows(make_record([1, 2, 3]), spec))
    f = L.update(f, L.build_rows(make_record([1, 2, 3, 5]), spec, start=4))
    assert L.predict(f, [], []) == 2.75


def test_empty_update_is_identity():
    spec = L.LearnerSpec("global_mean")
    f = L.fit(spec, L.build_rows(make_record([1, 2, 3]), spec))
    assert L.update(f, L.TrainingRows.empty()) is f


def test_stale_update():
    spec = L.LearnerSpec("global_mean")
    rec = make_record([1, 2, 3])
    f = L.fit(spec, L.build_rows(rec, spec))
    with pytest.raises(StaleBatch):
        L.update(f, L.build_rows(rec, spec, start=3))


def test_exp_smooth_factor_one_returns_last():
    spec = L.LearnerSpec("exp_smooth", smoothing=1.0)
    f = L.fit(spec, L.build_rows(make_record([3, 1, 4, 1, 5]), spec))
    assert L.predict(f, [], [], subject_id=1) == 5.0


def test_exp_smooth_recursion():
    spec = L.LearnerSpec("exp_smooth", smoothing=0.3)
    f = L.fit(spec, L.build_rows(make_record([2.0, 4.0, 1.0]), spec))
    level = 2.0
    for y in (4.0, 1.0):
        level = 0.3 * y + 0.7 * level
    assert abs(L.predict(f, [], [], subject_id=1) - level) < 1e-12


def test_individual_scope_rejects_mixed_subjects(rng):
    spec = L.LearnerSpec("global_mean", "individual")
    rows = L.build_rows([make_record([1.0, 2.0], sid=1), make_record([3.0], sid=2)], spec)
    with pytest.raises(MixedSubjects):
        L.fit(spec, rows)


def test_individual_ignores_other_subjects(rng):
    spec = L.LearnerSpec("lag_linear", "individual", SummarySpec("lag_window", 2, y_only=True))
    mine = make_record(ar_series([0.5], 50, rng), sid=1)
    other = make_record(ar_series([-0.5], 50, rng), sid=2)
    alone = L.fit(spec, L.build_rows(mine, spec))
    panel = Panel([mine, other])
    again = L.fit(spec, L.build_rows(panel.get(1), spec))
    np.testing.assert_array_equal(L.coefficients(alone), L.coefficients(again))


def test_predict_dimension_mismatch():
    spec = L.LearnerSpec("lag_linear", summary=SummarySpec("lag_window", 2, y_only=True))
    f = L.fit(spec, L.build_rows(make_record(np.arange(10.0) ** 0.5), spec))
    with pytest.raises(DimensionMismatch):
        L.predict(f, [], [1.0, 2.0, 3.0])


def test_collinear_design_is_jittered():
    spec = L.LearnerSpec("lag_linear", summary=LAG1)
    f = L.fit(spec, L.build_rows(make_record(np.ones(10)), spec))
    assert f.jittered
    assert np.isfinite(L.predict(f, [], [1.0]))


def test_bounded_buffer_keeps_latest_rows(rng):
    spec = L.LearnerSpec("lag_linear", summary=LAG1, buffer=20)
    rec = make_record(ar_series([0.5], 100, rng))
    f = L.fit(spec, L.build_rows(rec.truncate(50), spec))
    f = L.update(f, L.build_rows(rec, spec, start=51))
    ref = L.fit(spec, L.build_rows(rec, spec, start=81))
    np.testing.assert_allclose(L.coefficients(f), L.coefficients(ref), atol=1e-12)


def test_labels():
    assert L.LearnerSpec("ridge_rls", "historical", SummarySpec("lag_window", 2), ridge=10).label \
        == "H:ridge_rls_p2_l10"
    assert L.LearnerSpec("exp_smooth", smoothing=0.3).label == "I:exp_smooth_a0.3"
    assert L.LearnerSpec("global_mean", name="mean").label == "mean"
