import numpy as np
import pytest

from posl.core import (Panel, PanelRecord, SummarySpec, active_set, chron_to_subject_time,
                       enrollment_counts, make_summary, read_panel_csv, summary_matrix,
                       write_panel_csv)
from posl.errors import InsufficientHistory, NotYetEnrolled, ValidationError

from conftest import make_record


def test_lag_window_on_outcomes():
    rec = make_record([1, 2, 3])
    z = make_summary(rec, SummarySpec("lag_window", 2, y_only=True), 4)
    np.testing.assert_array_equal(z.values, [2.0, 3.0])
    assert z.as_of_time == 3


def test_running_mean_on_outcomes():
    rec = make_record([1, 2, 3])
    z = make_summary(rec, SummarySpec("running_mean", y_only=True), 4)
    np.testing.assert_array_equal(z.values, [2.0])


def test_lag_window_needs_history():
    rec = make_record([1.0])
    with pytest.raises(InsufficientHistory):
        make_summary(rec, SummarySpec("lag_window", 2, y_only=True), 2)


def test_lag_window_interleaves_covariates_and_outcome():
    rec = make_record([1, 2, 3], W=[[10], [20], [30]], baseline=[7.0])
    z = make_summary(rec, SummarySpec("lag_window", 2, include_baseline=True), 4)
    # observation order is (W, Y) per time, oldest first, baseline last
    np.testing.assert_array_equal(z.values, [20, 2, 30, 3, 7])


def test_summary_matrix_matches_make_summary(rng):
    rec = make_record(rng.standard_normal(30), W=rng.standard_normal((30, 2)))
    for spec in (SummarySpec("lag_window", 3), SummarySpec("running_mean"),
                 SummarySpec("lag_window", 2, y_only=True, include_baseline=True)):
        times, Z, y = summary_matrix(rec, spec)
        for j, t in enumerate(times):
            np.testing.assert_allclose(Z[j], make_summary(rec, spec, int(t)).values, rtol=1e-12)
            assert y[j] == rec.outcomes[int(t) - 1]


@pytest.mark.parametrize("entry,t,expected", [(3, 10, 7), (5, 5, 0)])
def test_subject_time(entry, t, expected):
    assert chron_to_subject_time(entry, t) == expected


def test_subject_time_before_entry():
    with pytest.raises(NotYetEnrolled):
        chron_to_subject_time(5, 4)


def _two_subjects():
    a = make_record(np.zeros(11), sid=1, start=0, entry=0, exit_time=10)
    b = make_record(np.zeros(16), sid=2, start=5, entry=5, exit_time=20)
    return Panel([a, b])


@pytest.mark.parametrize("t,expected", [(3, {1}), (7, {1, 2}), (25, set())])
def test_active_set(t, expected):
    assert active_set(_two_subjects(), t) == expected


def test_enrollment_counts():
    n, _ = enrollment_counts(_two_subjects(), 3)
    assert n == 1
    p = Panel([make_record([1, 2, 3], sid=1, start=0), make_record([4, 5, 6], sid=2, start=0)])
    n, n_m = enrollment_counts(p, 2)
    assert n == 2 and n_m == {0: 2, 1: 2, 2: 2}
    assert enrollment_counts(Panel([]), 5) == (0, {})


def test_record_validation():
    with pytest.raises(ValidationError):
        PanelRecord(1, np.zeros(0), np.array([1, 1]), np.zeros((2, 0)), np.zeros(2))
    with pytest.raises(ValidationError):
        PanelRecord(1, np.zeros(0), np.array([1, 3]), np.zeros((2, 0)), np.zeros(2))
    with pytest.raises(ValidationError):
        Panel([make_record([1.0], sid=1), make_record([2.0], sid=1)])


def test_panel_csv_round_trip(tmp_path, rng):
    recs = [make_record(rng.standard_normal(6), sid=i, start=2 + i, entry=2 + i,
                        baseline=[0.5 * i, 1.0], W=rng.standard_normal((6, 1))) for i in (2, 1)]
    panel = Panel(recs)
    path = write_panel_csv(panel, tmp_path / "p.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "id,t,entry,exit,x1,x2,w1,y"
    assert [int(r.split(",")[0]) for r in lines[1:]] == sorted(int(r.split(",")[0]) for r in lines[1:])
    back = read_panel_csv(path)
    for r in panel:
        b = back.get(r.subject_id)
        np.testing.assert_array_equal(b.outcomes, r.outcomes)
        np.testing.assert_array_equal(b.covariates, r.covariates)
        np.testing.assert_array_equal(b.baseline, r.baseline)
        assert (b.entry_time, b.exit_time) == (r.entry_time, r.exit_time)


def test_panel_csv_defaults_entry_exit(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("id,t,y\n1,1,0.5\n1,2,0.25\n2,1,1.0\n")
    p = read_panel_csv(path)
    assert p.get(1).entry_time == 0 and p.get(1).exit_time == 2


def test_panel_csv_bad_value(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("id,t,y\n1,1,abc\n")
    with pytest.raises(ValidationError):
        read_panel_csv(path)
