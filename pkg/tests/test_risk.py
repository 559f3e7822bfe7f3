import numpy as np
import pytest

from posl.errors import NoMass, StaleUpdate, ValidationError
from posl.risk import (DecaySpec, LossRecord, RiskTable, accumulate, decay_weight, decay_weights,
                       mean_risk, risk_rows, squared_error, write_risks_csv)

from oracles import repeated_product


@pytest.mark.parametrize("y,yhat,w,expected", [(2, 2, 1, 0), (3, 1, 1, 4), (3, 1, 0.5, 2)])
def test_squared_error(y, yhat, w, expected):
    assert squared_error(y, yhat, w) == expected


def test_decay_anchor_values():
    assert decay_weight(500, 480) == 1.0
    assert decay_weight(500, 320) == 0.0
    v = decay_weight(500, 400)
    assert abs(v - repeated_product(0.999, 100)) < 1e-9
    assert abs(v - 0.904792) < 1e-6


def test_decay_band_edges():
    assert decay_weight(500, 470) == 1.0
    assert abs(decay_weight(500, 469) - repeated_product(0.999, 31)) < 1e-12
    assert decay_weight(500, 321) == pytest.approx(repeated_product(0.999, 179), abs=1e-12)


def test_decay_future_loss_rejected():
    with pytest.raises(ValidationError):
        decay_weight(10, 11)


def test_vectorized_decay_matches_scalar():
    lags = np.arange(0, 250)
    np.testing.assert_array_equal(decay_weights(300, 300 - lags),
                                  [decay_weight(300, 300 - int(k)) for k in lags])


def _rec(name, loss, m=1, sid=1, w=1.0):
    return LossRecord(name, sid, m, m, loss, w)


def test_accumulate_two_learners():
    t = accumulate(RiskTable.new(), [_rec("A", 1), _rec("A", 1, m=2), _rec("B", 4), _rec("B", 0, m=2)], 2)
    assert t.totals("A") == (2.0, 2.0)
    assert t.totals("B") == (4.0, 2.0)
    assert t.learners == ("A", "B")


def test_accumulate_empty_moves_clock():
    t0 = accumulate(RiskTable.new(), [_rec("A", 1)], 1)
    t1 = accumulate(t0, [], 5)
    assert t1.last_updated == 5 and t1.totals("A") == t0.totals("A")


def test_single_stratum_equals_overall():
    t = accumulate(RiskTable.new(), [_rec("A", 2.0, m=3), _rec("A", 5.0, m=3)], 3)
    assert t.totals("A", 3) == t.totals("A")


def test_stale_update():
    t = accumulate(RiskTable.new(), [], 5)
    with pytest.raises(StaleUpdate):
        accumulate(t, [], 4)


def test_mean_risk_examples():
    t = accumulate(RiskTable.new(), [_rec("A", 2, m=1), _rec("A", 4, m=2)], 2)
    assert mean_risk(t, "A") == 3.0
    t = accumulate(RiskTable.new(), [_rec("A", 5, w=0.5)], 1)
    assert mean_risk(t, "A") == 5.0
    with pytest.raises(NoMass):
        mean_risk(t, "A", m=7)


def test_zero_weight_losses_not_stored():
    t = accumulate(RiskTable.new(), [_rec("A", 3.0, w=0.0), _rec("A", 1.0)], 1)
    assert t.n_records("A") == 1


def test_decayed_losses_are_pruned():
    t = RiskTable.new(("A",), DecaySpec())
    t = accumulate(t, [_rec("A", 1.0, m=1)], 1)
    t = accumulate(t, [_rec("A", 2.0, m=100)], 100)
    assert t.n_records("A") == 2
    t = accumulate(t, [], 181)
    assert t.n_records("A") == 1


def test_loss_record_validation():
    with pytest.raises(ValidationError):
        LossRecord("A", 1, 1, 1, -1.0)
    with pytest.raises(ValidationError):
        LossRecord("A", 1, 1, 1, 1.0, 1.5)


def test_risk_rows_and_csv(tmp_path):
    t = accumulate(RiskTable.new(), [_rec("A", 2, m=1), _rec("A", 4, m=2)], 2)
    rows = risk_rows(t, per_m=True)
    assert rows[0] == (2, "A", None, 6.0, 2.0, 3.0)
    assert [r[2] for r in rows[1:]] == [1, 2]
    text = write_risks_csv(rows, tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "t,learner,m,cum_loss,cum_weight,mean_risk"
    assert text[1] == "2,A,,6.0,2.0,3.0"
