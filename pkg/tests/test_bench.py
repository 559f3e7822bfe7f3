import numpy as np
import pytest

from posl.bench import METHODS, replicate_seed, run_replicate, vfold_weights
from posl.engine import EngineConfig
from posl.simgen import build_simulation


@pytest.fixture(scope="module")
def result():
    return run_replicate(2, 0, 7, 3, 120)


def test_replicate_seeds_distinct_and_stable():
    seeds = [replicate_seed(7, r) for r in range(10)]
    assert len(set(seeds)) == 10
    assert seeds == [replicate_seed(7, r) for r in range(10)]
    assert replicate_seed(8, 0) != seeds[0]


def test_mse_rows_cover_grid(result):
    cfg = EngineConfig()
    grid = [t for t in range(5, 121, 5) if t >= cfg.fold_spec.first_window and t + 5 <= 120]
    assert len(result.mse) == len(METHODS) * len(grid)
    for method in METHODS:
        assert [r[0] for r in result.mse if r[1] == method] == grid
    assert all(np.isfinite(r[2]) and r[2] >= 0 for r in result.mse)


def test_masses_sum_to_one(result):
    for _, _, hm, im in result.masses:
        assert hm + im == pytest.approx(1.0)
        assert hm >= -1e-12 and im >= -1e-12


def test_replicate_is_deterministic(result):
    again = run_replicate(2, 0, 7, 3, 120)
    assert again.mse == result.mse and again.masses == result.masses


def test_vfold_weights_on_historical_learners():
    sim = build_simulation(4, 5, 100, 1)
    cfg = EngineConfig()
    w = vfold_weights(cfg, sim.historical)
    assert w.learners == tuple(s.label for s in cfg.historical_learners)
    a = w.at(())
    assert np.all(a >= 0) and abs(a.sum() - 1) < 1e-9
