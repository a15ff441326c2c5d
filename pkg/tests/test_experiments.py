import json
import math

import numpy as np
import pytest

from rnfilter.experiments import (ExperimentConfig, ExperimentReport, RunRecord, builtin_config,
                                  first_well_switch, mean_abs_error, mse, run_experiment,
                                  run_limitcycle_experiment, run_repetition)
from rnfilter.filters import FilteredTrajectory
from rnfilter.simulate import Path

SMALL = """
network = bistable.net
T = 4
x0 = 106
V_grid = 1000, 3000
dt_grid = 0.5, 1.0
dt_for_V_sweep = 1.0
V_for_dt_sweep = 3000
G = 1
reps = 2
seed = 99
filters = gpf, lna, qpf
out_grid = 0.05
"""


def flat_path(value, t_end=2.0):
    return Path(np.array([0.0]), np.array([[value]]), t_end)


def estimate(times, values):
    times = np.asarray(times, float)
    values = np.asarray(values, float).reshape(times.size, -1)
    return FilteredTrajectory("gpf", times, values, values.copy(), np.array([]))


def small_config(**overrides):
    from rnfilter import experiments
    from pathlib import Path as FilePath
    base = FilePath(experiments.__file__).with_name("data")
    return ExperimentConfig.from_text(SMALL, base_dir=base, **overrides)


# ---------------------------------------------------------------------------
# scoring

def test_mse_identical_is_zero():
    path = flat_path(5)
    assert mse(path, estimate([0, 1, 2], [5, 5, 5])) == 0.0


def test_mse_constant_offset():
    path = flat_path(5)
    assert mse(path, estimate([0, 1, 2], [6, 6, 6])) == pytest.approx(1.0, rel=1e-15)


def test_mse_step_against_linear_estimate():
    # truth jumps a -> b at t=1; estimate constant a: error (b-a)^2 on half of [0, 2]
    a, b = 3.0, 7.0
    path = Path(np.array([0.0, 1.0]), np.array([[a], [b]]), 2.0)
    assert mse(path, estimate([0, 2], [a, a])) == pytest.approx((b - a) ** 2 / 2, rel=1e-15)


def test_mse_linear_ramp_closed_form():
    # truth 0, estimate t on [0, 1]: integral of t^2 = 1/3
    assert mse(flat_path(0, 1.0), estimate([0, 1], [0, 1])) == pytest.approx(1 / 3, rel=1e-15)


def test_mse_against_dense_quadrature(rng):
    jumps = np.sort(rng.uniform(0, 3, 12))
    states = rng.integers(0, 20, 13).reshape(-1, 1)
    path = Path(np.concatenate([[0.0], jumps]), states, 3.0)
    grid = np.linspace(0, 3, 7)
    est = estimate(grid, rng.normal(10, 3, 7))
    t = np.linspace(0, 3, 600001)
    x = states[np.searchsorted(path.times, t, side="right") - 1, 0]
    e = np.interp(t, grid, est.map[:, 0])
    dense = np.trapezoid((x - e) ** 2, t) / 3.0
    assert mse(path, est) == pytest.approx(dense, rel=1e-4)


def test_mse_rejects_uncovered_interval():
    with pytest.raises(ValueError):
        mse(flat_path(1, 1.0), estimate([0, 2], [1, 1]))


def test_mean_abs_error_sign_change():
    # error goes from -1 to 1 linearly: mean |e| = 1/2
    path = flat_path(0, 1.0)
    assert mean_abs_error(path, estimate([0, 1], [1, -1]), 0.0, 1.0) == pytest.approx(0.5)
    assert mean_abs_error(path, estimate([0, 1], [2, 2]), 0.0, 1.0) == pytest.approx(2.0)


def test_first_well_switch():
    times = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    states = np.array([[106], [200], [300], [390], [110]])
    path = Path(times, states, 5.0)
    assert first_well_switch(path, (106, 404), 50) == 3.0
    assert first_well_switch(path, (106, 404), 5) is None
    assert first_well_switch(path, (106, 404), 50, after=3.5) == 4.0


# ---------------------------------------------------------------------------
# configuration

def test_builtin_configs():
    cfg = builtin_config("bistable")
    assert cfg.T == 100 and cfg.reps == 20 and cfg.filters == ["gpf", "qpf", "lna"]
    assert cfg.load_network().n_species == 1
    lc = builtin_config("limitcycle", reps=3)
    assert lc.reps == 3 and lc.G == [[1.0, 0.0, 0.0]]
    assert lc.V_for_dt_sweep == 5000
    with pytest.raises(ValueError):
        builtin_config("nonexistent")


def test_config_round_trip():
    cfg = small_config()
    again = ExperimentConfig.from_text(cfg.to_text(), base_dir=cfg.base_dir)
    assert again == cfg


def test_grid_points_deduplicated():
    cfg = small_config()
    assert cfg.grid_points() == [(1000.0, 1.0), (3000.0, 1.0), (3000.0, 0.5)]


@pytest.mark.parametrize("text, message", [
    ("T = 1\nbogus = 3", "unknown key"),
    ("T 1", "expected key"),
    ("T = 1", "missing"),
])
def test_config_errors(text, message):
    with pytest.raises(ValueError, match=message):
        ExperimentConfig.from_text(text)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(reps=0)
    with pytest.raises(ValueError):
        small_config(filters=["gpf", "ekf"])
    with pytest.raises(ValueError):
        small_config(dt_grid=[5.0])
    with pytest.raises(ValueError):
        small_config(omega=50.0).load_network()


# ---------------------------------------------------------------------------
# running

def test_repetition_is_deterministic():
    cfg = small_config()
    a = run_repetition(cfg, 1)
    b = run_repetition(cfg, 1)
    assert a == b
    assert {r.path_stream for r in a} == {2} and {r.obs_stream for r in a} == {3}
    assert len(a) == len(cfg.grid_points()) * len(cfg.filters)


def test_repetitions_share_paths_across_filters():
    cfg = small_config()
    keep = {}
    run_repetition(cfg, 0, keep=keep)
    again = {}
    run_repetition(cfg, 0, points=[(3000.0, 1.0)], keep=again)
    np.testing.assert_array_equal(keep["path"].times, again["path"].times)
    key = (3000.0, 1.0, "gpf")
    np.testing.assert_array_equal(keep[key].map, again[key].map)


def test_report_summary_and_files(tmp_path):
    cfg = small_config()
    report = run_experiment(cfg)
    for V, dt in cfg.grid_points():
        for f in cfg.filters:
            vals = [r.mse for r in report.records
                    if (r.V, r.dt, r.filter) == (V, dt, f) and not r.diverged]
            mean, err, n_div = report.summary(f, V, dt)
            assert n_div + len(vals) == cfg.reps
            if vals:
                assert mean == pytest.approx(np.mean(vals), rel=1e-14)
    report.write(tmp_path)
    for name, axis in (("mse_vs_V.csv", "V"), ("mse_vs_dt.csv", "dt")):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0] == f"{axis},filter,mean_mse,stderr,n_diverged"
        assert len(lines) == 1 + 2 * len(cfg.filters)
    data = json.loads((tmp_path / "report.json").read_text())
    assert len(data["runs"]) == len(report.records)
    assert data["config"]["seed"] == 99


def test_workers_do_not_change_results():
    cfg = small_config(reps=2, filters=["gpf", "lna"])
    serial = run_experiment(cfg).records
    parallel = run_experiment(small_config(reps=2, filters=["gpf", "lna"], workers=2)).records
    assert serial == parallel


def test_summary_with_divergences():
    recs = [RunRecord(0, 1.0, 1.0, "qpf", None, True, 0, 1, "boom"),
            RunRecord(1, 1.0, 1.0, "qpf", 2.0, False, 2, 3),
            RunRecord(2, 1.0, 1.0, "qpf", 4.0, False, 4, 5)]
    rep = ExperimentReport({}, recs)
    mean, err, n_div = rep.summary("qpf", 1.0, 1.0)
    assert (mean, n_div) == (3.0, 1)
    assert err == pytest.approx(1.0)
    assert math.isnan(rep.summary("gpf", 1.0, 1.0)[0])


def test_limitcycle_rejects_qpf():
    cfg = builtin_config("limitcycle", filters=["gpf", "qpf"], reps=1)
    with pytest.raises(ValueError, match="univariate"):
        run_limitcycle_experiment(cfg)
    with pytest.raises(ValueError, match="univariate"):
        run_experiment(cfg)
