import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iaofdma.harness import (
    CSV_HEADER,
    ExperimentConfig,
    ResultRow,
    ResultTable,
    aggregate,
    emit_csv,
    emit_plot,
    load_config,
    parse_snr_grid,
    read_csv,
    run_experiment,
    run_trial,
    snr_to_power,
)

SMALL = dict(n_subcarriers=8, users_per_cell=2, trials=2, snr_grid_db="0:10:20")


def test_snr_grid_parsing():
    assert parse_snr_grid("0:5:50") == tuple(float(x) for x in range(0, 51, 5))
    assert parse_snr_grid("0, 10,20") == (0.0, 10.0, 20.0)
    assert parse_snr_grid("-10:10:10") == (-10.0, 0.0, 10.0)
    with pytest.raises(ValueError):
        parse_snr_grid("0:0:10")


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig(snr_grid_db=())
    with pytest.raises(ValueError):
        ExperimentConfig(schemes=())
    with pytest.raises(ValueError):
        ExperimentConfig(schemes=("hybrid",))
    with pytest.raises(ValueError):
        ExperimentConfig(schemes=("magic",))
    with pytest.raises(ValueError):
        ExperimentConfig(n_subcarriers=7)
    ExperimentConfig(model="heterogeneous", schemes="hybrid,ofp")


def test_snr_to_power():
    sym = ExperimentConfig(n_subcarriers=64)
    assert snr_to_power(0, sym) == 64.0
    assert snr_to_power(10, sym) == pytest.approx(10 * snr_to_power(0, sym), rel=1e-15)
    het = ExperimentConfig(model="heterogeneous", n_subcarriers=64, cell_radius=1.0, pathloss_exponent=2.0)
    assert snr_to_power(7, het) == snr_to_power(7, sym)
    het2 = het.replace(cell_radius=2.0)
    assert snr_to_power(0, het2) == 256.0


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("model = symmetric\ncross_gain = 0.1  # weak interference\nn_subcarriers = 16\nsnr_grid_db = 0:10:30\ntrials = 3\n")
    cfg = load_config(path)
    assert cfg.cross_gain == 0.1 and cfg.n_subcarriers == 16 and cfg.snr_grid_db == (0.0, 10.0, 20.0, 30.0)
    cfg = load_config(path, {"trials": 7, "n_subcarriers": None})
    assert cfg.trials == 7 and cfg.n_subcarriers == 16
    path.write_text("n_subcarrier = 4\n")
    with pytest.raises(ValueError):
        load_config(path)


def test_smallest_run_one_row_per_snr():
    cfg = ExperimentConfig(schemes=("ofp",), **{**SMALL, "trials": 1})
    table = run_experiment(cfg)
    assert [r.snr_db for r in table.rows] == [0.0, 10.0, 20.0]
    assert all(r.trials == 1 and r.std_error == 0.0 for r in table.rows)


def test_rows_sorted_and_std_error():
    cfg = ExperimentConfig(schemes=("ofp", "traditional"), **{**SMALL, "trials": 3})
    table = run_experiment(cfg)
    keys = [(r.scheme, r.snr_db) for r in table.rows]
    assert keys == sorted(keys)
    for name in ("ofp", "traditional"):
        x = table.per_trial[name]
        snr, mean, se = table.series(name)
        np.testing.assert_allclose(mean, x.mean(axis=0))
        np.testing.assert_allclose(se, x.std(axis=0, ddof=1) / np.sqrt(3))


def csv_bytes(table, tmp_path, name):
    path = tmp_path / name
    emit_csv(table, path)
    return path.read_bytes()


def test_determinism_and_order_independence(tmp_path):
    cfg = ExperimentConfig(schemes=("traditional", "ia_ri"), **SMALL)
    a = run_experiment(cfg)
    outcomes = [run_trial(cfg, t) for t in reversed(range(cfg.trials))]
    b = aggregate(cfg, outcomes)
    assert csv_bytes(a, tmp_path, "a.csv") == csv_bytes(b, tmp_path, "b.csv")


def test_parallel_matches_serial(tmp_path):
    cfg = ExperimentConfig(schemes=("traditional",), **SMALL)
    serial = csv_bytes(run_experiment(cfg), tmp_path, "s.csv")
    assert serial == csv_bytes(run_experiment(cfg.replace(workers=2)), tmp_path, "p.csv")


def test_monotone_in_budget_per_trial():
    cfg = ExperimentConfig(schemes=("traditional", "ia_ri", "ia_perfect"), n_subcarriers=16, users_per_cell=3,
                           trials=2, snr_grid_db="0:5:40")
    table = run_experiment(cfg)
    for name, x in table.per_trial.items():
        assert np.all(np.diff(x, axis=1) >= -1e-6), name


def test_heterogeneous_hybrid_runs():
    cfg = ExperimentConfig(model="heterogeneous", schemes=("hybrid", "ofp"), n_subcarriers=12, users_per_cell=2,
                           trials=2, snr_grid_db="0,20")
    table = run_experiment(cfg)
    assert len(table) == 4 and not table.errors


def test_failures_are_recorded_and_the_run_continues(monkeypatch):
    from iaofdma import schemes

    def boom(*a, **k):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(schemes, "run_ofp", boom)
    cfg = ExperimentConfig(schemes=("ofp", "traditional"), **SMALL)
    table = run_experiment(cfg)
    ofp = [r for r in table.rows if r.scheme == "ofp"]
    assert all(r.trials == 0 and math.isnan(r.mean_sum_rate) for r in ofp)
    assert all(r.trials == 2 for r in table.rows if r.scheme == "traditional")
    assert len(table.errors) == 6


def test_emit_csv_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_csv(ResultTable([]), tmp_path / "x.csv")
    with pytest.raises(ValueError):
        emit_plot(ResultTable([]), tmp_path / "x.svg")


def test_one_row_csv(tmp_path):
    path = tmp_path / "one.csv"
    emit_csv(ResultTable([ResultRow("ofp", 10.0, 5, 1.25, 0.1, 0.0, float("nan"))]), path)
    text = path.read_text()
    assert text.endswith("\n")
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 2


finite = st.floats(-1e12, 1e12, allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["ofp", "ia_ri"]), finite, st.integers(0, 1000), finite, finite, finite,
                          st.one_of(finite, st.just(float("nan")))), min_size=1, max_size=10))
def test_csv_round_trip(tmp_path_factory, rows):
    table = ResultTable([ResultRow(*r) for r in rows])
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    emit_csv(table, path)
    back = read_csv(path)
    assert len(back) == len(rows)
    for a, b in zip(table.rows, back):
        assert a.scheme == b.scheme and a.trials == b.trials
        for f in ("snr_db", "mean_sum_rate", "std_error", "mean_dual_gap", "mean_ia_leakage"):
            x, y = getattr(a, f), getattr(b, f)
            if math.isnan(x):
                assert math.isnan(y)
            else:
                assert y == pytest.approx(x, rel=5e-9, abs=1e-300)


def test_plot_is_svg(tmp_path):
    cfg = ExperimentConfig(schemes=("ofp",), **SMALL)
    path = tmp_path / "fig.svg"
    emit_plot(run_experiment(cfg), path)
    assert path.read_text().lstrip().startswith("<?xml")
    assert "<svg" in path.read_text()
