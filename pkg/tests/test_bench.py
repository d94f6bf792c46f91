import json
import logging
import os

import numpy as np
import pandas as pd
import pytest

import kansurv.bench as bench
from kansurv.bench import (
    ModelConfig,
    RateCell,
    adaptive_knots,
    architecture,
    benchmark_run,
    content_hash,
    evaluate_model,
    fit_once,
    load_csv,
    median_event_time,
    predict_on_grid,
    rate_study,
    run_rate_cell,
    split,
    standardise,
    worker_count,
)
from kansurv.kan import InputScaler, forward_factored, init_network
from kansurv.simgen import dgp_spec, generate
from kansurv.survival import SurvivalDataset, TimeGrid, integrate_hazard
from kansurv.train import TrainConfig


# --- ingestion -----------------------------------------------------------

def write_csv(path, text):
    path.write_text(text)
    return path


def test_load_csv_drops_missing_rows(tmp_path, caplog):
    p = write_csv(tmp_path / "d.csv",
                  "x1,time,event\n0.1,2,1\n,4,0\n0.3,6,1\n")
    with caplog.at_level(logging.INFO, logger="kansurv.bench"):
        data = load_csv(p)
    assert data.n == 2
    assert "dropped 1 rows" in caplog.text
    np.testing.assert_allclose(data.y, [0.0, 1.0])  # min-max over kept rows


def test_load_csv_minmax_normalisation(tmp_path):
    p = write_csv(tmp_path / "d.csv",
                  "a,b,time,event\n1,2,2,1\n3,4,4,0\n5,6,6,1\n")
    data = load_csv(p)
    np.testing.assert_allclose(data.y, [0.0, 0.5, 1.0])
    assert data.d == 2


def test_load_csv_rejects_bad_event(tmp_path):
    p = write_csv(tmp_path / "d.csv",
                  "x1,time,event\n0.1,2,1\n0.2,4,2\n0.3,6,1\n")
    with pytest.raises(ValueError, match="row 1"):
        load_csv(p)


def test_load_csv_schema_errors(tmp_path):
    with pytest.raises(ValueError, match="time"):
        load_csv(write_csv(tmp_path / "a.csv", "x1,event\n1,0\n"))
    with pytest.raises(ValueError, match="feature"):
        load_csv(write_csv(tmp_path / "b.csv", "time,event\n1,0\n2,1\n"))
    with pytest.raises(ValueError, match="time range"):
        load_csv(write_csv(tmp_path / "c.csv",
                           "x1,time,event\n1,5,0\n2,5,1\n"))


# --- splitting -----------------------------------------------------------

def stratified_data(n, n_events, seed=0):
    rng = np.random.default_rng(seed)
    delta = np.zeros(n, dtype=int)
    delta[:n_events] = 1
    return SurvivalDataset(rng.random((n, 3)), rng.random(n), delta)


def test_split_benchmark_counts_and_stratification():
    data = stratified_data(100, 30)
    plan = split(data, seed=0, mode="benchmark")
    assert plan.test.size == 20
    assert data.delta[plan.test].sum() == 6
    assert plan.val.size == 16
    assert plan.train.size == 64
    everything = np.concatenate([plan.train, plan.val, plan.test])
    np.testing.assert_array_equal(np.sort(everything), np.arange(100))


def test_split_deterministic_and_seed_sensitive():
    data = stratified_data(60, 25)
    a = split(data, seed=3, mode="benchmark")
    b = split(data, seed=3, mode="benchmark")
    c = split(data, seed=4, mode="benchmark")
    np.testing.assert_array_equal(a.train, b.train)
    assert not np.array_equal(a.train, c.train)


def test_split_simulation_mode():
    data = stratified_data(1000, 700)
    plan = split(data, seed=1, mode="simulation")
    assert plan.train.size == 800 and plan.val.size == 200
    assert plan.test.size == 0


def test_split_errors():
    with pytest.raises(ValueError, match="mode"):
        split(stratified_data(100, 30), 0, "bogus")
    with pytest.raises(ValueError, match="few"):
        split(stratified_data(20, 10), 0, "benchmark")
    with pytest.raises(ValueError, match="stratum"):
        split(stratified_data(100, 2), 0, "benchmark")


# --- scaling -------------------------------------------------------------

def test_standardise_zscore():
    x = np.zeros((50, 1))
    x[:, 0] = np.concatenate([np.full(25, 1.0), np.full(25, 3.0)])  # mean 2 sd 1
    data = SurvivalDataset(x, np.linspace(0.1, 1, 50),
                           np.tile([0, 1], 25).astype(int))
    scaler = standardise(data, np.arange(50), "benchmark")
    assert scaler.apply_covariates(np.array([[3.0]]))[0, 0] == pytest.approx(1.0)


def test_standardise_constant_column_warns():
    x = np.column_stack([np.full(30, 2.0), np.linspace(0, 1, 30)])
    data = SurvivalDataset(x, np.linspace(0.1, 1, 30),
                           np.tile([0, 1], 15).astype(int))
    with pytest.warns(RuntimeWarning, match="zero variance"):
        scaler = standardise(data, np.arange(30), "benchmark")
    assert scaler.apply_covariates(np.array([[2.0, 0.5]]))[0, 0] == 2.0


def test_standardise_never_reads_held_out_rows():
    data = stratified_data(100, 40, seed=5)
    plan = split(data, seed=0, mode="benchmark")
    poisoned = data.x.copy()
    poisoned[plan.test] = 1e9  # sentinel: must not move the statistics
    poisoned_data = SurvivalDataset(poisoned, data.y, data.delta)
    a = standardise(data, plan.train, "benchmark")
    b = standardise(poisoned_data, plan.train, "benchmark")
    np.testing.assert_array_equal(a.offset, b.offset)
    np.testing.assert_array_equal(a.scale, b.scale)


def test_standardise_simulation_identity():
    data = stratified_data(40, 20)
    scaler = standardise(data, np.arange(30), "simulation")
    np.testing.assert_array_equal(scaler.offset, np.zeros(4))
    np.testing.assert_array_equal(scaler.scale, np.ones(4))


# --- prediction ----------------------------------------------------------

def test_predict_on_grid_matches_direct_forward(monkeypatch):
    net = init_network([3, 2, 1], degree=3, n_interior=2, seed=0)
    scaler = InputScaler.identity(3)
    x = np.random.default_rng(1).random((25, 2))
    taus = np.linspace(0, 1, 7)
    monkeypatch.setattr(bench, "_PREDICT_CHUNK", 7)  # force several chunks
    got = predict_on_grid(net, scaler, x, taus)
    g, _ = forward_factored(net, x, taus)
    want = integrate_hazard(g, TimeGrid(taus))
    np.testing.assert_allclose(got.survival, want.survival, atol=1e-12)


# --- pipeline smoke ------------------------------------------------------

def small_cfgs():
    model = ModelConfig(hidden=(), n_interior=2, n_bins=6)
    train = TrainConfig(learning_rate=0.02, batch_size=64, patience=3,
                        max_epochs=4, grid_update="init", seed=0)
    return model, train


def test_fit_and_evaluate_smoke():
    sample = generate(dgp_spec(1), 300, seed=0, lam_c=0.25)
    model_cfg, train_cfg = small_cfgs()
    fitted = fit_once(sample.data, model_cfg, train_cfg, "benchmark", 0)
    test = sample.data.subset(fitted.plan.test)
    t_star = median_event_time(sample.data.subset(fitted.plan.train))
    report = evaluate_model(fitted, test, t_star, metadata={"tag": "smoke"})
    assert 0.0 <= report.c_td <= 1.0
    assert report.ibs >= 0.0
    assert 0.0 <= report.dcal_p <= 1.0
    assert np.isfinite(report.nll_test)
    assert report.metadata["tag"] == "smoke"


def test_benchmark_run_produces_one_report_per_seed():
    sample = generate(dgp_spec(3), 260, seed=1, lam_c=0.25)
    model_cfg, train_cfg = small_cfgs()
    reports = benchmark_run(sample.data, model_cfg, train_cfg, seeds=range(2))
    assert len(reports) == 2
    assert reports[0].metadata["split_seed"] == 0
    assert reports[1].metadata["split_seed"] == 1


# --- rate study ----------------------------------------------------------

def test_adaptive_knots_schedules():
    ns = [512, 1024, 2048, 4096, 8192]
    assert [adaptive_knots(n, 4) for n in ns] == [2, 3, 3, 3, 3]
    assert [adaptive_knots(n, 1) for n in ns] == [8, 11, 13, 16, 21]


def test_architecture_mapping():
    assert architecture("additive") == ()
    assert architecture("deep") == (3,)
    with pytest.raises(ValueError):
        architecture("huge")


def test_run_rate_cell_records_failures():
    row = run_rate_cell(RateCell(1, 512, 0, "bogus-arch"), lam_c=0.25)
    assert row["error"] != "" and np.isnan(row["ise_s"])


def test_run_rate_cell_knot_schedule_toggle(monkeypatch):
    seen = []
    real = bench.fit_once

    def spy(data, mc, cfg, mode, seed):
        seen.append(mc.n_interior)
        return real(data, mc, cfg, mode, seed)

    monkeypatch.setattr(bench, "fit_once", spy)
    mc = ModelConfig(n_bins=6, n_interior=4)
    tc = TrainConfig(learning_rate=0.02, batch_size=64, patience=1,
                     max_epochs=1, grid_update="init")
    cell = RateCell(1, 64, 0, "additive")
    run_rate_cell(cell, mc, tc, lam_c=0.25)
    run_rate_cell(cell, mc, tc, lam_c=0.25, adapt_knots=False)
    assert seen == [adaptive_knots(64, 4), 4]


def fast_rate_kwargs():
    model = ModelConfig(n_bins=6)
    train = TrainConfig(learning_rate=0.02, batch_size=128, patience=2,
                        max_epochs=2, grid_update="init", seed=0)
    return {"model_cfg": model, "train_cfg": train,
            "lam_c_by_dgp": {1: 0.25}}


def test_rate_study_table_and_outputs(tmp_path):
    ns = (64, 128, 256)
    result = rate_study([1], ns, 1, out_dir=tmp_path / "out",
                        **fast_rate_kwargs())
    assert len(result.rows) == 3
    assert (result.rows["error"] == "").all()
    assert set(result.medians["n"]) == set(ns)
    key = (1, "additive")
    assert key in result.slopes
    assert np.isfinite(result.slopes[key]["slope_all"])
    assert np.isfinite(result.slopes[key]["slope_head"])
    for name in ("rate_cells.csv", "rate_medians.csv", "manifest.json"):
        assert (tmp_path / "out" / name).exists()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["n_rows"] == 3 and manifest["n_failed"] == 0


def test_rate_study_bitwise_reproducible():
    kwargs = fast_rate_kwargs()
    a = rate_study([1], (64, 128, 256), 1, **kwargs)
    b = rate_study([1], (64, 128, 256), 1, **kwargs)
    np.testing.assert_array_equal(a.rows["ise_s"].to_numpy(),
                                  b.rows["ise_s"].to_numpy())


def test_rate_study_worker_pool(monkeypatch):
    monkeypatch.setenv("KANSURV_WORKERS", "2")
    assert worker_count() == 2
    inline = rate_study([1], (64,), 1, **fast_rate_kwargs())
    monkeypatch.setenv("KANSURV_WORKERS", "1")
    serial = rate_study([1], (64,), 1, **fast_rate_kwargs())
    np.testing.assert_array_equal(inline.rows["ise_s"].to_numpy(),
                                  serial.rows["ise_s"].to_numpy())


def test_worker_count_malformed(monkeypatch):
    monkeypatch.setenv("KANSURV_WORKERS", "lots")
    assert worker_count() == 1


# --- hashing -------------------------------------------------------------

def test_content_hash_sensitivity():
    a = np.arange(6, dtype=float)
    assert content_hash(a) == content_hash(a.copy())
    assert content_hash(a) != content_hash(a.reshape(2, 3))
    assert content_hash(a) != content_hash(a + 1)
