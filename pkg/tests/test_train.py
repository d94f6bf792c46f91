import numpy as np
import pytest

from kansurv.kan import (
    InputScaler,
    flatten_params,
    forward_factored,
    init_network,
    set_params,
)
from kansurv.survival import SurvivalDataset, TimeGrid, build_grid
from kansurv.train import (
    AdamState,
    FitResult,
    TrainConfig,
    adam_step,
    fit,
    full_grid_nll,
    refit_schedule,
    sample_configs,
    subgrid_batch,
)

from _oracles import adam_reference_trace, central_fd


def identity(d0):
    return InputScaler.identity(d0)


def test_adam_zero_gradient_is_identity():
    state = AdamState(4)
    params = np.array([1.0, -2.0, 0.5, 3.0])
    out = adam_step(state, params, np.zeros(4), lr=0.1)
    np.testing.assert_array_equal(out, params)


def test_adam_first_step_hand_value():
    state = AdamState(1)
    out = adam_step(state, np.zeros(1), np.ones(1), lr=0.1)
    assert out[0] == pytest.approx(-0.1, abs=1e-8)


def test_adam_two_step_trace():
    state = AdamState(1)
    params = np.zeros(1)
    for _ in range(2):
        params = adam_step(state, params, np.ones(1), lr=0.05)
    want = adam_reference_trace(0.0, [1.0, 1.0], lr=0.05)
    assert params[0] == pytest.approx(want, abs=1e-12)


def test_adam_shape_mismatch():
    state = AdamState(3)
    with pytest.raises(ValueError):
        adam_step(state, np.zeros(3), np.zeros(2), lr=0.1)


def test_refit_schedule():
    assert refit_schedule(5, 200) == set(range(5, 101, 5))
    assert refit_schedule(300, 200) == set()
    assert refit_schedule("init", 200) == {0}
    assert refit_schedule(None, 200) == set()
    with pytest.raises(ValueError):
        refit_schedule(0, 200)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1, patience=300, max_epochs=200)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1, lambda_shrink=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.1, grid_update=0)


def make_data(n, d, seed, all_events=False):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, (n, d))
    y = rng.uniform(0.05, 1.0, n)
    delta = np.ones(n, dtype=int) if all_events else rng.integers(0, 2, n)
    return SurvivalDataset(x, y, delta)


def test_subgrid_loss_matches_full_grid_when_all_bins_active():
    net = init_network([3, 1], degree=3, n_interior=2, seed=0, noise_scale=0.5)
    taus = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    grid = TimeGrid(taus)
    x = np.random.default_rng(1).uniform(0, 1, (4, 2))
    y = np.array([0.25, 0.5, 0.75, 1.0])  # one subject per bin
    delta = np.array([1, 0, 1, 1])
    data = SurvivalDataset(x, y, delta)
    loss, _, info = subgrid_batch(net, identity(3), x, y, delta, grid, 0.0,
                                  want_grads=False)
    np.testing.assert_array_equal(info["active"], [1, 2, 3, 4])
    full = full_grid_nll(net, identity(3), data, grid)
    assert loss == pytest.approx(full, abs=1e-12)


def test_subgrid_loss_matches_full_grid_random_batch_covering_bins():
    rng = np.random.default_rng(7)
    net = init_network([4, 2, 1], degree=3, n_interior=3, seed=3, noise_scale=0.4)
    y_pool = rng.uniform(0.05, 1.0, 200)
    grid = build_grid(y_pool, 6)
    k = grid.n_bins
    # draw a batch that occupies every bin so both routes accumulate the
    # same rectangle increments
    y = np.concatenate([grid.taus[1:], rng.choice(y_pool, 20)])
    x = rng.uniform(0, 1, (y.size, 3))
    delta = rng.integers(0, 2, y.size)
    data = SurvivalDataset(x, y, delta)
    loss, _, info = subgrid_batch(net, identity(4), x, y, delta, grid, 0.0,
                                  want_grads=False)
    assert info["active"].size == k
    full = full_grid_nll(net, identity(4), data, grid)
    assert loss == pytest.approx(full, abs=1e-12)


def test_subgrid_bin_zero_subjects_by_hand():
    net = init_network([2, 1], degree=3, n_interior=2, seed=5, noise_scale=0.5)
    grid = TimeGrid(np.array([0.0, 0.5, 1.0]))
    x = np.array([[0.3], [0.8]])
    y = np.array([0.2, 0.7])  # first subject precedes tau_1
    delta = np.array([1, 1])
    loss, _, info = subgrid_batch(net, identity(2), x, y, delta, grid, 0.0,
                                  want_grads=False)
    assert info["n_bin_zero"] == 1
    g, _ = forward_factored(net, x, np.array([0.5]))
    want = (-g[0, 0]) + (np.exp(g[1, 0]) * 0.5 - g[1, 0])
    assert loss == pytest.approx(want / 2.0, abs=1e-12)


def test_subgrid_gradient_matches_fd():
    net = init_network([3, 2, 1], degree=3, n_interior=2, seed=11, noise_scale=0.4)
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (6, 2))
    y = np.array([0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
    delta = np.array([1, 0, 1, 1, 0, 1])
    grid = TimeGrid(np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]))
    lam = 1e-3
    _, grad, _ = subgrid_batch(net, identity(3), x, y, delta, grid, lam)
    vec = flatten_params(net)

    def loss_at(v):
        set_params(net, v)
        loss, _, _ = subgrid_batch(net, identity(3), x, y, delta, grid, lam,
                                   want_grads=False)
        return loss

    fd = central_fd(loss_at, vec, h=1e-5)
    set_params(net, vec)
    denom = np.maximum.reduce([np.abs(grad), np.abs(fd), np.full_like(fd, 1e-3)])
    assert np.max(np.abs(grad - fd) / denom) < 1e-5


def test_subgrid_rejects_empty_batch():
    net = init_network([2, 1], degree=3, n_interior=2, seed=0)
    grid = TimeGrid(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        subgrid_batch(net, identity(2), np.zeros((0, 1)), np.zeros(0),
                      np.zeros(0), grid, 0.0)


def test_all_censored_loss_decreases():
    rng = np.random.default_rng(4)
    n = 64
    x = rng.uniform(0, 1, (n, 1))
    y = rng.uniform(0.1, 1.0, n)
    data = SurvivalDataset(x, y, np.zeros(n, dtype=int))
    grid = build_grid(y, 8)
    net = init_network([2, 1], degree=3, n_interior=3, seed=0,
                       noise_scale=0.0, scale_base_sigma=0.0)
    cfg = TrainConfig(learning_rate=0.05, batch_size=n, patience=6,
                      max_epochs=6, grid_update=None, seed=1)
    result = fit(net, identity(2), data, data, grid, cfg)
    losses = [row["train_loss"] for row in result.log]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_fit_is_deterministic():
    data = make_data(80, 2, seed=9)
    val = make_data(30, 2, seed=10)
    grid = build_grid(data.y, 6)
    cfg = TrainConfig(learning_rate=0.02, batch_size=32, patience=5,
                      max_epochs=8, grid_update="init", seed=3)
    runs = []
    for _ in range(2):
        net = init_network([3, 1], degree=3, n_interior=2, seed=7)
        runs.append(fit(net, identity(3), data, val, grid, cfg))
    a, b = runs
    assert [r["val_nll"] for r in a.log] == [r["val_nll"] for r in b.log]
    np.testing.assert_array_equal(flatten_params(a.net), flatten_params(b.net))


def test_fit_returns_running_minimum_checkpoint():
    data = make_data(100, 2, seed=20)
    val = make_data(40, 2, seed=21)
    grid = build_grid(data.y, 8)
    net = init_network([3, 1], degree=3, n_interior=2, seed=2)
    cfg = TrainConfig(learning_rate=0.5, batch_size=32, patience=1,
                      max_epochs=200, grid_update=None, seed=5)
    result = fit(net, identity(3), data, val, grid, cfg)
    vals = [row["val_nll"] for row in result.log]
    assert result.epochs_run < cfg.max_epochs  # patience tripped
    assert result.epochs_run == result.best_epoch + 1
    assert result.best_val_nll == min(vals)
    returned = full_grid_nll(result.net, identity(3), val, grid)
    assert returned == pytest.approx(result.best_val_nll, abs=1e-12)


def test_fit_refit_at_init_adapts_knot_range():
    data = make_data(120, 1, seed=30)
    grid = build_grid(data.y, 6)
    net = init_network([2, 1], degree=3, n_interior=3, seed=1)
    cfg = TrainConfig(learning_rate=0.02, batch_size=64, patience=3,
                      max_epochs=3, grid_update="init", seed=0)
    fit(net, identity(2), data, data, grid, cfg)
    knots = net.layers[0].knots
    # covariates live on [0, 1]; after the init refit the knot domain follows
    assert knots[0, 0, 0] >= 0.0 and knots[0, 0, -1] <= 1.0


def test_fit_aborts_on_non_finite_validation():
    data = make_data(50, 2, seed=40)
    grid = build_grid(data.y, 4)
    net = init_network([3, 1], degree=3, n_interior=2, seed=0)
    bad = flatten_params(net)
    bad[0] = np.nan
    set_params(net, bad)
    cfg = TrainConfig(learning_rate=0.01, batch_size=25, patience=2,
                      max_epochs=4, grid_update=None, seed=0)
    with pytest.raises(RuntimeError, match="non-finite"):
        fit(net, identity(3), data, data, grid, cfg)


def test_sample_configs_ranges():
    base = TrainConfig(learning_rate=0.01)
    configs = sample_configs(20, seed=0, base=base)
    assert len(configs) == 20
    for cfg in configs:
        assert 1e-4 <= cfg.learning_rate <= 1e-1
        assert 0.0 <= cfg.lambda_shrink <= 1e-3
        assert cfg.grid_update in (5, 10, 15, 20)
