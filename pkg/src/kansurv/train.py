"""Network training on the censored-likelihood objective.

Each mini-batch is scored on the sub-grid of time bins occupied by the batch:
bin indices b_i pick out the active grid points, sub-grid widths are measured
from 0 through the active points only, cumulative hazards come from a running
sum of right-rectangle increments, and the loss reads the cumulative term and
the event term at each subject's own bin. Adam updates the flat parameter
vector; knot vectors are refit on observed activations at scheduled epochs;
training stops when full-grid validation likelihood has not improved for
`patience` consecutive epochs, and the best-validation parameters are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bspline import KnotVector, SplineEdge, refit_knots
from .kan import (
    InputScaler,
    KanNetwork,
    backward_factored,
    copy_network,
    flatten_params,
    forward_factored,
    set_params,
)
from .survival import (
    LOG_HAZARD_BOUND,
    SurvivalDataset,
    TimeGrid,
    bin_index,
    clamp_log_hazard,
    integrate_hazard,
    nll,
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int = 128
    patience: int = 50
    max_epochs: int = 200
    grid_update: int | str | None = "init"  # "init", a period in epochs, or None
    grid_eps: float = 0.02
    lambda_shrink: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("need 1 <= patience <= max_epochs")
        if self.lambda_shrink < 0:
            raise ValueError("lambda_shrink must be >= 0")
        refit_schedule(self.grid_update, self.max_epochs)  # validates the mode


def refit_schedule(grid_update, max_epochs: int) -> set[int]:
    """Epochs at which knots are refit. "init" means once before training
    (epoch 0); an integer period f yields {f, 2f, ...} capped at half the
    training budget; None disables refits."""
    if grid_update is None:
        return set()
    if grid_update == "init":
        return {0}
    freq = int(grid_update)
    if freq < 1:
        raise ValueError("grid_update period must be >= 1")
    return set(range(freq, max_epochs // 2 + 1, freq))


class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, n_params: int):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray,
              lr: float) -> np.ndarray:
    """One bias-corrected Adam update; mutates the state, returns new params."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("parameter/gradient/state shapes disagree")
    state.t += 1
    state.m = AdamState.beta1 * state.m + (1 - AdamState.beta1) * grads
    state.v = AdamState.beta2 * state.v + (1 - AdamState.beta2) * grads**2
    m_hat = state.m / (1 - AdamState.beta1**state.t)
    v_hat = state.v / (1 - AdamState.beta2**state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + AdamState.eps)


def subgrid_batch(net: KanNetwork, scaler: InputScaler, x: np.ndarray,
                  y: np.ndarray, delta: np.ndarray, grid: TimeGrid,
                  lambda_shrink: float, want_grads: bool = True):
    """Loss (and gradient) of one batch on its active-bin sub-grid.

    Subjects whose observed time precedes the first grid point occupy bin 0;
    they carry no cumulative-hazard mass and their event term reads the first
    sub-grid column. Returns (loss, flat gradient or None, info dict).
    """
    if y.size == 0:
        raise ValueError("empty batch")
    b = bin_index(grid, y)
    active = np.unique(b)
    active = active[active > 0]
    if active.size == 0:
        active = np.array([1])
    sub_taus = grid.taus[active]
    widths = np.diff(np.concatenate([[0.0], sub_taus]))

    g, caches = forward_factored(net, scaler.apply_covariates(x),
                                 scaler.apply_time(sub_taus), want_cache=want_grads)
    n_batch, n_active = g.shape
    gc = clamp_log_hazard(g)
    inc = np.exp(gc) * widths
    cum = np.cumsum(inc, axis=1)
    pos = np.searchsorted(active, b)  # bin-0 subjects land on column 0
    alive = (b > 0).astype(float)
    rows = np.arange(n_batch)
    nll_term = float(np.mean(cum[rows, pos] * alive - delta * g[rows, pos]))
    penalty = lambda_shrink * float(np.mean(g**2))
    loss = nll_term + penalty
    info = {"active": active, "n_bin_zero": int(np.sum(b == 0))}
    if not want_grads:
        return loss, None, info

    within = (np.arange(n_active)[None, :] <= pos[:, None]) & (alive[:, None] > 0)
    unclamped = (g > -LOG_HAZARD_BOUND) & (g < LOG_HAZARD_BOUND)
    dg = within * inc * unclamped / n_batch
    dg[rows, pos] -= delta / n_batch
    if lambda_shrink > 0:
        dg = dg + 2.0 * lambda_shrink * g / (n_batch * n_active)
    return loss, backward_factored(net, caches, dg), info


def full_grid_nll(net: KanNetwork, scaler: InputScaler, data: SurvivalDataset,
                  grid: TimeGrid) -> float:
    """Validation objective: likelihood on the whole grid, no penalty."""
    g, _ = forward_factored(net, scaler.apply_covariates(data.x),
                            scaler.apply_time(grid.taus))
    curves = integrate_hazard(g, grid)
    b = bin_index(grid, data.y)
    rows = np.arange(data.n)
    # subjects ahead of the first boundary keep zero cumulative hazard but
    # read their event term at the first column, matching the batch loss
    return nll(g[rows, np.maximum(b, 1)], curves.cum_hazard[rows, b],
               data.delta)


def _refit_network(net: KanNetwork, scaler: InputScaler, data: SurvivalDataset,
                   grid_eps: float) -> None:
    """Refit every edge on its observed input activations, layer by layer,
    recomputing downstream activations through the already-refit layers."""
    from .kan import _layer_forward  # internal reuse; same forward semantics

    h = np.column_stack([scaler.apply_covariates(data.x),
                         scaler.apply_time(data.y)])
    for layer in net.layers:
        for i in range(layer.d_in):
            for j in range(layer.d_out):
                edge = SplineEdge(
                    KnotVector(layer.degree, layer.knots[i, j]),
                    layer.theta[i, j],
                    float(layer.w_base[i, j]), float(layer.w_spline[i, j]),
                )
                new = refit_knots(edge, h[:, i], grid_eps)
                layer.knots[i, j] = new.knots.knots
                layer.theta[i, j] = new.theta
        h, _ = _layer_forward(layer, h, False, False)


@dataclass
class FitResult:
    net: KanNetwork
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_nll: float = float("inf")
    epochs_run: int = 0


def fit(net: KanNetwork, scaler: InputScaler, train: SurvivalDataset,
        val: SurvivalDataset, grid: TimeGrid, cfg: TrainConfig) -> FitResult:
    """Run the full training loop and return the best-validation checkpoint."""
    rng = np.random.default_rng(cfg.seed)
    schedule = refit_schedule(cfg.grid_update, cfg.max_epochs)
    if 0 in schedule:
        _refit_network(net, scaler, train, cfg.grid_eps)

    params = flatten_params(net)
    state = AdamState(params.size)
    result = FitResult(net=copy_network(net))
    stale = 0

    for epoch in range(1, cfg.max_epochs + 1):
        refit_flag = epoch in schedule
        if refit_flag:
            _refit_network(net, scaler, train, cfg.grid_eps)
            params = flatten_params(net)

        order = rng.permutation(train.n)
        losses = []
        for start in range(0, train.n, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            loss, grad, _ = subgrid_batch(
                net, scaler, train.x[idx], train.y[idx], train.delta[idx],
                grid, cfg.lambda_shrink,
            )
            params = adam_step(state, params, grad, cfg.learning_rate)
            set_params(net, params)
            losses.append(loss)

        val_nll = full_grid_nll(net, scaler, val, grid)
        if not np.isfinite(val_nll):
            raise RuntimeError(
                f"validation objective became non-finite at epoch {epoch}"
            )
        result.log.append({
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_nll": val_nll,
            "refit": refit_flag,
        })
        result.epochs_run = epoch

        if val_nll < result.best_val_nll:
            result.best_val_nll = val_nll
            result.best_epoch = epoch
            result.net = copy_network(net)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return result


def sample_configs(n: int, seed: int, base: TrainConfig) -> list[TrainConfig]:
    """Random-search helper over the tunable ranges: log-uniform learning rate
    in [1e-4, 1e-1], shrink weight uniform in [0, 1e-3], refit period from
    {5, 10, 15, 20}. Everything else is inherited from `base`."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        out.append(TrainConfig(
            learning_rate=float(10 ** rng.uniform(-4, -1)),
            batch_size=base.batch_size,
            patience=base.patience,
            max_epochs=base.max_epochs,
            grid_update=int(rng.choice([5, 10, 15, 20])),
            grid_eps=base.grid_eps,
            lambda_shrink=float(rng.uniform(0.0, 1e-3)),
            seed=base.seed,
        ))
    return out
