"""Command-line front end.

Subcommands cover the full workflow: cohort synthesis, fitting on a CSV,
curve prediction, held-out scoring, the error-decay study, and the
multi-split benchmark. Configuration files are JSON and validated strictly
(unknown keys are rejected so typos fail loudly); the schema is documented
in the README. Long runs honour the KANSURV_WORKERS environment variable
for process-pool sizing.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .bench import (
    ModelConfig,
    benchmark_run,
    fit_once,
    load_csv,
    median_event_time,
    predict_on_grid,
    rate_study,
)
from .kan import load_model, save_model
from .metrics import MetricReport, c_td, dcal, ibs, ici_at, ise_survival
from .simgen import (
    dataset_to_csv,
    dgp_spec,
    generate,
    sample_manifest,
    truth_from_csv,
    truth_to_csv,
)
from .survival import TimeGrid, bin_index
from .train import TrainConfig

SURV_COL_PREFIX = "s@"


def _read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise click.ClickException(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise click.ClickException(f"{path}: expected a JSON object")
    return doc


def _pick(doc: dict, allowed: dict, label: str) -> dict:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise click.ClickException(f"unknown {label} keys: {unknown}")
    return {key: convert(doc[key]) for key, convert in allowed.items()
            if key in doc}


def model_config_from(doc: dict) -> ModelConfig:
    allowed = {
        "hidden": lambda v: tuple(int(w) for w in v),
        "degree": int,
        "n_interior": int,
        "n_bins": int,
        "noise_scale": float,
        "knot_range": lambda v: (float(v[0]), float(v[1])),
    }
    return ModelConfig(**_pick(doc, allowed, "model"))


def train_config_from(doc: dict) -> TrainConfig:
    allowed = {
        "learning_rate": float,
        "batch_size": int,
        "max_epochs": int,
        "patience": int,
        "grid_update": lambda v: v if v in (None, "init") else int(v),
        "grid_eps": float,
        "lambda_shrink": float,
        "seed": int,
    }
    picked = _pick(doc, allowed, "train")
    picked.setdefault("learning_rate", 0.02)
    return TrainConfig(**picked)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@click.group()
def main() -> None:
    """Spline-network hazard regression toolkit."""
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--dgp", type=click.IntRange(1, 4), required=True,
              help="Synthetic process id.")
@click.option("--n", type=click.IntRange(min=16), required=True,
              help="Number of subjects.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Output directory.")
@click.option("--lam-c", type=float, default=None,
              help="Censoring rate parameter; calibrated to 30% censoring "
                   "when omitted.")
def simulate(dgp: int, n: int, seed: int, out: str, lam_c: float | None) -> None:
    """Draw one synthetic cohort: dataset.csv, truth.csv, manifest.json."""
    spec = dgp_spec(dgp)
    sample = generate(spec, n, seed, lam_c=lam_c)
    os.makedirs(out, exist_ok=True)
    dataset_to_csv(sample.data, os.path.join(out, "dataset.csv"))
    truth_to_csv(sample.truth, os.path.join(out, "truth.csv"))
    _write_json(os.path.join(out, "manifest.json"),
                sample_manifest(spec, seed, sample))
    click.echo(f"wrote {sample.data.n} subjects to {out} "
               f"(censoring rate {sample.censor_rate:.3f})")


@main.command()
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON with optional model/train/mode/split_seed keys.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def fit(data_path: str, config_path: str, out: str) -> None:
    """Fit one model on a CSV and save it with its fit report."""
    doc = _read_json(config_path)
    top = _pick(doc, {"model": dict, "train": dict, "mode": str,
                      "split_seed": int}, "config")
    data = load_csv(data_path)
    model_cfg = model_config_from(top.get("model", {}))
    train_cfg = train_config_from(top.get("train", {}))
    mode = top.get("mode", "benchmark")
    split_seed = top.get("split_seed", 0)
    fitted = fit_once(data, model_cfg, train_cfg, mode, split_seed)
    os.makedirs(out, exist_ok=True)
    report = {
        "mode": mode,
        "split_seed": split_seed,
        "n_train": int(fitted.plan.train.size),
        "n_val": int(fitted.plan.val.size),
        "n_test": int(fitted.plan.test.size),
        "best_epoch": fitted.result.best_epoch,
        "best_val_nll": fitted.result.best_val_nll,
        "epochs_run": fitted.result.epochs_run,
    }
    save_model(os.path.join(out, "model.json"), fitted.net, fitted.scaler,
               time_grid=fitted.grid.taus, meta=report)
    _write_json(os.path.join(out, "fit_report.json"), report)
    click.echo(f"best validation loss {fitted.result.best_val_nll:.4f} at "
               f"epoch {fitted.result.best_epoch}; model saved to {out}")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "n_bins", type=click.IntRange(min=1), default=32,
              show_default=True,
              help="Number of uniform time bins on [0, 1]; curves are "
                   "emitted at the bin edges.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              default=None, help="Write curves here instead of stdout.")
def predict(model_path: str, data_path: str, n_bins: int,
            out_path: str | None) -> None:
    """Survival curves for each CSV row on a uniform time grid."""
    net, scaler, _stored_grid, _meta = load_model(model_path)
    frame = pd.read_csv(data_path).dropna()
    feature_cols = [c for c in frame.columns if c not in ("time", "event")]
    if not feature_cols:
        raise click.ClickException("no feature columns found")
    x = frame[feature_cols].to_numpy(dtype=float)
    taus = np.linspace(0.0, 1.0, n_bins + 1)
    curves = predict_on_grid(net, scaler, x, taus)
    out = pd.DataFrame(curves.survival,
                       columns=[f"{SURV_COL_PREFIX}{t:.12g}" for t in taus])
    out.insert(0, "subject", np.arange(x.shape[0]))
    text = out.to_csv(index=False)
    if out_path is None:
        click.echo(text, nl=False)
    else:
        Path(out_path).write_text(text)
        click.echo(f"wrote {x.shape[0]} curves to {out_path}")


def _curves_from_csv(path):
    frame = pd.read_csv(path)
    cols = [c for c in frame.columns if c.startswith(SURV_COL_PREFIX)]
    if not cols:
        raise click.ClickException(
            f"{path}: no {SURV_COL_PREFIX}<time> columns found")
    taus = np.array([float(c[len(SURV_COL_PREFIX):]) for c in cols])
    return taus, frame[cols].to_numpy(dtype=float)


@main.command()
@click.option("--pred", "pred_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Curves CSV as written by `predict`.")
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="True survival curves; adds integrated squared error.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False),
              default=None, help="Write the report here as well.")
def evaluate(pred_path: str, data_path: str, truth_path: str | None,
             out_path: str | None) -> None:
    """Score prediction curves against observed outcomes."""
    taus, surv = _curves_from_csv(pred_path)
    data = load_csv(data_path)
    if surv.shape[0] != data.n:
        raise click.ClickException(
            f"{surv.shape[0]} curves for {data.n} subjects")
    grid = TimeGrid(taus)
    rows = np.arange(data.n)
    cols = bin_index(grid, data.y)
    s_at_obs = surv[rows, cols]
    t_star = median_event_time(data)
    t_col = bin_index(grid, t_star)
    stat, p = dcal(s_at_obs, data.delta)

    # the held-out likelihood needs the log-hazard back from the curves:
    # cumulative hazard increments divided by bin widths, floored away from 0
    cum = -np.log(np.clip(surv, 1e-300, None))
    g = np.log(np.maximum(np.diff(cum, axis=1) / np.diff(taus), 1e-300))
    event_col = np.maximum(cols, 1) - 1
    nll = float(np.mean(cum[rows, cols] - data.delta * g[rows, event_col]))

    ise = None
    if truth_path is not None:
        truth = truth_from_csv(truth_path)
        if truth.survival.shape[0] != data.n:
            raise click.ClickException(
                f"truth has {truth.survival.shape[0]} rows for {data.n} "
                "subjects")
        # cumulative hazard is piecewise linear between grid nodes
        cum_at = np.stack([np.interp(truth.times, taus, row) for row in cum])
        ise = ise_survival(np.exp(-cum_at), truth.survival, truth.times)

    report = MetricReport(
        c_td=c_td(surv, data.y, data.delta, grid),
        ibs=ibs(surv, data.y, data.delta, grid),
        ici_median=ici_at(t_star, surv[:, t_col], data.y, data.delta),
        dcal_stat=stat,
        dcal_p=p,
        nll_test=nll,
        ise_s=ise,
        metadata={"t_star": t_star, "n": data.n, "grid_bins": taus.size - 1},
    )
    text = report.to_json()
    click.echo(text)
    if out_path is not None:
        Path(out_path).write_text(text + "\n")


@main.command("rate-study")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON describing processes, sample sizes, and replicates.")
def rate_study_cmd(config_path: str) -> None:
    """Run the error-decay experiment described by a JSON config."""
    doc = _read_json(config_path)
    allowed = {
        "dgp_ids": lambda v: [int(d) for d in v],
        "ns": lambda v: [int(n) for n in v],
        "n_replicates": int,
        "archs_by_dgp": lambda v: {int(k): tuple(a) for k, a in v.items()},
        "model": dict,
        "train": dict,
        "lam_c_by_dgp": lambda v: {int(k): float(c) for k, c in v.items()},
        "out_dir": str,
        "adapt_knots": bool,
    }
    top = _pick(doc, allowed, "rate-study")
    for key in ("dgp_ids", "ns"):
        if key not in top:
            raise click.ClickException(f"config needs {key!r}")
    result = rate_study(
        top["dgp_ids"], top["ns"], top.get("n_replicates", 10),
        archs_by_dgp=top.get("archs_by_dgp"),
        model_cfg=model_config_from(top["model"]) if "model" in top else None,
        train_cfg=train_config_from(top["train"]) if "train" in top else None,
        lam_c_by_dgp=top.get("lam_c_by_dgp"),
        out_dir=top.get("out_dir"),
        adapt_knots=top.get("adapt_knots", True),
    )
    n_failed = int((result.rows["error"] != "").sum())
    click.echo(f"{len(result.rows)} replicates, {n_failed} failed")
    for (did, arch), slopes in sorted(result.slopes.items()):
        click.echo(f"dgp {did} {arch}: slope {slopes['slope_head']:+.3f} "
                   f"over the largest sizes ({slopes['slope_all']:+.3f} over "
                   "all)")
    if "out_dir" in top:
        click.echo(f"wrote tables to {top['out_dir']}")


@main.command()
@click.option("--data", "data_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON with optional model/train/seeds keys.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def benchmark(data_path: str, config_path: str, out: str) -> None:
    """Multi-split protocol: fit and score one model per split seed."""
    doc = _read_json(config_path)
    top = _pick(doc, {"model": dict, "train": dict,
                      "seeds": lambda v: [int(s) for s in v]}, "config")
    data = load_csv(data_path)
    reports = benchmark_run(
        data,
        model_config_from(top.get("model", {})),
        train_config_from(top.get("train", {})),
        seeds=top.get("seeds", range(10)),
    )
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "reports.json"),
                [json.loads(r.to_json()) for r in reports])
    summary = {
        name: {"mean": float(np.mean([getattr(r, name) for r in reports])),
               "sd": float(np.std([getattr(r, name) for r in reports]))}
        for name in ("c_td", "ibs", "ici_median", "dcal_p")
    }
    summary["dcal_pass_count"] = int(sum(r.dcal_p > 0.05 for r in reports))
    summary["n_splits"] = len(reports)
    _write_json(os.path.join(out, "summary.json"), summary)
    click.echo(f"{len(reports)} splits: mean c_td "
               f"{summary['c_td']['mean']:.3f}, mean ibs "
               f"{summary['ibs']['mean']:.3f}, calibration passes "
               f"{summary['dcal_pass_count']}/{len(reports)}")


if __name__ == "__main__":
    main()
