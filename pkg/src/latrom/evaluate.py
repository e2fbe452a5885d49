"""Forecast metrics, error-over-time curves and inference timing.

All metrics are computed in physical (denormalized) units. Aggregate numbers
are computed per trajectory over forecast steps 1..H and then averaged over
trajectories; step 0 is the auto-decoded initial condition and appears only
in the per-step curve.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .datagen import Dataset
from .errors import ContractError, DimensionError
from .training import Forecaster

AGGREGATION = "per-trajectory metric over forecast steps 1..H, then mean over trajectories"
CURVE_HEADER = ("step", "model", "field", "mse", "rel_l2")


def metric_mse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"metric_mse: shapes {pred.shape} and {truth.shape} differ")
    return ad.mse(pred, truth).item()


def metric_rel_l2(pred, truth) -> float:
    """||pred - truth||_2 / ||truth||_2 over the whole block."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"metric_rel_l2: shapes {pred.shape} and {truth.shape} differ")
    denom = np.linalg.norm(truth.reshape(-1))
    if denom < 1e-12:
        raise ContractError("relative L2 is undefined for an all-zero reference field")
    return float(np.linalg.norm((pred - truth).reshape(-1)) / denom)


@dataclass
class ModelPredictions:
    """Predictions ``n_traj x T x N x F`` for one model over a split."""

    name: str
    values: np.ndarray


@dataclass
class EvalReport:
    field_names: list[str]
    horizon: int
    traj_ids: list[int]
    metrics: dict[str, dict[str, dict[str, float]]]  # model -> field -> {mse, rel_l2}
    curves: list[dict]
    inference_seconds: float | None = None
    hashes: dict[str, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "aggregation": AGGREGATION,
            "units": "physical",
            "field_names": self.field_names,
            "horizon": self.horizon,
            "traj_ids": self.traj_ids,
            "metrics": self.metrics,
            "inference_seconds_per_trajectory": self.inference_seconds,
            "hashes": self.hashes,
            "config": self.config,
        }

    def curve_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for row in self.curves:
            writer.writerow([row["step"], row["model"], row["field"], repr(row["mse"]), repr(row["rel_l2"])])
        return buf.getvalue()

    def curve(self, model: str, field_name: str, key: str = "mse") -> np.ndarray:
        rows = [r for r in self.curves if r["model"] == model and r["field"] == field_name]
        return np.array([r[key] for r in sorted(rows, key=lambda r: r["step"])])


def block_metrics(pred: np.ndarray, truth: np.ndarray, field_names: Sequence[str]) -> dict[str, dict[str, float]]:
    """Aggregate metrics for ``n_traj x T x N x F`` blocks (steps already sliced)."""
    out = {}
    for f, name in enumerate(field_names):
        mses = [metric_mse(p[..., f], t[..., f]) for p, t in zip(pred, truth)]
        rels = [metric_rel_l2(p[..., f], t[..., f]) for p, t in zip(pred, truth)]
        out[name] = {"mse": float(np.mean(mses)), "rel_l2": float(np.mean(rels))}
    return out


def curve_rows(model: str, pred: np.ndarray, truth: np.ndarray, field_names: Sequence[str]) -> list[dict]:
    rows = []
    for step in range(pred.shape[1]):
        for f, name in enumerate(field_names):
            mses = [metric_mse(p[step, ..., f], t[step, ..., f]) for p, t in zip(pred, truth)]
            rels = [metric_rel_l2(p[step, ..., f], t[step, ..., f]) for p, t in zip(pred, truth)]
            rows.append(
                {"step": step, "model": model, "field": name, "mse": float(np.mean(mses)), "rel_l2": float(np.mean(rels))}
            )
    return rows


def predict_split(
    forecaster: Forecaster, dataset: Dataset, traj_ids: Sequence[int]
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Truth and per-model predictions on the dataset mesh at every snapshot."""
    coords, times = dataset.coords, dataset.times
    preds: dict[str, list[np.ndarray]] = {"pnode": [], "persistence": []}
    if forecaster.ar is not None:
        preds["ar_baseline"] = []
    for tid in traj_ids:
        mu = dataset.mus[tid]
        alpha0 = forecaster.encode(coords, dataset.fields[tid, 0])
        path = forecaster.latent_path(alpha0, mu, times)
        preds["pnode"].append(forecaster.decode_path(path, coords))
        frozen = np.repeat(alpha0[None], len(times), axis=0)
        preds["persistence"].append(forecaster.decode_path(frozen, coords))
        if forecaster.ar is not None:
            preds["ar_baseline"].append(forecaster.ar_forecast(alpha0, mu, len(times) - 1, coords))
    truth = dataset.fields[list(traj_ids)]
    return truth, {k: np.stack(v) for k, v in preds.items()}


def error_over_time(forecaster: Forecaster, dataset: Dataset, split: str = "test") -> list[dict]:
    ids = dataset.split(split)
    truth, preds = predict_split(forecaster, dataset, ids)
    rows = []
    for name, values in preds.items():
        rows.extend(curve_rows(name, values, truth, dataset.field_names))
    return rows


def median_seconds(fn: Callable[[], object], repeats: int, warmup: bool = True) -> float:
    if repeats < 1:
        raise ContractError(f"repeats must be >= 1, got {repeats}")
    if warmup:
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def time_inference(forecaster: Forecaster, dataset: Dataset, traj_id: int, repeats: int = 3) -> float:
    """Median wall-clock of encode + integrate + decode over the full horizon and mesh."""
    coords, u0, mu = dataset.coords, dataset.fields[traj_id, 0], dataset.mus[traj_id]
    return median_seconds(lambda: forecaster.forecast(coords, u0, mu, dataset.times), repeats)


def evaluate(
    forecaster: Forecaster,
    dataset: Dataset,
    split: str = "test",
    timing_repeats: int = 0,
    hashes: dict[str, str] | None = None,
    config: dict | None = None,
) -> EvalReport:
    ids = dataset.split(split)
    if not ids:
        raise ContractError(f"split {split!r} is empty")
    truth, preds = predict_split(forecaster, dataset, ids)
    metrics = {name: block_metrics(v[:, 1:], truth[:, 1:], dataset.field_names) for name, v in preds.items()}
    curves = []
    for name, values in preds.items():
        curves.extend(curve_rows(name, values, truth, dataset.field_names))
    seconds = time_inference(forecaster, dataset, ids[0], timing_repeats) if timing_repeats else None
    return EvalReport(
        field_names=list(dataset.field_names),
        horizon=dataset.n_times - 1,
        traj_ids=ids,
        metrics=metrics,
        curves=curves,
        inference_seconds=seconds,
        hashes=dict(hashes or {}),
        config=dict(config or {}),
    )
