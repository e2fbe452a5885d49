"""FastAPI app serving forecasts from one run directory and its dataset.

Checkpoints are loaded once at startup and treated as read-only, so
concurrent requests share them safely.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException

from ..datagen import Dataset, _mu_vector
from ..errors import ContractError, DivergenceError
from ..runs import checkpoint_hashes, load_forecaster
from .schemas import EncodeRequest, EncodeResponse, ForecastRequest, ForecastResponse, Health, ModelInfo


def _array(rows, name: str, cols: int | None = None) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or (cols is not None and arr.shape[1] != cols):
        raise HTTPException(422, f"{name} must be a 2-D array" + (f" with {cols} columns" if cols else ""))
    return arr


def create_app(run_dir: str | Path, data_dir: str | Path) -> FastAPI:
    dataset = Dataset.load(data_dir)
    forecaster = load_forecaster(run_dir, dataset)
    hashes = checkpoint_hashes(run_dir)
    app = FastAPI(title="latrom forecast service")

    @app.get("/health", response_model=Health)
    def health():
        return Health()

    @app.get("/info", response_model=ModelInfo)
    def info():
        return ModelInfo(
            generator=dataset.generator,
            field_names=list(dataset.field_names),
            param_names=list(dataset.param_names),
            bounds=[tuple(b) for b in dataset.stats.bounds],
            times=dataset.times.tolist(),
            n_points=dataset.n_points,
            latent_dim=forecaster.decoder.config.latent_dim,
            has_ar_baseline=forecaster.ar is not None,
            checkpoint_hashes=hashes,
        )

    @app.post("/encode", response_model=EncodeResponse)
    def encode(req: EncodeRequest):
        coords = dataset.coords if req.coords is None else _array(req.coords, "coords", dataset.in_dim)
        values = _array(req.values, "values", dataset.n_fields)
        if values.shape[0] != coords.shape[0]:
            raise HTTPException(422, "values and coords disagree on the number of points")
        try:
            return EncodeResponse(latent=forecaster.encode(coords, values).tolist())
        except (ContractError, DivergenceError) as exc:
            raise HTTPException(422, str(exc)) from None

    @app.post("/forecast", response_model=ForecastResponse)
    def forecast(req: ForecastRequest):
        t0 = time.perf_counter()
        try:
            mu = _mu_vector(req.mu, dataset.param_names)
            times = dataset.times if req.times is None else np.asarray(req.times, dtype=np.float64)
            coords = dataset.coords if req.coords is None else _array(req.coords, "coords", dataset.in_dim)
            if req.latent is not None:
                alpha0 = np.asarray(req.latent, dtype=np.float64)
            elif req.traj_id is not None:
                if not 0 <= req.traj_id < dataset.n_traj:
                    raise HTTPException(404, f"no trajectory {req.traj_id}")
                alpha0 = forecaster.encode(dataset.coords, dataset.fields[req.traj_id, 0])
            elif req.u0 is not None:
                u0_coords = dataset.coords if req.u0_coords is None else _array(req.u0_coords, "u0_coords", dataset.in_dim)
                alpha0 = forecaster.encode(u0_coords, _array(req.u0, "u0", dataset.n_fields))
            else:
                raise HTTPException(422, "give one of latent, traj_id or u0")
            path = forecaster.latent_path(alpha0, mu, times)
            values = forecaster.decode_path(path, coords)
        except (ContractError, DivergenceError) as exc:
            raise HTTPException(422, str(exc)) from None
        return ForecastResponse(
            times=np.asarray(times).tolist(),
            field_names=list(dataset.field_names),
            shape=list(values.shape),
            values=values.tolist(),
            latent0=np.asarray(alpha0).tolist(),
            seconds=time.perf_counter() - t0,
        )

    return app
