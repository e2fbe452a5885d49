from __future__ import annotations

from pydantic import BaseModel, Field


class Health(BaseModel):
    status: str = "ok"


class ModelInfo(BaseModel):
    generator: str
    field_names: list[str]
    param_names: list[str]
    bounds: list[tuple[float, float]]
    times: list[float]
    n_points: int
    latent_dim: int
    has_ar_baseline: bool
    checkpoint_hashes: dict[str, str]


class EncodeRequest(BaseModel):
    values: list[list[float]] = Field(description="initial snapshot, N x F, physical units")
    coords: list[list[float]] | None = Field(default=None, description="N x in_dim; default is the dataset mesh")


class EncodeResponse(BaseModel):
    latent: list[float]


class ForecastRequest(BaseModel):
    mu: list[float] | dict[str, float]
    times: list[float] | None = Field(default=None, description="normalized times >= 0; default is the dataset grid")
    traj_id: int | None = Field(default=None, description="take the initial snapshot from this dataset trajectory")
    u0: list[list[float]] | None = Field(default=None, description="initial snapshot on u0_coords (or the mesh)")
    u0_coords: list[list[float]] | None = None
    latent: list[float] | None = Field(default=None, description="skip encoding and start from this code")
    coords: list[list[float]] | None = Field(default=None, description="query coordinates; default is the mesh")


class ForecastResponse(BaseModel):
    times: list[float]
    field_names: list[str]
    shape: list[int]
    values: list[list[list[float]]]
    latent0: list[float]
    seconds: float
