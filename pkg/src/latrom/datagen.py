"""Synthetic parameterized flows on unstructured point sets, with exact oracles.

Two generator families are provided:

``diffusion``
    Advection-diffusion on the periodic unit square. Every Fourier mode of a
    seeded initial field decays and translates in closed form, so the field is
    known exactly at any (t, x). Parameters: ``kappa, cx, cy``.

``gyre``
    The time-periodic double gyre on ``[0, 2] x [0, 1]``. Fields are the two
    velocity components derived analytically from the stream function.
    Parameters: ``A, eps, omega``.

A dataset on disk is a directory holding ``manifest.json`` plus flat
little-endian float64 blobs: ``coords.bin``, ``times.bin`` and one
``fields_<id>.bin`` per trajectory (shape ``n_times x n_points x n_fields``).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, FormatError

SCHEMA_VERSION = 1
_LE_F64 = np.dtype("<f8")


# ---------------------------------------------------------------- mesh


@dataclass
class Mesh:
    points: np.ndarray
    bounds: tuple[tuple[float, float], ...]
    seed: int

    @property
    def in_dim(self) -> int:
        return len(self.bounds)


def _volume(bounds) -> float:
    return float(np.prod([hi - lo for lo, hi in bounds]))


def distance_floor(n_points: int, bounds) -> float:
    d = len(bounds)
    return 0.2 * (_volume(bounds) / n_points) ** (1.0 / d)


def gen_mesh(n_points: int, bounds: Sequence[Sequence[float]], seed: int) -> Mesh:
    """Seeded random points with a minimum pairwise spacing (rejection sampling)."""
    if n_points < 1:
        raise ContractError(f"n_points must be >= 1, got {n_points}")
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if np.any(hi <= lo):
        raise ContractError(f"degenerate bounds {bounds}")
    floor = distance_floor(n_points, bounds)
    rng = np.random.default_rng(seed)
    pts = np.empty((n_points, len(bounds)))
    count = 0
    max_attempts = 10_000 * n_points
    attempts = 0
    while count < n_points:
        if attempts >= max_attempts:
            raise ContractError(
                f"could not place {n_points} points with spacing {floor:.3g} after "
                f"{max_attempts} attempts; request fewer points"
            )
        # propose in blocks to keep the python loop short
        cand = lo + (hi - lo) * rng.random((256, len(bounds)))
        for c in cand:
            attempts += 1
            if count and np.min(np.sum((pts[:count] - c) ** 2, axis=1)) < floor * floor:
                continue
            pts[count] = c
            count += 1
            if count == n_points:
                break
    return Mesh(pts, bounds, seed)


# ---------------------------------------------------------------- oracles

DIFFUSION_BOUNDS = ((0.0, 1.0), (0.0, 1.0))
GYRE_BOUNDS = ((0.0, 2.0), (0.0, 1.0))
DIFFUSION_PARAMS = ("kappa", "cx", "cy")
GYRE_PARAMS = ("A", "eps", "omega")


def _mu_vector(mu, names: Sequence[str]) -> np.ndarray:
    if isinstance(mu, Mapping):
        if set(mu) != set(names):
            raise ContractError(f"expected parameters {tuple(names)}, got {tuple(mu)}")
        return np.array([float(mu[n]) for n in names])
    arr = np.asarray(mu, dtype=np.float64).reshape(-1)
    if arr.size != len(names):
        raise ContractError(f"expected {len(names)} parameters {tuple(names)}, got {arr.size}")
    return arr


@dataclass
class DiffusionIC:
    """Initial field sum_{m,n<=3} a sin(2 pi m x + phi) sin(2 pi n y + psi)."""

    amp: np.ndarray  # (3, 3)
    phase_x: np.ndarray
    phase_y: np.ndarray

    @classmethod
    def from_seed(cls, seed: int) -> "DiffusionIC":
        rng = np.random.default_rng(seed)
        m = np.arange(1, 4)[:, None]
        n = np.arange(1, 4)[None, :]
        amp = rng.uniform(-1.0, 1.0, (3, 3)) * 2.0 / (m**2 + n**2)
        return cls(amp, rng.uniform(0, 2 * np.pi, (3, 3)), rng.uniform(0, 2 * np.pi, (3, 3)))

    def to_dict(self) -> dict:
        return {
            "amp": self.amp.tolist(),
            "phase_x": self.phase_x.tolist(),
            "phase_y": self.phase_y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiffusionIC":
        return cls(*(np.array(d[k], dtype=np.float64) for k in ("amp", "phase_x", "phase_y")))


def eval_diffusion_truth(mu, t: float, coords: np.ndarray, ic: DiffusionIC) -> np.ndarray:
    """Exact solution of u_t = kappa lap(u) - c . grad(u) on the periodic unit square.

    Returns an ``(N, 1)`` array.
    """
    kappa, cx, cy = _mu_vector(mu, DIFFUSION_PARAMS)
    coords = np.asarray(coords, dtype=np.float64)
    x = coords[:, 0] - cx * t
    y = coords[:, 1] - cy * t
    out = np.zeros(coords.shape[0])
    for i in range(3):
        m = i + 1
        sx = np.sin(2 * np.pi * m * x[:, None] + ic.phase_x[i][None, :])  # (N, 3) over n
        for j in range(3):
            n = j + 1
            decay = math.exp(-4 * np.pi**2 * kappa * (m * m + n * n) * t)
            out += ic.amp[i, j] * decay * sx[:, j] * np.sin(2 * np.pi * n * y + ic.phase_y[i, j])
    return out[:, None]


def gyre_stream(mu, t: float, coords: np.ndarray) -> np.ndarray:
    A, eps, omega = _mu_vector(mu, GYRE_PARAMS)
    x, y = coords[:, 0], coords[:, 1]
    a = eps * np.sin(omega * t)
    b = 1.0 - 2.0 * a
    return A * np.sin(np.pi * (a * x * x + b * x)) * np.sin(np.pi * y)


def eval_gyre_truth(mu, t: float, coords: np.ndarray) -> np.ndarray:
    """Double-gyre velocity (u, v) = (-d psi/dy, d psi/dx); returns ``(N, 2)``."""
    A, eps, omega = _mu_vector(mu, GYRE_PARAMS)
    if not 0.0 <= eps <= 0.5:
        raise ContractError(f"gyre eps must lie in [0, 0.5], got {eps}")
    coords = np.asarray(coords, dtype=np.float64)
    x, y = coords[:, 0], coords[:, 1]
    a = eps * np.sin(omega * t)
    b = 1.0 - 2.0 * a
    f = a * x * x + b * x
    dfdx = 2.0 * a * x + b
    u = -np.pi * A * np.sin(np.pi * f) * np.cos(np.pi * y)
    v = np.pi * A * np.cos(np.pi * f) * np.sin(np.pi * y) * dfdx
    return np.stack([u, v], axis=1)


@dataclass
class Oracle:
    """Closed-form field evaluator for one generator configuration.

    ``t`` is normalized time in [0, 1]; it is scaled by ``t_end`` internally.
    """

    generator: str
    t_end: float
    ic: DiffusionIC | None = None

    @property
    def param_names(self) -> tuple[str, ...]:
        return DIFFUSION_PARAMS if self.generator == "diffusion" else GYRE_PARAMS

    @property
    def field_names(self) -> tuple[str, ...]:
        return ("u",) if self.generator == "diffusion" else ("u", "v")

    @property
    def bounds(self):
        return DIFFUSION_BOUNDS if self.generator == "diffusion" else GYRE_BOUNDS

    def __call__(self, mu, t: float, coords: np.ndarray) -> np.ndarray:
        if t < 0:
            raise ContractError(f"time must be non-negative, got {t}")
        if self.generator == "diffusion":
            return eval_diffusion_truth(mu, t * self.t_end, coords, self.ic)
        return eval_gyre_truth(mu, t * self.t_end, coords)

    def trajectory(self, mu, times: Sequence[float], coords: np.ndarray) -> np.ndarray:
        return np.stack([self(mu, float(t), coords) for t in times])


# ---------------------------------------------------------------- dataset

DEFAULT_RANGES = {
    "diffusion": {"kappa": (5e-4, 5e-3), "cx": (-0.3, 0.3), "cy": (-0.3, 0.3)},
    "gyre": {"A": (0.05, 0.2), "eps": (0.1, 0.3), "omega": (math.pi / 10, math.pi / 2)},
}
DEFAULT_T_END = {"diffusion": 1.0, "gyre": 10.0}


@dataclass
class Stats:
    field_mean: np.ndarray
    field_std: np.ndarray
    mu_min: np.ndarray
    mu_max: np.ndarray
    bounds: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        return {
            "field_mean": self.field_mean.tolist(),
            "field_std": self.field_std.tolist(),
            "mu_min": self.mu_min.tolist(),
            "mu_max": self.mu_max.tolist(),
            "bounds": [list(b) for b in self.bounds],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Stats":
        return cls(
            np.array(d["field_mean"], dtype=np.float64),
            np.array(d["field_std"], dtype=np.float64),
            np.array(d["mu_min"], dtype=np.float64),
            np.array(d["mu_max"], dtype=np.float64),
            tuple((float(lo), float(hi)) for lo, hi in d["bounds"]),
        )


@dataclass
class Dataset:
    coords: np.ndarray  # (N, in_dim), physical
    times: np.ndarray  # (T,), normalized to [0, 1]
    mus: np.ndarray  # (n_traj, d), physical
    fields: np.ndarray  # (n_traj, T, N, F), physical
    splits: dict[str, list[int]]
    stats: Stats
    generator: str
    config: dict = field(default_factory=dict)
    field_names: tuple[str, ...] = ("u",)
    param_names: tuple[str, ...] = ()

    @property
    def n_traj(self) -> int:
        return self.fields.shape[0]

    @property
    def n_times(self) -> int:
        return self.fields.shape[1]

    @property
    def n_points(self) -> int:
        return self.fields.shape[2]

    @property
    def n_fields(self) -> int:
        return self.fields.shape[3]

    @property
    def in_dim(self) -> int:
        return self.coords.shape[1]

    def oracle(self) -> Oracle:
        ic = DiffusionIC.from_dict(self.config["ic"]) if self.generator == "diffusion" else None
        return Oracle(self.generator, float(self.config["t_end"]), ic)

    def split(self, name: str) -> list[int]:
        if name not in self.splits:
            raise ContractError(f"unknown split {name!r}; have {sorted(self.splits)}")
        return list(self.splits[name])

    # ------------------------------------------------------------ disk format

    def _manifest_body(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "generator": self.generator,
            "config": self.config,
            "n_traj": self.n_traj,
            "n_times": self.n_times,
            "n_points": self.n_points,
            "in_dim": self.in_dim,
            "n_fields": self.n_fields,
            "field_names": list(self.field_names),
            "param_names": list(self.param_names),
            "splits": {k: list(v) for k, v in self.splits.items()},
            "mu_table": self.mus.tolist(),
            "stats": self.stats.to_dict(),
        }

    def _blobs(self) -> list[tuple[str, bytes]]:
        blobs = [
            ("coords.bin", np.ascontiguousarray(self.coords, dtype=_LE_F64).tobytes()),
            ("times.bin", np.ascontiguousarray(self.times, dtype=_LE_F64).tobytes()),
        ]
        for i in range(self.n_traj):
            blobs.append((_field_file(i), np.ascontiguousarray(self.fields[i], dtype=_LE_F64).tobytes()))
        return blobs

    def content_hash(self) -> str:
        return _content_hash(self._manifest_body(), self._blobs())

    def save(self, directory: str | Path) -> str:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        body = self._manifest_body()
        blobs = self._blobs()
        digest = _content_hash(body, blobs)
        for name, raw in blobs:
            (directory / name).write_bytes(raw)
        manifest = dict(body, content_hash=digest)
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return digest

    @classmethod
    def load(cls, directory: str | Path) -> "Dataset":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / "manifest.json").read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{directory}/manifest.json is not valid JSON: {exc}") from None
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise FormatError(f"unsupported dataset schema {manifest.get('schema_version')!r}")
        n_traj, n_times = manifest["n_traj"], manifest["n_times"]
        n_points, in_dim, n_fields = manifest["n_points"], manifest["in_dim"], manifest["n_fields"]
        coords = _read_blob(directory / "coords.bin", (n_points, in_dim))
        times = _read_blob(directory / "times.bin", (n_times,))
        fields = np.stack(
            [_read_blob(directory / _field_file(i), (n_times, n_points, n_fields)) for i in range(n_traj)]
        )
        mus = np.array(manifest["mu_table"], dtype=np.float64).reshape(n_traj, -1)
        ds = cls(
            coords=coords,
            times=times,
            mus=mus,
            fields=fields,
            splits={k: [int(i) for i in v] for k, v in manifest["splits"].items()},
            stats=Stats.from_dict(manifest["stats"]),
            generator=manifest["generator"],
            config=manifest["config"],
            field_names=tuple(manifest["field_names"]),
            param_names=tuple(manifest["param_names"]),
        )
        expected = manifest.get("content_hash")
        if expected is not None and ds.content_hash() != expected:
            raise FormatError(f"{directory}: content hash mismatch")
        return ds


def _field_file(i: int) -> str:
    return f"fields_{i:04d}.bin"


def _content_hash(body: dict, blobs: list[tuple[str, bytes]]) -> str:
    h = hashlib.sha256(json.dumps(body, sort_keys=True).encode())
    for name, raw in blobs:
        h.update(name.encode())
        h.update(raw)
    return h.hexdigest()


def _read_blob(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    raw = path.read_bytes()
    expected = 8 * int(np.prod(shape))
    if len(raw) != expected:
        raise FormatError(f"{path.name}: expected {expected} bytes for shape {shape}, found {len(raw)}")
    return np.frombuffer(raw, dtype=_LE_F64).astype(np.float64).reshape(shape)


def default_splits(n_traj: int) -> tuple[int, int, int]:
    n_hold = n_traj // 8
    return n_traj - 2 * n_hold, n_hold, n_hold


def compute_stats(fields: np.ndarray, mus: np.ndarray, train: Sequence[int], bounds) -> Stats:
    train = list(train)
    block = fields[train]
    F = fields.shape[-1]
    flat = block.reshape(-1, F)
    return Stats(
        field_mean=flat.mean(axis=0),
        field_std=flat.std(axis=0),
        mu_min=mus[train].min(axis=0),
        mu_max=mus[train].max(axis=0),
        bounds=tuple(bounds),
    )


def generate_dataset(
    generator: str = "diffusion",
    n_points: int = 512,
    n_traj: int = 32,
    n_times: int = 30,
    mu_ranges: Mapping[str, Sequence[float]] | None = None,
    seed: int = 0,
    splits: Sequence[int] | None = None,
    t_end: float | None = None,
) -> Dataset:
    """Sample a mesh, per-trajectory parameters and exact field snapshots."""
    if generator not in DEFAULT_RANGES:
        raise ContractError(f"unknown generator {generator!r}; choose from {sorted(DEFAULT_RANGES)}")
    if n_traj < 1 or n_times < 1:
        raise ContractError("n_traj and n_times must be >= 1")
    ranges = dict(DEFAULT_RANGES[generator])
    for k, v in (mu_ranges or {}).items():
        if k not in ranges:
            raise ContractError(f"unknown parameter {k!r} for generator {generator!r}")
        ranges[k] = tuple(v)
    for k, (lo, hi) in ranges.items():
        if lo > hi:
            raise ContractError(f"range for {k} is empty: [{lo}, {hi}]")
    splits = tuple(splits) if splits is not None else default_splits(n_traj)
    if len(splits) != 3 or sum(splits) != n_traj or splits[0] < 1:
        raise ContractError(f"splits {splits} must be three counts summing to n_traj={n_traj}")
    t_end = float(DEFAULT_T_END[generator] if t_end is None else t_end)

    mesh_seed, ic_seed, mu_seed = np.random.SeedSequence(seed).generate_state(3)
    ic = DiffusionIC.from_seed(int(ic_seed)) if generator == "diffusion" else None
    oracle = Oracle(generator, t_end, ic)
    mesh = gen_mesh(n_points, oracle.bounds, int(mesh_seed))

    names = oracle.param_names
    rng = np.random.default_rng(int(mu_seed))
    lo = np.array([ranges[n][0] for n in names])
    hi = np.array([ranges[n][1] for n in names])
    mus = lo + (hi - lo) * rng.random((n_traj, len(names)))
    times = np.linspace(0.0, 1.0, n_times) if n_times > 1 else np.zeros(1)
    fields = np.stack([oracle.trajectory(mu, times, mesh.points) for mu in mus])

    n_train, n_val, _ = splits
    split_ids = {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, n_traj)),
    }
    config = {
        "seed": int(seed),
        "n_points": n_points,
        "n_traj": n_traj,
        "n_times": n_times,
        "t_end": t_end,
        "mu_ranges": {k: list(v) for k, v in ranges.items()},
        "splits": list(splits),
    }
    if ic is not None:
        config["ic"] = ic.to_dict()
    stats = compute_stats(fields, mus, split_ids["train"], oracle.bounds)
    return Dataset(
        coords=mesh.points,
        times=times,
        mus=mus,
        fields=fields,
        splits=split_ids,
        stats=stats,
        generator=generator,
        config=config,
        field_names=oracle.field_names,
        param_names=names,
    )


# ---------------------------------------------------------------- normalization


@dataclass
class NormalizedData:
    coords: np.ndarray  # in [-1, 1]^in_dim
    times: np.ndarray
    mus: np.ndarray  # in [-1, 1]^d over the training ranges
    fields: np.ndarray  # z-scored per field
    stats: Stats


def normalize_coords(coords: np.ndarray, bounds) -> np.ndarray:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return 2.0 * (np.asarray(coords, dtype=np.float64) - lo) / (hi - lo) - 1.0


def normalize_mu(mu: np.ndarray, stats: Stats) -> np.ndarray:
    span = stats.mu_max - stats.mu_min
    safe = np.where(span > 0, span, 1.0)
    z = 2.0 * (np.asarray(mu, dtype=np.float64) - stats.mu_min) / safe - 1.0
    return np.where(span > 0, z, 0.0)


def _check_std(stats: Stats) -> None:
    if np.any(stats.field_std <= 0):
        raise ContractError(f"field has zero standard deviation: std={stats.field_std.tolist()}")


def normalize_fields(values: np.ndarray, stats: Stats) -> np.ndarray:
    _check_std(stats)
    return (np.asarray(values, dtype=np.float64) - stats.field_mean) / stats.field_std


def denormalize(values: np.ndarray, stats: Stats) -> np.ndarray:
    """Map z-scored field values (last axis = fields) back to physical units."""
    _check_std(stats)
    return np.asarray(values, dtype=np.float64) * stats.field_std + stats.field_mean


def normalize(dataset: Dataset) -> NormalizedData:
    stats = dataset.stats
    return NormalizedData(
        coords=normalize_coords(dataset.coords, stats.bounds),
        times=np.asarray(dataset.times, dtype=np.float64),
        mus=normalize_mu(dataset.mus, stats),
        fields=normalize_fields(dataset.fields, stats),
        stats=stats,
    )
