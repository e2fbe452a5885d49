"""Two-stage training and inference-time auto-decoding.

Stage 1 jointly fits the decoder and one latent code per training snapshot.
Stage 2 freezes both and fits the latent dynamics to the code trajectories.
At inference an initial snapshot is encoded by optimizing a fresh code
against the frozen decoder.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, ParamStore, RowAdam, Tape, Tensor
from .datagen import Dataset, Stats, denormalize, normalize, normalize_coords, normalize_fields, normalize_mu
from .decoder import DecoderParams, SirenConfig, decode, decode_batch, init_decoder
from .errors import ContractError, DivergenceError, FormatError
from .pnode import (
    ARBaselineParams,
    PnodeConfig,
    PnodeParams,
    ar_rollout,
    ar_step,
    embed,
    init_ar_baseline,
    init_pnode,
    integrate,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    # stage 1: decoder + latent codes
    epochs: int = 200
    decoder_lr: float = 1e-4
    latent_lr: float = 1e-2
    coord_batch: int = 1024
    snapshot_batch: int = 32
    latent_reg: float = 1e-4
    # zero codes + zero modulation is a stationary point, so codes start as small noise
    latent_init_std: float = 1e-2
    # update only the codes in the current minibatch (lazy Adam); dense Adam
    # lets every code drift on stale momentum between visits
    sparse_latent_updates: bool = True
    # learning rates are multiplied by this factor over the course of each stage
    lr_decay: float = 1.0
    # stage 2: latent dynamics
    pnode_epochs: int = 300
    pnode_lr: float = 1e-3
    window: int = 8
    window_batch: int = 64
    finetune_epochs: int = 100
    finetune_lr: float = 3e-4
    # autoregressive baseline
    ar_epochs: int = 300
    ar_lr: float = 1e-3
    ar_batch: int = 64
    seed: int = 0
    # stop a stage early once the epoch loss falls below this value
    target_loss: float = 0.0

    def __post_init__(self):
        for name in ("decoder_lr", "latent_lr", "pnode_lr", "finetune_lr", "ar_lr"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.window < 2:
            raise ContractError(f"window must be >= 2, got {self.window}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LatentFitConfig:
    steps: int = 500
    lr: float = 1e-2
    latent_reg: float = 1e-4

    def __post_init__(self):
        if self.steps < 0:
            raise ContractError(f"steps must be >= 0, got {self.steps}")


@dataclass
class LatentTable:
    codes: np.ndarray  # (n_traj, n_times, k)
    traj_ids: list[int]
    times: np.ndarray

    @property
    def latent_dim(self) -> int:
        return self.codes.shape[2]

    def checksum(self) -> str:
        return ParamStore({"codes": Tensor(self.codes)}).checksum()

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = {"kind": "latent_table", "traj_ids": self.traj_ids, "times": self.times.tolist()}
        (directory / "latents_header.json").write_text(json.dumps(header, indent=1))
        ParamStore({"codes": Tensor(self.codes)}).save(directory / "latents")

    @classmethod
    def load(cls, directory: str | Path) -> "LatentTable":
        directory = Path(directory)
        header = json.loads((directory / "latents_header.json").read_text())
        if header.get("kind") != "latent_table":
            raise FormatError(f"{directory}: not a latent table")
        codes = ParamStore.load(directory / "latents")["codes"].data
        if codes.ndim != 3 or codes.shape[:2] != (len(header["traj_ids"]), len(header["times"])):
            raise FormatError(f"{directory}: latent table shape {codes.shape} disagrees with header")
        return cls(codes.copy(), [int(i) for i in header["traj_ids"]], np.array(header["times"]))


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def add(self, stage: str, epoch: int, loss: float, wall_ms: float, **extra) -> None:
        self.records.append({"stage": stage, "epoch": epoch, "loss": loss, "wall_ms": wall_ms, **extra})

    def losses(self, stage: str) -> list[float]:
        return [r["loss"] for r in self.records if r["stage"] == stage]

    def write_jsonl(self, path: str | Path, mode: str = "w") -> None:
        with open(path, mode) as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def _check_loss(value: float, stage: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"{stage}: loss became {value} in epoch {epoch}")


def _decay(config: TrainConfig, epoch: int, n_epochs: int) -> float:
    return config.lr_decay ** (epoch / max(n_epochs - 1, 1))


def _latent_penalty(codes: Tensor, weight: float) -> Tensor:
    return ad.scale(ad.sum(ad.square(codes)), weight / codes.shape[0])


# ---------------------------------------------------------------- stage 1


def default_decoder_config(dataset: Dataset, **overrides) -> SirenConfig:
    return SirenConfig(**{"in_dim": dataset.in_dim, "out_dim": dataset.n_fields, **overrides})


def pretrain(
    dataset: Dataset,
    config: TrainConfig,
    decoder_config: SirenConfig | None = None,
) -> tuple[DecoderParams, LatentTable, TrainLog]:
    """Jointly fit decoder weights and per-snapshot latent codes on the train split."""
    train = dataset.split("train")
    if not train or dataset.n_times == 0 or dataset.n_points == 0:
        raise ContractError("pretrain needs a non-empty training split")
    decoder_config = decoder_config or default_decoder_config(dataset)
    if decoder_config.in_dim != dataset.in_dim or decoder_config.out_dim != dataset.n_fields:
        raise ContractError("decoder dimensions do not match the dataset")
    data = normalize(dataset)
    T, N, F = dataset.n_times, dataset.n_points, dataset.n_fields
    k = decoder_config.latent_dim
    targets = data.fields[train].reshape(len(train) * T, N, F)
    n_snap = targets.shape[0]

    seeds = np.random.SeedSequence(config.seed).generate_state(3)
    decoder = init_decoder(decoder_config, int(seeds[0]))
    init_rng = np.random.default_rng(int(seeds[2]))
    codes = ParamStore({"codes": config.latent_init_std * init_rng.standard_normal((n_snap, k))})
    table = codes["codes"]
    opt_dec = Adam(decoder.store, config.decoder_lr)
    opt_lat = RowAdam(codes, config.latent_lr) if config.sparse_latent_updates else Adam(codes, config.latent_lr)
    rng = np.random.default_rng(int(seeds[1]))
    coords = data.coords
    logbook = TrainLog()

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        factor = _decay(config, epoch, config.epochs)
        opt_dec.lr = config.decoder_lr * factor
        opt_lat.lr = config.latent_lr * factor
        order = rng.permutation(n_snap)
        total, count = 0.0, 0
        for start in range(0, n_snap, config.snapshot_batch):
            idx = order[start : start + config.snapshot_batch]
            if N > config.coord_batch:
                pts = np.sort(rng.choice(N, config.coord_batch, replace=False))
                xb, yb = coords[pts], targets[idx][:, pts]
            else:
                xb, yb = coords, targets[idx]
            with Tape() as tape:
                batch_codes = ad.take_rows(table, idx)
                recon = ad.mse(decode_batch(decoder, batch_codes, xb), yb)
                loss = recon + _latent_penalty(batch_codes, config.latent_reg)
            tape.backward(loss)
            opt_dec.step()
            if config.sparse_latent_updates:
                opt_lat.step(idx)
            else:
                opt_lat.step()
            total += recon.item() * len(idx)
            count += len(idx)
        mean_loss = total / count
        _check_loss(mean_loss, "pretrain", epoch)
        logbook.add("pretrain", epoch, mean_loss, 1e3 * (time.perf_counter() - t0))
        if epoch % 25 == 0:
            log.info("pretrain epoch %d: recon mse %.4e", epoch, mean_loss)
        if mean_loss < config.target_loss:
            break

    latents = LatentTable(table.data.reshape(len(train), T, k).copy(), train, dataset.times.copy())
    if logbook.records:
        logbook.records[-1]["train_rel_l2"] = reconstruction_rel_l2(decoder, latents, dataset)
    return decoder, latents, logbook


def reconstruction_rel_l2(decoder: DecoderParams, latents: LatentTable, dataset: Dataset) -> float:
    """Mean over trajectories of the physical-unit relative L2 reconstruction error."""
    coords = normalize_coords(dataset.coords, dataset.stats.bounds)
    errs = []
    for row, tid in enumerate(latents.traj_ids):
        pred = denormalize(decode_batch(decoder, latents.codes[row], coords).data, dataset.stats)
        truth = dataset.fields[tid]
        errs.append(np.linalg.norm(pred - truth) / np.linalg.norm(truth))
    return float(np.mean(errs))


# ---------------------------------------------------------------- stage 2


def _window_groups(times: np.ndarray, starts: np.ndarray, w: int) -> dict[bytes, list[int]]:
    # windows whose relative times agree to ~1e-12 share one batched solve;
    # a linspace grid is uniform only up to rounding
    groups: dict[bytes, list[int]] = {}
    for i, s in enumerate(starts):
        rel = np.round(times[s : s + w] - times[s], 12)
        groups.setdefault(rel.tobytes(), []).append(i)
    return groups


def _rollout_loss(pnode: PnodeParams, a0: np.ndarray, mu: np.ndarray, times: np.ndarray, target: np.ndarray) -> Tensor:
    """mse over predicted rows 1.. of a batched rollout; row 0 is exact by construction."""
    pred = integrate(pnode, a0, mu, times)
    return ad.mse(ad.getitem(pred, slice(1, None)), target[1:])


def train_pnode(
    latents: LatentTable,
    mus: np.ndarray,
    config: TrainConfig,
    pnode_config: PnodeConfig | None = None,
    init: PnodeParams | None = None,
) -> tuple[PnodeParams, TrainLog]:
    """Fit the latent vector field to frozen code trajectories.

    ``mus`` holds one normalized parameter vector per row of ``latents``.
    Windows of ``config.window`` snapshots are used first, then whole
    trajectories from t=0 for ``finetune_epochs``. ``init`` warm-starts from
    a copy of existing parameters instead of a fresh seeded init.
    """
    codes = latents.codes
    n_traj, T, k = codes.shape
    mus = np.asarray(mus, dtype=np.float64).reshape(n_traj, -1)
    if init is not None:
        pnode_config = init.config
    elif pnode_config is None:
        pnode_config = PnodeConfig(latent_dim=k, param_dim=mus.shape[1])
    if pnode_config.latent_dim != k or pnode_config.param_dim != mus.shape[1]:
        raise ContractError("pnode dimensions do not match the latent table / parameters")
    if T < 2:
        raise ContractError("train_pnode needs at least two snapshots per trajectory")
    times = np.asarray(latents.times, dtype=np.float64)
    seeds = np.random.SeedSequence([config.seed, 2]).generate_state(2)
    pnode = init_pnode(pnode_config, int(seeds[0])) if init is None else PnodeParams(init.config, init.store.copy())
    rng = np.random.default_rng(int(seeds[1]))
    logbook = TrainLog()

    w = min(config.window, T)
    windows = np.array([(i, s) for i in range(n_traj) for s in range(T - w + 1)])
    opt = Adam(pnode.store, config.pnode_lr)
    for epoch in range(config.pnode_epochs):
        t0 = time.perf_counter()
        opt.lr = config.pnode_lr * _decay(config, epoch, config.pnode_epochs)
        order = rng.permutation(len(windows))
        total, count = 0.0, 0
        for start in range(0, len(order), config.window_batch):
            batch = windows[order[start : start + config.window_batch]]
            for members in _window_groups(times, batch[:, 1], w).values():
                sel = batch[members]
                s0 = sel[0, 1]
                rel_times = times[s0 : s0 + w] - times[s0]
                target = np.stack([codes[i, s : s + w] for i, s in sel], axis=1)  # (w, B, k)
                with Tape() as tape:
                    loss = _rollout_loss(pnode, target[0], mus[sel[:, 0]], rel_times, target)
                tape.backward(loss)
                opt.step()
                total += loss.item() * len(sel)
                count += len(sel)
        mean_loss = total / count
        _check_loss(mean_loss, "pnode", epoch)
        logbook.add("pnode", epoch, mean_loss, 1e3 * (time.perf_counter() - t0))
        if epoch % 25 == 0:
            log.info("pnode epoch %d: window mse %.4e", epoch, mean_loss)
        if mean_loss < config.target_loss:
            break

    full_target = codes.transpose(1, 0, 2)  # (T, n_traj, k)
    opt = Adam(pnode.store, config.finetune_lr)
    for epoch in range(config.finetune_epochs):
        t0 = time.perf_counter()
        opt.lr = config.finetune_lr * _decay(config, epoch, config.finetune_epochs)
        with Tape() as tape:
            loss = _rollout_loss(pnode, full_target[0], mus, times, full_target)
        tape.backward(loss)
        opt.step()
        value = loss.item()
        _check_loss(value, "pnode_finetune", epoch)
        logbook.add("pnode_finetune", epoch, value, 1e3 * (time.perf_counter() - t0))
    return pnode, logbook


def train_ar_baseline(
    latents: LatentTable,
    mus: np.ndarray,
    config: TrainConfig,
    pnode_config: PnodeConfig | None = None,
) -> tuple[ARBaselineParams, TrainLog]:
    """One-step regression alpha_{t+1} = g(alpha_t, mu) on consecutive code pairs."""
    codes = latents.codes
    n_traj, T, k = codes.shape
    mus = np.asarray(mus, dtype=np.float64).reshape(n_traj, -1)
    if pnode_config is None:
        pnode_config = PnodeConfig(latent_dim=k, param_dim=mus.shape[1])
    seeds = np.random.SeedSequence([config.seed, 3]).generate_state(2)
    params = init_ar_baseline(pnode_config, int(seeds[0]))
    rng = np.random.default_rng(int(seeds[1]))
    x = codes[:, :-1].reshape(-1, k)
    y = codes[:, 1:].reshape(-1, k)
    m = np.repeat(mus, T - 1, axis=0)
    opt = Adam(params.store, config.ar_lr)
    logbook = TrainLog()
    for epoch in range(config.ar_epochs):
        t0 = time.perf_counter()
        opt.lr = config.ar_lr * _decay(config, epoch, config.ar_epochs)
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(order), config.ar_batch):
            idx = order[start : start + config.ar_batch]
            with Tape() as tape:
                pred = ar_step(params, Tensor(x[idx]), embed(params, Tensor(m[idx])))
                loss = ad.mse(pred, y[idx])
            tape.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        mean_loss = total / max(len(x), 1)
        _check_loss(mean_loss, "ar_baseline", epoch)
        logbook.add("ar_baseline", epoch, mean_loss, 1e3 * (time.perf_counter() - t0))
    return params, logbook


# ---------------------------------------------------------------- auto-decoding


def fit_latent(
    decoder: DecoderParams,
    coords: np.ndarray,
    values: np.ndarray,
    config: LatentFitConfig | None = None,
) -> np.ndarray:
    """Encode one normalized snapshot by optimizing a code against the frozen decoder.

    Starts from zero and returns the best iterate seen, so the result is never
    worse than the zero code.
    """
    config = config or LatentFitConfig()
    k = decoder.config.latent_dim
    store = ParamStore({"alpha": np.zeros(k)})
    alpha = store["alpha"]
    if config.steps == 0:
        return alpha.data.copy()
    values = np.asarray(values, dtype=np.float64)
    opt = Adam(store, config.lr)
    frozen = {p: t.requires_grad for p, t in decoder.store.items()}
    for _, t in decoder.store.items():
        t.requires_grad = False
    try:
        best_loss, best = np.inf, alpha.data.copy()
        init_loss = None
        for step in range(config.steps + 1):
            with Tape() as tape:
                loss = ad.mse(decode(decoder, alpha, coords), values)
                loss = loss + ad.scale(ad.sum(ad.square(alpha)), config.latent_reg)
            value = loss.item()
            if init_loss is None:
                init_loss = value
            if not np.isfinite(value) or value > 10.0 * init_loss:
                raise DivergenceError(
                    f"fit_latent diverged at step {step}: loss {value:.3e} vs initial {init_loss:.3e}"
                )
            if value < best_loss:
                best_loss, best = value, alpha.data.copy()
            if step == config.steps:
                break
            tape.backward(loss)
            opt.step()
    finally:
        for path, t in decoder.store.items():
            t.requires_grad = frozen[path]
    return best


# ---------------------------------------------------------------- forecasting


@dataclass
class Forecaster:
    """Frozen decoder + dynamics + normalization: physical snapshot in, physical forecast out."""

    decoder: DecoderParams
    pnode: PnodeParams
    stats: Stats
    fit_config: LatentFitConfig = field(default_factory=LatentFitConfig)
    ar: ARBaselineParams | None = None
    # longest solver step; keep it at the training step so sparse query grids stay accurate
    max_step: float | None = None

    def encode(self, coords: np.ndarray, values: np.ndarray) -> np.ndarray:
        xn = normalize_coords(coords, self.stats.bounds)
        return fit_latent(self.decoder, xn, normalize_fields(values, self.stats), self.fit_config)

    def latent_path(self, alpha0: np.ndarray, mu: np.ndarray, times: Sequence[float]) -> np.ndarray:
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if times.size and times[0] < 0:
            raise ContractError("forecast times must be >= 0 (the initial snapshot sits at t=0)")
        prepend = times.size == 0 or times[0] > 0
        grid = np.concatenate([[0.0], times]) if prepend else times
        mu_n = normalize_mu(np.asarray(mu, dtype=np.float64), self.stats)
        path = integrate(self.pnode, alpha0, mu_n, grid, max_step=self.max_step).data
        return path[1:] if prepend else path

    def decode_path(self, path: np.ndarray, coords: np.ndarray) -> np.ndarray:
        xn = normalize_coords(coords, self.stats.bounds)
        return denormalize(decode_batch(self.decoder, path, xn).data, self.stats)

    def forecast(
        self,
        u0_coords: np.ndarray,
        u0_values: np.ndarray,
        mu: np.ndarray,
        times: Sequence[float],
        coords: np.ndarray | None = None,
    ) -> np.ndarray:
        """Predicted fields ``T x N x F`` in physical units."""
        alpha0 = self.encode(u0_coords, u0_values)
        path = self.latent_path(alpha0, mu, times)
        return self.decode_path(path, u0_coords if coords is None else coords)

    def ar_forecast(self, alpha0: np.ndarray, mu: np.ndarray, n_steps: int, coords: np.ndarray) -> np.ndarray:
        if self.ar is None:
            raise ContractError("no autoregressive baseline loaded")
        mu_n = normalize_mu(np.asarray(mu, dtype=np.float64), self.stats)
        path = ar_rollout(self.ar, alpha0, mu_n, n_steps).data
        return self.decode_path(path, coords)


def forecast(decoder, pnode, stats, u0_coords, u0_values, mu, times, coords=None, fit_config=None):
    return Forecaster(decoder, pnode, stats, fit_config or LatentFitConfig()).forecast(
        u0_coords, u0_values, mu, times, coords
    )


def config_dict(cfg) -> dict:
    return asdict(cfg)
