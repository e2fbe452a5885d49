"""Latent-modulated SIREN decoder.

Sine layer ``l`` computes ``sin(w_l * (h W_l + b_l + alpha M_l))`` where
``M_l`` maps the latent code to an additive per-layer shift. The first layer
uses ``w_0 = omega0``; later layers use 1. The output layer is affine.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ContractError, FormatError

COORD_LIMIT = 1.5


@dataclass(frozen=True)
class SirenConfig:
    in_dim: int = 2
    out_dim: int = 1
    width: int = 128
    depth: int = 4
    omega0: float = 30.0
    latent_dim: int = 32

    def __post_init__(self):
        if self.depth < 1:
            raise ContractError(f"depth must be >= 1, got {self.depth}")
        if self.omega0 <= 0:
            raise ContractError(f"omega0 must be positive, got {self.omega0}")
        if min(self.in_dim, self.out_dim, self.width, self.latent_dim) < 1:
            raise ContractError(f"dimensions must be positive: {self}")


@dataclass
class DecoderParams:
    config: SirenConfig
    store: ParamStore

    def layer(self, l: int) -> tuple[Tensor, Tensor, Tensor]:
        p = f"layer{l}"
        return self.store[f"{p}/weight"], self.store[f"{p}/bias"], self.store[f"{p}/mod"]

    @property
    def out(self) -> tuple[Tensor, Tensor]:
        return self.store["out/weight"], self.store["out/bias"]

    def omega(self, l: int) -> float:
        return self.config.omega0 if l == 0 else 1.0


def init_decoder(config: SirenConfig, seed: int) -> DecoderParams:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    fan_in = config.in_dim
    for l in range(config.depth):
        if l == 0:
            bound = 1.0 / config.in_dim
        else:
            # hidden layers run at frequency 1, so the SIREN bound is sqrt(6/fan_in)/1
            bound = np.sqrt(6.0 / fan_in)
        store.add(f"layer{l}/weight", rng.uniform(-bound, bound, (fan_in, config.width)))
        store.add(f"layer{l}/bias", rng.uniform(-1, 1, config.width) / np.sqrt(fan_in))
        store.add(f"layer{l}/mod", np.zeros((config.latent_dim, config.width)))
        fan_in = config.width
    bound = np.sqrt(6.0 / fan_in)
    store.add("out/weight", rng.uniform(-bound, bound, (fan_in, config.out_dim)))
    store.add("out/bias", np.zeros(config.out_dim))
    return DecoderParams(config, store)


def _check_inputs(params: DecoderParams, latents: Tensor, coords: Tensor) -> None:
    k = params.config.latent_dim
    if latents.ndim != 2 or latents.shape[1] != k:
        raise ContractError(f"latent codes must have length {k}, got shape {latents.shape}")
    if coords.ndim != 2 or coords.shape[1] != params.config.in_dim:
        raise ContractError(f"coords must be N x {params.config.in_dim}, got {coords.shape}")
    if coords.size and np.max(np.abs(coords.data)) > COORD_LIMIT:
        raise ContractError(
            f"coords exceed the [-{COORD_LIMIT}, {COORD_LIMIT}] sanity bound; normalize them first"
        )


def decode_batch(params: DecoderParams, latents, coords) -> Tensor:
    """Decode B latent codes at the same N coordinates -> ``B x N x out_dim``."""
    latents, coords = ad.as_tensor(latents), ad.as_tensor(coords)
    _check_inputs(params, latents, coords)
    cfg = params.config
    B, N, W = latents.shape[0], coords.shape[0], cfg.width
    h = None
    for l in range(cfg.depth):
        weight, bias, mod = params.layer(l)
        shift = ad.matmul(latents, mod) + ad.broadcast_to(bias, (B, W))
        shift = ad.broadcast_to(ad.reshape(shift, (B, 1, W)), (B, N, W))
        if h is None:
            # coordinates are shared by the whole batch: project them once
            z = ad.broadcast_to(ad.reshape(ad.matmul(coords, weight), (1, N, W)), (B, N, W))
        else:
            z = ad.reshape(ad.matmul(ad.reshape(h, (B * N, W)), weight), (B, N, W))
        h = ad.sin(ad.scale(z + shift, params.omega(l)))
    w_out, b_out = params.out
    y = ad.reshape(ad.matmul(ad.reshape(h, (B * N, W)), w_out), (B, N, cfg.out_dim))
    return y + ad.broadcast_to(b_out, (B, N, cfg.out_dim))


def decode(params: DecoderParams, latent, coords) -> Tensor:
    """Field values ``N x out_dim`` for one latent code of length k."""
    latent = ad.as_tensor(latent)
    if latent.ndim != 1:
        raise ContractError(f"decode takes a single latent vector, got shape {latent.shape}")
    y = decode_batch(params, ad.reshape(latent, (1, latent.shape[0])), coords)
    return ad.reshape(y, y.shape[1:])


def lipschitz_bound(params: DecoderParams) -> float:
    """Crude smoothness bound 10 * omega0 * prod ||W_l||_2 used by continuity probes."""
    prod = 1.0
    for l in range(params.config.depth):
        prod *= np.linalg.norm(params.layer(l)[0].data, 2)
    prod *= np.linalg.norm(params.out[0].data, 2)
    return 10.0 * params.config.omega0 * prod


# ---------------------------------------------------------------- checkpoints


def save_decoder(params: DecoderParams, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {"kind": "siren_decoder", "config": asdict(params.config)}
    (directory / "decoder_header.json").write_text(json.dumps(header, indent=1, sort_keys=True))
    params.store.save(directory / "decoder")


def load_decoder(directory: str | Path) -> DecoderParams:
    directory = Path(directory)
    header = json.loads((directory / "decoder_header.json").read_text())
    if header.get("kind") != "siren_decoder":
        raise FormatError(f"{directory}: not a decoder checkpoint")
    config = SirenConfig(**header["config"])
    store = ParamStore.load(directory / "decoder")
    expected = init_decoder(config, 0).store
    if list(store) != list(expected):
        raise FormatError(f"{directory}: parameter paths do not match the header config")
    for path, t in expected.items():
        if store[path].shape != t.shape:
            raise FormatError(f"{directory}: {path} has shape {store[path].shape}, expected {t.shape}")
    return DecoderParams(config, store)
