"""Parameterized neural ODE over latent codes, plus an autoregressive baseline.

The vector field is ``f(alpha, mu) = dyn_net(concat(alpha, embed_net(mu)))``;
both nets are tanh MLPs. Integration is fixed-step RK4 unrolled on the tape,
so gradients are those of the discrete solver.

All functions accept a single state (``alpha0`` of shape ``(k,)``, ``mu`` of
shape ``(d,)``) or a batch (``(B, k)`` and ``(B, d)``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ContractError, FormatError, NonFiniteError

Field = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class PnodeConfig:
    latent_dim: int = 32
    param_dim: int = 3
    embed_dim: int = 16
    embed_width: int = 32
    embed_layers: int = 2
    dyn_width: int = 128
    dyn_layers: int = 3
    substeps: int = 4

    def __post_init__(self):
        if self.substeps < 1:
            raise ContractError(f"substeps must be >= 1, got {self.substeps}")
        if self.embed_layers < 1 or self.dyn_layers < 1:
            raise ContractError("MLPs need at least one layer")


@dataclass
class PnodeParams:
    config: PnodeConfig
    store: ParamStore


@dataclass
class ARBaselineParams:
    config: PnodeConfig
    store: ParamStore


# ---------------------------------------------------------------- MLP helpers


def _init_mlp(store: ParamStore, prefix: str, sizes: Sequence[int], rng, out_scale: float = 1.0) -> None:
    n = len(sizes) - 1
    for i in range(n):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        if i == n - 1:
            bound *= out_scale
        store.add(f"{prefix}/{i}/weight", rng.uniform(-bound, bound, (fan_in, fan_out)))
        store.add(f"{prefix}/{i}/bias", np.zeros(fan_out))


def _mlp(store: ParamStore, prefix: str, n_layers: int, x: Tensor) -> Tensor:
    """tanh MLP with an affine last layer; ``x`` is ``B x in``."""
    B = x.shape[0]
    for i in range(n_layers):
        w, b = store[f"{prefix}/{i}/weight"], store[f"{prefix}/{i}/bias"]
        x = ad.matmul(x, w) + ad.broadcast_to(b, (B, w.shape[1]))
        if i < n_layers - 1:
            x = ad.tanh(x)
    return x


def _sizes(cfg: PnodeConfig, n_in: int, width: int, n_out: int, n_layers: int) -> list[int]:
    return [n_in] + [width] * (n_layers - 1) + [n_out]


def _as_batch(x, dim: int, name: str) -> tuple[Tensor, bool]:
    x = ad.as_tensor(x)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ContractError(f"{name} must have length {dim}, got {x.shape[0]}")
        return ad.reshape(x, (1, dim)), True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ContractError(f"{name} must be B x {dim}, got {x.shape}")
    return x, False


# ---------------------------------------------------------------- PNODE


def init_pnode(config: PnodeConfig, seed: int) -> PnodeParams:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    c = config
    _init_mlp(store, "embed", _sizes(c, c.param_dim, c.embed_width, c.embed_dim, c.embed_layers), rng)
    _init_mlp(
        store,
        "dyn",
        _sizes(c, c.latent_dim + c.embed_dim, c.dyn_width, c.latent_dim, c.dyn_layers),
        rng,
        out_scale=0.1,
    )
    return PnodeParams(config, store)


def embed(params: PnodeParams | ARBaselineParams, mu: Tensor) -> Tensor:
    return _mlp(params.store, "embed", params.config.embed_layers, mu)


def vector_field(params: PnodeParams, e: Tensor) -> Field:
    """Close over an embedded parameter batch; returns alpha -> d alpha / dt."""
    n = params.config.dyn_layers
    return lambda a: _mlp(params.store, "dyn", n, ad.concat(a, e))


def dynamics(params: PnodeParams, alpha, mu) -> Tensor:
    cfg = params.config
    a, single = _as_batch(alpha, cfg.latent_dim, "alpha")
    m, _ = _as_batch(mu, cfg.param_dim, "mu")
    if m.shape[0] != a.shape[0]:
        raise ContractError(f"alpha batch {a.shape[0]} != mu batch {m.shape[0]}")
    out = vector_field(params, embed(params, m))(a)
    return ad.reshape(out, (cfg.latent_dim,)) if single else out


def rk4_step(f: Field, a: Tensor, h: float) -> Tensor:
    k1 = f(a)
    k2 = f(a + ad.scale(k1, h / 2))
    k3 = f(a + ad.scale(k2, h / 2))
    k4 = f(a + ad.scale(k3, h))
    incr = k1 + ad.scale(k2, 2.0) + ad.scale(k3, 2.0) + k4
    return a + ad.scale(incr, h / 6)


def _check_times(times: Sequence[float]) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if times.size == 0:
        raise ContractError("times must be non-empty")
    if np.any(np.diff(times) <= 0):
        raise ContractError(f"times must be strictly increasing, got {times.tolist()}")
    return times


def odeint_rk4(
    f: Field, alpha0: Tensor, times: Sequence[float], substeps: int, max_step: float | None = None
) -> list[Tensor]:
    """States at each of ``times``; the first is ``alpha0`` itself.

    Each interval gets ``substeps`` equal steps, or more if that would make a
    step longer than ``max_step``.
    """
    times = _check_times(times)
    if substeps < 1:
        raise ContractError(f"substeps must be >= 1, got {substeps}")
    if max_step is not None and not max_step > 0:
        raise ContractError(f"max_step must be positive, got {max_step}")
    states = [alpha0]
    a = alpha0
    step = 0
    for j in range(len(times) - 1):
        span = times[j + 1] - times[j]
        n = substeps
        if max_step is not None:
            n = max(n, math.ceil(span / max_step - 1e-9))
        h = span / n
        for _ in range(n):
            a = rk4_step(f, a, h)
            step += 1
            if not np.all(np.isfinite(a.data)):
                raise NonFiniteError(f"non-finite latent state at solver step {step} (interval {j})")
        states.append(a)
    return states


def integrate(
    params: PnodeParams,
    alpha0,
    mu,
    times: Sequence[float],
    substeps: int | None = None,
    rhs: Callable[[Tensor, Tensor], Tensor] | None = None,
    max_step: float | None = None,
) -> Tensor:
    """Roll latent codes through ``times`` -> ``T x k`` (or ``T x B x k``).

    ``rhs(alpha, e)`` replaces the learned vector field when given (``e`` is
    the embedded parameter batch); tests use it to wire in known dynamics.
    """
    cfg = params.config
    s = cfg.substeps if substeps is None else substeps
    a0, single = _as_batch(alpha0, cfg.latent_dim, "alpha0")
    m, _ = _as_batch(mu, cfg.param_dim, "mu")
    if m.shape[0] != a0.shape[0]:
        raise ContractError(f"alpha0 batch {a0.shape[0]} != mu batch {m.shape[0]}")
    e = embed(params, m)
    f = vector_field(params, e) if rhs is None else (lambda a: rhs(a, e))
    states = odeint_rk4(f, a0, times, s, max_step)
    out = ad.stack(states)
    return ad.reshape(out, (out.shape[0], cfg.latent_dim)) if single else out


def query_time(params: PnodeParams, alpha0, mu, t_query: float, t0: float = 0.0, **kw) -> Tensor:
    if t_query < t0:
        raise ContractError(f"t_query={t_query} precedes t0={t0}")
    if t_query == t0:
        return ad.as_tensor(alpha0)
    return integrate(params, alpha0, mu, [t0, t_query], **kw)[-1]


# ---------------------------------------------------------------- AR baseline


def init_ar_baseline(config: PnodeConfig, seed: int) -> ARBaselineParams:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    c = config
    _init_mlp(store, "embed", _sizes(c, c.param_dim, c.embed_width, c.embed_dim, c.embed_layers), rng)
    _init_mlp(store, "step", _sizes(c, c.latent_dim + c.embed_dim, c.dyn_width, c.latent_dim, c.dyn_layers), rng)
    return ARBaselineParams(config, store)


def ar_step(params: ARBaselineParams, alpha: Tensor, e: Tensor) -> Tensor:
    return _mlp(params.store, "step", params.config.dyn_layers, ad.concat(alpha, e))


def ar_rollout(
    params: ARBaselineParams,
    alpha0,
    mu,
    n_steps: int,
    step_fn: Callable[[Tensor, Tensor], Tensor] | None = None,
) -> Tensor:
    """Apply the one-step map ``n_steps`` times -> ``(n_steps+1) x k`` (or batched)."""
    if n_steps < 0:
        raise ContractError(f"n_steps must be >= 0, got {n_steps}")
    cfg = params.config
    a, single = _as_batch(alpha0, cfg.latent_dim, "alpha0")
    m, _ = _as_batch(mu, cfg.param_dim, "mu")
    e = embed(params, m)
    step = step_fn or (lambda x, emb: ar_step(params, x, emb))
    states = [a]
    for i in range(n_steps):
        a = step(a, e)
        if not np.all(np.isfinite(a.data)):
            raise NonFiniteError(f"non-finite latent state at autoregressive step {i + 1}")
        states.append(a)
    out = ad.stack(states)
    return ad.reshape(out, (out.shape[0], cfg.latent_dim)) if single else out


# ---------------------------------------------------------------- checkpoints


def _save(kind: str, config: PnodeConfig, store: ParamStore, directory: Path, name: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    c = config
    header = {
        "kind": kind,
        "k": c.latent_dim,
        "d": c.param_dim,
        "d_e": c.embed_dim,
        "widths": {"embed": c.embed_width, "dyn": c.dyn_width},
        "layers": {"embed": c.embed_layers, "dyn": c.dyn_layers},
        "s": c.substeps,
    }
    (directory / f"{name}_header.json").write_text(json.dumps(header, indent=1, sort_keys=True))
    store.save(directory / name)


def _load(kind: str, directory: Path, name: str) -> tuple[PnodeConfig, ParamStore]:
    header = json.loads((directory / f"{name}_header.json").read_text())
    if header.get("kind") != kind:
        raise FormatError(f"{directory}: expected a {kind} checkpoint, found {header.get('kind')!r}")
    config = PnodeConfig(
        latent_dim=header["k"],
        param_dim=header["d"],
        embed_dim=header["d_e"],
        embed_width=header["widths"]["embed"],
        dyn_width=header["widths"]["dyn"],
        embed_layers=header["layers"]["embed"],
        dyn_layers=header["layers"]["dyn"],
        substeps=header["s"],
    )
    return config, ParamStore.load(directory / name)


def _validate(store: ParamStore, reference: ParamStore, directory: Path) -> None:
    if list(store) != list(reference):
        raise FormatError(f"{directory}: parameter paths do not match the header")
    for path, t in reference.items():
        if store[path].shape != t.shape:
            raise FormatError(f"{directory}: {path} has shape {store[path].shape}, expected {t.shape}")


def save_pnode(params: PnodeParams, directory: str | Path) -> None:
    _save("pnode", params.config, params.store, Path(directory), "pnode")


def load_pnode(directory: str | Path) -> PnodeParams:
    config, store = _load("pnode", Path(directory), "pnode")
    _validate(store, init_pnode(config, 0).store, Path(directory))
    return PnodeParams(config, store)


def save_ar_baseline(params: ARBaselineParams, directory: str | Path) -> None:
    _save("ar_baseline", params.config, params.store, Path(directory), "ar_baseline")


def load_ar_baseline(directory: str | Path) -> ARBaselineParams:
    config, store = _load("ar_baseline", Path(directory), "ar_baseline")
    _validate(store, init_ar_baseline(config, 0).store, Path(directory))
    return ARBaselineParams(config, store)


def config_dict(config: PnodeConfig) -> dict:
    return asdict(config)
