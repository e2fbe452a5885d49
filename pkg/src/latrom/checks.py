"""Gradient verification runs shared by the CLI and the test suite."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, ParamStore, grad_check
from .decoder import SirenConfig, decode, init_decoder
from .pnode import PnodeConfig, init_pnode, integrate


def _jitter(store: ParamStore, rng, scale: float) -> None:
    # zero-initialized tensors (modulations, biases) would hide bugs in their gradients
    for _, t in store.items():
        t.data += scale * rng.standard_normal(t.shape)


def decoder_gradcheck(seed: int = 0, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """mse(decode(params, latent, x), y) w.r.t. every decoder weight and the latent."""
    rng = np.random.default_rng(seed)
    cfg = SirenConfig(in_dim=2, out_dim=2, width=12, depth=3, omega0=30.0, latent_dim=5)
    params = init_decoder(cfg, seed)
    _jitter(params.store, rng, 0.05)
    store = ParamStore(dict(params.store.items()))
    store.add("latent", rng.uniform(-1, 1, cfg.latent_dim))
    x = rng.uniform(-1, 1, (16, 2))
    y = rng.standard_normal((16, 2))
    return grad_check(lambda: ad.mse(decode(params, store["latent"], x), y), store, eps, tol)


def pnode_gradcheck(seed: int = 0, eps: float = 1e-5, tol: float = 1e-4, n_times: int = 4, substeps: int = 2) -> GradCheckReport:
    """Rollout loss over ``n_times`` snapshots w.r.t. dynamics weights, alpha0 and mu."""
    rng = np.random.default_rng(seed)
    cfg = PnodeConfig(latent_dim=4, param_dim=3, embed_dim=4, embed_width=6, dyn_width=10, substeps=substeps)
    params = init_pnode(cfg, seed)
    _jitter(params.store, rng, 0.1)
    store = ParamStore(dict(params.store.items()))
    store.add("alpha0", rng.uniform(-1, 1, cfg.latent_dim))
    store.add("mu", rng.uniform(-1, 1, cfg.param_dim))
    times = np.linspace(0.0, 0.3, n_times)
    target = rng.standard_normal((n_times, cfg.latent_dim))

    def loss():
        return ad.mse(integrate(params, store["alpha0"], store["mu"], times), target)

    return grad_check(loss, store, eps, tol)


def gradient_suite(seed: int = 0, eps: float = 1e-5, tol: float = 1e-4) -> dict[str, GradCheckReport]:
    return {
        "decoder": decoder_gradcheck(seed, eps, tol),
        "pnode": pnode_gradcheck(seed, eps, tol),
    }
