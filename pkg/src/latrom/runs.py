"""Run directories: resolved configs, checkpoints, logs and manifests.

A run directory holds everything produced from one dataset::

    run_config.json          resolved config (all sections)
    decoder/                 decoder checkpoint (header + ParamStore)
    latents/                 stage-1 latent table
    pnode/                   dynamics checkpoint
    ar_baseline/             autoregressive baseline checkpoint
    train_log.jsonl          one record per epoch, all stages
    run_manifest.json        config, seed, git describe, hashes
"""

from __future__ import annotations

import copy
import hashlib
import json
import subprocess
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .datagen import Dataset, normalize_mu
from .decoder import SirenConfig, load_decoder, save_decoder
from .errors import ContractError, FormatError
from .pnode import PnodeConfig, load_ar_baseline, load_pnode, save_ar_baseline, save_pnode
from .training import (
    Forecaster,
    LatentFitConfig,
    LatentTable,
    TrainConfig,
    default_decoder_config,
    pretrain,
    train_ar_baseline,
    train_pnode,
)

SECTIONS = ("data", "decoder", "pnode", "train", "latent_fit")

DEFAULT_CONFIG: dict[str, dict[str, Any]] = {
    "data": {
        "generator": "diffusion",
        "n_points": 512,
        "n_traj": 32,
        "n_times": 30,
        "splits": None,
        "mu_ranges": {},
    },
    "decoder": {"width": 128, "depth": 4, "omega0": 30.0, "latent_dim": 32},
    "pnode": {"embed_dim": 16, "embed_width": 32, "embed_layers": 2, "dyn_width": 128, "dyn_layers": 3, "substeps": 4},
    "train": asdict(TrainConfig()),
    "latent_fit": asdict(LatentFitConfig()),
}


def preset_names() -> list[str]:
    return sorted(p.stem for p in resources.files("latrom.configs").iterdir() if p.name.endswith(".json"))


def load_config_file(name_or_path: str | Path | None) -> dict:
    """Read a JSON config by path, or by preset name (see ``preset_names``)."""
    if name_or_path is None:
        return {}
    path = Path(name_or_path)
    if not path.exists():
        preset = resources.files("latrom.configs") / f"{name_or_path}.json"
        if not preset.is_file():
            raise FileNotFoundError(f"config {name_or_path!r} is neither a file nor a preset {preset_names()}")
        text = preset.read_text()
    else:
        text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {name_or_path} is not valid JSON: {exc}") from None
    unknown = set(cfg) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ContractError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def resolve_config(*layers: Mapping[str, Any]) -> dict:
    """Merge config layers section by section over the defaults; later layers win."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    seed = None
    for layer in layers:
        for key, value in layer.items():
            if key == "seed":
                seed = value
                continue
            if key not in SECTIONS:
                raise ContractError(f"unknown config section {key!r}")
            for k, v in value.items():
                if k not in cfg[key] and key != "data":
                    raise ContractError(f"unknown key {key}.{k}")
                cfg[key][k] = v
    if seed is not None:
        cfg["train"]["seed"] = int(seed)
        cfg["data"]["seed"] = int(seed)
    cfg["data"].setdefault("seed", cfg["train"]["seed"])
    return cfg


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def dir_hash(directory: str | Path) -> str:
    """sha256 over every file in a checkpoint directory (sorted by name)."""
    h = hashlib.sha256()
    for p in sorted(Path(directory).rglob("*")):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, hashes: dict[str, str], extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("train", {}).get("seed"),
        "git_describe": git_describe(),
        "hashes": hashes,
        **(extra or {}),
    }
    path = out / "run_manifest.json"
    history = []
    if path.exists():
        try:
            history = json.loads(path.read_text()).get("history", [])
        except json.JSONDecodeError:
            history = []
    manifest["history"] = history + [{"command": command, "hashes": hashes}]
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _section(cls, values: Mapping[str, Any]):
    names = {f.name for f in fields(cls)}
    return cls(**{k: v for k, v in values.items() if k in names})


def decoder_config(cfg: dict, dataset: Dataset) -> SirenConfig:
    return default_decoder_config(dataset, **cfg["decoder"])


def pnode_config(cfg: dict, dataset: Dataset) -> PnodeConfig:
    return _section(
        PnodeConfig,
        {**cfg["pnode"], "latent_dim": cfg["decoder"]["latent_dim"], "param_dim": len(dataset.param_names)},
    )


def save_run_config(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(cfg, indent=1, sort_keys=True))


def load_run_config(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "run_config.json"
    return json.loads(path.read_text())


# ---------------------------------------------------------------- stages


def run_pretrain(dataset: Dataset, cfg: dict, out: Path) -> dict:
    save_run_config(out, cfg)
    train_cfg = TrainConfig.from_dict(cfg["train"])
    decoder, latents, logbook = pretrain(dataset, train_cfg, decoder_config(cfg, dataset))
    save_decoder(decoder, out / "decoder")
    latents.save(out / "latents")
    logbook.write_jsonl(out / "train_log.jsonl", mode="w")
    summary = {
        "final_loss": logbook.records[-1]["loss"] if logbook.records else None,
        "train_rel_l2": logbook.records[-1].get("train_rel_l2") if logbook.records else None,
    }
    hashes = {"dataset": dataset.content_hash(), "decoder": dir_hash(out / "decoder"), "latents": dir_hash(out / "latents")}
    write_manifest(out, "pretrain", cfg, hashes, {"summary": summary})
    return summary


def _train_mus(dataset: Dataset, latents: LatentTable):
    return normalize_mu(dataset.mus[latents.traj_ids], dataset.stats)


def run_train_dynamics(dataset: Dataset, run_dir: Path, cfg: dict) -> dict:
    latents = LatentTable.load(run_dir / "latents")
    pnode, logbook = train_pnode(
        latents, _train_mus(dataset, latents), TrainConfig.from_dict(cfg["train"]), pnode_config(cfg, dataset)
    )
    save_pnode(pnode, run_dir / "pnode")
    logbook.write_jsonl(run_dir / "train_log.jsonl", mode="a")
    summary = {"final_loss": logbook.records[-1]["loss"] if logbook.records else None}
    write_manifest(run_dir, "train-dynamics", cfg, {"dataset": dataset.content_hash(), "pnode": dir_hash(run_dir / "pnode")}, {"summary": summary})
    return summary


def run_train_ar(dataset: Dataset, run_dir: Path, cfg: dict) -> dict:
    latents = LatentTable.load(run_dir / "latents")
    params, logbook = train_ar_baseline(
        latents, _train_mus(dataset, latents), TrainConfig.from_dict(cfg["train"]), pnode_config(cfg, dataset)
    )
    save_ar_baseline(params, run_dir / "ar_baseline")
    logbook.write_jsonl(run_dir / "train_log.jsonl", mode="a")
    summary = {"final_loss": logbook.records[-1]["loss"] if logbook.records else None}
    write_manifest(
        run_dir, "train-ar-baseline", cfg, {"dataset": dataset.content_hash(), "ar_baseline": dir_hash(run_dir / "ar_baseline")}, {"summary": summary}
    )
    return summary


def load_forecaster(run_dir: str | Path, dataset: Dataset, cfg: dict | None = None) -> Forecaster:
    run_dir = Path(run_dir)
    cfg = cfg or load_run_config(run_dir)
    decoder = load_decoder(run_dir / "decoder")
    pnode = load_pnode(run_dir / "pnode")
    ar = load_ar_baseline(run_dir / "ar_baseline") if (run_dir / "ar_baseline").exists() else None
    fit = _section(LatentFitConfig, cfg.get("latent_fit", {}))
    max_step = float(np.min(np.diff(dataset.times))) / pnode.config.substeps if dataset.n_times > 1 else None
    return Forecaster(decoder, pnode, dataset.stats, fit, ar, max_step)


def checkpoint_hashes(run_dir: str | Path) -> dict[str, str]:
    run_dir = Path(run_dir)
    return {
        name: dir_hash(run_dir / name)
        for name in ("decoder", "latents", "pnode", "ar_baseline")
        if (run_dir / name).exists()
    }
