"""Command-line entry point.

Every subcommand accepts ``--config`` (JSON file or preset name), ``--seed``
and ``--out``. Exit codes: 0 success, 1 contract/usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .datagen import Dataset, generate_dataset
from .errors import ContractError, DivergenceError
from .runs import (
    checkpoint_hashes,
    load_config_file,
    load_forecaster,
    load_run_config,
    resolve_config,
    run_pretrain,
    run_train_ar,
    run_train_dynamics,
    write_manifest,
)

log = logging.getLogger("latrom")

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2


class UsageError(ContractError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file or preset name")
    p.add_argument("--seed", type=int, help="seed for every random draw")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latrom", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    _common(p)
    p.add_argument("--generator", choices=["diffusion", "gyre"])
    p.add_argument("--n-points", type=int)
    p.add_argument("--n-traj", type=int)
    p.add_argument("--n-times", type=int)
    p.add_argument("--splits", type=_int_list, help="train,val,test counts")

    p = sub.add_parser("pretrain", help="stage 1: fit decoder and latent codes")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--omega0", type=float)
    p.add_argument("--latent-dim", type=int)

    for name, help_text in (
        ("train-dynamics", "stage 2: fit the parameterized latent ODE"),
        ("train-ar-baseline", "fit the autoregressive one-step baseline"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--epochs", type=int)

    p = sub.add_parser("forecast", help="forecast one trajectory from its initial snapshot")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--traj", type=int, required=True)
    p.add_argument("--times", type=_float_list, help="normalized query times (default: dataset times)")

    p = sub.add_parser("eval", help="metrics, error-over-time curves and timing")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--timing-repeats", type=int, default=3)

    p = sub.add_parser("gradcheck", help="finite-difference check of decoder and dynamics gradients")
    _common(p, out_required=False)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-5)

    p = sub.add_parser("info", help="summarize a dataset or run directory")
    p.add_argument("path", type=Path)

    p = sub.add_parser("serve", help="serve forecasts over HTTP")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _config(args, extra: dict | None = None) -> dict:
    layers = [load_config_file(args.config)]
    if extra:
        layers.append(extra)
    if args.seed is not None:
        layers.append({"seed": args.seed})
    return resolve_config(*layers)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def cmd_gen_data(args) -> int:
    data = _drop_none(
        {
            "generator": args.generator,
            "n_points": args.n_points,
            "n_traj": args.n_traj,
            "n_times": args.n_times,
            "splits": args.splits,
        }
    )
    cfg = _config(args, {"data": data})
    d = cfg["data"]
    ds = generate_dataset(
        d["generator"],
        n_points=d["n_points"],
        n_traj=d["n_traj"],
        n_times=d["n_times"],
        mu_ranges=d.get("mu_ranges") or None,
        seed=d["seed"],
        splits=d.get("splits"),
        t_end=d.get("t_end"),
    )
    digest = ds.save(args.out)
    write_manifest(args.out, "gen-data", cfg, {"dataset": digest})
    print(f"wrote {args.out} content_hash={digest}")
    return EXIT_OK


def _run_config(args, run_dir: Path, extra: dict | None = None) -> dict:
    base = load_run_config(run_dir) if (run_dir / "run_config.json").exists() else {}
    layers = [{k: v for k, v in base.items() if k != "seed"}, load_config_file(args.config)]
    if extra:
        layers.append(extra)
    if args.seed is not None:
        layers.append({"seed": args.seed})
    return resolve_config(*layers)


def cmd_pretrain(args) -> int:
    dataset = Dataset.load(args.data)
    dec = _drop_none({"width": args.width, "depth": args.depth, "omega0": args.omega0, "latent_dim": args.latent_dim})
    train = _drop_none({"epochs": args.epochs})
    cfg = _config(args, {"decoder": dec, "train": train})
    summary = run_pretrain(dataset, cfg, args.out)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_train_dynamics(args) -> int:
    dataset = Dataset.load(args.data)
    cfg = _run_config(args, args.out, {"train": _drop_none({"pnode_epochs": args.epochs})})
    print(json.dumps(run_train_dynamics(dataset, args.out, cfg)))
    return EXIT_OK


def cmd_train_ar(args) -> int:
    dataset = Dataset.load(args.data)
    cfg = _run_config(args, args.out, {"train": _drop_none({"ar_epochs": args.epochs})})
    print(json.dumps(run_train_ar(dataset, args.out, cfg)))
    return EXIT_OK


def cmd_forecast(args) -> int:
    dataset = Dataset.load(args.data)
    if not 0 <= args.traj < dataset.n_traj:
        raise ContractError(f"trajectory {args.traj} out of range [0, {dataset.n_traj})")
    forecaster = load_forecaster(args.run, dataset)
    times = np.asarray(args.times if args.times else dataset.times, dtype=np.float64)
    pred = forecaster.forecast(dataset.coords, dataset.fields[args.traj, 0], dataset.mus[args.traj], times)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "forecast.bin").write_bytes(np.ascontiguousarray(pred, dtype="<f8").tobytes())
    meta = {
        "traj": args.traj,
        "mu": dataset.mus[args.traj].tolist(),
        "times": times.tolist(),
        "shape": list(pred.shape),
        "field_names": list(dataset.field_names),
        "coords": "dataset mesh",
    }
    (args.out / "forecast.json").write_text(json.dumps(meta, indent=1))
    cfg = load_run_config(args.run)
    write_manifest(args.out, "forecast", cfg, {"dataset": dataset.content_hash(), **checkpoint_hashes(args.run)})
    print(f"wrote forecast of shape {tuple(pred.shape)} to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import evaluate

    dataset = Dataset.load(args.data)
    cfg = load_run_config(args.run)
    forecaster = load_forecaster(args.run, dataset, cfg)
    hashes = {"dataset": dataset.content_hash(), **checkpoint_hashes(args.run)}
    report = evaluate(forecaster, dataset, args.split, args.timing_repeats, hashes, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    (args.out / "curves.csv").write_text(report.curve_csv())
    write_manifest(args.out, "eval", cfg, hashes)
    for model, per_field in report.metrics.items():
        for name, m in per_field.items():
            print(f"{model:12s} {name:4s} mse={m['mse']:.4e} rel_l2={m['rel_l2']:.4e}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import gradient_suite

    seed = 0 if args.seed is None else args.seed
    reports = gradient_suite(seed=seed, eps=args.eps, tol=args.tol)
    ok = True
    result = {}
    for name, rep in reports.items():
        print(f"{'PASS' if rep.passed else 'FAIL'} {name}: worst rel err {rep.worst:.3e} over {rep.n_checked} entries")
        ok &= rep.passed
        result[name] = {"passed": rep.passed, "worst": rep.worst, "per_param": rep.max_rel_err}
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.json").write_text(json.dumps(result, indent=1, sort_keys=True))
    return EXIT_OK if ok else EXIT_CONTRACT


def cmd_info(args) -> int:
    path = args.path
    manifest_path = path / "manifest.json"
    if manifest_path.exists():
        ds = Dataset.load(path)
        print(f"dataset      {path}")
        print(f"generator    {ds.generator}")
        print(f"trajectories {ds.n_traj}  splits " + ", ".join(f"{k}={len(v)}" for k, v in ds.splits.items()))
        print(f"snapshots    {ds.n_times}  points {ds.n_points}  in_dim {ds.in_dim}")
        print(f"fields       {', '.join(ds.field_names)}")
        print(f"parameters   {', '.join(ds.param_names)}")
        print(f"content_hash {ds.content_hash()}")
        return EXIT_OK
    run_manifest = path / "run_manifest.json"
    if run_manifest.exists():
        m = json.loads(run_manifest.read_text())
        print(f"run          {path}")
        print(f"last command {m.get('command')}")
        for name, digest in sorted(checkpoint_hashes(path).items()):
            print(f"{name:12s} {digest}")
        return EXIT_OK
    raise FileNotFoundError(f"{path} holds neither manifest.json nor run_manifest.json")


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(args.run, args.data), host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train-dynamics": cmd_train_dynamics,
    "train-ar-baseline": cmd_train_ar,
    "forecast": cmd_forecast,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "info": cmd_info,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONTRACT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONTRACT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ContractError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
