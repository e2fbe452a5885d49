import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

TINY_CONFIG = {
    "data": {"n_points": 40, "n_traj": 8, "n_times": 5},
    "decoder": {"width": 16, "depth": 2, "omega0": 10.0, "latent_dim": 4},
    "pnode": {"embed_dim": 2, "embed_width": 4, "dyn_width": 8, "substeps": 1},
    "train": {"epochs": 0, "pnode_epochs": 0, "finetune_epochs": 0, "ar_epochs": 0},
    "latent_fit": {"steps": 20},
}


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """Dataset and untrained (randomly initialized) run directory built through the CLI."""
    from latrom.cli import main

    root = tmp_path_factory.mktemp("tiny")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    data, run = root / "data", root / "run"
    assert main(["gen-data", "--config", str(cfg), "--seed", "7", "--out", str(data)]) == 0
    assert main(["pretrain", "--config", str(cfg), "--data", str(data), "--out", str(run)]) == 0
    assert main(["train-dynamics", "--data", str(data), "--out", str(run)]) == 0
    assert main(["train-ar-baseline", "--data", str(data), "--out", str(run)]) == 0
    return {"root": root, "config": cfg, "data": data, "run": run}


# acceptance results, printed once at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
