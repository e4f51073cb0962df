import json
import os
import subprocess
import sys
import time
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]


def cli(*argv, env=None, timeout=6000):
    """Run an lrsim CLI command in a subprocess, raising on failure."""
    proc = subprocess.run([sys.executable, "-m", "lrsim.cli", *argv],
                          capture_output=True, text=True, timeout=timeout,
                          env=env or os.environ.copy())
    if proc.returncode != 0:
        raise RuntimeError(f"lrsim {' '.join(argv)} failed ({proc.returncode}):\n{proc.stderr}\n{proc.stdout}")
    return proc


@pytest.fixture(scope="session")
def reference(tmp_path_factory):
    """The frozen desk-scale reference pipeline: synthetic 32x64 dataset
    (2000 train frames, 400 held out), 10x200 autoencoder updates at batch 32,
    codes at 5 Hz, 20 transition epochs.

    Building takes ~40 min single-core; set LRSIM_ACCEPT_CACHE to a directory
    to reuse finished artifacts across pytest sessions (cache is keyed by the
    reference config hash).
    """
    from lrsim.config import RunConfig
    from lrsim.nn import config_hash

    cfg = RunConfig()
    key = config_hash(cfg.to_dict())
    cache = os.environ.get("LRSIM_ACCEPT_CACHE")
    base = Path(cache) if cache else tmp_path_factory.mktemp("reference")
    root = base / f"ref_{key}"
    done = root / "DONE"

    if not done.exists():
        root.mkdir(parents=True, exist_ok=True)
        cli("gen-data", "--out", str(root / "data"), "--seed", "0")
        cli("gen-data", "--out", str(root / "holdout"), "--frames", "400",
            "--policy", "random-walk", "--seed", "100")
        t0 = time.time()
        cli("train-ae", "--data", str(root / "data"), "--holdout", str(root / "holdout"),
            "--out", str(root / "ae"), "--quiet")
        ae_minutes = (time.time() - t0) / 60.0
        cli("encode", "--ae", str(root / "ae" / "ae.ckpt"), "--data", str(root / "data"),
            "--out", str(root / "codes"))
        cli("encode", "--ae", str(root / "ae" / "ae.ckpt"), "--data", str(root / "holdout"),
            "--out", str(root / "codes_holdout"))
        t1 = time.time()
        cli("train-rnn", "--codes", str(root / "codes"),
            "--holdout-codes", str(root / "codes_holdout"), "--out", str(root / "rnn"), "--quiet")
        (root / "timing.json").write_text(json.dumps(
            {"ae_train_minutes": ae_minutes, "rnn_train_minutes": (time.time() - t1) / 60.0}))
        done.write_text("ok")

    timing = json.loads((root / "timing.json").read_text())
    return {
        "root": root,
        "config": cfg,
        "data": root / "data",
        "holdout": root / "holdout",
        "ae": root / "ae" / "ae.ckpt",
        "codes": root / "codes",
        "codes_holdout": root / "codes_holdout",
        "rnn": root / "rnn" / "rnn.ckpt",
        "timing": timing,
    }
