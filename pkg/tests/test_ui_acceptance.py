"""Secondary-component acceptance: the browser cockpit's integration suite
run against live services (a trained model and a zero-output-weight
transition model for the out-of-band indicator). Requires node/npm; skips
with a reason otherwise."""

import os
import shutil
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parents[1]
FRONTEND = REPO / "frontend"

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]


def free_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def wait_health(port, timeout=60):
    import httpx

    t0 = time.time()
    while time.time() - t0 < timeout:
        try:
            if httpx.get(f"http://127.0.0.1:{port}/health", timeout=2).status_code == 200:
                return
        except Exception:
            time.sleep(0.3)
    raise TimeoutError(f"service on {port} did not come up")


@pytest.fixture(scope="module")
def npm():
    exe = shutil.which("npx")
    if exe is None:
        pytest.skip("node/npx not available for the cockpit integration suite")
    if not (FRONTEND / "node_modules").exists():
        r = subprocess.run(["npm", "install"], cwd=FRONTEND, capture_output=True, text=True, timeout=600)
        if r.returncode != 0:
            pytest.skip(f"npm install failed: {r.stderr[:500]}")
    return exe


def make_zero_rnn(src_ckpt, dst_ckpt):
    """Zero output weights force every hallucinated code to the origin,
    whose norm sits below the band for any D >= 2."""
    from lrsim.nn import load_checkpoint, save_checkpoint

    arrays, meta = load_checkpoint(src_ckpt)
    arrays = dict(arrays)
    arrays["rnn.A"] = np.zeros_like(arrays["rnn.A"])
    save_checkpoint(dst_ckpt, arrays, meta)


def test_cockpit_against_live_models(reference, npm, tmp_path):
    zero_ckpt = tmp_path / "rnn_zero.ckpt"
    make_zero_rnn(reference["rnn"], zero_ckpt)

    port_main, port_zero = free_port(), free_port()
    data_root = str(reference["data"])

    def spawn(rnn_path, port):
        return subprocess.Popen(
            [sys.executable, "-m", "lrsim.cli", "serve", "--ae", str(reference["ae"]),
             "--rnn", str(rnn_path), "--port", str(port), "--episode-root", data_root],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)

    main_proc = spawn(reference["rnn"], port_main)
    zero_proc = spawn(zero_ckpt, port_zero)
    try:
        wait_health(port_main)
        wait_health(port_zero)
        env = {**os.environ,
               "LRSIM_WS_URL": f"ws://127.0.0.1:{port_main}/session",
               "LRSIM_WS_URL_ZERO": f"ws://127.0.0.1:{port_zero}/session",
               "LRSIM_EPISODE": "episode_000.cdrv"}
        r = subprocess.run([npm, "vitest", "run", "--dir", "test-integration"],
                           cwd=FRONTEND, env=env, capture_output=True, text=True, timeout=600)
        assert r.returncode == 0, f"cockpit integration suite failed:\n{r.stdout[-3000:]}\n{r.stderr[-2000:]}"
        assert "skipped" not in r.stdout.split("Test Files")[-1].split("\n")[0], r.stdout[-1500:]
        print("ACCEPT ui-session: PASS (connects, >=5 fps, steering alters frames, "
              "out-of-band indicator fires)", flush=True)
    finally:
        for proc in (main_proc, zero_proc):
            proc.send_signal(signal.SIGINT)
        for proc in (main_proc, zero_proc):
            try:
                proc.wait(timeout=15)
            except subprocess.TimeoutExpired:
                proc.kill()
