"""Action-conditioned recurrent transition model over latent codes.

State update: h' = tanh(W h + V z + U c), prediction z' = A h'. No bias
terms (a config flag can add them for experiments). Training uses teacher
forcing for the first segment of each window and feeds detached predictions
back for the rest, so gradients never flow through the hallucinated inputs.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .container import read_container, write_container
from .data import EPISODE_MAGIC
from .errors import ConfigError, ShapeError
from .nn import Adam, load_checkpoint, save_checkpoint
from .rng import Rng
from .tensor import Tensor, no_grad, stop_gradient

CONTROL_DIM = 2  # [speed, steering]


@dataclass
class RnnParams:
    W: Tensor  # [H,H]
    V: Tensor  # [H,D]
    U: Tensor  # [H,C]
    A: Tensor  # [D,H]
    bw: Tensor | None = None  # optional hidden bias [H]
    ba: Tensor | None = None  # optional output bias [D]

    @property
    def hidden(self) -> int:
        return self.W.shape[0]

    @property
    def latent(self) -> int:
        return self.A.shape[0]

    def named(self) -> dict:
        out = {"rnn.W": self.W, "rnn.V": self.V, "rnn.U": self.U, "rnn.A": self.A}
        if self.bw is not None:
            out["rnn.bw"] = self.bw
            out["rnn.ba"] = self.ba
        return out

    @classmethod
    def init(cls, hidden: int, latent: int, rng: Rng, bias: bool = False, dtype=np.float32):
        def mk(shape):
            return Tensor(rng.gaussian(shape, dtype) * dtype(0.02), requires_grad=True)

        bw = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True) if bias else None
        ba = Tensor(np.zeros(latent, dtype=dtype), requires_grad=True) if bias else None
        return cls(mk((hidden, hidden)), mk((hidden, latent)), mk((hidden, CONTROL_DIM)), mk((latent, hidden)), bw, ba)


def rnn_step(params: RnnParams, z, h, c):
    """One transition: returns (z_pred [B,D], h_next [B,H])."""
    z = z if isinstance(z, Tensor) else Tensor(z)
    h = h if isinstance(h, Tensor) else Tensor(h)
    c = c if isinstance(c, Tensor) else Tensor(c)
    if z.shape[1] != params.latent or h.shape[1] != params.hidden or c.shape[1] != CONTROL_DIM:
        raise ShapeError(f"rnn_step shapes z{z.shape} h{h.shape} c{c.shape} inconsistent with "
                         f"H={params.hidden} D={params.latent}")
    pre = T.add(T.add(T.matmul(h, T.transpose(params.W)), T.matmul(z, T.transpose(params.V))),
                T.matmul(c, T.transpose(params.U)))
    if params.bw is not None:
        pre = T.add(pre, params.bw)
    h_next = T.tanh(pre)
    z_pred = T.matmul(h_next, T.transpose(params.A))
    if params.ba is not None:
        z_pred = T.add(z_pred, params.ba)
    return z_pred, h_next


def unroll(params: RnnParams, codes: np.ndarray, controls: np.ndarray, teacher_forced: int):
    """Run a [B,n,D] window. Inputs 1..teacher_forced are ground truth; later
    inputs are the model's own detached predictions. Ground-truth controls are
    consumed at every step. Returns the n-1 one-step predictions in order."""
    b, n, d = codes.shape
    if not (1 <= teacher_forced <= n):
        raise ConfigError(f"teacher_forced {teacher_forced} outside [1, {n}]")
    h = Tensor(np.zeros((b, params.hidden), dtype=params.W.dtype))
    preds = []
    z_in = Tensor(codes[:, 0])
    for t in range(n - 1):
        z_pred, h = rnn_step(params, z_in, h, Tensor(controls[:, t]))
        preds.append(z_pred)
        if t + 1 < n - 1:
            z_in = Tensor(codes[:, t + 1]) if t + 1 < teacher_forced else stop_gradient(z_pred)
    return preds


def rnn_loss(preds, targets: np.ndarray) -> Tensor:
    """Mean squared error over batch, time and latent dimensions."""
    n = len(preds)
    if targets.shape[1] != n:
        raise ShapeError(f"{n} predictions vs {targets.shape[1]} targets")
    total = None
    for t, p in enumerate(preds):
        d = T.sub(p, Tensor(targets[:, t]))
        term = T.reduce_mean(T.mul(d, d))
        total = term if total is None else T.add(total, term)
    return T.mul(total, 1.0 / n)


# -- code datasets -------------------------------------------------------------


def save_codes(path, codes: np.ndarray, controls: np.ndarray, meta: dict):
    write_container(path, EPISODE_MAGIC, [("codes", codes.astype(np.float32)),
                                          ("controls", controls.astype(np.float32))],
                    {"kind": "codes", **meta})


def load_codes(path):
    arrays, meta = read_container(path, EPISODE_MAGIC)
    if "codes" not in arrays:
        raise ConfigError(f"{path} is not a code dataset")
    return arrays["codes"], arrays["controls"], meta


@dataclass
class CodeDataset:
    episodes: list  # list of (codes [T,D], controls [T,2])
    latent_dim: int
    meta: dict

    @classmethod
    def load(cls, manifest_path):
        import json

        if os.path.isdir(manifest_path):
            manifest_path = os.path.join(manifest_path, "codes_manifest.json")
        with open(manifest_path) as f:
            doc = json.load(f)
        base = os.path.dirname(os.path.abspath(manifest_path))
        eps = []
        meta = {}
        for name in doc["episodes"]:
            codes, controls, meta = load_codes(os.path.join(base, name))
            eps.append((codes, controls))
        return cls(eps, doc["latent_dim"], {**doc, "last_episode_meta": meta})


def dataset_loss(params: RnnParams, ds: CodeDataset, seq_len: int, teacher_forced: int) -> float:
    """Deterministic held-out loss over non-overlapping windows."""
    total, count = 0.0, 0
    with no_grad():
        for codes, controls in ds.episodes:
            starts = list(range(0, codes.shape[0] - seq_len + 1, seq_len))
            if not starts:
                continue
            batch = np.stack([codes[s : s + seq_len] for s in starts])
            ctrl = np.stack([controls[s : s + seq_len] for s in starts])
            preds = unroll(params, batch, ctrl, teacher_forced)
            total += float(rnn_loss(preds, batch[:, 1:]).data) * batch.shape[0]
            count += batch.shape[0]
    if count == 0:
        raise ConfigError(f"no window of length {seq_len} fits the held-out codes")
    return total / count


def train_rnn(ds: CodeDataset, out_dir: str, hidden: int = 256, seq_len: int = 15,
              teacher_forced: int = 5, epochs: int = 20, batch_size: int = 32,
              updates_per_epoch: int | None = None, lr: float = 2e-4, seed: int = 0,
              holdout: CodeDataset | None = None, quiet: bool = False) -> dict:
    """Adam on the unrolled MSE; per-epoch checkpoints plus step CSV."""
    d = ds.latent_dim
    for codes, _ in ds.episodes:
        if codes.shape[1] != d:
            raise ConfigError("code episodes disagree on latent dimension")
    if teacher_forced > seq_len:
        raise ConfigError(f"teacher_forced {teacher_forced} > seq_len {seq_len}")
    os.makedirs(out_dir, exist_ok=True)

    params = RnnParams.init(hidden, d, Rng(seed))
    opt = Adam(params.named(), lr=lr)

    # windows never cross episode boundaries: index per episode
    episode_windows = []
    for ei, (codes, _) in enumerate(ds.episodes):
        t_max = codes.shape[0] - seq_len + 1
        episode_windows.extend((ei, s) for s in range(max(0, t_max)))
    if not episode_windows:
        raise ConfigError(f"no episode long enough for windows of {seq_len}")
    if updates_per_epoch is None:
        updates_per_epoch = max(1, len(episode_windows) // batch_size)

    rng = Rng(seed).spawn(11)
    csv_path = os.path.join(out_dir, "rnn_metrics.csv")
    t0 = time.time()
    step = 0
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for epoch in range(epochs):
            for _ in range(updates_per_epoch):
                picks = rng.integers(0, len(episode_windows), (batch_size,))
                batch = np.empty((batch_size, seq_len, d), dtype=np.float32)
                ctrl = np.empty((batch_size, seq_len, CONTROL_DIM), dtype=np.float32)
                for j, pick in enumerate(picks):
                    ei, s = episode_windows[int(pick)]
                    codes, controls = ds.episodes[ei]
                    batch[j] = codes[s : s + seq_len]
                    ctrl[j] = controls[s : s + seq_len]
                preds = unroll(params, batch, ctrl, teacher_forced)
                loss = rnn_loss(preds, batch[:, 1:])
                opt.zero_grad()
                loss.backward()
                opt.step()
                step += 1
                writer.writerow([step, f"{float(loss.data):.6g}"])
            meta = {"kind": "rnn", "hidden": hidden, "latent_dim": d, "seq_len": seq_len,
                    "teacher_forced": teacher_forced, "epoch": epoch + 1, "step": step,
                    "seed": seed, **{k: ds.meta[k] for k in ("control_stats", "rate_hz", "ae_checkpoint")
                                     if k in ds.meta}}
            tensors = {k: v.data for k, v in params.named().items()}
            tensors.update(opt.state_arrays("adam.rnn"))
            save_checkpoint(os.path.join(out_dir, f"rnn_epoch_{epoch + 1:03d}.ckpt"), tensors, meta)
            save_checkpoint(os.path.join(out_dir, "rnn.ckpt"), tensors, meta)
            if not quiet:
                print(f"[rnn] epoch {epoch + 1}/{epochs} loss {float(loss.data):.5f} "
                      f"({time.time() - t0:.0f}s)", flush=True)
    result = {"steps": step, "elapsed_s": time.time() - t0,
              "final_train_loss": float(loss.data)}
    if holdout is not None:
        result["holdout_loss"] = dataset_loss(params, holdout, seq_len, teacher_forced)
    return result


def load_rnn(path):
    """Returns (RnnParams with loaded weights, metadata)."""
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "rnn":
        raise ConfigError(f"{path} is not a transition-model checkpoint")
    bias = "rnn.bw" in arrays
    params = RnnParams(
        Tensor(arrays["rnn.W"], requires_grad=True),
        Tensor(arrays["rnn.V"], requires_grad=True),
        Tensor(arrays["rnn.U"], requires_grad=True),
        Tensor(arrays["rnn.A"], requires_grad=True),
        Tensor(arrays["rnn.bw"], requires_grad=True) if bias else None,
        Tensor(arrays["rnn.ba"], requires_grad=True) if bias else None,
    )
    return params, meta
