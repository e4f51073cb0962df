"""Live latent-space simulation: warm up a session from encoded seed frames,
step the transition model under user actions, decode frames, and monitor
whether hallucinated codes stay inside the high-density norm band of the
unit Gaussian prior.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .data import Episode, load_episode, normalize_controls, resample_linear, subsample_rate
from .errors import ConfigError, InputError, NumericalError
from .rng import Rng
from .tensor import Tensor, no_grad
from .transition import RnnParams, rnn_step
from .vaegan import VaeGan


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF (Acklam's rational approximation,
    relative error below 1.2e-9 over (0,1))."""
    if not (0.0 < p < 1.0):
        raise ConfigError(f"quantile probability must be in (0,1), got {p}")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    p_low, p_high = 0.02425, 1 - 0.02425
    if p < p_low:
        q = math.sqrt(-2 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    if p > p_high:
        q = math.sqrt(-2 * math.log(1 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)


def chi2_quantile(dof: int, p: float) -> float:
    """Chi-square quantile. Exact closed forms for dof 1 and 2; the
    Wilson-Hilferty cube approximation above (it degrades in the lower
    tail for small dof, where the closed forms take over)."""
    if dof < 1:
        raise ConfigError(f"chi-square dof must be >= 1, got {dof}")
    if dof == 1:
        z = normal_quantile((1.0 + p) / 2.0)
        return z * z
    if dof == 2:
        return -2.0 * math.log1p(-p)
    z = normal_quantile(p)
    t = 1.0 - 2.0 / (9.0 * dof) + z * math.sqrt(2.0 / (9.0 * dof))
    return dof * max(t, 0.0) ** 3


def rho_band(dim: int, p_lo: float = 0.001, p_hi: float = 0.999) -> tuple:
    """Two-sided ||z|| band containing the prior mass between p_lo and p_hi."""
    if dim < 1:
        raise ConfigError(f"latent dimension must be >= 1, got {dim}")
    return (math.sqrt(chi2_quantile(dim, p_lo)), math.sqrt(chi2_quantile(dim, p_hi)))


@dataclass
class ActionCommand:
    steer_deg: float
    speed_mps: float

    STEER_RANGE = (-45.0, 45.0)
    SPEED_RANGE = (0.0, 60.0)

    def clamped(self) -> "ActionCommand":
        if not (math.isfinite(self.steer_deg) and math.isfinite(self.speed_mps)):
            raise InputError("action values must be finite")
        return ActionCommand(
            min(max(self.steer_deg, self.STEER_RANGE[0]), self.STEER_RANGE[1]),
            min(max(self.speed_mps, self.SPEED_RANGE[0]), self.SPEED_RANGE[1]),
        )


@dataclass
class FrameMessage:
    t: int
    width: int
    height: int
    rgb: bytes  # row-major u8, len = width * height * 3
    latent_norm: float
    in_band: bool


@dataclass
class Session:
    id: str
    h: np.ndarray  # [H]
    z: np.ndarray  # [D]
    t: int
    band: tuple
    failed: bool = False
    history: list = field(default_factory=list)


def frame_to_u8(frame: np.ndarray) -> np.ndarray:
    """[3,H,W] in [-1,1] -> u8 [H,W,3]; 0 maps to 128 (round half up)."""
    v = np.floor((frame + 1.0) * 127.5 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def write_ppm(path, rgb_hw3: np.ndarray):
    h, w = rgb_hw3.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb_hw3.tobytes())


class SimulatorEngine:
    """Owns the frozen networks; sessions are cheap per-connection state."""

    def __init__(self, ae: VaeGan, rnn: RnnParams, rnn_meta: dict):
        self.ae = ae
        self.rnn = rnn
        if rnn.latent != ae.latent_dim:
            raise ConfigError(f"transition model latent dim {rnn.latent} != autoencoder {ae.latent_dim}")
        stats = rnn_meta.get("control_stats")
        if stats is None:
            raise ConfigError("transition checkpoint metadata lacks control_stats")
        self.control_stats = stats
        self.rate_hz = float(rnn_meta.get("rate_hz", 5.0))
        self.band = rho_band(ae.latent_dim)
        self._counter = 0

    @classmethod
    def from_checkpoints(cls, ae_path, rnn_path):
        from .transition import load_rnn

        ae, _, _ = VaeGan.from_checkpoint(ae_path)
        rnn, meta = load_rnn(rnn_path)
        return cls(ae, rnn, meta)

    def _next_id(self) -> str:
        self._counter += 1
        return f"s{self._counter:04d}"

    def new_session(self, seed_episode, warmup: int = 5, rng_seed: int = 0) -> Session:
        """Encode the warm-up frames (eval mode) and teacher-force them with
        their recorded controls. warmup=0 primes from a prior sample instead
        (dream-from-noise mode); no episode is needed then."""
        if warmup < 0:
            raise InputError("warmup must be >= 0")
        if warmup == 0:
            z = Rng(rng_seed).gaussian((self.ae.latent_dim,), dtype=self.ae.dtype)
            return Session(self._next_id(), np.zeros(self.rnn.hidden, dtype=self.ae.dtype), z, 0, self.band)

        ep = seed_episode if isinstance(seed_episode, Episode) else load_episode(seed_episode)
        if ep.rate_hz != self.rate_hz:
            ratio = ep.rate_hz / self.rate_hz
            if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
                raise InputError(f"episode rate {ep.rate_hz} Hz incompatible with model rate {self.rate_hz} Hz")
            ep = subsample_rate(ep, self.rate_hz)
        if ep.T < warmup:
            raise InputError(f"episode has {ep.T} frames (< warmup {warmup}) at {self.rate_hz} Hz")
        if ep.frames.shape[2] != self.ae.height or ep.frames.shape[3] != self.ae.width:
            raise ConfigError(f"episode geometry {ep.frames.shape[2:]} != model {(self.ae.height, self.ae.width)}")

        with no_grad():
            codes = self.ae.encode(Tensor(ep.frames[:warmup]), train=False).z.data
        controls = normalize_controls(ep.synced_controls()[:warmup], self.control_stats)
        h = np.zeros((1, self.rnn.hidden), dtype=self.ae.dtype)
        with no_grad():
            for i in range(warmup - 1):
                _, h_t = rnn_step(self.rnn, codes[i : i + 1], h, controls[i : i + 1])
                h = h_t.data
        return Session(self._next_id(), h[0], codes[warmup - 1], warmup, self.band)

    def step(self, session: Session, action: ActionCommand) -> FrameMessage:
        """Advance one transition under the action and decode the frame."""
        if session.failed:
            raise NumericalError(f"session {session.id} already failed")
        act = action.clamped()
        ctl = np.array([[act.speed_mps, act.steer_deg]], dtype=np.float32)
        c = normalize_controls(ctl, self.control_stats)
        with no_grad():
            z_pred, h_next = rnn_step(self.rnn, session.z[None, :], session.h[None, :], c)
            z = z_pred.data[0]
            if not np.all(np.isfinite(z)):
                session.failed = True
                raise NumericalError(f"session {session.id}: non-finite code at t={session.t + 1}")
            frame = self.ae.decode(z_pred.data, train=False).data[0]
        session.h = h_next.data[0]
        session.z = z
        session.t += 1
        norm = float(np.sqrt((z.astype(np.float64) ** 2).sum()))
        in_band = bool(self.band[0] <= norm <= self.band[1])
        session.history.append((session.t, norm, in_band))
        rgb = frame_to_u8(frame)
        return FrameMessage(session.t, self.ae.width, self.ae.height, rgb.tobytes(), norm, in_band)


def read_actions_file(path) -> list:
    """CSV with a steer_deg,speed_mps header."""
    if not os.path.exists(path):
        raise InputError(f"actions file not found: {path}")
    out = []
    with open(path) as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"steer_deg", "speed_mps"} <= set(reader.fieldnames):
            raise InputError("actions file needs a steer_deg,speed_mps header")
        for row in reader:
            out.append(ActionCommand(float(row["steer_deg"]), float(row["speed_mps"])))
    return out


def rollout_to_files(engine: SimulatorEngine, seed_episode, actions: list, steps: int,
                     out_dir: str, warmup: int = 5, rng_seed: int = 0) -> dict:
    """Write frame_{t}.ppm per step plus rollout.csv (t,latent_norm,in_band)
    and warmup.csv with the norms of the encoded seed codes."""
    if steps > 0 and len(actions) < steps:
        raise InputError(f"actions file has {len(actions)} rows < steps {steps}")
    os.makedirs(out_dir, exist_ok=True)
    session = engine.new_session(seed_episode, warmup=warmup, rng_seed=rng_seed)

    with open(os.path.join(out_dir, "warmup.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "latent_norm", "in_band"])
        if warmup > 0:
            ep = seed_episode if isinstance(seed_episode, Episode) else load_episode(seed_episode)
            if ep.rate_hz != engine.rate_hz:
                ep = subsample_rate(ep, engine.rate_hz)
            with no_grad():
                codes = engine.ae.encode(Tensor(ep.frames[:warmup]), train=False).z.data
            for i in range(warmup):
                norm = float(np.linalg.norm(codes[i].astype(np.float64)))
                w.writerow([i + 1, f"{norm:.6f}", int(engine.band[0] <= norm <= engine.band[1])])

    frames_in_band = 0
    with open(os.path.join(out_dir, "rollout.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "latent_norm", "in_band"])
        for i in range(steps):
            msg = engine.step(session, actions[i])
            rgb = np.frombuffer(msg.rgb, dtype=np.uint8).reshape(msg.height, msg.width, 3)
            write_ppm(os.path.join(out_dir, f"frame_{msg.t:04d}.ppm"), rgb)
            w.writerow([msg.t, f"{msg.latent_norm:.6f}", int(msg.in_band)])
            frames_in_band += int(msg.in_band)
    return {"steps": steps, "in_band": frames_in_band, "band": engine.band}
