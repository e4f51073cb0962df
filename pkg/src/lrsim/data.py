"""Training data: procedural road-world generation, preprocessing, sensor
sync, rate subsampling and sequence windowing.

The generator renders a flat-ground perspective road with a dashed center
line. Dash phase advances with the integral of ego speed; road curvature
follows the current steering angle through a bicycle-model curvature, and a
bounded lateral offset integrates steering so actions leave persistent
traces. Everything is a pure function of (config, seed).
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .errors import ConfigError, ContractError, FormatError, InputError, ShapeError
from .rng import Rng

log = logging.getLogger(__name__)

EPISODE_MAGIC = b"CDRV"

CAM_HEIGHT = 1.5  # m above ground
WHEELBASE = 2.7  # m, steering angle -> curvature
LANE_LINE_HALF = 0.12  # m, half-width of painted lines
EDGE_LINE_HALF = 0.10
LEAD_CAR_HEIGHT = 1.4  # m

SKY = np.array([96, 140, 200], dtype=np.float32)
GRASS = np.array([46, 98, 52], dtype=np.float32)
ROAD = np.array([88, 88, 94], dtype=np.float32)
PAINT = np.array([232, 232, 228], dtype=np.float32)
CAR = np.array([28, 30, 38], dtype=np.float32)

POLICIES = ("straight", "curve", "lane-change", "random-walk")


@dataclass
class SyntheticRoadConfig:
    width: int = 64  # final frame width in pixels (render is 2x then downsampled)
    height: int = 32
    lane_width: float = 0.35  # one lane as a fraction of image width at the bottom row
    dash_length: float = 3.0  # m
    dash_gap: float = 3.0  # m
    horizon_row: float = 0.4  # fraction of height
    leading_car: dict | None = None  # {"distance": m, "width": m}
    noise_std: float = 0.0  # u8 pixel noise
    seed: int = 0

    def validate(self):
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"degenerate image extent {self.width}x{self.height}")
        if not (0.0 < self.horizon_row < 1.0):
            raise ConfigError(f"horizon_row must be in (0,1), got {self.horizon_row}")
        if self.dash_length <= 0 or self.dash_gap <= 0:
            raise ConfigError("dash_length and dash_gap must be positive")
        if self.lane_width <= 0:
            raise ConfigError("lane_width must be positive")


@dataclass
class Episode:
    frames: np.ndarray  # [T,3,H,W] float32 in [-1,1]
    frame_ts: np.ndarray  # [T] float64, strictly increasing
    speed_ts: np.ndarray  # sensor timestamps, float64
    speed: np.ndarray  # m/s, float32
    steer_ts: np.ndarray
    steer: np.ndarray  # degrees, float32
    rate_hz: float
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def synced_controls(self) -> np.ndarray:
        """[T,2] = [speed, steering] linearly interpolated at frame times."""
        v = resample_linear(self.speed_ts, self.speed, self.frame_ts)
        a = resample_linear(self.steer_ts, self.steer, self.frame_ts)
        return np.stack([v, a], axis=1).astype(np.float32)

    def validate(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ShapeError(f"frames must be [T,3,H,W], got {self.frames.shape}")
        if self.frames.shape[0] != self.frame_ts.shape[0]:
            raise ShapeError("frame count and frame timestamps disagree")
        for name, ts in (("frame", self.frame_ts), ("speed", self.speed_ts), ("steer", self.steer_ts)):
            if np.any(np.diff(ts) <= 0):
                raise ContractError(f"{name} timestamps not strictly increasing")
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < -1.0 - 1e-6 or hi > 1.0 + 1e-6:
            raise ContractError(f"frame values outside [-1,1]: [{lo}, {hi}]")


class RoadProjection:
    """Flat-ground pinhole projection shared by the renderer and by tests
    that invert rendered frames back to world coordinates."""

    def __init__(self, cfg: SyntheticRoadConfig):
        self.w2 = cfg.width * 2
        self.h2 = cfg.height * 2
        self.focal = float(self.h2)  # px
        self.horizon_px = cfg.horizon_row * self.h2
        self.k = self.focal * CAM_HEIGHT  # row offset * distance = k
        self.d_near = self.k / (self.h2 - 1 - self.horizon_px)
        px_per_m_bottom = self.focal / self.d_near
        self.lane_w_m = cfg.lane_width * self.w2 / px_per_m_bottom
        self.road_half_m = self.lane_w_m  # one lane each side of the center line

    def row_to_distance(self, row):
        return self.k / (np.asarray(row, dtype=np.float64) - self.horizon_px)

    def distance_to_row(self, d):
        return self.horizon_px + self.k / np.asarray(d, dtype=np.float64)


def steering_to_curvature(steer_deg: float) -> float:
    return math.tan(math.radians(steer_deg)) / WHEELBASE


def _render_raw(proj: RoadProjection, cfg: SyntheticRoadConfig, phase: float, kappa: float,
                x_lat: float, lead_distance: float | None) -> np.ndarray:
    """One u8 RGB frame [2H, 2W, 3] of the road world."""
    h2, w2 = proj.h2, proj.w2
    canvas = np.empty((h2, w2, 3), dtype=np.float32)
    hr = int(math.floor(proj.horizon_px)) + 1
    canvas[:hr] = SKY
    canvas[hr:] = GRASS

    rows = np.arange(hr, h2)
    d = proj.row_to_distance(rows)[:, None]  # [R,1] distance per row
    ppm = proj.focal / d  # px per meter at that distance
    # road center bends with curvature and shifts against the ego's lateral offset
    center = w2 / 2 + (kappa * d * d / 2 - x_lat) * ppm
    cols = np.arange(w2)[None, :]
    off = cols - center

    road = np.abs(off) <= proj.road_half_m * ppm
    region = canvas[hr:]
    region[road] = ROAD

    cycle = cfg.dash_length + cfg.dash_gap
    dash_on = ((d[:, 0] + phase) % cycle) < cfg.dash_length
    line_half = np.maximum(LANE_LINE_HALF * ppm, 0.6)
    center_line = (np.abs(off) <= line_half) & dash_on[:, None]
    edge_half = np.maximum(EDGE_LINE_HALF * ppm, 0.6)
    edges = (np.abs(off - proj.road_half_m * ppm) <= edge_half) | (np.abs(off + proj.road_half_m * ppm) <= edge_half)
    region[(center_line | edges) & road] = PAINT

    if lead_distance is not None and lead_distance > proj.d_near:
        dl = float(lead_distance)
        ppm_l = proj.focal / dl
        row_bot = proj.distance_to_row(dl)
        row_top = row_bot - LEAD_CAR_HEIGHT * ppm_l
        cx = w2 / 2 + (kappa * dl * dl / 2 - x_lat) * ppm_l
        half_w = cfg.leading_car.get("width", 1.8) / 2 * ppm_l
        r0, r1 = max(0, int(row_top)), min(h2, int(row_bot) + 1)
        c0, c1 = max(0, int(cx - half_w)), min(w2, int(cx + half_w) + 1)
        if r1 > r0 and c1 > c0:
            canvas[r0:r1, c0:c1] = CAR

    return canvas


def _policy_series(policy: str, t: np.ndarray, rng: Rng):
    """Speed (m/s) and steering (deg) series on the control-time grid."""
    v0 = 20.0
    n = t.shape[0]
    if policy == "straight":
        return np.full(n, v0, np.float64), np.zeros(n, np.float64)
    if policy == "curve":
        return np.full(n, v0, np.float64), 6.0 * np.sin(2 * np.pi * t / 50.0)
    if policy == "lane-change":
        return np.full(n, v0, np.float64), 4.0 * np.sin(2 * np.pi * t / 10.0) ** 3
    if policy == "random-walk":
        dt = float(t[1] - t[0]) if n > 1 else 0.01
        ev = rng.gaussian(n).astype(np.float64)
        ea = rng.gaussian(n).astype(np.float64)
        v = np.empty(n)
        a = np.empty(n)
        v[0], a[0] = v0, 0.0
        th_v, sg_v = 0.15, 2.5
        th_a, sg_a = 0.5, 3.0
        for i in range(1, n):
            v[i] = v[i - 1] + th_v * (v0 - v[i - 1]) * dt + sg_v * math.sqrt(dt) * ev[i]
            a[i] = a[i - 1] - th_a * a[i - 1] * dt + sg_a * math.sqrt(dt) * ea[i]
        return np.clip(v, 8.0, 30.0), np.clip(a, -10.0, 10.0)
    raise ConfigError(f"unknown action policy {policy!r}; choose one of {POLICIES}")


def synth_generate(cfg: SyntheticRoadConfig, n_frames: int, action_policy: str = "straight",
                   rate_hz: float = 20.0, control_hz: float = 100.0, controls=None) -> Episode:
    """Render an episode. Deterministic in (cfg, n_frames, policy, rates).
    `controls=(speed, steer)` overrides the policy with explicit series on
    the control-time grid."""
    cfg.validate()
    if n_frames < 1:
        raise ConfigError("n_frames must be >= 1")
    rng = Rng(cfg.seed)
    proj = RoadProjection(cfg)

    frame_ts = np.arange(n_frames, dtype=np.float64) / rate_hz
    n_ctrl = int(math.ceil(frame_ts[-1] * control_hz)) + 2
    ctrl_ts = np.arange(n_ctrl, dtype=np.float64) / control_hz
    if controls is not None:
        speed = np.broadcast_to(np.asarray(controls[0], np.float64), (n_ctrl,)).copy()
        steer = np.broadcast_to(np.asarray(controls[1], np.float64), (n_ctrl,)).copy()
    else:
        speed, steer = _policy_series(action_policy, ctrl_ts, rng.spawn(1))

    v_f = resample_linear(ctrl_ts, speed, frame_ts)
    a_f = resample_linear(ctrl_ts, steer, frame_ts)
    dt = 1.0 / rate_hz

    # ground-truth state integrals, exposed through meta for verification
    phase = np.zeros(n_frames, dtype=np.float64)
    phase[1:] = np.cumsum(v_f[:-1] * dt)
    x_lat = np.zeros(n_frames, dtype=np.float64)
    for i in range(1, n_frames):
        x_lat[i] = np.clip(x_lat[i - 1] + v_f[i - 1] * dt * math.sin(math.radians(a_f[i - 1])) * 0.3,
                           -0.6 * proj.lane_w_m, 0.6 * proj.lane_w_m)
    lead = None
    if cfg.leading_car is not None:
        lead = np.empty(n_frames, dtype=np.float64)
        lead[0] = cfg.leading_car.get("distance", 30.0)
        v_lead = cfg.leading_car.get("speed", 20.0)
        for i in range(1, n_frames):
            lead[i] = np.clip(lead[i - 1] + (v_lead - v_f[i - 1]) * dt, 5.0, 120.0)

    noise_rng = rng.spawn(2)
    frames = np.empty((n_frames, 3, cfg.height, cfg.width), dtype=np.float32)
    for i in range(n_frames):
        raw = _render_raw(proj, cfg, phase[i], steering_to_curvature(a_f[i]), x_lat[i],
                          None if lead is None else lead[i])
        if cfg.noise_std > 0:
            raw = raw + noise_rng.gaussian(raw.shape, dtype=np.float32) * cfg.noise_std
        raw_u8 = np.clip(np.floor(raw + 0.5), 0, 255).astype(np.uint8)
        frames[i] = preprocess_frame(raw_u8)

    meta = {
        "policy": action_policy,
        "dash_phase": phase.tolist(),
        "x_lat": x_lat.tolist(),
        "config": {k: v for k, v in cfg.__dict__.items()},
    }
    return Episode(frames, frame_ts, ctrl_ts.copy(), speed.astype(np.float32),
                   ctrl_ts.copy(), steer.astype(np.float32), rate_hz, meta)


def preprocess_frame(raw: np.ndarray) -> np.ndarray:
    """u8 RGB [H,W,3] -> float32 [3,H/2,W/2] in [-1,1] (2x2 area average)."""
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ShapeError(f"expected [H,W,3] RGB, got {raw.shape}")
    h, w = raw.shape[:2]
    if h % 2 or w % 2:
        raise ShapeError(f"frame extents must be even, got {h}x{w}")
    small = raw.reshape(h // 2, 2, w // 2, 2, 3).astype(np.float32).mean(axis=(1, 3))
    return (small / 127.5 - 1.0).transpose(2, 0, 1).astype(np.float32)


def resample_linear(src_t, src_v, dst_t) -> np.ndarray:
    """Linear interpolation with clamp-to-endpoint outside the source range."""
    src_t = np.asarray(src_t, dtype=np.float64)
    src_v = np.asarray(src_v, dtype=np.float64)
    if src_t.ndim != 1 or src_t.shape[0] < 2:
        raise ContractError("resample_linear needs at least two source samples")
    if np.any(np.diff(src_t) <= 0):
        raise ContractError("source timestamps must be strictly increasing")
    return np.interp(np.asarray(dst_t, dtype=np.float64), src_t, src_v)


def subsample_rate(ep: Episode, dst_hz: float) -> Episode:
    """Keep every (rate_hz/dst_hz)-th frame; sensor series pass through."""
    ratio = ep.rate_hz / dst_hz
    stride = int(round(ratio))
    if abs(ratio - stride) > 1e-9 or stride < 1:
        raise ConfigError(f"{ep.rate_hz} Hz -> {dst_hz} Hz is not an integer stride")
    if stride == 1:
        return ep
    meta = dict(ep.meta)
    for key in ("dash_phase", "x_lat"):
        if key in meta:
            meta[key] = meta[key][::stride]
    return Episode(ep.frames[::stride].copy(), ep.frame_ts[::stride].copy(),
                   ep.speed_ts, ep.speed, ep.steer_ts, ep.steer, dst_hz, meta)


@dataclass
class WindowBatch:
    data: np.ndarray  # [B, n, ...] codes or frames
    controls: np.ndarray  # [B, n, 2] normalized [speed, steering]
    starts: np.ndarray  # [B] window start indices
    stride: int = 1


def window_batches(series: np.ndarray, controls: np.ndarray, n: int, batch_size: int,
                   rng: Rng, count: int, stride: int = 1):
    """Yield `count` batches of random length-n windows (uniform starts)."""
    t_total = series.shape[0]
    hi = t_total - (n - 1) * stride
    if hi <= 0:
        log.warning("series of length %d too short for windows of %d (stride %d)", t_total, n, stride)
        return
    for _ in range(count):
        starts = rng.integers(0, hi, (batch_size,))
        idx = starts[:, None] + np.arange(n)[None, :] * stride
        yield WindowBatch(series[idx], controls[idx], starts, stride)


def control_stats(episodes) -> dict:
    """Global mean/std of frame-synced [speed, steering] across episodes.
    Constant channels get std 1 so normalization maps them to exactly zero."""
    ctl = np.concatenate([ep.synced_controls() for ep in episodes], axis=0)
    mean = ctl.mean(axis=0)
    std = ctl.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    return {"mean": [float(mean[0]), float(mean[1])], "std": [float(std[0]), float(std[1])]}


def normalize_controls(controls: np.ndarray, stats: dict) -> np.ndarray:
    mean = np.asarray(stats["mean"], dtype=np.float32)
    std = np.asarray(stats["std"], dtype=np.float32)
    return ((controls - mean) / std).astype(np.float32)


# -- persistence --------------------------------------------------------------


def save_episode(path, ep: Episode):
    arrays = [
        ("frames", ep.frames.astype(np.float32)),
        ("frame_ts", ep.frame_ts.astype(np.float64)),
        ("speed_ts", ep.speed_ts.astype(np.float64)),
        ("speed", ep.speed.astype(np.float32)),
        ("steer_ts", ep.steer_ts.astype(np.float64)),
        ("steer", ep.steer.astype(np.float32)),
    ]
    meta = {"rate_hz": ep.rate_hz, "kind": "episode", **ep.meta}
    write_container(path, EPISODE_MAGIC, arrays, meta)


def load_episode(path) -> Episode:
    arrays, meta = read_container(path, EPISODE_MAGIC)
    required = ("frames", "frame_ts", "speed_ts", "speed", "steer_ts", "steer")
    missing = [k for k in required if k not in arrays]
    if missing:
        raise FormatError(f"{path}: episode container missing arrays {missing}")
    rate = float(meta.pop("rate_hz", 0.0))
    meta.pop("kind", None)
    ep = Episode(arrays["frames"], arrays["frame_ts"], arrays["speed_ts"], arrays["speed"],
                 arrays["steer_ts"], arrays["steer"], rate, meta)
    t, _, h, w = ep.frames.shape
    if ep.frame_ts.shape[0] != t:
        raise FormatError(f"{path}: manifest T disagrees with frame payload")
    return ep


def write_manifest(path, episode_paths, stats: dict, geometry: tuple, rate_hz: float, extra: dict | None = None):
    doc = {
        "episodes": [os.path.basename(p) for p in episode_paths],
        "control_stats": stats,
        "geometry": {"height": geometry[0], "width": geometry[1]},
        "rate_hz": rate_hz,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def load_manifest(path) -> dict:
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    if not os.path.exists(path):
        raise InputError(f"dataset manifest not found at {path}")
    with open(path) as f:
        doc = json.load(f)
    doc["_dir"] = os.path.dirname(os.path.abspath(path))
    return doc


def manifest_episodes(doc: dict):
    """Load every episode listed in a manifest (lazily, in order)."""
    for name in doc["episodes"]:
        yield load_episode(os.path.join(doc["_dir"], name))
