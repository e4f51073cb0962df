"""Layer compositions, parameter init, the Adam optimizer and checkpoints."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .container import read_container, write_container
from .errors import ConfigError, FormatError, ShapeError
from .rng import Rng
from .tensor import BnState, Tensor

CHECKPOINT_MAGIC = b"LRSM"

INIT_STD = 0.02  # DCGAN-style N(0, 0.02^2) for weights, N(1, 0.02^2) for norm gain


@dataclass
class LayerSpec:
    kind: str  # dense | conv | deconv
    in_ch: int
    out_ch: int
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    output_padding: int | None = None
    norm: bool = False
    activation: str = "none"

    def __post_init__(self):
        if self.kind not in ("dense", "conv", "deconv"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind != "dense" and self.kernel <= 0:
            raise ConfigError(f"{self.kind} layer requires a positive kernel")


def out_shape(spec: LayerSpec, in_shape: tuple) -> tuple:
    """Shape function of one layer on a (C,H,W) or (width,) sample shape.
    Dense layers flatten whatever they are given."""
    if spec.kind == "dense":
        flat = int(np.prod(in_shape))
        if flat != spec.in_ch:
            raise ShapeError(f"dense expects {spec.in_ch} inputs, got {in_shape} -> {flat}")
        return (spec.out_ch,)
    c, h, w = in_shape
    if c != spec.in_ch:
        raise ShapeError(f"{spec.kind} expects {spec.in_ch} channels, got {c}")
    k, s, p = spec.kernel, spec.stride, spec.padding
    if spec.kind == "conv":
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    else:
        op = T.default_output_padding(s, k) if spec.output_padding is None else spec.output_padding
        ho, wo = (h - 1) * s - 2 * p + k + op, (w - 1) * s - 2 * p + k + op
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"{spec.kind} output extent non-positive from {in_shape}")
    return (spec.out_ch, ho, wo)


def chain_shape(specs, in_shape: tuple) -> tuple:
    for spec in specs:
        in_shape = out_shape(spec, in_shape)
    return in_shape


def init_params(spec: LayerSpec, rng: Rng, dtype=np.float32) -> dict:
    """Weights ~ N(0, 0.02^2); gamma ~ N(1, 0.02^2); bias/beta zero."""
    if spec.kind == "dense":
        w = rng.gaussian((spec.in_ch, spec.out_ch), dtype) * dtype(INIT_STD)
    elif spec.kind == "conv":
        w = rng.gaussian((spec.out_ch, spec.in_ch, spec.kernel, spec.kernel), dtype) * dtype(INIT_STD)
    else:
        w = rng.gaussian((spec.in_ch, spec.out_ch, spec.kernel, spec.kernel), dtype) * dtype(INIT_STD)
    params = {
        "w": Tensor(w, requires_grad=True),
        "b": Tensor(np.zeros(spec.out_ch, dtype=dtype), requires_grad=True),
    }
    if spec.norm:
        params["gamma"] = Tensor(1.0 + rng.gaussian((spec.out_ch,), dtype) * dtype(INIT_STD), requires_grad=True)
        params["beta"] = Tensor(np.zeros(spec.out_ch, dtype=dtype), requires_grad=True)
    return params


class Layer:
    """One LayerSpec with its parameters and optional batch-norm state."""

    def __init__(self, spec: LayerSpec, rng: Rng, dtype=np.float32):
        self.spec = spec
        self.params = init_params(spec, rng, dtype)
        self.bn = BnState(spec.out_ch, dtype=dtype) if spec.norm else None

    def _affine(self, x: Tensor) -> Tensor:
        s, p = self.spec, self.params
        if s.kind == "dense":
            if x.ndim > 2:
                x = T.reshape(x, (x.shape[0], -1))
            return T.matmul(x, p["w"]) + p["b"]
        if s.kind == "conv":
            y = T.conv2d(x, p["w"], s.stride, s.padding)
        else:
            y = T.deconv2d(x, p["w"], s.stride, s.padding, s.output_padding)
        return y + T.reshape(p["b"], (1, s.out_ch, 1, 1))

    def forward(self, x: Tensor, train: bool, pre_tap: list | None = None) -> Tensor:
        """Apply affine -> (tap) -> batchnorm -> activation. If `pre_tap` is a
        list, the pre-norm pre-activation tensor is appended to it."""
        y = self._affine(x)
        if pre_tap is not None:
            pre_tap.append(y)
        if self.spec.norm:
            y = T.batchnorm(y, self.params["gamma"], self.params["beta"], self.bn, train)
        return T.activation(self.spec.activation, y)

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.{k}": v for k, v in self.params.items()}

    def named_buffers(self, prefix: str) -> dict:
        if self.bn is None:
            return {}
        return {f"{prefix}.running_mean": self.bn.mean, f"{prefix}.running_var": self.bn.var}

    def load_buffers(self, prefix: str, arrays: dict):
        if self.bn is not None:
            self.bn.mean = arrays[f"{prefix}.running_mean"].astype(self.bn.mean.dtype)
            self.bn.var = arrays[f"{prefix}.running_var"].astype(self.bn.var.dtype)
            self.bn.initialized = True


class Adam:
    """Adam with bias-corrected moments. Non-finite gradients skip the update
    for that parameter and are counted in `skipped_updates`."""

    def __init__(self, params: dict, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)  # name -> Tensor
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.skipped_updates = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                self.skipped_updates += 1
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self, prefix: str) -> dict:
        out = {"%s.t" % prefix: np.array([self.t], dtype=np.int64)}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state(self, prefix: str, arrays: dict):
        key = "%s.t" % prefix
        if key not in arrays:
            return
        self.t = int(arrays[key][0])
        for k in self.params:
            self.m[k] = arrays[f"{prefix}.m.{k}"].astype(self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = arrays[f"{prefix}.v.{k}"].astype(self.v[k].dtype).reshape(self.v[k].shape)


def save_checkpoint(path, tensors: dict, metadata: dict | None = None):
    """tensors: name -> Tensor or ndarray. Bit-exact round trip."""
    arrays = [(k, v.data if isinstance(v, Tensor) else v) for k, v in tensors.items()]
    write_container(path, CHECKPOINT_MAGIC, arrays, metadata)


def load_checkpoint(path):
    return read_container(path, CHECKPOINT_MAGIC)


def config_hash(cfg_dict: dict) -> str:
    return hashlib.sha256(json.dumps(cfg_dict, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Diagnostics:
    """Counters surfaced by training loops."""

    skipped_steps: int = 0
    bn_eval_before_init: int = 0
    notes: list = field(default_factory=list)
