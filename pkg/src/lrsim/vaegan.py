"""Adversarial autoencoder: encoder, generator, discriminator, their losses
and the alternating two-phase training step.

Training phase A updates only the discriminator on three streams (real,
decoded prior noise, decoded codes). Phase B jointly updates encoder and
generator: the encoder minimizes the latent prior divergence plus the
discriminator-feature reconstruction error; the generator minimizes the
feature error and maximizes the non-saturating fool-the-discriminator
objective. Three gradient blocks are enforced structurally:

  * the feature loss treats the discriminator as a constant,
  * the adversarial objective never reaches the encoder (the code is
    detached before the generator consumes it for that term),
  * the discriminator update sees only detached fakes.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import manifest_episodes
from .errors import ConfigError, ContractError, ShapeError
from .nn import Adam, Diagnostics, Layer, LayerSpec, load_checkpoint, save_checkpoint
from .rng import Rng
from .tensor import BnState, Tensor, no_grad, stop_gradient

LOG_CLAMP = 1e-7

METRICS_HEADER = ["step", "l_prior", "l_llike", "l_gan_dis", "l_gan_gen", "dis_acc_real", "dis_acc_fake"]


@dataclass
class LatentSample:
    mu: Tensor
    log_var: Tensor
    z: Tensor
    eps: np.ndarray | None  # recorded noise; None in eval mode


@dataclass
class LossBreakdown:
    l_prior: float
    l_llike: float
    l_gan_dis: float  # Eq-2 style objective value (to be maximized by Dis)
    l_gan_gen: float  # Eq-3 style objective value (to be maximized by Gen)
    dis_acc_real: float
    dis_acc_fake: float

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in
                   (self.l_prior, self.l_llike, self.l_gan_dis, self.l_gan_gen))


class VaeGan:
    """The three networks plus geometry bookkeeping.

    `enc_channels` drives all three stacks: the encoder/discriminator use one
    stride-2 conv per entry (batch norm on all but the first), the generator
    mirrors them with stride-2 deconvolutions from a dense projection.
    """

    DIS_FEATURE_LAYER = 3  # 1-indexed conv whose pre-norm output is the feature tap

    def __init__(self, height: int, width: int, latent_dim: int, enc_channels=(32, 64, 128),
                 seed: int = 0, dtype=np.float32):
        k = len(enc_channels)
        if height % (1 << k) or width % (1 << k):
            raise ConfigError(f"geometry {height}x{width} not divisible by 2^{k}")
        self.height, self.width = height, width
        self.latent_dim = int(latent_dim)
        self.enc_channels = tuple(int(c) for c in enc_channels)
        self.seed = seed
        self.dtype = dtype
        self.h0, self.w0 = height >> k, width >> k
        self.flat = self.enc_channels[-1] * self.h0 * self.w0
        rng = Rng(seed)

        def conv_stack(r):
            layers = []
            cin = 3
            for i, c in enumerate(self.enc_channels):
                layers.append(Layer(LayerSpec("conv", cin, c, kernel=5, stride=2, padding=2,
                                              norm=(i > 0), activation="relu"), r, dtype))
                cin = c
            return layers

        self.enc_convs = conv_stack(rng.spawn(1))
        self.enc_dense = Layer(LayerSpec("dense", self.flat, 2 * self.latent_dim), rng.spawn(2), dtype)

        g = rng.spawn(3)
        self.gen_dense = Layer(LayerSpec("dense", self.latent_dim, self.flat), g, dtype)
        self.gen_proj_bn = BnState(self.enc_channels[-1], dtype=dtype)
        self.gen_proj_gamma = Tensor(1.0 + g.gaussian((self.enc_channels[-1],), dtype) * dtype(0.02), requires_grad=True)
        self.gen_proj_beta = Tensor(np.zeros(self.enc_channels[-1], dtype=dtype), requires_grad=True)
        self.gen_deconvs = []
        chans = list(reversed(self.enc_channels[:-1])) + [3]
        cin = self.enc_channels[-1]
        for i, c in enumerate(chans):
            last = i == len(chans) - 1
            self.gen_deconvs.append(Layer(LayerSpec("deconv", cin, c, kernel=5, stride=2, padding=2,
                                                    norm=not last,
                                                    activation="tanh" if last else "leaky_relu"), g, dtype))
            cin = c

        self.dis_convs = conv_stack(rng.spawn(4))
        self.dis_dense = Layer(LayerSpec("dense", self.flat, 1, activation="sigmoid"), rng.spawn(5), dtype)
        self.diagnostics = Diagnostics()

    # -- forward passes -------------------------------------------------------

    def encode(self, x, train: bool, eps: np.ndarray | None = None, rng: Rng | None = None) -> LatentSample:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1:] != (3, self.height, self.width):
            raise ShapeError(f"encoder expects [N,3,{self.height},{self.width}], got {x.shape}")
        h = x
        for layer in self.enc_convs:
            h = layer.forward(h, train)
        out = self.enc_dense.forward(h, train)
        mu = out[:, : self.latent_dim]
        log_var = out[:, self.latent_dim :]
        if not train:
            return LatentSample(mu, log_var, mu, None)
        if eps is None:
            if rng is None:
                raise ContractError("train-mode encode needs eps or an rng")
            eps = rng.gaussian((x.shape[0], self.latent_dim), dtype=self.dtype)
        std = T.exp(T.mul(log_var, 0.5))
        z = T.add(mu, T.mul(Tensor(eps), std))
        return LatentSample(mu, log_var, z, eps)

    def decode(self, z, train: bool) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.dtype))
        if not np.all(np.isfinite(z.data)):
            raise ContractError("decode received non-finite codes")
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ShapeError(f"decoder expects [N,{self.latent_dim}], got {z.shape}")
        h = self.gen_dense.forward(z, train)
        h = T.reshape(h, (z.shape[0], self.enc_channels[-1], self.h0, self.w0))
        h = T.batchnorm(h, self.gen_proj_gamma, self.gen_proj_beta, self.gen_proj_bn, train)
        h = T.leaky_relu(h)
        for layer in self.gen_deconvs:
            h = layer.forward(h, train)
        return h

    def discriminate(self, x, train: bool):
        """Full pass -> (probability [N,1], feature tap). The tap is the
        configured conv's output before its batch norm and activation."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        tap_idx = min(self.DIS_FEATURE_LAYER, len(self.dis_convs)) - 1
        tap = None
        h = x
        for i, layer in enumerate(self.dis_convs):
            sink = [] if i == tap_idx else None
            h = layer.forward(h, train, pre_tap=sink)
            if sink is not None:
                tap = sink[0]
        return self.dis_dense.forward(h, train), tap

    def dis_features(self, x, train: bool) -> Tensor:
        """Partial discriminator pass up to the feature tap only."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        tap_idx = min(self.DIS_FEATURE_LAYER, len(self.dis_convs)) - 1
        h = x
        for i, layer in enumerate(self.dis_convs[: tap_idx + 1]):
            sink = [] if i == tap_idx else None
            h = layer.forward(h, train, pre_tap=sink)
            if sink is not None:
                return sink[0]
        raise ContractError("feature tap index beyond discriminator depth")

    # -- parameter access -----------------------------------------------------

    def enc_params(self):
        out = {}
        for i, l in enumerate(self.enc_convs):
            out.update(l.named_params(f"enc.conv{i}"))
        out.update(self.enc_dense.named_params("enc.dense"))
        return out

    def gen_params(self):
        out = dict(self.gen_dense.named_params("gen.dense"))
        out["gen.proj.gamma"] = self.gen_proj_gamma
        out["gen.proj.beta"] = self.gen_proj_beta
        for i, l in enumerate(self.gen_deconvs):
            out.update(l.named_params(f"gen.deconv{i}"))
        return out

    def dis_params(self):
        out = {}
        for i, l in enumerate(self.dis_convs):
            out.update(l.named_params(f"dis.conv{i}"))
        out.update(self.dis_dense.named_params("dis.dense"))
        return out

    def all_params(self):
        return {**self.enc_params(), **self.gen_params(), **self.dis_params()}

    def named_buffers(self):
        out = {}
        for i, l in enumerate(self.enc_convs):
            out.update(l.named_buffers(f"enc.conv{i}"))
        out["gen.proj.running_mean"] = self.gen_proj_bn.mean
        out["gen.proj.running_var"] = self.gen_proj_bn.var
        for i, l in enumerate(self.gen_deconvs):
            out.update(l.named_buffers(f"gen.deconv{i}"))
        for i, l in enumerate(self.dis_convs):
            out.update(l.named_buffers(f"dis.conv{i}"))
        return out

    def bn_states(self):
        states = [self.gen_proj_bn]
        for l in (*self.enc_convs, *self.gen_deconvs, *self.dis_convs):
            if l.bn is not None:
                states.append(l.bn)
        return states

    # -- persistence ------------------------------------------------------------

    def metadata(self) -> dict:
        return {
            "kind": "vaegan",
            "height": self.height,
            "width": self.width,
            "latent_dim": self.latent_dim,
            "enc_channels": list(self.enc_channels),
            "seed": self.seed,
        }

    def save(self, path, extra_meta: dict | None = None, optimizers: dict | None = None):
        tensors = {k: v.data for k, v in self.all_params().items()}
        tensors.update(self.named_buffers())
        if optimizers:
            for name, opt in optimizers.items():
                tensors.update(opt.state_arrays(f"adam.{name}"))
        meta = self.metadata()
        if extra_meta:
            meta.update(extra_meta)
        save_checkpoint(path, tensors, meta)

    def load_arrays(self, arrays: dict):
        for name, p in self.all_params().items():
            if name not in arrays:
                raise ConfigError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != p.data.shape:
                raise ConfigError(f"checkpoint parameter {name} has shape {arrays[name].shape}, expected {p.data.shape}")
            p.data = arrays[name].astype(self.dtype)
        for i, l in enumerate(self.enc_convs):
            l.load_buffers(f"enc.conv{i}", arrays)
        for i, l in enumerate(self.gen_deconvs):
            l.load_buffers(f"gen.deconv{i}", arrays)
        for i, l in enumerate(self.dis_convs):
            l.load_buffers(f"dis.conv{i}", arrays)
        if "gen.proj.running_mean" in arrays:
            self.gen_proj_bn.mean = arrays["gen.proj.running_mean"].astype(self.dtype)
            self.gen_proj_bn.var = arrays["gen.proj.running_var"].astype(self.dtype)
            self.gen_proj_bn.initialized = True

    @classmethod
    def from_checkpoint(cls, path):
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "vaegan":
            raise ConfigError(f"{path} is not an autoencoder checkpoint")
        model = cls(meta["height"], meta["width"], meta["latent_dim"], tuple(meta["enc_channels"]),
                    seed=meta.get("seed", 0))
        model.load_arrays(arrays)
        return model, arrays, meta


# -- losses -------------------------------------------------------------------


def kl_loss(mu: Tensor, log_var: Tensor) -> Tensor:
    """Mean over the batch of 0.5 * sum_d (mu^2 + exp(log_var) - 1 - log_var)."""
    if mu.shape != log_var.shape:
        raise ShapeError(f"mu/log_var shapes differ: {mu.shape} vs {log_var.shape}")
    per_dim = T.sub(T.add(T.mul(mu, mu), T.exp(log_var)), T.add(1.0, log_var))
    return T.mul(T.reduce_mean(T.reduce_sum(per_dim, axes=[1])), 0.5)


def feature_mse(feat_const: Tensor, feat_rec: Tensor) -> Tensor:
    d = T.sub(feat_const, feat_rec)
    return T.reduce_mean(T.mul(d, d))


def feature_loss(model: VaeGan, x, x_rec, train: bool = True) -> Tensor:
    """Mean squared discriminator-feature difference. The discriminator is a
    constant for this cost: its parameters get no gradient, and the real
    branch is evaluated outside the graph entirely."""
    with no_grad():
        y_real = model.dis_features(x, train)
    frozen = _freeze(model.dis_params())
    try:
        y_rec = model.dis_features(x_rec, train)
        return feature_mse(Tensor(y_real.data), y_rec)
    finally:
        _unfreeze(frozen)


def _clamped_log(p: Tensor) -> Tensor:
    return T.log(T.clip(p, LOG_CLAMP, 1.0 - LOG_CLAMP))


def dis_objective(d_real: Tensor, d_fake_u: Tensor, d_fake_z: Tensor) -> Tensor:
    """log Dis(x) + log(1 - Dis(Gen(u))) + log(1 - Dis(Gen(Enc(x)))), batch means."""
    return T.add(T.reduce_mean(_clamped_log(d_real)),
                 T.add(T.reduce_mean(_clamped_log(T.sub(1.0, d_fake_u))),
                       T.reduce_mean(_clamped_log(T.sub(1.0, d_fake_z)))))


def gen_objective(d_fake_u: Tensor, d_fake_z: Tensor) -> Tensor:
    """log Dis(Gen(u)) + log Dis(Gen(Enc(x))) -- the non-saturating form."""
    return T.add(T.reduce_mean(_clamped_log(d_fake_u)), T.reduce_mean(_clamped_log(d_fake_z)))


def gan_losses(model: VaeGan, x, u: np.ndarray, z_enc: Tensor, train: bool = True):
    """(dis_objective, gen_objective) with the encoder blocked from the
    generator objective. Fakes for the dis objective are detached."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=model.dtype))
    with no_grad():
        fake_u_const = model.decode(Tensor(u), train)
        fake_z_const = model.decode(Tensor(z_enc.data), train)
    d_real, _ = model.discriminate(x, train)
    d_fu, _ = model.discriminate(Tensor(fake_u_const.data), train)
    d_fz, _ = model.discriminate(Tensor(fake_z_const.data), train)
    eq_dis = dis_objective(d_real, d_fu, d_fz)

    frozen = _freeze(model.dis_params())
    try:
        fake_u = model.decode(Tensor(u), train)
        fake_z = model.decode(stop_gradient(z_enc), train)
        g_fu, _ = model.discriminate(fake_u, train)
        g_fz, _ = model.discriminate(fake_z, train)
        eq_gen = gen_objective(g_fu, g_fz)
    finally:
        _unfreeze(frozen)
    return eq_dis, eq_gen


def _freeze(params: dict):
    frozen = [(p, p.requires_grad) for p in params.values()]
    for p, _ in frozen:
        p.requires_grad = False
    return frozen


def _unfreeze(frozen):
    for p, was in frozen:
        p.requires_grad = was


# -- training -------------------------------------------------------------------


def train_step(model: VaeGan, opts: dict, x: np.ndarray, rng: Rng,
               eps: np.ndarray | None = None, u: np.ndarray | None = None,
               weights=(1.0, 1.0, 1.0)) -> LossBreakdown:
    """One discriminator update followed by one joint encoder/generator update."""
    n = x.shape[0]
    if eps is None:
        eps = rng.gaussian((n, model.latent_dim), dtype=model.dtype)
    if u is None:
        u = rng.gaussian((n, model.latent_dim), dtype=model.dtype)
    w_prior, w_llike, w_gan = weights

    bn_snaps = [(s, s.snapshot()) for s in model.bn_states()]
    dis_param_snap = {k: p.data.copy() for k, p in model.dis_params().items()}
    dis_opt_snap = (opts["dis"].t, {k: m.copy() for k, m in opts["dis"].m.items()},
                    {k: v.copy() for k, v in opts["dis"].v.items()})

    def rollback(full: bool):
        for s, snap in bn_snaps:
            s.restore(snap)
        if full:
            for k, p in model.dis_params().items():
                p.data = dis_param_snap[k]
            opts["dis"].t = dis_opt_snap[0]
            opts["dis"].m = dis_opt_snap[1]
            opts["dis"].v = dis_opt_snap[2]
        model.diagnostics.skipped_steps += 1

    xt = Tensor(np.asarray(x, dtype=model.dtype))
    if not np.all(np.isfinite(xt.data)):
        rollback(full=False)
        return LossBreakdown(*([float("nan")] * 4), 0.0, 0.0)

    # Encoder/generator graphs are built once; phase A consumes only their
    # values (detached), so the graphs stay valid for the phase-B backward
    # (the discriminator update does not touch encoder/generator parameters).
    try:
        latent = model.encode(xt, train=True, eps=eps)
        x_rec = model.decode(latent.z, train=True)
        # prior noise and the detached code in one 2N batch: the adversarial
        # term will reach the generator but never the encoder (the code
        # enters as plain data, which is exactly the stop-gradient wiring)
        gen_fakes = model.decode(Tensor(np.concatenate([u, latent.z.data])), train=True)
    except ContractError:
        rollback(full=False)
        return LossBreakdown(*([float("nan")] * 4), 0.0, 0.0)

    # phase A: discriminator on real + the two detached fake streams
    d_real, _ = model.discriminate(xt, train=True)
    d_fakes, _ = model.discriminate(Tensor(np.concatenate([gen_fakes.data[:n], x_rec.data])), train=True)
    d_fu, d_fz = d_fakes[:n], d_fakes[n:]
    eq_dis = dis_objective(d_real, d_fu, d_fz)
    l_gan_dis = float(eq_dis.data)
    if not math.isfinite(l_gan_dis):
        rollback(full=False)
        return LossBreakdown(float("nan"), float("nan"), l_gan_dis, float("nan"), 0.0, 0.0)
    acc_real = float((d_real.data > 0.5).mean())
    acc_fake = float((d_fakes.data < 0.5).mean())

    for opt in opts.values():
        opt.zero_grad()
    T.neg(eq_dis).backward()
    opts["dis"].step()
    opts["dis"].zero_grad()

    # phase B: encoder + generator against the freshly updated, now frozen
    # discriminator
    frozen = _freeze(model.dis_params())
    try:
        l_prior_t = kl_loss(latent.mu, latent.log_var)
        with no_grad():
            feat_real = model.dis_features(xt, train=True)
        feat_rec = model.dis_features(x_rec, train=True)
        l_llike_t = feature_mse(Tensor(feat_real.data), feat_rec)

        p_fakes, _ = model.discriminate(gen_fakes, train=True)
        eq_gen = gen_objective(p_fakes[:n], p_fakes[n:])

        total = T.add(T.add(T.mul(l_prior_t, w_prior), T.mul(l_llike_t, w_llike)),
                      T.mul(T.neg(eq_gen), w_gan))
        breakdown = LossBreakdown(float(l_prior_t.data), float(l_llike_t.data),
                                  l_gan_dis, float(eq_gen.data), acc_real, acc_fake)
        if not breakdown.finite():
            rollback(full=True)
            return breakdown
        total.backward()
        opts["enc"].step()
        opts["gen"].step()
        opts["enc"].zero_grad()
        opts["gen"].zero_grad()
    finally:
        _unfreeze(frozen)
    return breakdown


def eval_reconstruction(model: VaeGan, frames: np.ndarray, batch: int = 64) -> dict:
    """Eval-mode (z = mu) reconstruction error. PSNR uses peak 2 (the full
    [-1,1] range); an exact reconstruction reports psnr = inf."""
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, frames.shape[0], batch):
            x = frames[i : i + batch]
            z = model.encode(Tensor(np.asarray(x, dtype=model.dtype)), train=False).z
            rec = model.decode(z, train=False).data
            total += float(((rec - x) ** 2).sum())
            count += x.size
    mse = total / count
    psnr = float("inf") if mse == 0 else 10.0 * math.log10(4.0 / mse)
    return {"mse": mse, "psnr": psnr}


def eval_codes(model: VaeGan, frames: np.ndarray, batch: int = 64) -> np.ndarray:
    """Eval-mode codes (z = mu) for a frame stack."""
    outs = []
    with no_grad():
        for i in range(0, frames.shape[0], batch):
            x = Tensor(np.asarray(frames[i : i + batch], dtype=model.dtype))
            outs.append(model.encode(x, train=False).z.data.copy())
    return np.concatenate(outs, axis=0)


def load_frame_pool(manifest: dict) -> np.ndarray:
    eps = list(manifest_episodes(manifest))
    if not eps:
        raise ConfigError("dataset manifest lists no episodes")
    return np.concatenate([ep.frames for ep in eps], axis=0)


def train(model: VaeGan, manifest: dict, out_dir: str, epochs: int, updates_per_epoch: int,
          batch_size: int, lr: float = 2e-4, weights=(1.0, 1.0, 1.0), seed: int = 0,
          eval_frames: np.ndarray | None = None, resume: str | None = None,
          log_every: int = 50, quiet: bool = False) -> dict:
    """Epoch loop with per-step CSV metrics and per-epoch checkpoints."""
    pool = load_frame_pool(manifest)
    if pool.shape[0] < batch_size:
        raise ConfigError(f"dataset has {pool.shape[0]} frames < batch size {batch_size}")
    os.makedirs(out_dir, exist_ok=True)

    opts = {
        "enc": Adam(model.enc_params(), lr=lr),
        "gen": Adam(model.gen_params(), lr=lr),
        "dis": Adam(model.dis_params(), lr=lr),
    }
    step = 0
    if resume:
        arrays, meta = load_checkpoint(resume)
        model.load_arrays(arrays)
        for name, opt in opts.items():
            opt.load_state(f"adam.{name}", arrays)
        step = int(meta.get("step", 0))

    batch_rng = Rng(seed).spawn(101)
    noise_rng = Rng(seed).spawn(202)
    if eval_frames is None:
        eval_frames = pool[: min(256, pool.shape[0])]

    csv_path = os.path.join(out_dir, "ae_metrics.csv")
    mode = "a" if (resume and os.path.exists(csv_path)) else "w"
    t0 = time.time()
    last_eval = None
    with open(csv_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(METRICS_HEADER)
        for epoch in range(epochs):
            for _ in range(updates_per_epoch):
                idx = batch_rng.integers(0, pool.shape[0], (batch_size,))
                b = train_step(model, opts, pool[idx], noise_rng, weights=weights)
                step += 1
                writer.writerow([step, f"{b.l_prior:.6g}", f"{b.l_llike:.6g}", f"{b.l_gan_dis:.6g}",
                                 f"{b.l_gan_gen:.6g}", f"{b.dis_acc_real:.4f}", f"{b.dis_acc_fake:.4f}"])
                if not quiet and step % log_every == 0:
                    print(f"[ae] step {step} prior {b.l_prior:.4f} llike {b.l_llike:.4f} "
                          f"gan_dis {b.l_gan_dis:.4f} gan_gen {b.l_gan_gen:.4f} "
                          f"acc {b.dis_acc_real:.2f}/{b.dis_acc_fake:.2f} "
                          f"({(time.time() - t0):.0f}s)", flush=True)
            last_eval = eval_reconstruction(model, eval_frames)
            meta = {"epoch": epoch + 1, "step": step, "train_seed": seed,
                    "eval_mse": last_eval["mse"], "eval_psnr": last_eval["psnr"],
                    "weights": list(weights), "lr": lr}
            model.save(os.path.join(out_dir, f"ae_epoch_{epoch + 1:03d}.ckpt"), meta, opts)
            model.save(os.path.join(out_dir, "ae.ckpt"), meta, opts)
    return {"steps": step, "eval": last_eval, "elapsed_s": time.time() - t0,
            "skipped_steps": model.diagnostics.skipped_steps}
