"""Single entry point: data generation, training, encoding, evaluation,
rollouts and the live service.

Exit codes: 0 success, 2 usage/config error, 3 environment error,
4 numerical failure. LRSIM_THREADS=0 forces single-threaded deterministic
mode (set before numpy loads, which is why heavy imports live inside the
command functions).
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _setup_threads():
    v = os.environ.get("LRSIM_THREADS")
    if v is None:
        return
    n = max(1, int(v)) if v.isdigit() else 1
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(n)


def _load_config(args) -> "RunConfig":
    from .config import RunConfig

    if getattr(args, "paper_scale", False):
        cfg = RunConfig.paper_scale()
    elif getattr(args, "config", None):
        cfg = RunConfig.from_file(args.config)
    else:
        cfg = RunConfig()
    overrides = {}
    for field in ("height", "width", "latent_dim", "seq_len", "teacher_forced", "frames",
                  "policy", "seed", "noise_std", "rnn_hidden", "rnn_rate_hz"):
        if hasattr(args, field):
            overrides[field] = getattr(args, field)
    return cfg.apply_overrides(overrides)


def cmd_gen_data(args) -> int:
    from .config import RunConfig
    from .data import SyntheticRoadConfig, control_stats, save_episode, synth_generate, write_manifest

    cfg = _load_config(args).validate()
    os.makedirs(args.out, exist_ok=True)
    policies = [cfg.policy]
    if cfg.policy == "mixed":
        policies = ["straight", "curve", "lane-change", "random-walk"]
    per = cfg.frames // len(policies)
    counts = [per] * len(policies)
    counts[-1] += cfg.frames - per * len(policies)

    episodes, paths = [], []
    for i, (policy, count) in enumerate(zip(policies, counts)):
        lead = {"distance": 28.0, "width": 1.8, "speed": 20.0} if (cfg.policy == "mixed" and i == 3) else None
        scfg = SyntheticRoadConfig(width=cfg.width, height=cfg.height, noise_std=cfg.noise_std,
                                   seed=cfg.seed + i, leading_car=lead)
        ep = synth_generate(scfg, count, policy, rate_hz=cfg.frame_rate_hz)
        path = os.path.join(args.out, f"episode_{i:03d}.cdrv")
        save_episode(path, ep)
        episodes.append(ep)
        paths.append(path)
        print(f"wrote {path} ({count} frames, {policy})")

    stats = control_stats(episodes)
    write_manifest(os.path.join(args.out, "manifest.json"), paths, stats,
                   (cfg.height, cfg.width), cfg.frame_rate_hz,
                   {"frames": cfg.frames, "seed": cfg.seed, "policy": cfg.policy})
    cfg.echo(args.out, "gen-data", vars(args))
    return 0


def cmd_train_ae(args) -> int:
    from . import vaegan
    from .data import load_manifest
    from .vaegan import VaeGan

    cfg = _load_config(args)
    if args.epochs is not None:
        cfg.ae_epochs = args.epochs
    if args.updates is not None:
        cfg.ae_updates_per_epoch = args.updates
    if args.batch is not None:
        cfg.ae_batch = args.batch
    if args.lr is not None:
        cfg.ae_lr = args.lr
    for name in ("w_prior", "w_llike", "w_gan"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, v)
    cfg.validate()

    manifest = load_manifest(args.data)
    eval_frames = None
    if args.holdout:
        eval_frames = vaegan.load_frame_pool(load_manifest(args.holdout))
    model = VaeGan(cfg.height, cfg.width, cfg.latent_dim, tuple(cfg.enc_channels), seed=cfg.seed)
    cfg.echo(args.out, "train-ae", vars(args))
    result = vaegan.train(model, manifest, args.out, cfg.ae_epochs, cfg.ae_updates_per_epoch,
                          cfg.ae_batch, lr=cfg.ae_lr, weights=(cfg.w_prior, cfg.w_llike, cfg.w_gan),
                          seed=cfg.seed, eval_frames=eval_frames, resume=args.resume,
                          quiet=args.quiet)
    print(f"trained {result['steps']} steps in {result['elapsed_s']:.0f}s; "
          f"eval mse {result['eval']['mse']:.5f} psnr {result['eval']['psnr']:.2f} dB; "
          f"skipped {result['skipped_steps']}")
    return 0


def cmd_encode(args) -> int:
    import numpy as np

    from .data import load_manifest, manifest_episodes, normalize_controls, subsample_rate
    from .transition import save_codes
    from .vaegan import VaeGan, eval_codes

    cfg = _load_config(args)
    from .errors import ConfigError

    model, _, meta = VaeGan.from_checkpoint(args.ae)
    manifest = load_manifest(args.data)
    if manifest["geometry"] != {"height": model.height, "width": model.width}:
        raise ConfigError(f"dataset geometry {manifest['geometry']} != model "
                          f"{model.height}x{model.width}")
    rate = args.rate if args.rate is not None else cfg.rnn_rate_hz
    os.makedirs(args.out, exist_ok=True)
    stats = manifest["control_stats"]
    names = []
    for i, ep in enumerate(manifest_episodes(manifest)):
        ep = subsample_rate(ep, rate)
        codes = eval_codes(model, ep.frames)
        controls = normalize_controls(ep.synced_controls(), stats)
        name = f"codes_{i:03d}.cdrv"
        save_codes(os.path.join(args.out, name), codes, controls,
                   {"latent_dim": model.latent_dim, "rate_hz": rate, "T": codes.shape[0]})
        names.append(name)
        print(f"wrote {name} (T={codes.shape[0]}, D={model.latent_dim})")
    with open(os.path.join(args.out, "codes_manifest.json"), "w") as f:
        json.dump({"episodes": names, "latent_dim": model.latent_dim, "control_stats": stats,
                   "rate_hz": rate, "ae_checkpoint": os.path.abspath(args.ae)}, f, indent=2, sort_keys=True)
    cfg.echo(args.out, "encode", vars(args))
    return 0


def cmd_train_rnn(args) -> int:
    from .errors import ConfigError
    from .transition import CodeDataset, train_rnn

    cfg = _load_config(args)
    if args.epochs is not None:
        cfg.rnn_epochs = args.epochs
    if args.batch is not None:
        cfg.rnn_batch = args.batch
    if args.lr is not None:
        cfg.rnn_lr = args.lr
    if cfg.teacher_forced > cfg.seq_len:
        raise ConfigError(f"--teacher {cfg.teacher_forced} > --seq-len {cfg.seq_len}")
    cfg.validate()

    ds = CodeDataset.load(args.codes)
    holdout = CodeDataset.load(args.holdout_codes) if args.holdout_codes else None
    cfg.echo(args.out, "train-rnn", vars(args))
    result = train_rnn(ds, args.out, hidden=cfg.rnn_hidden, seq_len=cfg.seq_len,
                       teacher_forced=cfg.teacher_forced, epochs=cfg.rnn_epochs,
                       batch_size=cfg.rnn_batch, updates_per_epoch=cfg.rnn_updates_per_epoch,
                       lr=cfg.rnn_lr, seed=cfg.seed, holdout=holdout, quiet=args.quiet)
    line = f"trained {result['steps']} steps in {result['elapsed_s']:.0f}s; final loss {result['final_train_loss']:.5f}"
    if "holdout_loss" in result:
        line += f"; holdout {result['holdout_loss']:.5f}"
    print(line)
    return 0


def cmd_eval(args) -> int:
    import numpy as np

    from .data import load_manifest, manifest_episodes, normalize_controls, subsample_rate
    from .sim import rho_band
    from .tensor import Tensor, no_grad
    from .transition import dataset_loss, CodeDataset, load_rnn
    from .vaegan import VaeGan, eval_codes, eval_reconstruction, kl_loss

    model, _, _ = VaeGan.from_checkpoint(args.ae)
    manifest = load_manifest(args.data)
    episodes = list(manifest_episodes(manifest))
    frames = np.concatenate([ep.frames for ep in episodes], axis=0)

    recon = eval_reconstruction(model, frames)
    kl_total, nb = 0.0, 0
    codes = eval_codes(model, frames)
    with no_grad():
        for i in range(0, frames.shape[0], 64):
            x = Tensor(frames[i : i + 64].astype(np.float32))
            ls = model.encode(x, train=False)
            kl_total += float(kl_loss(ls.mu, ls.log_var).data) * x.shape[0]
            nb += x.shape[0]
    norms = np.linalg.norm(codes.astype(np.float64), axis=1)
    band = rho_band(model.latent_dim)
    report = {
        "recon_mse": recon["mse"],
        "recon_psnr": recon["psnr"],
        "kl": kl_total / nb,
        "latent_norm_mean": float(norms.mean()),
        "latent_norm_std": float(norms.std()),
        "latent_in_band_frac": float(((norms >= band[0]) & (norms <= band[1])).mean()),
        "rnn_holdout_loss": None,
    }

    if args.rnn:
        rnn, meta = load_rnn(args.rnn)
        stats = meta["control_stats"]
        eps = []
        for ep in episodes:
            sub = subsample_rate(ep, float(meta.get("rate_hz", 5.0)))
            eps.append((eval_codes(model, sub.frames), normalize_controls(sub.synced_controls(), stats)))
        ds = CodeDataset(eps, model.latent_dim, meta)
        report["rnn_holdout_loss"] = dataset_loss(rnn, ds, meta.get("seq_len", 15), meta.get("teacher_forced", 5))

    for k, v in report.items():
        print(f"{k}: {'absent' if v is None else f'{v:.6g}'}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval_report.csv"), "w") as f:
            f.write(",".join(report.keys()) + "\n")
            f.write(",".join("" if v is None else f"{v:.8g}" for v in report.values()) + "\n")
        _load_config(args).echo(args.out, "eval", vars(args))
    return 0


def cmd_rollout(args) -> int:
    from .sim import SimulatorEngine, read_actions_file, rollout_to_files

    engine = SimulatorEngine.from_checkpoints(args.ae, args.rnn)
    actions = read_actions_file(args.actions)
    result = rollout_to_files(engine, args.seed_episode, actions, args.steps, args.out,
                              warmup=args.warmup, rng_seed=args.rng_seed)
    _load_config(args).echo(args.out, "rollout", vars(args))
    print(f"rollout: {result['in_band']}/{result['steps']} steps in band "
          f"[{result['band'][0]:.2f}, {result['band'][1]:.2f}]")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    from .sim import SimulatorEngine

    engine = SimulatorEngine.from_checkpoints(args.ae, args.rnn)
    app = create_app(engine, static_dir=args.static_dir, episode_root=args.episode_root,
                     default_episode=args.default_episode)
    print(f"serving on {args.host}:{args.port} "
          f"(geometry {engine.ae.height}x{engine.ae.width}, D={engine.ae.latent_dim})")
    try:
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    except OSError as e:
        print(f"error: cannot bind {args.host}:{args.port}: {e}", file=sys.stderr)
        return 3
    except SystemExit as e:  # uvicorn wraps startup failures
        return 3 if e.code else 0
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrsim", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON config file (flags override it)")
        sp.add_argument("--paper-scale", action="store_true", help="start from the paper-scale preset")
        sp.add_argument("--seed", type=int, default=None)
        if out_required:
            sp.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("gen-data", help="generate a synthetic road dataset")
    common(g)
    g.add_argument("--frames", type=int, default=None)
    g.add_argument("--width", type=int, default=None)
    g.add_argument("--height", type=int, default=None)
    g.add_argument("--policy", default=None,
                   choices=["straight", "curve", "lane-change", "random-walk", "mixed"])
    g.add_argument("--noise-std", dest="noise_std", type=float, default=None)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train-ae", help="train the adversarial autoencoder")
    common(t)
    t.add_argument("--data", required=True, help="dataset manifest (or its directory)")
    t.add_argument("--holdout", help="held-out dataset manifest for eval metrics")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--updates", type=int, default=None, help="gradient updates per epoch")
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--latent-dim", dest="latent_dim", type=int, default=None)
    t.add_argument("--w-prior", dest="w_prior", type=float, default=None)
    t.add_argument("--w-llike", dest="w_llike", type=float, default=None)
    t.add_argument("--w-gan", dest="w_gan", type=float, default=None)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train_ae)

    e = sub.add_parser("encode", help="encode a dataset into latent codes")
    common(e)
    e.add_argument("--ae", required=True, help="autoencoder checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--rate", type=float, default=None, help="code rate in Hz (default config rnn_rate_hz)")
    e.set_defaults(fn=cmd_encode)

    r = sub.add_parser("train-rnn", help="train the transition model on codes")
    common(r)
    r.add_argument("--codes", required=True, help="codes manifest (or its directory)")
    r.add_argument("--holdout-codes", dest="holdout_codes", help="held-out codes manifest")
    r.add_argument("--seq-len", dest="seq_len", type=int, default=None)
    r.add_argument("--teacher", dest="teacher_forced", type=int, default=None)
    r.add_argument("--hidden", dest="rnn_hidden", type=int, default=None)
    r.add_argument("--epochs", type=int, default=None)
    r.add_argument("--batch", type=int, default=None)
    r.add_argument("--lr", type=float, default=None)
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(fn=cmd_train_rnn)

    v = sub.add_parser("eval", help="report reconstruction / latent / transition metrics")
    common(v, out_required=False)
    v.add_argument("--ae", required=True)
    v.add_argument("--rnn", help="optional transition checkpoint")
    v.add_argument("--data", required=True)
    v.add_argument("--out", help="also write eval_report.csv here")
    v.set_defaults(fn=cmd_eval)

    o = sub.add_parser("rollout", help="hallucinate frames to PPM files")
    common(o)
    o.add_argument("--ae", required=True)
    o.add_argument("--rnn", required=True)
    o.add_argument("--seed-episode", dest="seed_episode", required=True)
    o.add_argument("--actions", required=True, help="CSV with steer_deg,speed_mps per step")
    o.add_argument("--steps", type=int, default=100)
    o.add_argument("--warmup", type=int, default=5)
    o.add_argument("--rng-seed", dest="rng_seed", type=int, default=0)
    o.set_defaults(fn=cmd_rollout)

    s = sub.add_parser("serve", help="run the live simulation service")
    s.add_argument("--ae", required=True)
    s.add_argument("--rnn", required=True)
    s.add_argument("--port", type=int, default=8700)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--static-dir", dest="static_dir", help="serve the cockpit UI from this directory")
    s.add_argument("--episode-root", dest="episode_root", help="directory seed episodes resolve under (default cwd)")
    s.add_argument("--default-episode", dest="default_episode", help="episode used when reset omits one")
    s.set_defaults(fn=cmd_serve)

    return p


def main(argv=None) -> int:
    _setup_threads()
    args = build_parser().parse_args(argv)
    from .errors import ConfigError, ContractError, FormatError, InputError, NumericalError, ShapeError

    try:
        return args.fn(args)
    except (ConfigError, InputError, FormatError, ShapeError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except PermissionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
