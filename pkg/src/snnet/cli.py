"""Command-line interface: dataset synthesis, training, inference, separation,
evaluation, and attention/interaction inspection."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data, dsp, engine, metrics, train as train_mod, wavio
from .model import SNNetConfig
from .train import TrainConfig, model_from_checkpoint

WINDOW_SAMPLES = 2 * wavio.SAMPLE_RATE  # long inputs processed in 2 s windows

_CONFIG_SECTIONS = {
    "seed": None,
    "data": {"count", "seed", "snr_levels", "noise_kinds", "clean_kind",
             "split_test_fraction"},
    "model": {"freq_bins", "enc_channels", "ra_blocks", "attn_divisor",
              "n_fft", "hop", "use_interaction", "use_merge"},
    "train": {"steps", "batch_size", "lr", "alpha", "beta", "crop_samples",
              "crop_mode", "dtype", "grad_clip"},
}


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for key, val in cfg.items():
        if key not in _CONFIG_SECTIONS:
            raise ConfigError(f"{path}: unknown config key {key!r}")
        allowed = _CONFIG_SECTIONS[key]
        if allowed is not None:
            for sub in val:
                if sub not in allowed:
                    raise ConfigError(f"{path}: unknown key {key}.{sub!r}")
    return cfg


def _model_config(cfg: dict) -> SNNetConfig:
    m = dict(cfg.get("model", {}))
    if "enc_channels" in m:
        m["enc_channels"] = tuple(m["enc_channels"])
    return SNNetConfig(**m)


def _train_config(cfg: dict, args) -> TrainConfig:
    t = dict(cfg.get("train", {}))
    tc = TrainConfig(model=_model_config(cfg), seed=cfg.get("seed", 0), **t)
    if args.seed is not None:
        tc.seed = args.seed
    return tc


def _echo_config(cfg_path: str, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(cfg_path, "rb") as f:
        blob = f.read()
    with open(os.path.join(out_dir, "config.json"), "wb") as f:
        f.write(blob)


def _atomic_write_wav(path: str, samples: np.ndarray) -> None:
    tmp = path + ".tmp"
    wavio.write_wav(tmp, samples)
    os.replace(tmp, path)


def enhance_signal(model, x: np.ndarray, window: int | None = None) -> np.ndarray:
    """Enhance arbitrary-length audio in overlapped, cross-faded windows.

    ``window`` should match the sequence length the model was trained on
    (the time-axis attention does not transfer across large length
    changes); the CLI passes the training crop length from the checkpoint.
    Defaults to 2 s.
    """
    L = len(x)

    def run(seg: np.ndarray) -> np.ndarray:
        with engine.no_grad():
            out = model.forward(seg.astype(model.store.dtype), training=False)
        wave = out.merged if out.merged is not None else out.speech_wave
        return np.asarray(wave.data[0], dtype=np.float64)

    W = window or WINDOW_SAMPLES
    if L <= W:
        return run(x)[:L]
    hop = W // 2
    offsets = list(range(0, L - W, hop)) + [L - W]
    acc = np.zeros(L)
    den = np.zeros(L)
    ramp = np.linspace(0.0, 1.0, hop, endpoint=False)
    for k, off in enumerate(offsets):
        y = run(x[off : off + W])
        w = np.ones(W)
        if k > 0:
            w[:hop] = ramp
        if k < len(offsets) - 1:
            w[-hop:] = 1.0 - ramp
        acc[off : off + W] += w * y
        den[off : off + W] += w
    return acc / np.maximum(den, 1e-12)


# -- subcommands --------------------------------------------------------


def cmd_synth_data(args) -> int:
    cfg = load_config(args.config)
    dcfg = dict(cfg.get("data", {}))
    dcfg.setdefault("seed", cfg.get("seed", 0))
    if args.seed is not None:
        dcfg["seed"] = args.seed
    manifest = data.build_dataset(dcfg, args.out)
    _echo_config(args.config, args.out)
    print(f"wrote {manifest}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tc = _train_config(cfg, args)
    tc.manifest = args.manifest
    tc.out_dir = args.out
    tc.stage = args.stage
    if args.steps is not None:
        tc.steps = args.steps
    _echo_config(args.config, args.out)
    if args.stage == "1":
        ckpt = train_mod.train_stage1(tc)
    elif args.stage == "2":
        if not args.init:
            print("error: --stage 2 requires --init <stage1 checkpoint>",
                  file=sys.stderr)
            return 2
        tc.init_checkpoint = args.init
        ckpt = train_mod.train_stage2(tc)
    elif args.stage == "sep":
        ckpt = train_mod.train_separation(tc)
    else:
        print(f"error: unknown stage {args.stage!r}", file=sys.stderr)
        return 2
    print(f"wrote {ckpt}")
    return 0


def _trained_window(meta: dict) -> int | None:
    crop = meta.get("config", {}).get("crop_samples", 0)
    return crop if crop else None


def cmd_enhance(args) -> int:
    model, meta = model_from_checkpoint(args.ckpt)
    x = wavio.read_wav(args.input)
    y = enhance_signal(model, x, window=_trained_window(meta))
    _atomic_write_wav(args.output, y)
    print(f"wrote {args.output}")
    return 0


def cmd_separate(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    x = wavio.read_wav(args.input)
    with engine.no_grad():
        out = model.forward(x.astype(model.store.dtype), training=False,
                            run_merge=False)
    _atomic_write_wav(args.out1, np.asarray(out.speech_wave.data[0]))
    _atomic_write_wav(args.out2, np.asarray(out.noise_wave.data[0]))
    print(f"wrote {args.out1} and {args.out2}")
    return 0


def cmd_evaluate(args) -> int:
    model, meta = model_from_checkpoint(args.ckpt)
    window = _trained_window(meta)
    entries = data.load_manifest(args.manifest)
    test_entries = [e for e in entries if e["split"] == "test"] or entries
    base = os.path.dirname(args.manifest)
    rows = []
    for e in test_entries:
        noisy = wavio.read_wav(os.path.join(base, e["noisy"]))
        clean = wavio.read_wav(os.path.join(base, e["clean"]))
        est = enhance_signal(model, noisy, window=window)
        rows.append({
            "clip_id": e["id"],
            "ssnr_db": metrics.ssnr(clean, est),
            "si_sdr_db": metrics.si_sdr(clean, est),
            "si_sdri_db": metrics.si_sdri(clean, est, noisy),
        })
    tmp = args.out + ".tmp"
    with open(tmp, "w") as f:
        f.write("clip_id,ssnr_db,si_sdr_db,si_sdri_db\n")
        for r in rows:
            f.write(f"{r['clip_id']},{r['ssnr_db']:.6f},"
                    f"{r['si_sdr_db']:.6f},{r['si_sdri_db']:.6f}\n")
    os.replace(tmp, args.out)
    agg = metrics.aggregate(rows)
    for key, st in agg.items():
        print(f"{key}: mean {st['mean']:.3f} median {st['median']:.3f}")
    print("pesq: n/a\ncsig: n/a\ncbak: n/a\ncovl: n/a")
    return 0


def cmd_inspect(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    x = wavio.read_wav(args.input)
    with engine.no_grad():
        out = model.forward(x.astype(model.store.dtype), training=False,
                            collect_internals=True)
    os.makedirs(args.out, exist_ok=True)
    for name, arr in out.internals.items():
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim > 2:
            a = a.reshape(a.shape[0], -1)
        np.savetxt(os.path.join(args.out, f"{name}.csv"), a,
                   delimiter=",", fmt="%.17g")
    print(f"wrote {len(out.internals)} dumps to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="snnet",
                                 description="Two-branch speech/noise enhancement")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train stage 1, stage 2, or separation")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stage", required=True, choices=["1", "2", "sep"])
    p.add_argument("--init", default=None, help="stage-1 checkpoint for stage 2")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("enhance", help="enhance a noisy WAV")
    p.add_argument("ckpt")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("separate", help="split a mixture into two sources")
    p.add_argument("ckpt")
    p.add_argument("input")
    p.add_argument("out1")
    p.add_argument("out2")
    p.set_defaults(fn=cmd_separate)

    p = sub.add_parser("evaluate", help="metric report over a manifest test split")
    p.add_argument("ckpt")
    p.add_argument("manifest")
    p.add_argument("--out", default="report.csv")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("inspect", help="dump attention and interaction internals")
    p.add_argument("ckpt")
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(fn=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
