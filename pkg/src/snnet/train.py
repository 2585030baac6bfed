"""Two-stage training, parameter freezing, and checkpointing."""

from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data, engine, loss as loss_mod
from .engine import Adam, ParamStore, Tensor
from .model import SNNet, SNNetConfig


@dataclass
class TrainConfig:
    manifest: str = ""
    stage: str = "1"                 # "1", "2", or "sep"
    steps: int = 500
    batch_size: int = 4
    lr: float = 2e-4
    alpha: float = 1.0
    beta: float = 0.0
    seed: int = 0
    crop_samples: int = 0            # 0 = full clips
    crop_mode: str = "fixed"         # "fixed" (offset 0) or "random"
    dtype: str = "float64"
    grad_clip: float = 0.0
    out_dir: str = "run"
    init_checkpoint: str = ""
    model: SNNetConfig = field(default_factory=SNNetConfig)


def _np_dtype(name: str):
    return {"float64": np.float64, "float32": np.float32}[name]


def build_model(cfg: TrainConfig) -> SNNet:
    store = ParamStore(dtype=_np_dtype(cfg.dtype))
    return SNNet(cfg.model, store, seed=cfg.seed)


def _crop(batch: tuple, cfg: TrainConfig, rng) -> tuple:
    if cfg.crop_samples <= 0:
        return batch
    n = cfg.crop_samples
    L = batch[0].shape[1]
    if cfg.crop_mode == "random":
        off = int(rng.integers(0, max(L - n, 0) + 1))
    else:
        off = 0
    return tuple(b[:, off : off + n] for b in batch)


class TrainLog:
    COLUMNS = "step,epoch,loss,term_speech,term_noise,term_merge,wall_ms"

    def __init__(self, path: str):
        self.path = path
        self.rows: list[tuple] = []
        with open(path, "w") as f:
            f.write(self.COLUMNS + "\n")

    def append(self, step, epoch, total, ts, tn, tm, wall_ms):
        row = (step, epoch, total, ts, tn, tm, wall_ms)
        self.rows.append(row)
        with open(self.path, "a") as f:
            f.write(f"{step},{epoch},{total:.10g},{ts:.10g},{tn:.10g},"
                    f"{tm:.10g},{wall_ms:.1f}\n")


def _batches(n_entries: int, batch_size: int, steps: int, seed: int):
    """Deterministic epoch-shuffled batch index stream."""
    rng = np.random.default_rng(seed)
    order = []
    epoch = 0
    produced = 0
    while produced < steps:
        perm = rng.permutation(n_entries)
        for lo in range(0, n_entries, batch_size):
            idx = perm[lo : lo + batch_size]
            if len(idx) < batch_size and n_entries >= batch_size:
                continue
            yield epoch, list(idx)
            produced += 1
            if produced >= steps:
                return
        epoch += 1


def _checkpoint_arrays(model: SNNet, opt: Adam | None) -> dict:
    arrays = model.store.state_arrays()
    if opt is not None:
        arrays.update(opt.state_arrays())
    return arrays


def _meta(cfg: TrainConfig, step: int) -> dict:
    m = asdict(cfg)
    m["model"]["enc_channels"] = list(cfg.model.enc_channels)
    for k in ("enc_kernel", "res_kernel", "merge_kernel"):
        m["model"][k] = list(getattr(cfg.model, k))
    return {"config": m, "step": step}


def model_from_checkpoint(path: str, dtype: str | None = None) -> tuple[SNNet, dict]:
    """Rebuild a model from a checkpoint's embedded config and load weights."""
    arrays, meta = engine.load_checkpoint(path)
    mcfg_dict = dict(meta["config"]["model"])
    for k in ("enc_channels", "enc_kernel", "res_kernel", "merge_kernel"):
        mcfg_dict[k] = tuple(mcfg_dict[k])
    mcfg = SNNetConfig(**mcfg_dict)
    store = ParamStore(dtype=_np_dtype(dtype or meta["config"]["dtype"]))
    model = SNNet(mcfg, store, seed=meta["config"]["seed"])
    model.store.load_arrays(arrays)
    return model, meta


def _apply_grad_clip(params: dict[str, Tensor], clip: float) -> None:
    if clip <= 0:
        return
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad**2).sum())
    norm = np.sqrt(total)
    if norm > clip:
        scale = clip / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale


def train_stage1(cfg: TrainConfig) -> str:
    """Jointly train the speech and noise branches; merge stays untouched."""
    entries = data.load_manifest(cfg.manifest)
    train_entries = [e for e in entries if e["split"] == "train"] or entries
    base = os.path.dirname(cfg.manifest)
    os.makedirs(cfg.out_dir, exist_ok=True)
    model = build_model(cfg)
    branch_params = {n: t for n, t in model.store.named(trainable_only=True)
                     if not n.startswith("merge.")}
    opt = Adam(branch_params, lr=cfg.lr)
    log = TrainLog(os.path.join(cfg.out_dir, "train_stage1.csv"))
    crop_rng = np.random.default_rng(cfg.seed + 1)
    step = 0
    for epoch, idx in _batches(len(train_entries), cfg.batch_size, cfg.steps,
                               cfg.seed):
        t0 = time.monotonic()
        noisy, clean, noise = _crop(
            data.load_batch(train_entries, idx, base), cfg, crop_rng)
        model.store.zero_grad()
        out = model.forward(noisy.astype(model.store.dtype), training=True,
                            run_merge=False)
        total, terms = loss_mod.combined_loss(
            out.speech_spec, out.noise_spec, None, clean, noise,
            alpha=cfg.alpha, beta=0.0,
            n_fft=cfg.model.n_fft, hop=cfg.model.hop)
        total.backward()
        _apply_grad_clip(branch_params, cfg.grad_clip)
        opt.step()
        step += 1
        log.append(step, epoch, float(total.data), terms["speech"],
                   terms["noise"], terms["merge"],
                   (time.monotonic() - t0) * 1e3)
    ckpt = os.path.join(cfg.out_dir, "stage1.ckpt")
    engine.save_checkpoint(ckpt, _checkpoint_arrays(model, opt), _meta(cfg, step))
    return ckpt


def train_stage2(cfg: TrainConfig) -> str:
    """Train the merge branch with all branch parameters (and BN stats) frozen."""
    if not cfg.init_checkpoint:
        raise ValueError("stage 2 requires a stage-1 checkpoint (init_checkpoint)")
    entries = data.load_manifest(cfg.manifest)
    train_entries = [e for e in entries if e["split"] == "train"] or entries
    base = os.path.dirname(cfg.manifest)
    os.makedirs(cfg.out_dir, exist_ok=True)
    arrays, _ = engine.load_checkpoint(cfg.init_checkpoint)
    model = build_model(cfg)
    model.store.load_arrays({k: v for k, v in arrays.items()
                             if not k.startswith("adam.")})
    model.store.set_trainable(lambda n: n.startswith("merge."))
    merge_params = dict(model.store.named(trainable_only=True))
    opt = Adam(merge_params, lr=cfg.lr)
    log = TrainLog(os.path.join(cfg.out_dir, "train_stage2.csv"))
    crop_rng = np.random.default_rng(cfg.seed + 1)
    step = 0
    for epoch, idx in _batches(len(train_entries), cfg.batch_size, cfg.steps,
                               cfg.seed):
        t0 = time.monotonic()
        noisy, clean, _ = _crop(
            data.load_batch(train_entries, idx, base), cfg, crop_rng)
        model.store.zero_grad()
        out = model.forward(noisy.astype(model.store.dtype), training=False,
                            merge_training=True, merge_detached=True)
        l_merge = loss_mod.merge_loss(out.merged, clean,
                                      n_fft=cfg.model.n_fft, hop=cfg.model.hop)
        l_merge.backward()
        _apply_grad_clip(merge_params, cfg.grad_clip)
        opt.step()
        step += 1
        log.append(step, epoch, float(l_merge.data), 0.0, 0.0,
                   float(l_merge.data), (time.monotonic() - t0) * 1e3)
    ckpt = os.path.join(cfg.out_dir, "stage2.ckpt")
    engine.save_checkpoint(ckpt, _checkpoint_arrays(model, opt), _meta(cfg, step))
    return ckpt


def train_separation(cfg: TrainConfig) -> str:
    """Single-stage PIT training of the merge-free two-output network."""
    cfg.model.use_merge = False
    entries = data.load_manifest(cfg.manifest)
    train_entries = [e for e in entries if e["split"] == "train"] or entries
    base = os.path.dirname(cfg.manifest)
    os.makedirs(cfg.out_dir, exist_ok=True)
    model = build_model(cfg)
    params = dict(model.store.named(trainable_only=True))
    opt = Adam(params, lr=cfg.lr)
    log = TrainLog(os.path.join(cfg.out_dir, "train_sep.csv"))
    perm_path = os.path.join(cfg.out_dir, "pit_permutations.csv")
    with open(perm_path, "w") as f:
        f.write("step,perm\n")
    crop_rng = np.random.default_rng(cfg.seed + 1)
    step = 0
    for epoch, idx in _batches(len(train_entries), cfg.batch_size, cfg.steps,
                               cfg.seed):
        t0 = time.monotonic()
        mix, src1, src2 = _crop(
            data.load_batch(train_entries, idx, base), cfg, crop_rng)
        model.store.zero_grad()
        out = model.forward(mix.astype(model.store.dtype), training=True)
        total, perm = loss_mod.pit_loss(out.speech_spec, out.noise_spec,
                                        src1, src2,
                                        n_fft=cfg.model.n_fft, hop=cfg.model.hop)
        total.backward()
        _apply_grad_clip(params, cfg.grad_clip)
        opt.step()
        step += 1
        with open(perm_path, "a") as f:
            f.write(f"{step},{perm[0]}{perm[1]}\n")
        log.append(step, epoch, float(total.data), 0.0, 0.0, 0.0,
                   (time.monotonic() - t0) * 1e3)
    ckpt = os.path.join(cfg.out_dir, "sep.ckpt")
    engine.save_checkpoint(ckpt, _checkpoint_arrays(model, opt), _meta(cfg, step))
    return ckpt
