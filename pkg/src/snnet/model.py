"""Two-branch speech/noise enhancement network.

Layout per branch: 3-conv encoder -> N x (residual-attention block, optional
cross-branch interaction) -> gated-block decoder predicting a magnitude gain
and phase pair. Decoded waveforms feed an optional time-domain merge branch
that blends the speech estimate with (noisy - noise estimate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dsp, engine
from .engine import ParamStore, Tensor


@dataclass
class SNNetConfig:
    freq_bins: int = 160            # model-facing bins (Nyquist dropped)
    enc_channels: tuple = (16, 32, 64)
    ra_blocks: int = 4
    attn_divisor: int = 2
    n_fft: int = 320
    hop: int = 160
    use_interaction: bool = True
    use_merge: bool = True
    enc_kernel: tuple = (3, 5)
    res_kernel: tuple = (5, 7)
    merge_kernel: tuple = (3, 7)

    def __post_init__(self):
        if self.freq_bins % 4 != 0:
            raise ValueError("freq_bins must be divisible by 4")
        if self.freq_bins != self.n_fft // 2:
            raise ValueError("freq_bins must equal n_fft/2 (Nyquist dropped)")
        if self.enc_channels[-1] % 2 != 0:
            raise ValueError("final encoder channel count must be even")

    @property
    def channels(self) -> int:
        return self.enc_channels[-1]


def desk_config(**overrides) -> SNNetConfig:
    """Small configuration for CPU-scale tests and experiments."""
    kw = dict(freq_bins=32, enc_channels=(4, 8, 16), ra_blocks=2,
              n_fft=64, hop=32)
    kw.update(overrides)
    return SNNetConfig(**kw)


# -- layers -------------------------------------------------------------


class Conv2d:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 kernel: tuple, stride: tuple, rng):
        kh, kw = kernel
        self.w = store.add(f"{name}.w", engine.xavier_init((kh, kw, cin, cout), rng))
        self.b = store.add(f"{name}.b", np.zeros(cout))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return engine.conv2d(x, self.w, self.b, self.stride)


class ConvTranspose2d:
    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 kernel: tuple, stride: tuple, rng):
        kh, kw = kernel
        # kernel stored in conv2d layout [kh,kw,cout,cin]; transpose runs it backwards
        self.w = store.add(f"{name}.w", engine.xavier_init((kh, kw, cout, cin), rng))
        self.b = store.add(f"{name}.b", np.zeros(cout))
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return engine.conv2d_transpose(x, self.w, self.b, self.stride)


class BatchNorm:
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.gamma = store.add(f"{name}.gamma", np.ones(channels))
        self.beta = store.add(f"{name}.beta", np.zeros(channels))
        self.stats = store.add_stats(f"{name}", channels)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return engine.batch_norm(x, self.gamma, self.beta, self.stats, training)


class PReLU:
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.slope = store.add(f"{name}.slope", np.full(channels, 0.25))

    def __call__(self, x: Tensor) -> Tensor:
        return engine.prelu(x, self.slope)


class ConvBNPReLU:
    """conv -> batch norm -> PReLU, the default conv unit in this network."""

    def __init__(self, store, name, cin, cout, kernel, stride, rng,
                 transpose: bool = False):
        conv_cls = ConvTranspose2d if transpose else Conv2d
        self.conv = conv_cls(store, f"{name}.conv", cin, cout, kernel, stride, rng)
        self.bn = BatchNorm(store, f"{name}.bn", cout)
        self.act = PReLU(store, f"{name}.prelu", cout)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.act(self.bn(self.conv(x), training))


class ResidualBlock:
    """Two same-shape convolutions with a skip add; activation after the add."""

    def __init__(self, store, name, channels, kernel, rng):
        self.conv1 = ConvBNPReLU(store, f"{name}.c1", channels, channels,
                                 kernel, (1, 1), rng)
        self.conv2 = Conv2d(store, f"{name}.c2.conv", channels, channels,
                            kernel, (1, 1), rng)
        self.bn2 = BatchNorm(store, f"{name}.c2.bn", channels)
        self.act2 = PReLU(store, f"{name}.c2.prelu", channels)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = self.conv1(x, training)
        h = self.bn2(self.conv2(h), training)
        return self.act2(engine.add(x, h))


class SelfAttention:
    """Scaled dot-product attention along time or frequency, with residual add.

    Q/K/V and the output re-projection are 1x1 conv + BN + PReLU units; channels
    are halved (``attn_divisor``) inside the block.
    """

    def __init__(self, store, name, channels, rng, axis: str, divisor: int = 2):
        self.axis = axis
        self.ca = max(1, channels // divisor)
        self.q = ConvBNPReLU(store, f"{name}.q", channels, self.ca, (1, 1), (1, 1), rng)
        self.k = ConvBNPReLU(store, f"{name}.k", channels, self.ca, (1, 1), (1, 1), rng)
        self.v = ConvBNPReLU(store, f"{name}.v", channels, self.ca, (1, 1), (1, 1), rng)
        self.proj = ConvBNPReLU(store, f"{name}.proj", self.ca, channels,
                                (1, 1), (1, 1), rng)

    def __call__(self, x: Tensor, training: bool) -> tuple[Tensor, np.ndarray]:
        B, T, Fp, C = x.shape
        q = self.q(x, training)
        k = self.k(x, training)
        v = self.v(x, training)
        if self.axis == "time":
            n, d = T, Fp * self.ca
            flat = lambda t: engine.reshape(t, (B, T, d))
            unflat = lambda t: engine.reshape(t, (B, T, Fp, self.ca))
        else:
            n, d = Fp, T * self.ca
            flat = lambda t: engine.reshape(
                engine.transpose(t, (0, 2, 1, 3)), (B, Fp, d))
            unflat = lambda t: engine.transpose(
                engine.reshape(t, (B, Fp, T, self.ca)), (0, 2, 1, 3))
        qf, kf, vf = flat(q), flat(k), flat(v)
        scores = engine.mul_scalar(
            engine.matmul(qf, engine.transpose(kf, (0, 2, 1))), 1.0 / np.sqrt(d))
        attn = engine.softmax_rows(scores)  # [B,n,n]
        ctx = unflat(engine.matmul(attn, vf))
        out = engine.add(x, self.proj(ctx, training))
        return out, attn.data


class RABlock:
    """Two residual blocks, then parallel time/freq attention, fused by 1x1 conv."""

    def __init__(self, store, name, channels, cfg: SNNetConfig, rng):
        self.res1 = ResidualBlock(store, f"{name}.res1", channels, cfg.res_kernel, rng)
        self.res2 = ResidualBlock(store, f"{name}.res2", channels, cfg.res_kernel, rng)
        self.att_t = SelfAttention(store, f"{name}.att_t", channels, rng, "time",
                                   cfg.attn_divisor)
        self.att_f = SelfAttention(store, f"{name}.att_f", channels, rng, "freq",
                                   cfg.attn_divisor)
        self.fuse = Conv2d(store, f"{name}.fuse", 3 * channels, channels,
                           (1, 1), (1, 1), rng)

    def __call__(self, x: Tensor, training: bool):
        fres = self.res2(self.res1(x, training), training)
        ftemp, sa_t = self.att_t(fres, training)
        ffreq, sa_f = self.att_f(fres, training)
        out = self.fuse(engine.concat([fres, ftemp, ffreq], axis=-1))
        return out, {"sa_t": sa_t, "sa_f": sa_f}


class Interaction:
    """Cross-branch exchange: each branch receives a sigmoid-masked copy of
    the other branch's feature, added residually."""

    def __init__(self, store, name, channels, rng):
        self.n2s = Conv2d(store, f"{name}.n2s", 2 * channels, channels,
                          (1, 1), (1, 1), rng)
        self.s2n = Conv2d(store, f"{name}.s2n", 2 * channels, channels,
                          (1, 1), (1, 1), rng)

    def __call__(self, fs: Tensor, fn: Tensor, force: float | None = None):
        if fs.shape != fn.shape:
            raise engine.ShapeError("interaction: branch shape mismatch")
        if force is None:
            mask_n = engine.sigmoid(self.n2s(engine.concat([fn, fs], axis=-1)))
            mask_s = engine.sigmoid(self.s2n(engine.concat([fs, fn], axis=-1)))
        else:
            mask_n = Tensor(np.full(fn.shape, force, dtype=fn.dtype))
            mask_s = Tensor(np.full(fs.shape, force, dtype=fs.dtype))
        h_n2s = engine.mul(fn, mask_n)
        h_s2n = engine.mul(fs, mask_s)
        fs_out = engine.add(fs, h_n2s)
        fn_out = engine.add(fn, h_s2n)
        internals = {"mask_n2s": mask_n.data, "mask_s2n": mask_s.data}
        return fs_out, fn_out, internals


class Encoder:
    def __init__(self, store, name, cfg: SNNetConfig, rng):
        c1, c2, c3 = cfg.enc_channels
        k = cfg.enc_kernel
        self.l1 = ConvBNPReLU(store, f"{name}.l1", 2, c1, k, (1, 1), rng)
        self.l2 = ConvBNPReLU(store, f"{name}.l2", c1, c2, k, (1, 2), rng)
        self.l3 = ConvBNPReLU(store, f"{name}.l3", c2, c3, k, (1, 2), rng)

    def __call__(self, x: Tensor, training: bool):
        if x.shape[2] % 4 != 0:
            raise engine.ShapeError("encoder: frequency extent must divide by 4")
        a1 = self.l1(x, training)
        a2 = self.l2(a1, training)
        a3 = self.l3(a2, training)
        return a3, (a1, a2)


class GatedBlock:
    """Deconv path gates the encoder skip; fusion conv restores channel count."""

    def __init__(self, store, name, cin, cout, skip_ch, stride, cfg, rng):
        self.deconv = ConvBNPReLU(store, f"{name}.deconv", cin, cout,
                                  cfg.enc_kernel, stride, rng, transpose=True)
        self.mask = Conv2d(store, f"{name}.mask", cout, skip_ch, (1, 1), (1, 1), rng)
        self.fuse = ConvBNPReLU(store, f"{name}.fuse", cout + skip_ch, cout,
                                (1, 1), (1, 1), rng)

    def __call__(self, x: Tensor, skip: Tensor, training: bool) -> Tensor:
        d = self.deconv(x, training)
        if d.shape[:3] != skip.shape[:3]:
            raise engine.ShapeError(
                f"gated block: skip shape {skip.shape} incompatible with {d.shape}")
        m = engine.sigmoid(self.mask(d))
        gated = engine.mul(skip, m)
        return self.fuse(engine.concat([d, gated], axis=-1), training)


class Decoder:
    """Three gated blocks, then a 1x1 head producing gain + phase pair.

    Output complex value per bin: softplus(gain) * |X_in| * unit(phase pair),
    falling back to the input phase where the pair is degenerate.
    """

    PHASE_EPS = 1e-8

    def __init__(self, store, name, cfg: SNNetConfig, rng):
        c1, c2, c3 = cfg.enc_channels
        self.gb1 = GatedBlock(store, f"{name}.gb1", c3, c3, c2, (1, 2), cfg, rng)
        self.gb2 = GatedBlock(store, f"{name}.gb2", c3, c2, c1, (1, 2), cfg, rng)
        self.gb3 = GatedBlock(store, f"{name}.gb3", c2, c1, 2, (1, 1), cfg, rng)
        self.head = Conv2d(store, f"{name}.head", c1, 3, (1, 1), (1, 1), rng)

    def __call__(self, x: Tensor, skips, spec_in: Tensor, training: bool) -> Tensor:
        a1, a2 = skips
        h = self.gb1(x, a2, training)
        h = self.gb2(h, a1, training)
        h = self.gb3(h, spec_in, training)
        raw = self.head(h)  # [B,T,F,3]
        gain = engine.softplus(raw[:, :, :, 0:1])
        pair = raw[:, :, :, 1:3]
        sq = engine.sum_(engine.mul(pair, pair), axis=-1, keepdims=True)
        norm = engine.sqrt(engine.add(sq, Tensor(np.asarray(1e-30, pair.dtype))))
        unit = engine.div(pair, norm)
        # degenerate phase pair: fall back to the input phase for that bin
        mag_in = np.sqrt((spec_in.data**2).sum(axis=-1, keepdims=True))
        unit_in = spec_in.data / np.maximum(mag_in, 1e-30)
        unit_in[np.broadcast_to(mag_in, unit_in.shape) <= 0] = 0.0
        unit_in[..., 0][mag_in[..., 0] <= 0] = 1.0
        degenerate = np.sqrt(sq.data) < self.PHASE_EPS
        unit = engine.where(np.broadcast_to(degenerate, unit.data.shape),
                            Tensor(unit_in.astype(pair.dtype)), unit)
        return engine.mul(engine.mul(gain, Tensor(mag_in.astype(pair.dtype))), unit)


class MergeNet:
    """Time-domain combiner: learns a frame mask m and outputs
    m * s_est + (1 - m) * (x - n_est)."""

    def __init__(self, store, name, cfg: SNNetConfig, rng):
        k = cfg.merge_kernel
        self.c1 = ConvBNPReLU(store, f"{name}.c1", 3, 3, k, (1, 1), rng)
        self.att = SelfAttention(store, f"{name}.att", 3, rng, "time",
                                 cfg.attn_divisor)
        self.c2 = ConvBNPReLU(store, f"{name}.c2", 3, 3, k, (1, 1), rng)
        self.c3 = Conv2d(store, f"{name}.c3", 3, 1, k, (1, 1), rng)

    def mask(self, s_f: Tensor, n_f: Tensor, x_f: Tensor, training: bool):
        h = engine.stack_last([s_f, n_f, x_f])  # [B,T,K,3]
        h = self.c1(h, training)
        h, sa = self.att(h, training)
        h = self.c2(h, training)
        m = engine.sigmoid(self.c3(h))  # [B,T,K,1]
        return m[:, :, :, 0], sa

    def __call__(self, s_f, n_f, x_f, training, force_mask: float | None = None):
        if not (s_f.shape == n_f.shape == x_f.shape):
            raise engine.ShapeError("merge: frame matrices must share a shape")
        if force_mask is None:
            m, sa = self.mask(s_f, n_f, x_f, training)
        else:
            m = Tensor(np.full(s_f.shape, force_mask, dtype=s_f.dtype))
            sa = None
        one_minus = engine.add(Tensor(np.asarray(1.0, m.dtype)), engine.mul_scalar(m, -1.0))
        out = engine.add(engine.mul(m, s_f),
                         engine.mul(one_minus, engine.add(x_f, engine.mul_scalar(n_f, -1.0))))
        return out, m, sa


# -- full network -------------------------------------------------------


@dataclass
class ModelOutput:
    speech_spec: Tensor          # [B,T,F+1,2], Nyquist bin restored as zero
    noise_spec: Tensor
    speech_wave: Tensor          # [B,L]
    noise_wave: Tensor
    merged: Tensor | None        # [B,L] when the merge branch is active
    internals: dict = field(default_factory=dict)


def _restore_nyquist(spec: Tensor) -> Tensor:
    B, T, F, _ = spec.shape
    zero = Tensor(np.zeros((B, T, 1, 2), dtype=spec.dtype))
    return engine.concat([spec, zero], axis=2)


class SNNet:
    """The full two-branch network over a shared parameter store."""

    def __init__(self, cfg: SNNetConfig, store: ParamStore | None = None,
                 seed: int = 0):
        self.cfg = cfg
        self.store = store or ParamStore()
        rng = np.random.default_rng(seed)
        c = cfg.channels
        self.enc = {}
        self.ra = {}
        self.dec = {}
        for branch in ("s", "n"):
            self.enc[branch] = Encoder(self.store, f"{branch}.enc", cfg, rng)
            self.ra[branch] = [
                RABlock(self.store, f"{branch}.ra{i+1}", c, cfg, rng)
                for i in range(cfg.ra_blocks)
            ]
            self.dec[branch] = Decoder(self.store, f"{branch}.dec", cfg, rng)
        self.inter = [
            Interaction(self.store, f"inter{i+1}", c, rng)
            for i in range(cfg.ra_blocks)
        ] if cfg.use_interaction else []
        self.merge = MergeNet(self.store, "merge", cfg, rng) if cfg.use_merge else None

    # branch feature pipeline ------------------------------------------

    def _decode_branch(self, branch, feat, skips, spec_in, training):
        spec = self.dec[branch](feat, skips, spec_in, training)
        return _restore_nyquist(spec)

    def forward(self, x, training: bool = False,
                interaction_override: str | float | None = None,
                merge_override: float | None = None,
                run_merge: bool = True,
                merge_training: bool | None = None,
                merge_detached: bool = False,
                collect_internals: bool = False) -> ModelOutput:
        """Run the network on waveform(s) [B,L] or [L].

        ``interaction_override``: None (learned masks), "off" (skip the
        modules entirely), or a float forced mask value. ``merge_override``
        forces the merge mask to a constant. ``merge_detached`` blocks
        gradient flow from the merge branch into the two signal branches
        (stage-2 training). ``merge_training`` lets the merge branch use
        batch statistics while the frozen branches run in inference mode.
        """
        xt = dsp._as2d(x)
        L = xt.shape[1]
        cfg = self.cfg
        spec_full = dsp.stft_t(xt, cfg.n_fft, cfg.hop)       # [B,T,F+1,2]
        spec_in = spec_full[:, :, : cfg.freq_bins, :]        # Nyquist dropped
        internals: dict = {}

        feats = {}
        skips = {}
        for branch in ("s", "n"):
            feats[branch], skips[branch] = self.enc[branch](spec_in, training)
        for i in range(cfg.ra_blocks):
            for branch in ("s", "n"):
                feats[branch], att = self.ra[branch][i](feats[branch], training)
                if collect_internals:
                    name = "speech" if branch == "s" else "noise"
                    internals[f"sa_t_{name}_{i+1}"] = att["sa_t"][0]
                    internals[f"sa_f_{name}_{i+1}"] = att["sa_f"][0]
            if self.inter and interaction_override != "off":
                force = interaction_override if isinstance(
                    interaction_override, float) else None
                feats["s"], feats["n"], im = self.inter[i](
                    feats["s"], feats["n"], force=force)
                if collect_internals:
                    internals[f"interact_mask_n2s_{i+1}"] = im["mask_n2s"][0]
                    internals[f"interact_mask_s2n_{i+1}"] = im["mask_s2n"][0]

        spec_s = self._decode_branch("s", feats["s"], skips["s"], spec_in, training)
        spec_n = self._decode_branch("n", feats["n"], skips["n"], spec_in, training)
        wave_s = dsp.istft_t(spec_s, L, cfg.n_fft, cfg.hop)
        wave_n = dsp.istft_t(spec_n, L, cfg.n_fft, cfg.hop)

        merged = None
        if self.merge is not None and run_merge:
            src_s = wave_s.detach() if merge_detached else wave_s
            src_n = wave_n.detach() if merge_detached else wave_n
            s_f = dsp.frame_signal_t(src_s, cfg.n_fft, cfg.hop)
            n_f = dsp.frame_signal_t(src_n, cfg.n_fft, cfg.hop)
            x_f = dsp.frame_signal_t(xt, cfg.n_fft, cfg.hop)
            mt = training if merge_training is None else merge_training
            out_f, m, sa = self.merge(s_f, n_f, x_f, mt,
                                      force_mask=merge_override)
            merged = dsp.overlap_add_t(out_f, L, cfg.hop)
            if collect_internals:
                internals["merge_mask"] = m.data[0]
                if sa is not None:
                    internals["merge_sa_t"] = sa[0]

        return ModelOutput(spec_s, spec_n, wave_s, wave_n, merged, internals)

    def forward_single_branch(self, x, branch: str = "speech",
                              training: bool = False) -> Tensor:
        """Run one branch alone (no interaction); returns its spectrogram."""
        key = "s" if branch == "speech" else "n"
        xt = dsp._as2d(x)
        cfg = self.cfg
        spec_in = dsp.stft_t(xt, cfg.n_fft, cfg.hop)[:, :, : cfg.freq_bins, :]
        feat, skips = self.enc[key](spec_in, training)
        for i in range(cfg.ra_blocks):
            feat, _ = self.ra[key][i](feat, training)
        return self._decode_branch(key, feat, skips, spec_in, training)

    def separate(self, x, training: bool = False) -> tuple[Tensor, Tensor]:
        """Merge-free two-output mode: both branch waveforms."""
        out = self.forward(x, training=training)
        return out.speech_wave, out.noise_wave

    def merge_param_names(self) -> set:
        return {n for n in self.store.tensors if n.startswith("merge.")}
