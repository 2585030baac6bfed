"""Structural tests for the two-branch network and its modules."""

import numpy as np
import pytest

from snnet import dsp, engine
from snnet.engine import ParamStore, ShapeError, Tensor
from snnet.model import (
    Encoder,
    Interaction,
    MergeNet,
    RABlock,
    ResidualBlock,
    SelfAttention,
    SNNet,
    SNNetConfig,
    desk_config,
)


def _store():
    return ParamStore(dtype=np.float64)


@pytest.fixture
def desk_input(rng):
    # enough samples for T=50 desk frames (hop 32)
    return rng.standard_normal(1600) * 0.1


# -- config -------------------------------------------------------------


def test_default_config_dimensions():
    cfg = SNNetConfig()
    assert cfg.freq_bins == 160
    assert cfg.enc_channels == (16, 32, 64)
    assert cfg.ra_blocks == 4
    assert cfg.channels == 64
    assert cfg.n_fft == 320 and cfg.hop == 160


def test_desk_config_overrides():
    cfg = desk_config()
    assert cfg.freq_bins == 32
    assert cfg.enc_channels == (4, 8, 16)
    assert cfg.ra_blocks == 2
    cfg2 = desk_config(ra_blocks=1)
    assert cfg2.ra_blocks == 1


def test_config_rejects_bad_freq_bins():
    with pytest.raises(ValueError):
        SNNetConfig(freq_bins=30, n_fft=60, hop=30)


# -- encoder ------------------------------------------------------------


def test_encoder_output_shapes_full_scale(rng):
    cfg = SNNetConfig()
    enc = Encoder(_store(), "e", cfg, rng)
    x = Tensor(rng.standard_normal((1, 200, 160, 2)))
    out, (a1, a2) = enc(x, training=False)
    assert out.shape == (1, 200, 40, 64)
    assert a1.shape == (1, 200, 160, 16)
    assert a2.shape == (1, 200, 80, 32)


def test_encoder_output_shapes_desk(rng):
    cfg = desk_config()
    enc = Encoder(_store(), "e", cfg, rng)
    out, _ = enc(Tensor(rng.standard_normal((2, 50, 32, 2))), training=False)
    assert out.shape == (2, 50, 8, 16)


def test_encoder_rejects_indivisible_freq(rng):
    enc = Encoder(_store(), "e", desk_config(), rng)
    with pytest.raises(ShapeError):
        enc(Tensor(np.zeros((1, 10, 30, 2))), training=False)


# -- residual block -----------------------------------------------------


def test_residual_block_preserves_shape(rng):
    rb = ResidualBlock(_store(), "r", 8, (5, 7), rng)
    x = Tensor(rng.standard_normal((2, 12, 8, 8)))
    assert rb(x, training=False).shape == x.shape


def test_residual_block_gradients_flow(rng):
    store = _store()
    rb = ResidualBlock(store, "r", 4, (3, 3), rng)
    x = Tensor(rng.standard_normal((1, 6, 4, 4)))
    err, _ = engine.check_gradients(
        lambda: engine.sum_(engine.sigmoid(rb(x, training=True))),
        dict(store.named(trainable_only=True)), samples_per_param=2)
    assert err < 1e-5


# -- attention ----------------------------------------------------------


@pytest.mark.parametrize("axis", ["time", "freq"])
def test_attention_rows_sum_to_one(rng, axis):
    sa = SelfAttention(_store(), "a", 8, rng, axis)
    x = Tensor(rng.standard_normal((2, 10, 6, 8)))
    out, attn = sa(x, training=False)
    assert out.shape == x.shape
    n = 10 if axis == "time" else 6
    assert attn.shape == (2, n, n)
    np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_halves_channels(rng):
    store = _store()
    sa = SelfAttention(store, "a", 8, rng, "time", divisor=2)
    assert store.tensors["a.q.conv.w"].shape[-1] == 4


def test_attention_tiny_channel_floor(rng):
    # 3-channel merge attention still gets at least one inner channel
    sa = SelfAttention(_store(), "a", 3, rng, "time")
    assert sa.ca == 1


@pytest.mark.parametrize("axis,shape", [("time", (1, 1, 6, 8)),
                                        ("freq", (1, 10, 1, 8))])
def test_attention_degenerate_length(rng, axis, shape):
    # a single attention position: weights collapse to exactly 1
    sa = SelfAttention(_store(), "a", 8, rng, axis)
    out, attn = sa(Tensor(rng.standard_normal(shape)), training=False)
    np.testing.assert_allclose(attn, 1.0, atol=1e-12)
    assert out.shape == shape


def test_attention_zero_projection_is_identity(rng):
    # zeroing the V path and re-projection leaves only the residual term
    store = _store()
    sa = SelfAttention(store, "a", 6, rng, "time")
    for name in ("a.v.conv.w", "a.v.conv.b", "a.v.bn.gamma", "a.v.bn.beta",
                 "a.proj.conv.w", "a.proj.conv.b", "a.proj.bn.gamma",
                 "a.proj.bn.beta"):
        store.tensors[name].data[:] = 0.0
    x = Tensor(rng.standard_normal((1, 5, 4, 6)))
    out, _ = sa(x, training=False)
    assert np.array_equal(out.data, x.data)


# -- RA block -----------------------------------------------------------


def test_ra_block_shape_and_attention_maps(rng):
    cfg = desk_config()
    ra = RABlock(_store(), "ra", 16, cfg, rng)
    x = Tensor(rng.standard_normal((1, 20, 8, 16)))
    out, att = ra(x, training=False)
    assert out.shape == x.shape
    assert att["sa_t"].shape == (1, 20, 20)
    assert att["sa_f"].shape == (1, 8, 8)


def test_ra_block_constructed_passthrough(rng):
    # zero both attention write paths and make the fusion conv copy its
    # first input slot: the block reduces to the two residual convs
    store = _store()
    cfg = desk_config()
    ra = RABlock(store, "ra", 4, cfg, rng)
    for att in ("att_t", "att_f"):
        for unit in ("v", "proj"):
            for p in ("conv.w", "conv.b", "bn.gamma", "bn.beta"):
                store.tensors[f"ra.{att}.{unit}.{p}"].data[:] = 0.0
    w = np.zeros((1, 1, 12, 4))
    w[0, 0, :4, :] = np.eye(4)      # fres slot
    w[0, 0, 4:8, :] = 0.5 * np.eye(4)   # ftemp slot (== fres here)
    w[0, 0, 8:, :] = 0.5 * np.eye(4)    # ffreq slot (== fres here)
    store.tensors["ra.fuse.w"].data[:] = w
    store.tensors["ra.fuse.b"].data[:] = 0.0
    x = Tensor(rng.standard_normal((1, 6, 4, 4)))
    out, _ = ra(x, training=False)
    fres = ra.res2(ra.res1(x, False), False)
    np.testing.assert_allclose(out.data, 2.0 * fres.data, atol=1e-12)


# -- interaction --------------------------------------------------------


def test_interaction_zero_mask_is_identity(rng):
    inter = Interaction(_store(), "i", 4, rng)
    fs = Tensor(rng.standard_normal((1, 5, 4, 4)))
    fn = Tensor(rng.standard_normal((1, 5, 4, 4)))
    fs_out, fn_out, _ = inter(fs, fn, force=0.0)
    assert np.array_equal(fs_out.data, fs.data)
    assert np.array_equal(fn_out.data, fn.data)


def test_interaction_unit_mask_adds_other_branch(rng):
    inter = Interaction(_store(), "i", 4, rng)
    fs = Tensor(rng.standard_normal((1, 5, 4, 4)))
    fn = Tensor(rng.standard_normal((1, 5, 4, 4)))
    fs_out, fn_out, _ = inter(fs, fn, force=1.0)
    np.testing.assert_allclose(fs_out.data, fs.data + fn.data, atol=1e-15)
    np.testing.assert_allclose(fn_out.data, fn.data + fs.data, atol=1e-15)


def test_interaction_masks_are_sigmoid_bounded(rng):
    inter = Interaction(_store(), "i", 4, rng)
    fs = Tensor(rng.standard_normal((1, 5, 4, 4)) * 3)
    fn = Tensor(rng.standard_normal((1, 5, 4, 4)) * 3)
    _, _, internals = inter(fs, fn)
    for m in internals.values():
        assert np.all((m > 0) & (m < 1))


def test_interaction_rejects_shape_mismatch(rng):
    inter = Interaction(_store(), "i", 4, rng)
    with pytest.raises(ShapeError):
        inter(Tensor(np.zeros((1, 5, 4, 4))), Tensor(np.zeros((1, 6, 4, 4))))


# -- merge --------------------------------------------------------------


def test_merge_equation_boundaries(rng):
    # m == 1 selects the speech path; m == 0 selects x - n exactly
    store = _store()
    cfg = desk_config()
    mg = MergeNet(store, "m", cfg, rng)
    s_f = Tensor(rng.standard_normal((1, 6, 64, 3))[..., 0])
    n_f = Tensor(rng.standard_normal((1, 6, 64)))
    x_f = Tensor(rng.standard_normal((1, 6, 64)))
    out1, m1, _ = mg(s_f, n_f, x_f, training=False, force_mask=1.0)
    assert np.array_equal(out1.data, s_f.data)
    out0, m0, _ = mg(s_f, n_f, x_f, training=False, force_mask=0.0)
    assert np.array_equal(out0.data, x_f.data - n_f.data)


def test_merge_mask_is_bounded(rng):
    store = _store()
    mg = MergeNet(store, "m", desk_config(), rng)
    s_f = Tensor(rng.standard_normal((1, 6, 64)))
    n_f = Tensor(rng.standard_normal((1, 6, 64)))
    x_f = Tensor(rng.standard_normal((1, 6, 64)))
    _, m, _ = mg(s_f, n_f, x_f, training=False)
    assert np.all((m.data > 0) & (m.data < 1))


# -- full network -------------------------------------------------------


def test_forward_shapes_and_lengths(desk_model, desk_input):
    out = desk_model.forward(desk_input)
    T = dsp.num_frames(len(desk_input), desk_model.cfg.hop)
    assert out.speech_spec.shape == (1, T, 33, 2)
    assert out.noise_spec.shape == (1, T, 33, 2)
    assert out.speech_wave.shape == (1, len(desk_input))
    assert out.merged.shape == (1, len(desk_input))


def test_forward_nyquist_restored_as_zero(desk_model, desk_input):
    out = desk_model.forward(desk_input)
    assert np.all(out.speech_spec.data[:, :, -1, :] == 0)
    assert np.all(out.noise_spec.data[:, :, -1, :] == 0)


def test_forward_deterministic(desk_model, desk_input):
    a = desk_model.forward(desk_input)
    b = desk_model.forward(desk_input)
    assert np.array_equal(a.speech_wave.data, b.speech_wave.data)
    assert np.array_equal(a.merged.data, b.merged.data)


def test_seeded_construction_reproducible(desk_cfg, desk_input):
    m1 = SNNet(desk_cfg, ParamStore(dtype=np.float64), seed=7)
    m2 = SNNet(desk_cfg, ParamStore(dtype=np.float64), seed=7)
    a = m1.forward(desk_input).speech_wave.data
    b = m2.forward(desk_input).speech_wave.data
    assert np.array_equal(a, b)
    m3 = SNNet(desk_cfg, ParamStore(dtype=np.float64), seed=8)
    assert not np.array_equal(a, m3.forward(desk_input).speech_wave.data)


def test_zero_interaction_decouples_branches(desk_model, desk_input):
    # forcing the interaction masks to zero must reproduce the isolated
    # single-branch computation bit for bit
    full = desk_model.forward(desk_input, interaction_override=0.0,
                              run_merge=False)
    solo_s = desk_model.forward_single_branch(desk_input, "speech")
    solo_n = desk_model.forward_single_branch(desk_input, "noise")
    assert np.array_equal(full.speech_spec.data, solo_s.data)
    assert np.array_equal(full.noise_spec.data, solo_n.data)


def test_interaction_off_matches_uninteracted_config(desk_cfg, desk_input):
    m = SNNet(desk_cfg, ParamStore(dtype=np.float64), seed=3)
    off = m.forward(desk_input, interaction_override="off", run_merge=False)
    on = m.forward(desk_input, run_merge=False)
    assert not np.array_equal(off.speech_spec.data, on.speech_spec.data)


def test_merge_override_boundaries_on_waveform(desk_model, desk_input):
    out1 = desk_model.forward(desk_input, merge_override=1.0)
    # except for the first window-onset samples (zero analysis weight),
    # m==1 reproduces the speech branch waveform through the frame path
    hop = desk_model.cfg.hop
    np.testing.assert_allclose(out1.merged.data[0, hop:],
                               out1.speech_wave.data[0, hop:], atol=1e-10)
    out0 = desk_model.forward(desk_input, merge_override=0.0)
    ref = desk_input - out0.noise_wave.data[0]
    np.testing.assert_allclose(out0.merged.data[0, hop:], ref[hop:],
                               atol=1e-10)


def test_merge_detached_blocks_branch_gradients(desk_model, desk_input):
    desk_model.store.zero_grad()
    out = desk_model.forward(desk_input, merge_detached=True,
                             merge_training=True)
    engine.sum_(engine.mul(out.merged, out.merged)).backward()
    merge_has_grad = False
    for name, t in desk_model.store.named():
        if name.startswith("merge."):
            # individual params (e.g. a PReLU slope with all-positive
            # inputs) may get exact zeros; the set must not
            if t.grad is not None and np.any(t.grad != 0):
                merge_has_grad = True
        else:
            assert t.grad is None or not np.any(t.grad), name
    assert merge_has_grad


def test_collect_internals_keys(desk_model, desk_input):
    out = desk_model.forward(desk_input, collect_internals=True)
    for i in (1, 2):
        for br in ("speech", "noise"):
            assert f"sa_t_{br}_{i}" in out.internals
            assert f"sa_f_{br}_{i}" in out.internals
        assert f"interact_mask_n2s_{i}" in out.internals
        assert f"interact_mask_s2n_{i}" in out.internals
    assert "merge_mask" in out.internals
    assert "merge_sa_t" in out.internals


def test_separate_returns_two_waveforms(desk_model, desk_input):
    s, n = desk_model.separate(desk_input)
    assert s.shape == n.shape == (1, len(desk_input))


def test_merge_param_names(desk_model):
    names = desk_model.merge_param_names()
    assert names
    assert all(n.startswith("merge.") for n in names)


def test_use_merge_false_skips_merge(desk_cfg, desk_input):
    cfg = desk_config(use_merge=False)
    m = SNNet(cfg, ParamStore(dtype=np.float64), seed=0)
    out = m.forward(desk_input)
    assert out.merged is None
    assert not m.merge_param_names()
