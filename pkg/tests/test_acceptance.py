"""Acceptance criteria A1-A7, one test per criterion.

These are the binding end-to-end checks. They train real (desk-scale)
models, so this file dominates the suite's runtime; each criterion prints
its measured numbers so a failing bound is easy to read off the log.
"""

import os
import time

import numpy as np
import pytest

from snnet import cli, data, dsp, engine, loss as loss_mod, metrics, train
from snnet.engine import ParamStore, RunningStats, Tensor, check_gradients
from snnet.model import SNNet, desk_config
from snnet.train import TrainConfig


def _report(tag, msg):
    print(f"\n[{tag}] {msg}")


# ---------------------------------------------------------------------
# A1: gradient integrity
# ---------------------------------------------------------------------


def _loss_through(op_graph, params):
    err, worst = check_gradients(op_graph, params, samples_per_param=3,
                                 rng=np.random.default_rng(0))
    return err, worst


def test_A1_gradient_integrity():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    worst_overall = (0.0, "")

    def track(err, name):
        nonlocal worst_overall
        if err > worst_overall[0]:
            worst_overall = (err, name)

    def t(a):
        return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)

    # every primitive, finite-differenced through a scalar readout
    a = t(rng.uniform(0.5, 2.0, (2, 4, 6, 3)))
    b = t(rng.uniform(0.5, 2.0, (2, 4, 6, 3)))
    r = Tensor(rng.standard_normal((2, 4, 6, 3)))
    slope = t(np.full(3, 0.25))
    gamma, beta = t(np.ones(3)), t(np.zeros(3))
    stats = RunningStats(3)
    w = t(rng.standard_normal((3, 3, 3, 2)) * 0.3)
    wt = t(rng.standard_normal((3, 3, 3, 2)) * 0.3)
    bias = t(rng.standard_normal(2) * 0.1)
    bias3 = t(rng.standard_normal(3) * 0.1)
    sig = t(rng.standard_normal((2, 64)))
    mat = t(rng.standard_normal((6, 4)))
    cond = rng.standard_normal((2, 4, 6, 3)) > 0
    r_rows = Tensor(rng.standard_normal((8, 18)))

    cases = {
        "add": lambda: engine.sum_(engine.sigmoid(engine.add(a, b))),
        "mul": lambda: engine.sum_(engine.sigmoid(engine.mul(a, b))),
        "div": lambda: engine.sum_(engine.sigmoid(engine.div(a, b))),
        "mul_scalar": lambda: engine.sum_(
            engine.sigmoid(engine.mul_scalar(a, -1.3))),
        "power": lambda: engine.sum_(engine.power(a, 0.3)),
        "sqrt": lambda: engine.sum_(engine.sqrt(a)),
        "sigmoid": lambda: engine.sum_(engine.mul(engine.sigmoid(a), r)),
        "softplus": lambda: engine.sum_(engine.mul(engine.softplus(a), r)),
        "prelu": lambda: engine.sum_(
            engine.mul(engine.prelu(engine.add(a, engine.mul_scalar(b, -1.0)),
                                    slope), r)),
        "where": lambda: engine.sum_(engine.mul(engine.where(cond, a, b), r)),
        "sum": lambda: engine.sum_(engine.sigmoid(
            engine.sum_(a, axis=2, keepdims=True))),
        "mean": lambda: engine.sum_(engine.sigmoid(
            engine.mean(a, axis=1, keepdims=True))),
        "reshape": lambda: engine.sum_(engine.sigmoid(
            engine.reshape(a, (2, 24, 3)))),
        "transpose": lambda: engine.sum_(engine.mul(
            engine.transpose(a, (0, 2, 1, 3)),
            engine.transpose(b, (0, 2, 1, 3)))),
        "concat": lambda: engine.sum_(engine.sigmoid(
            engine.concat([a, b], axis=-1))),
        "stack_last": lambda: engine.sum_(engine.sigmoid(
            engine.stack_last([a, b]))),
        "slice": lambda: engine.sum_(engine.sigmoid(
            engine.slice_(a, (slice(None), slice(1, 3))))),
        "pad_last": lambda: engine.sum_(engine.sigmoid(
            engine.pad_last(engine.reshape(a, (2, 72)), 2, 1))),
        "matmul": lambda: engine.sum_(engine.sigmoid(
            engine.matmul(engine.reshape(a, (24, 6)), mat))),
        "softmax_rows": lambda: engine.sum_(engine.mul(
            engine.softmax_rows(engine.reshape(a, (8, 18))), r_rows)),
        "conv2d": lambda: engine.sum_(engine.sigmoid(
            engine.conv2d(a, w, bias, (1, 2)))),
        "conv2d_transpose": lambda: engine.sum_(engine.sigmoid(
            engine.conv2d_transpose(
                engine.conv2d(a, w, bias, (1, 2)), wt, bias3, (1, 2)))),
        "batch_norm": lambda: engine.sum_(engine.mul(
            engine.batch_norm(a, gamma, beta, stats, training=True), r)),
        "frame": lambda: engine.sum_(engine.sigmoid(
            engine.frame(sig, 16, 8, 8))),
        "overlap_add": lambda: engine.sum_(engine.sigmoid(
            engine.overlap_add(engine.frame(sig, 16, 8, 8), 8))),
    }
    prims = {"a": a, "b": b, "slope": slope, "gamma": gamma, "beta": beta,
             "w": w, "wt": wt, "bias": bias, "bias3": bias3, "sig": sig,
             "mat": mat}
    for name, fn in cases.items():
        err, worst = _loss_through(fn, prims)
        track(err, f"{name}/{worst}")
        assert err < 1e-4, f"primitive {name}: rel err {err:.3e} at {worst}"

    # full desk-scale graph: C=16, 2 RA blocks, T=50, F=32
    model = SNNet(desk_config(), ParamStore(dtype=np.float64), seed=0)
    x = np.random.default_rng(1).standard_normal((1, 1600)) * 0.1
    s = np.random.default_rng(2).standard_normal((1, 1600)) * 0.1
    n = x - s

    def graph_loss():
        out = model.forward(x, training=True)
        total, _ = loss_mod.combined_loss(
            out.speech_spec, out.noise_spec, out.merged, s, n,
            alpha=1.0, beta=1.0, n_fft=64, hop=32)
        return total

    # eps=1e-6: the power-law compression has large curvature near
    # zero-magnitude bins, so wider central differences pick up third-order
    # error that has nothing to do with the analytic gradient.  floor=1e-4:
    # gradient components below that are dominated by f64 roundoff in the
    # difference quotient (~1e-10 here) and are compared absolutely.
    params = dict(model.store.named(trainable_only=True))
    err, worst = check_gradients(graph_loss, params, samples_per_param=1,
                                 eps=1e-6, rng=np.random.default_rng(3),
                                 floor=1e-4)
    track(err, f"full-graph/{worst}")
    elapsed = time.monotonic() - t0
    _report("A1", f"max rel err {worst_overall[0]:.3e} ({worst_overall[1]}); "
            f"{elapsed:.0f}s")
    assert err < 1e-4, f"full graph: rel err {err:.3e} at {worst}"
    assert elapsed < 300.0


# ---------------------------------------------------------------------
# A2: DSP exactness
# ---------------------------------------------------------------------


def test_A2_dsp_exactness():
    worst_stft = worst_ola = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        x = r.standard_normal(32000)
        y = dsp.istft(dsp.stft(x), 32000)
        lo, hi = 320, 32000 - 320
        err = np.linalg.norm(y[lo:hi] - x[lo:hi]) / np.linalg.norm(x[lo:hi])
        worst_stft = max(worst_stft, err)
        fr = dsp.frame_signal(x)
        z = dsp.overlap_add_frames(fr, 32000)
        err2 = np.linalg.norm(z[lo:hi] - x[lo:hi]) / np.linalg.norm(x[lo:hi])
        worst_ola = max(worst_ola, err2)

    worst_snr = 0.0
    r = np.random.default_rng(99)
    for snr in (-5.0, 0.0, 5.0, 10.0, 15.0):
        s = r.standard_normal(32000)
        n = r.standard_normal(32000)
        _, scaled = dsp.mix_at_snr(s, n, snr)
        worst_snr = max(worst_snr, abs(dsp.measure_snr(s, scaled) - snr))

    _report("A2", f"stft round-trip {worst_stft:.3e}, frame/OLA "
            f"{worst_ola:.3e}, SNR err {worst_snr:.3e} dB")
    assert worst_stft < 1e-10
    assert worst_ola < 1e-10
    assert worst_snr < 1e-9


# ---------------------------------------------------------------------
# A3: structural identities
# ---------------------------------------------------------------------


def test_A3_structural_identities():
    rng = np.random.default_rng(11)
    model = SNNet(desk_config(), ParamStore(dtype=np.float64), seed=4)
    x = rng.standard_normal(1600) * 0.1

    # Eq. 4 boundaries, exact at the frame level
    s_f = Tensor(rng.standard_normal((1, 6, 64)))
    n_f = Tensor(rng.standard_normal((1, 6, 64)))
    x_f = Tensor(rng.standard_normal((1, 6, 64)))
    out1, _, _ = model.merge(s_f, n_f, x_f, training=False, force_mask=1.0)
    out0, _, _ = model.merge(s_f, n_f, x_f, training=False, force_mask=0.0)
    assert np.array_equal(out1.data, s_f.data)
    assert np.array_equal(out0.data, x_f.data - n_f.data)

    # Eq. 3 zero-mask decoupling: bit-identical to single-branch runs
    full = model.forward(x, interaction_override=0.0, run_merge=False)
    solo_s = model.forward_single_branch(x, "speech")
    solo_n = model.forward_single_branch(x, "noise")
    assert np.array_equal(full.speech_spec.data, solo_s.data)
    assert np.array_equal(full.noise_spec.data, solo_n.data)

    # attention rows sum to 1 within 1e-6
    out = model.forward(x, collect_internals=True)
    checked = 0
    for name, arr in out.internals.items():
        if name.startswith(("sa_", "merge_sa")):
            np.testing.assert_allclose(arr.sum(axis=-1), 1.0, atol=1e-6,
                                       err_msg=name)
            checked += 1
    assert checked == 9  # 2 blocks x 2 branches x 2 axes + merge

    # PIT loss exactly swap-invariant
    e1 = Tensor(rng.standard_normal((1, 10, 161, 2)))
    e2 = Tensor(rng.standard_normal((1, 10, 161, 2)))
    r1 = rng.standard_normal(1600)
    r2 = rng.standard_normal(1600)
    va, _ = loss_mod.pit_loss(e1, e2, r1, r2)
    vb, _ = loss_mod.pit_loss(Tensor(e2.data.copy()), Tensor(e1.data.copy()),
                              r2, r1)
    assert float(va.data) == float(vb.data)
    _report("A3", "Eq.4 boundaries, decoupling, attention rows, PIT swap: ok")


# ---------------------------------------------------------------------
# A4: optimization sanity
# ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def four_clip_manifest(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("a4ds"))
    return data.build_dataset(
        {"count": 4, "seed": 31, "snr_levels": [0.0, 5.0],
         "noise_kinds": ["white", "tonal"], "clean_kind": "harmonic",
         "split_test_fraction": 0.0}, out)


def test_A4_optimization_sanity(four_clip_manifest, tmp_path):
    t0 = time.monotonic()
    c1 = TrainConfig(manifest=four_clip_manifest, steps=500, batch_size=4,
                     lr=2e-4, seed=0, crop_samples=96, crop_mode="fixed",
                     dtype="float32", out_dir=str(tmp_path / "s1"),
                     model=desk_config())
    ckpt1 = train.train_stage1(c1)
    rows = open(str(tmp_path / "s1" / "train_stage1.csv")).read().splitlines()
    first = float(rows[1].split(",")[2])
    final = float(rows[-1].split(",")[2])
    ratio = final / first

    c2 = TrainConfig(manifest=four_clip_manifest, steps=200, batch_size=4,
                     lr=1e-2, seed=0, crop_samples=96, crop_mode="fixed",
                     dtype="float32", out_dir=str(tmp_path / "s2"),
                     stage="2", init_checkpoint=ckpt1, model=desk_config())
    ckpt2 = train.train_stage2(c2)
    rows2 = open(str(tmp_path / "s2" / "train_stage2.csv")).read().splitlines()
    m_first = float(rows2[1].split(",")[2])
    m_final = float(rows2[-1].split(",")[2])

    a1, _ = engine.load_checkpoint(ckpt1)
    a2, _ = engine.load_checkpoint(ckpt2)
    frozen_ok = all(
        a1[k].tobytes() == a2[k].tobytes()
        for k in a1 if k.startswith(("s.", "n.", "inter")))
    elapsed = time.monotonic() - t0
    _report("A4", f"stage1 loss {first:.4f}->{final:.4f} "
            f"({100 * ratio:.1f}%), stage2 merge {m_first:.4f}->{m_final:.4f} "
            f"({100 * m_final / m_first:.1f}%), frozen ok={frozen_ok}, "
            f"{elapsed:.0f}s")
    assert ratio <= 0.05, f"stage-1 final/initial = {ratio:.3f}"
    assert m_final <= 0.5 * m_first, \
        f"stage-2 merge loss only reached {m_final / m_first:.3f} of initial"
    assert frozen_ok, "frozen branch tensors changed during stage 2"
    assert elapsed < 600.0


# ---------------------------------------------------------------------
# A5: enhancement gain
# ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def a5_dataset(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("a5ds"))
    manifest = data.build_dataset(
        {"count": 220, "seed": 7, "snr_levels": [0.0, 5.0, 10.0],
         "noise_kinds": ["white", "tonal"], "clean_kind": "harmonic",
         "split_test_fraction": 20 / 220}, out)
    return out, manifest


def _eval_si_sdri(model, entries, base, window=1600):
    # window matches the training crop length, as the CLI does.
    vals = []
    for e in entries:
        noisy, clean, _ = data.load_batch([e], [0], base)
        est = cli.enhance_signal(model, noisy[0], window=window)
        vals.append(metrics.si_sdri(clean[0], est, noisy[0]))
    return vals


def test_A5_enhancement_gain(a5_dataset, tmp_path):
    base, manifest = a5_dataset
    t0 = time.monotonic()
    cfg = TrainConfig(manifest=manifest, steps=1000, batch_size=4, lr=3e-3,
                      seed=0, crop_samples=1600, crop_mode="random",
                      dtype="float32", out_dir=str(tmp_path / "a5run"),
                      model=desk_config())
    ckpt = train.train_stage1(cfg)
    cfg2 = TrainConfig(manifest=manifest, stage="2", steps=200, batch_size=4,
                       lr=3e-3, seed=0, crop_samples=1600, crop_mode="random",
                       dtype="float32", out_dir=str(tmp_path / "a5run2"),
                       init_checkpoint=ckpt, model=desk_config())
    ckpt2 = train.train_stage2(cfg2)
    train_time = time.monotonic() - t0
    model, _ = train.model_from_checkpoint(ckpt2)
    test_entries = [e for e in data.load_manifest(manifest)
                    if e["split"] == "test"]
    assert len(test_entries) == 20
    vals = _eval_si_sdri(model, test_entries, base)
    med = float(np.median(vals))
    _report("A5", f"median SI-SDRi {med:.2f} dB over 20 held-out pairs "
            f"(train {train_time:.0f}s)")
    assert train_time <= 1800.0
    assert med >= 5.0, f"median SI-SDRi {med:.2f} dB < 5 dB"


# ---------------------------------------------------------------------
# A6: ablation trend + separation
# ---------------------------------------------------------------------


def test_A6_interaction_ablation_trend(a5_dataset, tmp_path):
    base, manifest = a5_dataset
    test_entries = [e for e in data.load_manifest(manifest)
                    if e["split"] == "test"]
    pooled = {True: [], False: []}
    for seed in range(5):
        for use_inter in (True, False):
            cfg = TrainConfig(
                manifest=manifest, steps=300, batch_size=4, lr=3e-3,
                seed=seed, crop_samples=1600, crop_mode="random",
                dtype="float32",
                out_dir=str(tmp_path / f"ab_{seed}_{int(use_inter)}"),
                model=desk_config(use_interaction=use_inter))
            ckpt = train.train_stage1(cfg)
            model, _ = train.model_from_checkpoint(ckpt)
            pooled[use_inter].extend(_eval_si_sdri(model, test_entries, base))
    med_on = float(np.median(pooled[True]))
    med_off = float(np.median(pooled[False]))
    _report("A6a", f"median SI-SDRi with interaction {med_on:.2f} dB, "
            f"without {med_off:.2f} dB")
    assert med_on >= med_off, (
        f"interaction {med_on:.2f} dB < ablated {med_off:.2f} dB")


def test_A6_two_tone_separation(tmp_path):
    out = str(tmp_path / "sepds")
    manifest = data.build_dataset(
        {"count": 44, "seed": 13, "snr_levels": [0.0],
         "noise_kinds": ["tonal"], "clean_kind": "tonal",
         "split_test_fraction": 4 / 44}, out)
    cfg = TrainConfig(manifest=manifest, steps=400, batch_size=4, lr=3e-3,
                      seed=0, crop_samples=1600, crop_mode="random",
                      dtype="float32", out_dir=str(tmp_path / "seprun"),
                      stage="sep", model=desk_config())
    ckpt = train.train_separation(cfg)
    model, _ = train.model_from_checkpoint(ckpt)
    test_entries = [e for e in data.load_manifest(manifest)
                    if e["split"] == "test"]
    vals = []
    for e in test_entries:
        mix, src1, src2 = data.load_batch([e], [0], out)
        with engine.no_grad():
            s_w, n_w = model.separate(mix[0].astype(np.float32))
        est1 = np.asarray(s_w.data[0], dtype=np.float64)
        est2 = np.asarray(n_w.data[0], dtype=np.float64)
        # best permutation, as PIT training fixes sources only up to a swap
        direct = (metrics.si_sdri(src1[0], est1, mix[0])
                  + metrics.si_sdri(src2[0], est2, mix[0])) / 2
        crossed = (metrics.si_sdri(src1[0], est2, mix[0])
                   + metrics.si_sdri(src2[0], est1, mix[0])) / 2
        vals.append(max(direct, crossed))
    med = float(np.median(vals))
    _report("A6b", f"two-tone separation median SI-SDRi {med:.2f} dB")
    assert med > 0.0


# ---------------------------------------------------------------------
# A7: format contracts
# ---------------------------------------------------------------------


def test_A7_format_contracts(tmp_path):
    rng = np.random.default_rng(23)

    # checkpoint byte-exact round trip
    arrays = {"w": rng.standard_normal((4, 5)),
              "b": rng.standard_normal(6).astype(np.float32)}
    p1 = str(tmp_path / "a.ckpt")
    engine.save_checkpoint(p1, arrays, {"stage": 1})
    loaded, meta = engine.load_checkpoint(p1)
    p2 = str(tmp_path / "b.ckpt")
    engine.save_checkpoint(p2, loaded, meta)
    ck_ok = open(p1, "rb").read() == open(p2, "rb").read()

    # WAV bit-exact round trip on the PCM grid
    from snnet import wavio
    q = np.round(rng.uniform(-1, 1, 4000) * 32767) / 32768.0
    wp = str(tmp_path / "w.wav")
    wavio.write_wav(wp, q)
    wav_ok = np.array_equal(wavio.read_wav(wp), q)

    # dataset rebuild byte-identical
    cfg = {"count": 3, "seed": 17, "snr_levels": [0.0, 10.0],
           "noise_kinds": ["white", "pink"], "clean_kind": "harmonic",
           "split_test_fraction": 0.0}
    d1, d2 = str(tmp_path / "d1"), str(tmp_path / "d2")
    m1 = data.build_dataset(cfg, d1)
    m2 = data.build_dataset(cfg, d2)
    ds_ok = open(m1, "rb").read() == open(m2, "rb").read()
    for e in data.load_manifest(m1):
        for key in ("clean", "noise", "noisy"):
            ds_ok &= (open(os.path.join(d1, e[key]), "rb").read()
                      == open(os.path.join(d2, e[key]), "rb").read())

    _report("A7", f"checkpoint={ck_ok} wav={wav_ok} dataset={ds_ok}")
    assert ck_ok and wav_ok and ds_ok
