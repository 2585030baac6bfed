"""Synthetic dataset generation, SNR mixing, and manifest management.

Clean clips are amplitude-modulated harmonic complexes (speech-like: sparse
spectrum, slow envelope); noise clips are white, pink, tonal, or chirp.
Datasets are written as clean/noise/noisy WAV triples plus a JSON-lines
manifest, deterministically from a config seed.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import dsp, wavio

CLIP_SECONDS = 2.0
CLIP_SAMPLES = int(CLIP_SECONDS * wavio.SAMPLE_RATE)

DEFAULT_SNR_LEVELS = (-5.0, 0.0, 5.0, 10.0, 15.0)

CLEAN_KINDS = ("harmonic",)
NOISE_KINDS = ("white", "pink", "tonal", "chirp")


def _peak_normalize(x: np.ndarray, peak: float = 0.9) -> np.ndarray:
    m = np.max(np.abs(x))
    return x if m == 0 else x * (peak / m)


def _quantize(x: np.ndarray) -> np.ndarray:
    """Round to the 16-bit PCM grid (what write_wav/read_wav round-trips)."""
    return np.clip(np.round(x * 32768.0), -32768, 32767) / 32768.0


def synth_clip(spec: dict) -> np.ndarray:
    """Deterministically generate one clip from a spec dict.

    Spec keys: kind; seed; optional f0, n_harmonics, env_hz, freq_hz, f_lo, f_hi.
    """
    kind = spec["kind"]
    rng = np.random.default_rng(spec["seed"])
    n = spec.get("samples", CLIP_SAMPLES)
    t = np.arange(n) / wavio.SAMPLE_RATE
    if kind == "harmonic":
        f0 = spec.get("f0", float(rng.uniform(100.0, 300.0)))
        n_h = spec.get("n_harmonics", int(rng.integers(5, 11)))
        env_hz = spec.get("env_hz", 4.0)
        x = np.zeros(n)
        for h in range(1, n_h + 1):
            amp = 1.0 / h
            phase = rng.uniform(0.0, 2.0 * np.pi)
            x += amp * np.sin(2.0 * np.pi * f0 * h * t + phase)
        env = 0.55 + 0.45 * np.sin(2.0 * np.pi * env_hz * t + rng.uniform(0, 2 * np.pi))
        x *= env
    elif kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        white = rng.standard_normal(n)
        spec_w = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, d=1.0 / wavio.SAMPLE_RATE)
        shaping = np.ones_like(f)
        shaping[1:] = 1.0 / np.sqrt(f[1:])
        x = np.fft.irfft(spec_w * shaping, n=n)
    elif kind == "tonal":
        freq = spec.get("freq_hz", float(rng.uniform(500.0, 4000.0)))
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x = np.sin(2.0 * np.pi * freq * t + phase)
    elif kind == "chirp":
        f_lo = spec.get("f_lo", 200.0)
        f_hi = spec.get("f_hi", 6000.0)
        inst = f_lo + (f_hi - f_lo) * t / t[-1]
        x = np.sin(2.0 * np.pi * np.cumsum(inst) / wavio.SAMPLE_RATE)
    else:
        raise ValueError(f"synth_clip: unknown kind {kind!r}")
    return _peak_normalize(x)


def build_dataset(config: dict, out_dir: str) -> str:
    """Generate WAV triples and a manifest; returns the manifest path.

    Config keys: count, seed, snr_levels, noise_kinds, split_test_fraction.
    Entry i gets SNR level i % len(levels) (uniform assignment) and a seed
    derived from the master seed.
    """
    count = config["count"]
    master_seed = config.get("seed", 0)
    levels = list(config.get("snr_levels", DEFAULT_SNR_LEVELS))
    noise_kinds = list(config.get("noise_kinds", NOISE_KINDS))
    test_frac = config.get("split_test_fraction", 0.0)
    os.makedirs(out_dir, exist_ok=True)
    n_test = int(round(count * test_frac))
    entries = []
    clean_kind = config.get("clean_kind", "harmonic")
    for i in range(count):
        clean_spec = {"kind": clean_kind, "seed": master_seed * 1000003 + 2 * i}
        noise_spec = {"kind": noise_kinds[i % len(noise_kinds)],
                      "seed": master_seed * 1000003 + 2 * i + 1}
        snr = levels[i % len(levels)]
        clean = synth_clip(clean_spec)
        noise = synth_clip(noise_spec)
        noisy, scaled = dsp.mix_at_snr(clean, noise, snr)
        peak = np.max(np.abs(noisy))
        if peak > 0.99:  # keep the PCM write out of clipping
            scale = 0.99 / peak
            clean, scaled = clean * scale, scaled * scale
        # land clean and noise on the PCM grid so the stored noisy file is
        # their exact sample-wise sum
        clean = _quantize(clean)
        scaled = _quantize(scaled)
        noisy = clean + scaled
        clip_id = f"clip{i:05d}"
        paths = {}
        for tag, sig in (("clean", clean), ("noise", scaled), ("noisy", noisy)):
            rel = f"{clip_id}_{tag}.wav"
            wavio.write_wav(os.path.join(out_dir, rel), sig)
            paths[tag] = rel
        entries.append({
            "id": clip_id,
            "clean": paths["clean"],
            "noise": paths["noise"],
            "noisy": paths["noisy"],
            "clean_spec": clean_spec,
            "noise_spec": noise_spec,
            "snr_db": snr,
            "measured_snr_db": dsp.measure_snr(clean, scaled),
            "seed": noise_spec["seed"],
            "split": "test" if i >= count - n_test else "train",
        })
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest_path, "w") as f:
        for e in entries:
            f.write(json.dumps(e) + "\n")
    return manifest_path


def load_manifest(path: str) -> list[dict]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries


def _fit_length(x: np.ndarray, n: int = CLIP_SAMPLES) -> np.ndarray:
    """Zero-pad short clips, truncate long ones, to exactly n samples."""
    if len(x) >= n:
        return x[:n]
    return np.pad(x, (0, n - len(x)))


def load_batch(entries: list[dict], indices, base_dir: str):
    """Load (noisy, clean, noise) triples as [B, CLIP_SAMPLES] arrays."""
    noisy, clean, noise = [], [], []
    for i in indices:
        e = entries[i]
        noisy.append(_fit_length(wavio.read_wav(os.path.join(base_dir, e["noisy"]))))
        clean.append(_fit_length(wavio.read_wav(os.path.join(base_dir, e["clean"]))))
        noise.append(_fit_length(wavio.read_wav(os.path.join(base_dir, e["noise"]))))
    return np.stack(noisy), np.stack(clean), np.stack(noise)
