"""Time-frequency analysis/synthesis and signal mixing.

All transforms are built from engine primitives so they are differentiable
when fed tracked tensors; thin numpy wrappers cover the plain-array callers
(dataset synthesis, metrics). Defaults: 16 kHz audio, 320-sample periodic
Hann window, 160-sample hop, one-sided 161-bin spectra.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .engine import Tensor

SAMPLE_RATE = 16000
N_FFT = 320
HOP = 160
N_BINS = N_FFT // 2 + 1

_EPS_DEN = 1e-10  # floor for overlap-add normalizers at the edges
_EPS_MAG = 1e-12  # smoothing inside |z| for differentiable compression


class DegenerateInputError(ValueError):
    """Raised for inputs with no usable signal content (e.g. silent noise)."""


def hann_window(n: int = N_FFT) -> np.ndarray:
    """Periodic Hann: w[k] = 0.5*(1 - cos(2*pi*k/n)); exact COLA at 50% hop."""
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


_dft_cache: dict = {}


def _dft_matrices(n_fft: int, dtype):
    """Forward/backward real-DFT matrices for one-sided spectra."""
    key = (n_fft, np.dtype(dtype).str)
    if key not in _dft_cache:
        nb = n_fft // 2 + 1
        n = np.arange(n_fft)[:, None]
        k = np.arange(nb)[None, :]
        ang = 2.0 * np.pi * n * k / n_fft
        fwd_c = np.cos(ang)
        fwd_s = -np.sin(ang)
        weight = np.full(nb, 2.0)
        weight[0] = 1.0
        weight[-1] = 1.0
        inv_c = (weight[:, None] * np.cos(ang.T)) / n_fft
        inv_s = (-weight[:, None] * np.sin(ang.T)) / n_fft
        _dft_cache[key] = tuple(
            m.astype(dtype) for m in (fwd_c, fwd_s, inv_c, inv_s)
        )
    return _dft_cache[key]


def num_frames(length: int, hop: int = HOP) -> int:
    return -(-length // hop)


def _as2d(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if t.data.ndim == 1:
        t = engine.reshape(t, (1, t.data.shape[0]))
    return t


def stft_t(x, n_fft: int = N_FFT, hop: int = HOP) -> Tensor:
    """STFT of [B,L] (or [L]) -> [B,T,F,2]; frame t covers [t*hop, t*hop+n_fft)."""
    xt = _as2d(x)
    if xt.data.shape[-1] == 0:
        raise DegenerateInputError("stft: empty input")
    T = num_frames(xt.data.shape[-1], hop)
    fwd_c, fwd_s, _, _ = _dft_matrices(n_fft, xt.dtype)
    win = hann_window(n_fft).astype(xt.dtype)
    frames = engine.frame(xt, n_fft, hop, T)
    windowed = engine.mul(frames, Tensor(win))
    re = engine.matmul(windowed, Tensor(fwd_c))
    im = engine.matmul(windowed, Tensor(fwd_s))
    return engine.stack_last([re, im])


def istft_t(spec: Tensor, length: int, n_fft: int = N_FFT, hop: int = HOP) -> Tensor:
    """Weighted overlap-add inverse of ``stft_t``; output is [B,length]."""
    nb = n_fft // 2 + 1
    if spec.data.shape[-2] != nb:
        raise engine.ShapeError(
            f"istft: expected {nb} frequency bins, got {spec.data.shape[-2]}"
        )
    T = spec.data.shape[1]
    _, _, inv_c, inv_s = _dft_matrices(n_fft, spec.dtype)
    win = hann_window(n_fft).astype(spec.dtype)
    re = engine.slice_(spec, (slice(None), slice(None), slice(None), 0))
    im = engine.slice_(spec, (slice(None), slice(None), slice(None), 1))
    frames = engine.add(
        engine.matmul(re, Tensor(inv_c)), engine.matmul(im, Tensor(inv_s))
    )
    weighted = engine.mul(frames, Tensor(win))
    full = engine.overlap_add(weighted, hop)
    den = _ola_norm(win * win, T, hop)
    y = engine.div(full, Tensor(np.maximum(den, _EPS_DEN)))
    return engine.slice_(y, (slice(None), slice(0, length)))


def _ola_norm(w: np.ndarray, T: int, hop: int) -> np.ndarray:
    span = (T - 1) * hop + len(w)
    den = np.zeros(span, dtype=w.dtype)
    for t in range(T):
        den[t * hop : t * hop + len(w)] += w
    return den


def frame_signal_t(x, n_fft: int = N_FFT, hop: int = HOP) -> Tensor:
    """Rectangular analysis framing of [B,L] into [B,T,K], K=n_fft."""
    xt = _as2d(x)
    T = num_frames(xt.data.shape[-1], hop)
    return engine.frame(xt, n_fft, hop, T)


def overlap_add_t(frames: Tensor, length: int, hop: int = HOP) -> Tensor:
    """Hann-weighted overlap-add with COLA normalization; inverts rect framing."""
    K = frames.data.shape[-1]
    T = frames.data.shape[1]
    win = hann_window(K).astype(frames.dtype)
    weighted = engine.mul(frames, Tensor(win))
    full = engine.overlap_add(weighted, hop)
    den = _ola_norm(win, T, hop)
    y = engine.div(full, Tensor(np.maximum(den, _EPS_DEN)))
    return engine.slice_(y, (slice(None), slice(0, length)))


def power_law_compress_t(spec: Tensor, p: float = 0.3) -> Tensor:
    """|z|^p with phase preserved: z * |z|^(p-1), smoothed near zero."""
    sq = engine.sum_(engine.mul(spec, spec), axis=-1, keepdims=True)
    scale = engine.power(engine.add(sq, Tensor(np.asarray(_EPS_MAG, spec.dtype))),
                         (p - 1.0) / 2.0)
    return engine.mul(spec, scale)


# -- numpy convenience wrappers -----------------------------------------


def _to_complex(arr: np.ndarray) -> np.ndarray:
    return arr[..., 0] + 1j * arr[..., 1]


def _from_complex(spec: np.ndarray, dtype=np.float64) -> np.ndarray:
    return np.stack([spec.real, spec.imag], axis=-1).astype(dtype)


def stft(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """STFT of a 1-D signal; returns complex [T,F]."""
    out = stft_t(np.asarray(x, dtype=np.float64), n_fft, hop)
    return _to_complex(out.data[0])


def istft(spec: np.ndarray, length: int, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Inverse STFT of complex [T,F]; returns a 1-D signal of given length."""
    s4 = _from_complex(spec)[None]
    return istft_t(Tensor(s4), length, n_fft, hop).data[0]


def frame_signal(x: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    return frame_signal_t(np.asarray(x, dtype=np.float64), n_fft, hop).data[0]


def overlap_add_frames(frames: np.ndarray, length: int, hop: int = HOP) -> np.ndarray:
    return overlap_add_t(Tensor(np.asarray(frames)[None]), length, hop).data[0]


def power_law_compress(spec: np.ndarray, p: float = 0.3) -> np.ndarray:
    """Exact compression for plain complex arrays: c(0)=0, phase preserved."""
    mag = np.abs(spec)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(mag > 0, mag**p * spec / np.where(mag > 0, mag, 1.0), 0.0)
    return out


def drop_nyquist(spec: np.ndarray) -> np.ndarray:
    """161 -> 160 bins for the model-facing spectrogram."""
    return spec[..., : N_BINS - 1, :]


# -- SNR mixing ---------------------------------------------------------


def _support_power(x: np.ndarray) -> float:
    nz = x != 0
    if not np.any(nz):
        return 0.0
    return float(np.mean(x[nz] ** 2))


def mix_at_snr(s: np.ndarray, n: np.ndarray, snr_db: float) -> tuple[np.ndarray, np.ndarray]:
    """Scale noise to hit the requested SNR; returns (noisy, scaled_noise)."""
    if len(s) != len(n):
        raise engine.ShapeError("mix_at_snr: length mismatch")
    p_s = _support_power(s)
    p_n = _support_power(n)
    if p_n == 0.0:
        raise DegenerateInputError("mix_at_snr: noise signal is silent")
    if p_s == 0.0:
        raise DegenerateInputError("mix_at_snr: clean signal is silent")
    g = np.sqrt(p_s / (p_n * 10.0 ** (snr_db / 10.0)))
    scaled = g * n
    return s + scaled, scaled


def measure_snr(s: np.ndarray, n: np.ndarray) -> float:
    """SNR in dB using the same nonzero-support power convention as mixing."""
    p_s = _support_power(s)
    p_n = _support_power(n)
    if p_n == 0.0 or p_s == 0.0:
        raise DegenerateInputError("measure_snr: silent operand")
    return 10.0 * np.log10(p_s / p_n)
