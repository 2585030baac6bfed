"""Training objectives: consistency-projected compressed spectral MSE,
weighted three-term combination, and permutation-invariant loss."""

from __future__ import annotations

import numpy as np

from . import dsp, engine
from .engine import Tensor

COMPRESSION_P = 0.3


def consistency_project(spec: Tensor, n_fft: int = dsp.N_FFT,
                        hop: int = dsp.HOP) -> Tensor:
    """Project onto the set of consistent spectrograms: stft(istft(S))."""
    T = spec.shape[1]
    length = T * hop
    wave = dsp.istft_t(spec, length, n_fft, hop)
    return dsp.stft_t(wave, n_fft, hop)


def compressed_mse(est: Tensor, ref: Tensor, p: float = COMPRESSION_P) -> Tensor:
    """Mean over T-F bins of |c(est) - c(ref)|^2 with power-law compression."""
    if est.shape != ref.shape:
        raise engine.ShapeError(
            f"compressed_mse: shape mismatch {est.shape} vs {ref.shape}")
    diff = dsp.power_law_compress_t(est, p) - dsp.power_law_compress_t(ref, p)
    # mean over bins: sum of squared real+imag parts, divided by B*T*F
    n_bins = int(np.prod(est.shape[:-1]))
    return engine.mul_scalar(engine.sum_(engine.mul(diff, diff)), 1.0 / n_bins)


def combined_loss(speech_spec: Tensor, noise_spec: Tensor,
                  merged_wave: Tensor | None,
                  speech_ref: np.ndarray, noise_ref: np.ndarray,
                  alpha: float = 1.0, beta: float = 0.0,
                  n_fft: int = dsp.N_FFT, hop: int = dsp.HOP):
    """L = L_speech + alpha * L_noise + beta * L_merge.

    Branch terms run the decoder outputs through the consistency projection
    before comparing against stft of the references; the merge term compares
    stft of the merged waveform against stft of the clean speech.

    Returns (total, dict of term values).
    """
    ref_s = dsp.stft_t(np.asarray(speech_ref), n_fft, hop)
    ref_n = dsp.stft_t(np.asarray(noise_ref), n_fft, hop)
    l_speech = compressed_mse(consistency_project(speech_spec, n_fft, hop), ref_s)
    l_noise = compressed_mse(consistency_project(noise_spec, n_fft, hop), ref_n)
    total = l_speech + alpha * l_noise
    terms = {"speech": float(l_speech.data), "noise": float(l_noise.data),
             "merge": 0.0}
    if beta != 0.0:
        if merged_wave is None:
            raise ValueError("combined_loss: beta != 0 requires a merged waveform")
        l_merge = compressed_mse(dsp.stft_t(merged_wave, n_fft, hop), ref_s)
        total = total + beta * l_merge
        terms["merge"] = float(l_merge.data)
    return total, terms


def merge_loss(merged_wave: Tensor, speech_ref: np.ndarray,
               n_fft: int = dsp.N_FFT, hop: int = dsp.HOP) -> Tensor:
    """Compressed spectral MSE of the merged waveform against clean speech."""
    ref = dsp.stft_t(np.asarray(speech_ref), n_fft, hop)
    return compressed_mse(dsp.stft_t(merged_wave, n_fft, hop), ref)


def pit_loss(est1: Tensor, est2: Tensor, ref1: np.ndarray, ref2: np.ndarray,
             n_fft: int = dsp.N_FFT, hop: int = dsp.HOP):
    """Permutation-invariant compressed spectral MSE over two sources.

    Estimates are branch spectrograms (consistency-projected); references are
    waveforms. Returns (loss Tensor, permutation), ties to the identity.
    """
    r1 = dsp.stft_t(np.asarray(ref1), n_fft, hop)
    r2 = dsp.stft_t(np.asarray(ref2), n_fft, hop)
    p1 = consistency_project(est1, n_fft, hop)
    p2 = consistency_project(est2, n_fft, hop)
    l11 = compressed_mse(p1, r1)
    l22 = compressed_mse(p2, r2)
    l12 = compressed_mse(p1, r2)
    l21 = compressed_mse(p2, r1)
    identity = l11 + l22
    swapped = l12 + l21
    if float(swapped.data) < float(identity.data):
        return swapped, (1, 0)
    return identity, (0, 1)
