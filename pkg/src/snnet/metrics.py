"""Objective quality measures: segmental SNR, SI-SDR, and SI-SDR improvement."""

from __future__ import annotations

import numpy as np

from .engine import ShapeError

SSNR_SEGMENT = 512
SSNR_MIN_DB = -10.0
SSNR_MAX_DB = 35.0
SSNR_SILENCE = 1e-10
SDR_CAP_DB = 100.0


def ssnr(ref: np.ndarray, est: np.ndarray) -> float:
    """Mean of clamped per-segment SNRs over non-overlapping 32 ms segments.

    Segments whose reference energy falls below a silence floor are excluded.
    """
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ShapeError("ssnr: length mismatch")
    n_seg = len(ref) // SSNR_SEGMENT
    vals = []
    for i in range(n_seg):
        lo, hi = i * SSNR_SEGMENT, (i + 1) * SSNR_SEGMENT
        e_ref = float(np.sum(ref[lo:hi] ** 2))
        if e_ref < SSNR_SILENCE:
            continue
        e_err = float(np.sum((ref[lo:hi] - est[lo:hi]) ** 2))
        if e_err <= 0.0:
            snr = SSNR_MAX_DB
        else:
            snr = 10.0 * np.log10(e_ref / e_err)
        vals.append(np.clip(snr, SSNR_MIN_DB, SSNR_MAX_DB))
    if not vals:
        raise ValueError("ssnr: no segments above the silence floor")
    return float(np.mean(vals))


def si_sdr(ref: np.ndarray, est: np.ndarray) -> float:
    """Scale-invariant SDR in dB, capped at +/-100 dB for degenerate cases."""
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ShapeError("si_sdr: length mismatch")
    ref = ref - ref.mean()
    est = est - est.mean()
    den = float(np.dot(ref, ref))
    if den <= 0.0:
        raise ValueError("si_sdr: silent reference")
    target = (float(np.dot(est, ref)) / den) * ref
    e_t = float(np.dot(target, target))
    e_res = float(np.dot(est - target, est - target))
    if e_res < 1e-12 * max(e_t, 1.0):
        return SDR_CAP_DB
    if e_t <= 0.0:
        return -SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(e_t / e_res), -SDR_CAP_DB, SDR_CAP_DB))


def si_sdri(ref: np.ndarray, est: np.ndarray, noisy: np.ndarray) -> float:
    """SI-SDR improvement of the estimate over the unprocessed noisy signal."""
    return si_sdr(ref, est) - si_sdr(ref, noisy)


def report_rows(entries) -> list[dict]:
    """Per-clip metric rows for (clip_id, ref, est, noisy) tuples."""
    rows = []
    for clip_id, ref, est, noisy in entries:
        rows.append({
            "clip_id": clip_id,
            "ssnr_db": ssnr(ref, est),
            "si_sdr_db": si_sdr(ref, est),
            "si_sdri_db": si_sdri(ref, est, noisy),
        })
    return rows


def aggregate(rows: list[dict]) -> dict:
    out = {}
    for key in ("ssnr_db", "si_sdr_db", "si_sdri_db"):
        vals = [r[key] for r in rows]
        out[key] = {"mean": float(np.mean(vals)), "median": float(np.median(vals))}
    return out
