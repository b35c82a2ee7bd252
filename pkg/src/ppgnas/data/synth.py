"""Synthetic PPG/ABP recordings for desk-scale experiments.

Each subject gets a heart rate and a (SBP, DBP) pair.  The PPG beat is a
two-Gaussian pulse whose reflected-wave height, position and systolic width
depend on the pressures, so the labels are (noisily) recoverable from PPG
morphology.  The ABP beat is a sharpened copy of the noise-free pulse,
min-max scaled per beat over its own samples, so every beat hits DBP and SBP
exactly at sample instants.
"""
from __future__ import annotations

import numpy as np

from .records import TARGET_FS, Record

HR_RANGE = (50.0, 100.0)
SBP_RANGE = (90.0, 180.0)
DBP_RANGE = (50.0, 110.0)


def _gauss(phi, mu, width):
    return np.exp(-(((phi - mu) / width) ** 2))


def pulse_beat(period: int, sbp: float, dbp: float) -> np.ndarray:
    phi = np.arange(period) / period
    pp = np.clip((sbp - dbp - 20.0) / 100.0, 0.0, 1.0)
    r = 0.25 + 0.5 * (sbp - SBP_RANGE[0]) / 90.0
    mu2 = 0.40 + 0.15 * (dbp - DBP_RANGE[0]) / 60.0
    w1 = 0.06 + 0.04 * (1.0 - pp)
    return _gauss(phi, 0.18, w1) + r * _gauss(phi, mu2, 0.09)


def abp_beat(pulse: np.ndarray, sbp: float, dbp: float) -> np.ndarray:
    shaped = np.roll(pulse, -max(1, pulse.size // 25)) ** 1.5
    lo, hi = shaped.min(), shaped.max()
    return dbp + (sbp - dbp) * (shaped - lo) / (hi - lo)


def synth_generate(seed: int, n_subjects: int, seconds_per_subject: float, fs_hz: float = TARGET_FS,
                   noise: float = 0.02, pressures: list[tuple[float, float]] | None = None) -> list[Record]:
    """``pressures`` optionally pins each subject's (SBP, DBP) instead of drawing them."""
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    n = int(round(seconds_per_subject * fs_hz))
    records = []
    for i in range(n_subjects):
        rng = np.random.default_rng([seed, i])
        hr = rng.uniform(*HR_RANGE)
        sbp = round(float(rng.uniform(*SBP_RANGE)), 1)
        dbp = round(float(rng.uniform(DBP_RANGE[0], min(DBP_RANGE[1], sbp - 20.0))), 1)
        if pressures is not None:
            sbp, dbp = map(float, pressures[i])
        period = max(8, int(round(fs_hz * 60.0 / hr)))
        beat = pulse_beat(period, sbp, dbp)
        reps = n // period + 2
        offset = int(rng.integers(period))
        ppg_clean = np.tile(beat, reps)[offset:offset + n]
        abp = np.tile(abp_beat(beat, sbp, dbp), reps)[offset:offset + n]
        t = np.arange(n) / fs_hz
        wander = 0.1 * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))
        ppg = rng.uniform(0.5, 2.0) * (ppg_clean + wander + noise * rng.standard_normal(n))
        records.append(Record(f"S{i:04d}", fs_hz, ppg, abp, sbp, dbp))
    return records
