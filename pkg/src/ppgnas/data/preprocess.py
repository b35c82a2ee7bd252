from __future__ import annotations

import warnings

import numpy as np

from .records import TARGET_FS, Record, WindowSet, round_half_up

ZSCORE_FLOOR = 1e-6


def resample(series, fs_in: float, fs_out: float = TARGET_FS) -> np.ndarray:
    """Linear-interpolation resampling; output length is round(len * fs_out / fs_in)."""
    x = np.asarray(series, dtype=np.float64)
    if fs_in <= 0 or fs_out <= 0:
        raise ValueError("sampling rates must be positive")
    if x.size == 0:
        raise ValueError("cannot resample an empty series")
    if fs_in == fs_out:
        return x.copy()
    n_out = round_half_up(x.size * fs_out / fs_in)
    t_out = np.arange(n_out) / fs_out
    return np.interp(t_out, np.arange(x.size) / fs_in, x)


def resample_record(rec: Record, fs_out: float = TARGET_FS) -> Record:
    abp = None if rec.abp is None else resample(rec.abp, rec.fs_hz, fs_out)
    return Record(rec.subject_id, fs_out, resample(rec.ppg, rec.fs_hz, fs_out), abp, rec.sbp, rec.dbp)


def zscore(w: np.ndarray) -> np.ndarray:
    sd = w.std(axis=-1, keepdims=True)
    return (w - w.mean(axis=-1, keepdims=True)) / np.maximum(sd, ZSCORE_FLOOR)


def extract_labels(abp_window) -> tuple[float, float]:
    """(SBP, DBP) as the extrema of an ABP window."""
    w = np.asarray(abp_window, dtype=np.float64)
    if w.size == 0 or not np.all(np.isfinite(w)):
        raise ValueError("ABP window must be non-empty and finite")
    return float(w.max()), float(w.min())


def window(rec: Record, seconds: float = 5.0, stride_seconds: float | None = None) -> WindowSet:
    """Cut a 125 Hz record into fixed windows; the trailing remainder is dropped."""
    if rec.fs_hz != TARGET_FS:
        raise ValueError(f"record {rec.subject_id} is at {rec.fs_hz} Hz; resample to {TARGET_FS} Hz first")
    length = round_half_up(seconds * TARGET_FS)
    step = round_half_up((stride_seconds or seconds) * TARGET_FS)
    if length < 1 or step < 1:
        raise ValueError("window and stride must be at least one sample")
    n = rec.ppg.size
    starts = np.arange(0, n - length + 1, step) if n >= length else np.zeros(0, dtype=int)
    if starts.size == 0:
        warnings.warn(f"record {rec.subject_id} ({n} samples) is shorter than one {length}-sample window",
                      stacklevel=2)
        return WindowSet.empty(length, rec.abp is not None)
    idx = starts[:, None] + np.arange(length)[None, :]
    ppg = zscore(rec.ppg[idx]).astype(np.float32)
    subjects = np.full(starts.size, rec.subject_id)
    if rec.abp is not None:
        abp = rec.abp[idx]
        sbp, dbp = abp.max(axis=1), abp.min(axis=1)
        return WindowSet(ppg, sbp, dbp, subjects, abp.astype(np.float32))
    return WindowSet(ppg, np.full(starts.size, float(rec.sbp)), np.full(starts.size, float(rec.dbp)), subjects)


def windows_from_records(records, seconds: float = 5.0, stride_seconds: float | None = None) -> WindowSet:
    """Resample every record to 125 Hz and window it; output order follows input order."""
    sets = []
    for r in records:
        if r.fs_hz != TARGET_FS:
            r = resample_record(r)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sets.append(window(r, seconds, stride_seconds))
    if not sets:
        raise ValueError("no records")
    return WindowSet.concat(sets)
