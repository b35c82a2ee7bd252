"""Record and WindowSet containers plus their on-disk formats."""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

TARGET_FS = 125.0
WINDOW_MAGIC = b"PPGWIN\0\0"
WINDOW_VERSION = 1


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class Record:
    """One subject recording.  Needs an ABP series or both scalar labels."""

    subject_id: str
    fs_hz: float
    ppg: np.ndarray
    abp: np.ndarray | None = None
    sbp: float | None = None
    dbp: float | None = None

    def __post_init__(self):
        self.ppg = np.asarray(self.ppg, dtype=np.float64)
        if self.abp is not None:
            self.abp = np.asarray(self.abp, dtype=np.float64)
            if self.abp.shape != self.ppg.shape:
                raise ValueError(f"record {self.subject_id}: abp length {self.abp.size} != ppg length {self.ppg.size}")
            if not np.all(np.isfinite(self.abp)):
                raise ValueError(f"record {self.subject_id}: non-finite ABP samples")
        elif self.sbp is None or self.dbp is None:
            raise ValueError(f"record {self.subject_id}: needs an abp series or both sbp and dbp")
        if not self.fs_hz > 0:
            raise ValueError(f"record {self.subject_id}: fs_hz must be positive")
        if not np.all(np.isfinite(self.ppg)):
            raise ValueError(f"record {self.subject_id}: non-finite PPG samples")

    def to_json(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "fs_hz": self.fs_hz,
            "ppg": self.ppg.tolist(),
            "abp": None if self.abp is None else self.abp.tolist(),
            "sbp": self.sbp,
            "dbp": self.dbp,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Record":
        return cls(str(d["subject_id"]), float(d["fs_hz"]), d["ppg"], d.get("abp"), d.get("sbp"), d.get("dbp"))


def write_ndjson(records: Iterable[Record], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), separators=(",", ":")) + "\n")


def read_ndjson(path: str | os.PathLike) -> Iterator[Record]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield Record.from_json(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: invalid record ({exc})") from exc


@dataclass
class WindowSet:
    ppg: np.ndarray  # [N, L] normalized PPG
    sbp: np.ndarray  # [N] mmHg
    dbp: np.ndarray  # [N] mmHg
    subjects: np.ndarray  # [N] subject ids (str)
    abp: np.ndarray | None = None  # [N, L] mmHg
    fs_hz: float = TARGET_FS

    def __len__(self) -> int:
        return int(self.ppg.shape[0])

    @property
    def length(self) -> int:
        return int(self.ppg.shape[1])

    @property
    def has_abp(self) -> bool:
        return self.abp is not None

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.ppg[idx], self.sbp[idx], self.dbp[idx], self.subjects[idx],
                         None if self.abp is None else self.abp[idx], self.fs_hz)

    @classmethod
    def empty(cls, length: int, with_abp: bool, fs_hz: float = TARGET_FS) -> "WindowSet":
        return cls(np.zeros((0, length), np.float32), np.zeros(0), np.zeros(0), np.zeros(0, dtype=str),
                   np.zeros((0, length), np.float32) if with_abp else None, fs_hz)

    @classmethod
    def concat(cls, sets: list["WindowSet"]) -> "WindowSet":
        sets = [s for s in sets if len(s)] or sets[:1]
        if not sets:
            raise ValueError("concat of no window sets")
        if len({s.length for s in sets}) > 1:
            raise ValueError("window sets have different window lengths")
        with_abp = all(s.has_abp for s in sets)
        return cls(np.concatenate([s.ppg for s in sets]), np.concatenate([s.sbp for s in sets]),
                   np.concatenate([s.dbp for s in sets]), np.concatenate([s.subjects for s in sets]),
                   np.concatenate([s.abp for s in sets]) if with_abp else None, sets[0].fs_hz)


def save_windows(ws: WindowSet, path: str | os.PathLike) -> None:
    """Cache file: magic, u32 version, u32 N, u32 L, f64 fs, u8 has_abp,
    u32 subject-table length + JSON subject list, then little-endian float32
    arrays ppg[N*L], sbp[N], dbp[N] and (optionally) abp[N*L]."""
    subjects = json.dumps([str(s) for s in ws.subjects]).encode()
    head = WINDOW_MAGIC + struct.pack("<IIIdBI", WINDOW_VERSION, len(ws), ws.length, ws.fs_hz, int(ws.has_abp),
                                      len(subjects))
    arrays = [ws.ppg, ws.sbp, ws.dbp] + ([ws.abp] if ws.has_abp else [])
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    Path(path).write_bytes(head + subjects + body)


def load_windows(path: str | os.PathLike) -> WindowSet:
    data = Path(path).read_bytes()
    if data[:8] != WINDOW_MAGIC:
        raise ValueError(f"{path}: not a window cache file")
    fmt = "<IIIdBI"
    version, n, length, fs, has_abp, slen = struct.unpack_from(fmt, data, 8)
    if version > WINDOW_VERSION:
        raise ValueError(f"{path}: cache version {version} unsupported")
    off = 8 + struct.calcsize(fmt)
    subjects = np.array(json.loads(data[off:off + slen].decode()), dtype=str)
    off += slen

    def take(count):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32)
        off += 4 * count
        return arr

    ppg = take(n * length).reshape(n, length)
    sbp, dbp = take(n).astype(np.float64), take(n).astype(np.float64)
    abp = take(n * length).reshape(n, length) if has_abp else None
    return WindowSet(ppg, sbp, dbp, subjects.reshape(n), abp, fs)
