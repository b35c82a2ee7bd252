"""Subject-wise data splits: k-fold cross validation and a held-out protocol."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .records import WindowSet


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def subject_sets(self, subjects: np.ndarray) -> tuple[set, set, set]:
        return set(subjects[self.train]), set(subjects[self.val]), set(subjects[self.test])


def subject_folds(subjects, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Partition the unique subjects into ``k`` groups after a seeded shuffle."""
    uniq = np.unique(np.asarray(subjects))
    if uniq.size < k:
        raise ValueError(f"need at least {k} subjects for {k}-fold splitting, got {uniq.size}")
    perm = np.random.default_rng(seed).permutation(uniq.size)
    return [np.sort(uniq[g]) for g in np.array_split(perm, k)]


def _indices(subjects: np.ndarray, group) -> np.ndarray:
    return np.flatnonzero(np.isin(subjects, group))


def split_per_subject(ws: WindowSet | np.ndarray, k: int = 5, mode: str = "kfold", seed: int = 0,
                      val_frac: float = 0.15, test_frac: float = 0.15) -> list[Split]:
    """Window indices split by subject.

    ``kfold``: fold ``i`` tests on group ``i``, validates on group ``i+1``
    (mod k) and trains on the rest.  ``holdout``: one split with
    ``val_frac``/``test_frac`` of the subjects held out.
    """
    subjects = np.asarray(ws.subjects if isinstance(ws, WindowSet) else ws)
    if mode == "kfold":
        groups = subject_folds(subjects, k, seed)
        if k < 3:
            raise ValueError("kfold needs k >= 3 to carve train, validation and test groups")
        out = []
        for i in range(k):
            rest = [g for j, g in enumerate(groups) if j not in (i, (i + 1) % k)]
            out.append(Split(_indices(subjects, np.concatenate(rest)), _indices(subjects, groups[(i + 1) % k]),
                             _indices(subjects, groups[i])))
        return out
    if mode == "holdout":
        uniq = np.unique(subjects)
        if uniq.size < 3:
            raise ValueError(f"holdout split needs at least 3 subjects, got {uniq.size}")
        perm = uniq[np.random.default_rng(seed).permutation(uniq.size)]
        n_test = max(1, int(round(test_frac * uniq.size)))
        n_val = max(1, int(round(val_frac * uniq.size)))
        if n_test + n_val >= uniq.size:
            raise ValueError("holdout fractions leave no training subjects")
        test, val, train = perm[:n_test], perm[n_test:n_test + n_val], perm[n_test + n_val:]
        return [Split(_indices(subjects, train), _indices(subjects, val), _indices(subjects, test))]
    raise ValueError(f"unknown split mode {mode!r} (kfold or holdout)")


def mae(pred, target) -> float:
    p, t = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"mae: length mismatch {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("mae: empty input")
    return float(np.abs(p - t).mean())
