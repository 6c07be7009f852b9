"""Rank and linear correlation between predictions and opinion scores."""

from __future__ import annotations

import warnings

import numpy as np

from .errors import DataError

__all__ = ["rankdata", "plcc", "srcc"]


def rankdata(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size, dtype=np.float64)
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and a[order[j + 1]] == a[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def plcc(pred: np.ndarray, mos: np.ndarray) -> float:
    """Pearson correlation; constant input yields 0 with a warning."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    m = np.asarray(mos, dtype=np.float64).reshape(-1)
    if p.size < 2 or p.size != m.size:
        raise DataError(f"plcc needs two same-length vectors of >= 2, got {p.size}, {m.size}")
    pc = p - p.mean()
    mc = m - m.mean()
    denom = np.sqrt((pc * pc).sum() * (mc * mc).sum())
    if denom == 0.0:
        warnings.warn("plcc: constant input vector, returning 0")
        return 0.0
    return float(np.clip((pc * mc).sum() / denom, -1.0, 1.0))


def srcc(pred: np.ndarray, mos: np.ndarray) -> float:
    """Spearman rank correlation: Pearson on average-tie ranks."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    m = np.asarray(mos, dtype=np.float64).reshape(-1)
    if p.size < 2 or p.size != m.size:
        raise DataError(f"srcc needs two same-length vectors of >= 2, got {p.size}, {m.size}")
    rp = rankdata(p)
    rm = rankdata(m)
    if np.all(rp == rp[0]) or np.all(rm == rm[0]):
        warnings.warn("srcc: zero rank variance, returning 0")
        return 0.0
    return plcc(rp, rm)
