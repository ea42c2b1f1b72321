"""Confidence-based adaptive thresholding of cross-attention maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericError

TH_MIN, TH_MAX = 0.05, 0.95


@dataclass(frozen=True)
class CatConfig:
    th0: float = 0.5
    alpha_c: float = 1.0
    b_bar: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.th0 < 1.0:
            raise ContractError(f"th0 must lie in (0, 1), got {self.th0}")
        if self.alpha_c < 0:
            raise ContractError(f"alpha_c must be >= 0, got {self.alpha_c}")


def confidence_stats(m: np.ndarray):
    """Return (c_M, b_M): mean of the pixels at or above the map mean, and 1 - c_M."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise NumericError("map contains non-finite values")
    # rounding can push the mean of a constant map above every element
    confident = m[m >= min(m.mean(), m.max())]
    c = float(confident.mean())
    return c, 1.0 - c


def threshold_for(b_m: float, cat: CatConfig) -> float:
    th = cat.th0 + cat.alpha_c * (b_m - cat.b_bar)
    return float(min(max(th, TH_MIN), TH_MAX))


def adaptive_threshold(m: np.ndarray, cat: CatConfig):
    """Binarize ``m`` at th = th0 + alpha_c * (b_M - b_bar), clamped to [0.05, 0.95]."""
    m = np.asarray(m, dtype=np.float64)
    _, b_m = confidence_stats(m)
    th = threshold_for(b_m, cat)
    return m >= th, th


def fixed_threshold(m: np.ndarray, th: float = 0.5):
    return np.asarray(m) >= th, float(th)
