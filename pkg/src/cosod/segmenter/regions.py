"""Region-level refinement: drop connected regions whose mean descriptor
disagrees with the group's consensus foreground descriptor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .. import kernels
from ..errors import ContractError


@dataclass(frozen=True)
class RefineConfig:
    d_f_th: float = 0.75
    connectivity: int = 8
    keep_best_on_empty: bool = True

    def __post_init__(self):
        if not -1.0 <= self.d_f_th <= 1.0:
            raise ContractError(f"d_f_th must lie in [-1, 1], got {self.d_f_th}")
        if self.connectivity not in (4, 8):
            raise ContractError(f"connectivity must be 4 or 8, got {self.connectivity}")


@dataclass
class RefineResult:
    masks: List[np.ndarray]
    scores: List[List[float]] = field(default_factory=list)  # per image, per component
    kept: List[List[bool]] = field(default_factory=list)
    consensus: np.ndarray = None
    empty_group: bool = False


def connected_components(mask: np.ndarray, connectivity: int = 8) -> List[np.ndarray]:
    """Boolean mask per connected region, ordered by each region's first pixel in scanline order."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ContractError(f"mask must be 2-D, got shape {mask.shape}")
    labels, count = kernels.label_components(mask.astype(bool), connectivity)
    return [labels == i for i in range(1, count + 1)]


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging input cells over each output cell's span."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, None)
    return overlap / (n_in / n_out)


def area_downsample(mask: np.ndarray, size) -> np.ndarray:
    """Area-average a full-resolution mask onto an (H, W) grid."""
    m = np.asarray(mask, dtype=np.float64)
    return _area_matrix(m.shape[0], int(size[0])) @ m @ _area_matrix(m.shape[1], int(size[1])).T


def region_embedding(weights: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Area-normalized sum of descriptors under a patch-grid weight map; zeros if the area is 0."""
    area = float(weights.sum())
    if area <= 0:
        return np.zeros(feats.shape[0])
    return np.einsum("hw,chw->c", weights, feats) / area


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    return float(a @ b) / denom if denom > 0 else 0.0


def refine_regions(masks: Sequence[np.ndarray], feats: np.ndarray, cfg: RefineConfig = RefineConfig()) -> RefineResult:
    """Keep each connected region of every mask only if its mean descriptor has
    cosine similarity >= ``d_f_th`` with the group consensus descriptor."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 4 or len(masks) != feats.shape[0]:
        raise ContractError(f"{len(masks)} masks for features of shape {feats.shape}")
    grid = feats.shape[2:]
    masks = [np.asarray(m).astype(bool) for m in masks]

    per_image = []
    for m, x in zip(masks, feats):
        w = area_downsample(m, grid)
        if w.sum() > 0:
            per_image.append(region_embedding(w, x))
    if not per_image:
        return RefineResult([np.zeros_like(m) for m in masks], [[] for _ in masks], [[] for _ in masks], None, True)
    consensus = np.mean(per_image, axis=0)

    out, all_scores, all_kept = [], [], []
    for m, x in zip(masks, feats):
        comps = connected_components(m, cfg.connectivity)
        scores = [cosine(consensus, region_embedding(area_downsample(c, grid), x)) for c in comps]
        kept = [s >= cfg.d_f_th for s in scores]
        if comps and not any(kept) and cfg.keep_best_on_empty:
            kept[int(np.argmax(scores))] = True
        r = np.zeros_like(m)
        for c, k in zip(comps, kept):
            if k:
                r |= c
        out.append(r)
        all_scores.append(scores)
        all_kept.append(kept)
    return RefineResult(out, all_scores, all_kept, consensus, False)
