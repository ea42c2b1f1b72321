"""Whole-group inference: cross attention, upsampling, thresholding, region
refinement and CRF, each stage individually switchable for ablations."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .. import correspondence
from ..correspondence import HeadParams
from ..data_io import ImageGroup, write_gray
from ..errors import ContractError
from .crf import CrfConfig, dense_crf
from .regions import RefineConfig, RefineResult, refine_regions
from .threshold import CatConfig, adaptive_threshold, fixed_threshold


@dataclass(frozen=True)
class SegmentConfig:
    cat: CatConfig = field(default_factory=CatConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    crf: CrfConfig = field(default_factory=CrfConfig)
    enable_cat: bool = True
    enable_rfc: bool = True
    enable_crf: bool = True
    fixed_th: float = 0.5  # used when CAT is off


@dataclass
class GroupSegmentation:
    masks: List[np.ndarray]
    S: List[np.ndarray]  # normalized scores, image resolution
    M: List[np.ndarray]
    G: List[np.ndarray]
    R: List[np.ndarray]
    thresholds: List[float]
    refine: Optional[RefineResult] = None


def segment_group(group: ImageGroup, feats: np.ndarray, params: HeadParams, cfg: SegmentConfig = SegmentConfig()) -> GroupSegmentation:
    feats = np.asarray(feats)
    if feats.shape[0] != group.N:
        raise ContractError(f"{feats.shape[0]} feature maps for {group.N} images")
    cam = correspondence.upsample_maps(correspondence.forward(feats, params), group.sizes)

    if cfg.enable_cat:
        cat = replace(cfg.cat, b_bar=params.b_bar)
        binarized = [adaptive_threshold(m, cat) for m in cam.maps]
    else:
        binarized = [fixed_threshold(m, cfg.fixed_th) for m in cam.maps]
    g_masks = [b for b, _ in binarized]

    refined = None
    r_masks = g_masks
    if cfg.enable_rfc:
        refined = refine_regions(g_masks, feats, cfg.refine)
        if not refined.empty_group:
            r_masks = refined.masks

    if cfg.enable_crf:
        final = [dense_crf(img, r, cfg.crf) for img, r in zip(group.images, r_masks)]
    else:
        final = [r.copy() for r in r_masks]
    return GroupSegmentation(final, list(cam.normalized), list(cam.maps), g_masks, r_masks, [t for _, t in binarized], refined)


def dump_intermediates(result: GroupSegmentation, stems, out_dir) -> List[Path]:
    """Write ``<out_dir>/<stem>.{S,M,G,R}.png`` as 8-bit grayscale."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, stem in enumerate(stems):
        for key in ("S", "M", "G", "R"):
            p = out_dir / f"{stem}.{key}.png"
            write_gray(np.asarray(getattr(result, key)[i], dtype=np.float64), p)
            written.append(p)
    return written
