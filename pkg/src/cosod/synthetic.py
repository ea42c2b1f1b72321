"""Synthetic image groups: one shared colored shape per group on noisy backgrounds."""

from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from .data_io import ImageGroup

SHAPES = ("disk", "square", "triangle", "cross")
COLORS = ((220, 40, 40), (40, 200, 60), (50, 80, 230), (230, 200, 40))


def _shape_mask(kind: str, h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy * dy + dx * dx <= r * r
    if kind == "square":
        return (np.abs(dy) <= r * 0.85) & (np.abs(dx) <= r * 0.85)
    if kind == "triangle":
        return (dy <= r * 0.8) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.6)
    if kind == "cross":
        return ((np.abs(dy) <= r) & (np.abs(dx) <= r * 0.3)) | ((np.abs(dx) <= r) & (np.abs(dy) <= r * 0.3))
    raise ValueError(f"unknown shape {kind!r}")


def _place_distractor(rng, occupied: np.ndarray, kind: str, r: float):
    """An off-class shape that keeps a gap of ``r / 2`` from ``occupied``; None if it does not fit."""
    h, w = occupied.shape
    if h <= 2 * r + 4 or w <= 2 * r + 4:
        return None
    yy, xx = np.nonzero(occupied)
    for _ in range(50):
        cy, cx = rng.uniform(r + 2, h - r - 2), rng.uniform(r + 2, w - r - 2)
        d = _shape_mask(kind, h, w, cy, cx, r)
        gap = np.hypot(yy[:, None] - np.nonzero(d)[0][None], xx[:, None] - np.nonzero(d)[1][None]).min()
        if gap > r / 2:
            return d
    return None


def make_group(
    index: int,
    n_images: int = 8,
    size=(96, 112),
    seed: int = 0,
    noise: float = 40.0,
    distractor_rate: float = 0.0,
) -> ImageGroup:
    """Group ``index`` uses shape/color ``index % 4``; position, scale and background vary.

    With ``distractor_rate`` > 0 that fraction of images also shows the next
    shape in the next color. Distractors are not part of the ground truth and
    are drawn from a separate stream, so the base images do not change.
    """
    rng = np.random.default_rng([seed, index])
    drng = np.random.default_rng([seed, index, 1])
    d_kind = SHAPES[(index + 1) % len(SHAPES)]
    d_color = np.array(COLORS[(index + 1) % len(COLORS)], dtype=np.float64)
    kind, color = SHAPES[index % len(SHAPES)], np.array(COLORS[index % len(COLORS)], dtype=np.float64)
    images, masks, stems = [], [], []
    for i in range(n_images):
        h = int(size[0] + rng.integers(-8, 9))
        w = int(size[1] + rng.integers(-8, 9))
        base = rng.uniform(60, 190, size=3)
        bg = base + rng.normal(0, noise, size=(h, w, 3))
        r = rng.uniform(0.18, 0.28) * min(h, w)
        cy, cx = rng.uniform(r + 2, h - r - 2), rng.uniform(r + 2, w - r - 2)
        m = _shape_mask(kind, h, w, cy, cx, r)
        img = np.where(m[..., None], color + rng.normal(0, 8, size=(h, w, 3)), bg)
        if distractor_rate and drng.random() < distractor_rate:
            d = _place_distractor(drng, m, d_kind, r * 0.8)
            if d is not None:
                img = np.where(d[..., None], d_color + drng.normal(0, 8, size=(h, w, 3)), img)
        images.append(np.clip(img, 0, 255).astype(np.uint8))
        masks.append(m)
        stems.append(f"{index:02d}_{i:03d}")
    return ImageGroup(f"{kind}", images, stems, [], masks)


def make_groups(n_groups: int = 3, n_images: int = 8, size=(96, 112), seed: int = 0) -> List[ImageGroup]:
    return [make_group(g, n_images, size, seed) for g in range(n_groups)]


def write_dataset(groups, root) -> Path:
    """Lay groups out as ``<root>/images/<group>/`` and ``<root>/gt/<group>/``."""
    root = Path(root)
    for g in groups:
        img_dir, gt_dir = root / "images" / g.group_name, root / "gt" / g.group_name
        img_dir.mkdir(parents=True, exist_ok=True)
        gt_dir.mkdir(parents=True, exist_ok=True)
        for stem, img, m in zip(g.stems, g.images, g.gt_masks or [None] * g.N):
            Image.fromarray(img).save(img_dir / f"{stem}.png")
            if m is not None:
                Image.fromarray(np.where(m, 255, 0).astype(np.uint8)).save(gt_dir / f"{stem}.png")
    return root
