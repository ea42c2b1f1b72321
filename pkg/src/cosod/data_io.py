"""Dataset ingestion, mask output and the binary feature-cache format.

Dataset layout::

    <root>/images/<group>/<stem>.<ext>
    <root>/gt/<group>/<stem>.<ext>      (optional, same stems)

Feature cache layout (little-endian)::

    b"COSP1" | uint32 header_len | header (UTF-8 JSON) | features f32[N,C,H,W] | priors f32[N,H,W]
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ContractError, FormatError

CACHE_MAGIC = b"COSP1"
_CACHE_DTYPE = np.dtype("<f4")
GT_THRESHOLD = 127


@dataclass
class ImageGroup:
    """An ordered set of images of one class, optionally with ground truth."""

    group_name: str
    images: List[np.ndarray]  # uint8 (h, w, 3)
    stems: List[str]
    paths: List[Path] = field(default_factory=list)
    gt_masks: Optional[List[Optional[np.ndarray]]] = None  # bool (h, w)

    def __post_init__(self):
        if len(self.images) < 1:
            raise ContractError(f"group {self.group_name!r} has no images")
        if len(self.stems) != len(self.images):
            raise ContractError("stems and images differ in length")
        if self.gt_masks is not None:
            if len(self.gt_masks) != len(self.images):
                raise ContractError("gt_masks and images differ in length")
            for stem, img, gt in zip(self.stems, self.images, self.gt_masks):
                if gt is not None and gt.shape != img.shape[:2]:
                    raise ContractError(
                        f"ground truth for {stem!r} is {gt.shape}, image is {img.shape[:2]}"
                    )

    @property
    def N(self) -> int:
        return len(self.images)

    @property
    def sizes(self) -> List[tuple]:
        """Original (height, width) of every image."""
        return [img.shape[:2] for img in self.images]

    def content_hash(self) -> str:
        """sha256 over the stems and raw file bytes (or pixels when no paths)."""
        h = hashlib.sha256()
        if self.paths:
            for p in self.paths:
                h.update(p.name.encode())
                h.update(Path(p).read_bytes())
        else:
            for stem, img in zip(self.stems, self.images):
                h.update(stem.encode())
                h.update(np.ascontiguousarray(img).tobytes())
        return h.hexdigest()


def _read_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (UnidentifiedImageError, OSError) as exc:
        raise OSError(f"cannot read image file {path}: {exc}") from exc


def read_mask(path) -> np.ndarray:
    """Read a mask image and binarize it at pixel value > 127."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise OSError(f"cannot read mask file {path}: {exc}") from exc
    return arr > GT_THRESHOLD


def _files(directory: Path) -> List[Path]:
    return sorted(p for p in directory.iterdir() if p.is_file() and not p.name.startswith("."))


def list_groups(root) -> List[str]:
    """Group names under ``<root>/images``, sorted."""
    images_dir = Path(root) / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"no images directory under {root}")
    return sorted(p.name for p in images_dir.iterdir() if p.is_dir())


def load_group(root, group_name: str) -> ImageGroup:
    """Load one group, pairing each image with a same-stem ground-truth mask if present."""
    root = Path(root)
    img_dir = root / "images" / group_name
    if not img_dir.is_dir():
        raise FileNotFoundError(f"group directory not found: {img_dir}")
    files = _files(img_dir)
    if not files:
        raise FileNotFoundError(f"group directory is empty: {img_dir}")

    images = [_read_rgb(p) for p in files]
    stems = [p.stem for p in files]
    if len(set(stems)) != len(stems):
        raise ContractError(f"duplicate filename stems in {img_dir}")

    gt_masks = None
    gt_dir = root / "gt" / group_name
    if gt_dir.is_dir():
        by_stem = {p.stem: p for p in _files(gt_dir)}
        gt_masks = [read_mask(by_stem[s]) if s in by_stem else None for s in stems]
    return ImageGroup(group_name, images, stems, list(files), gt_masks)


def write_masks(group: ImageGroup, masks: Sequence[np.ndarray], out_dir) -> List[Path]:
    """Write one 8-bit {0,255} PNG per image into ``out_dir`` keeping filename stems."""
    if len(masks) != group.N:
        raise ContractError(f"expected {group.N} masks, got {len(masks)}")
    for stem, size, m in zip(group.stems, group.sizes, masks):
        if tuple(m.shape) != tuple(size):
            raise ContractError(f"mask for {stem!r} is {m.shape}, image is {size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, m in zip(group.stems, masks):
        path = out_dir / f"{stem}.png"
        Image.fromarray(np.where(np.asarray(m) > 0, 255, 0).astype(np.uint8)).save(path)
        written.append(path)
    return written


def write_gray(array: np.ndarray, path) -> None:
    """Save a [0,1] float map as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


@dataclass
class FeatureCacheRecord:
    """Frozen-backbone outputs for one group."""

    group_name: str
    image_ids: List[str]
    patch_features: np.ndarray  # float32 (N, C, H, W)
    saliency_priors: np.ndarray  # float32 (N, H, W)
    backbone_tag: str
    input_side: int
    source_hash: str = ""

    def __post_init__(self):
        self.patch_features = np.ascontiguousarray(self.patch_features, dtype=np.float32)
        self.saliency_priors = np.ascontiguousarray(self.saliency_priors, dtype=np.float32)
        if self.patch_features.ndim != 4:
            raise ContractError("patch_features must be (N, C, H, W)")
        n, _, h, w = self.patch_features.shape
        if self.saliency_priors.shape != (n, h, w):
            raise ContractError(
                f"saliency_priors shape {self.saliency_priors.shape} != {(n, h, w)}"
            )
        if len(self.image_ids) != n:
            raise ContractError("image_ids length does not match N")

    @property
    def dims(self) -> tuple:
        return tuple(int(x) for x in self.patch_features.shape)


def write_feature_cache(record: FeatureCacheRecord, path) -> None:
    """Write ``record`` atomically (temp file then rename)."""
    if not (np.all(np.isfinite(record.patch_features)) and np.all(np.isfinite(record.saliency_priors))):
        raise ContractError("feature cache arrays must be finite")
    header = json.dumps(
        {
            "group_name": record.group_name,
            "image_ids": list(record.image_ids),
            "dims": list(record.dims),
            "dtype": "<f4",
            "backbone_tag": record.backbone_tag,
            "input_side": int(record.input_side),
            "source_hash": record.source_hash,
        },
        sort_keys=True,
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(record.patch_features.astype(_CACHE_DTYPE, copy=False).tobytes())
        fh.write(record.saliency_priors.astype(_CACHE_DTYPE, copy=False).tobytes())
    os.replace(tmp, path)


def read_cache_header(path) -> tuple:
    """Return (header dict, payload offset) without reading the arrays."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(CACHE_MAGIC))
        if magic != CACHE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        raw_len = fh.read(4)
        if len(raw_len) != 4:
            raise FormatError(f"{path}: truncated header")
        (hlen,) = struct.unpack("<I", raw_len)
        raw = fh.read(hlen)
    if len(raw) != hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw.decode("utf-8"))
        n, c, h, w = (int(x) for x in header["dims"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    if header.get("dtype") != "<f4":
        raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    header["dims"] = [n, c, h, w]
    return header, len(CACHE_MAGIC) + 4 + hlen


def read_feature_cache(path) -> FeatureCacheRecord:
    header, offset = read_cache_header(path)
    n, c, h, w = header["dims"]
    n_feat, n_prior = n * c * h * w, n * h * w
    with open(path, "rb") as fh:
        fh.seek(offset)
        payload = fh.read()
    expected = (n_feat + n_prior) * _CACHE_DTYPE.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype=_CACHE_DTYPE)
    try:
        return FeatureCacheRecord(
            group_name=header["group_name"],
            image_ids=list(header["image_ids"]),
            patch_features=flat[:n_feat].reshape(n, c, h, w).astype(np.float32),
            saliency_priors=flat[n_feat:].reshape(n, h, w).astype(np.float32),
            backbone_tag=header["backbone_tag"],
            input_side=int(header["input_side"]),
            source_hash=header.get("source_hash", ""),
        )
    except (KeyError, ContractError) as exc:
        raise FormatError(f"{path}: inconsistent header ({exc})") from exc
