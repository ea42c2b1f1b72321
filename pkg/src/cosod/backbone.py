"""Frozen self-supervised ViT adapter: patch descriptors and class-token saliency priors.

Weights are referenced by ``weights_source``: a path to a DINO checkpoint
(``.pth`` state dict), or ``random:<seed>`` for a deterministic random
initialization of the same architecture (offline testing). The resulting
``tag`` is written into every feature cache and checkpoint.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence, Tuple

import numpy as np
from PIL import Image

from .data_io import FeatureCacheRecord, ImageGroup, read_feature_cache
from .errors import ConfigurationError, ContractError

# variant -> (patch_size, embed_dim, depth, n_heads)
VARIANTS: Dict[str, Tuple[int, int, int, int]] = {
    "vit-base-8": (8, 768, 12, 12),
    "vit-base-16": (16, 768, 12, 12),
    "vit-small-8": (8, 384, 12, 6),
}
DEFAULT_WEIGHTS = "dino_vitbase8_pretrain.pth"
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class BackboneConfig:
    variant: str = "vit-base-8"
    input_side: int = 224
    weights_source: str = DEFAULT_WEIGHTS

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(
                f"unknown backbone variant {self.variant!r}; choose from {sorted(VARIANTS)}"
            )
        if self.input_side <= 0 or self.input_side % self.patch_size:
            raise ConfigurationError(
                f"patch size {self.patch_size} must divide input_side {self.input_side}"
            )

    @property
    def patch_size(self) -> int:
        return VARIANTS[self.variant][0]

    @property
    def embed_dim(self) -> int:
        return VARIANTS[self.variant][1]

    @property
    def depth(self) -> int:
        return VARIANTS[self.variant][2]

    @property
    def n_heads(self) -> int:
        return VARIANTS[self.variant][3]

    @property
    def grid(self) -> int:
        return self.input_side // self.patch_size

    @property
    def tag(self) -> str:
        src = self.weights_source
        name = src if src.startswith("random:") else Path(src).stem
        return f"{self.variant}@{name}"


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; a constant map becomes all zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def average_heads(attn_cls: np.ndarray, grid: int) -> np.ndarray:
    """Average class-token attention (n_heads, H*W) over heads and reshape to (H, W)."""
    attn_cls = np.asarray(attn_cls, dtype=np.float64)
    if attn_cls.shape[-1] != grid * grid:
        raise ContractError(f"attention length {attn_cls.shape[-1]} != {grid}x{grid}")
    return attn_cls.mean(axis=0).reshape(grid, grid)


def preprocess(image: np.ndarray, input_side: int) -> np.ndarray:
    """Resize to a square ``input_side`` and normalize with ImageNet statistics. Returns (3, S, S)."""
    im = Image.fromarray(np.asarray(image, dtype=np.uint8)).resize(
        (input_side, input_side), Image.BILINEAR
    )
    arr = np.asarray(im, dtype=np.float32) / 255.0
    arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _strip_prefixes(state: dict) -> dict:
    for key in ("teacher", "student", "state_dict", "model"):
        if key in state and isinstance(state[key], dict):
            state = state[key]
    out = {}
    for k, v in state.items():
        for prefix in ("module.", "backbone."):
            if k.startswith(prefix):
                k = k[len(prefix):]
        out[k] = v
    return out


class Backbone:
    """Frozen ViT in eval mode. Images are processed one at a time so results
    never depend on which other images share the group."""

    def __init__(self, cfg: BackboneConfig):
        try:
            import torch
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise ConfigurationError("torch is required to run the backbone") from exc
        from .vit import VisionTransformer

        self.cfg = cfg
        self._torch = torch
        patch, dim, depth, heads = VARIANTS[cfg.variant]
        src = cfg.weights_source
        if src.startswith("random:"):
            try:
                seed = int(src.split(":", 1)[1])
            except ValueError as exc:
                raise ConfigurationError(f"bad random weights source {src!r}") from exc
            gen_state = torch.random.get_rng_state()
            torch.manual_seed(seed)
            model = VisionTransformer(patch, dim, depth, heads, img_size=224)
            torch.random.set_rng_state(gen_state)
        else:
            path = Path(src)
            if not path.is_file():
                raise ConfigurationError(f"backbone weights not found: {path}")
            model = VisionTransformer(patch, dim, depth, heads, img_size=224)
            try:
                state = _strip_prefixes(torch.load(path, map_location="cpu", weights_only=True))
                missing, unexpected = model.load_state_dict(state, strict=False)
            except Exception as exc:
                raise ConfigurationError(f"incompatible backbone weights {path}: {exc}") from exc
            missing = [k for k in missing if not k.startswith("head")]
            if missing:
                raise ConfigurationError(f"weights {path} lack parameters: {missing[:5]}")
        model.eval()
        for p in model.parameters():
            p.requires_grad_(False)
        self.model = model

    @property
    def tag(self) -> str:
        return self.cfg.tag

    def extract(self, images: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        """Return (features (N, C, H, W), saliency priors (N, H, W)) as float32."""
        torch = self._torch
        g, c = self.cfg.grid, self.cfg.embed_dim
        feats = np.empty((len(images), c, g, g), dtype=np.float32)
        priors = np.empty((len(images), g, g), dtype=np.float32)
        with torch.no_grad():
            for i, img in enumerate(images):
                x = torch.from_numpy(preprocess(img, self.cfg.input_side))[None]
                tokens, attn = self.model.forward_last(x)
                feats[i] = tokens[0, 1:].T.reshape(c, g, g).numpy()
                sa = average_heads(attn[0, :, 0, 1:].numpy(), g)
                priors[i] = minmax_normalize(sa)
        return feats, priors

    def encode_group(self, group: ImageGroup) -> FeatureCacheRecord:
        feats, priors = self.extract(group.images)
        return FeatureCacheRecord(
            group_name=group.group_name,
            image_ids=list(group.stems),
            patch_features=feats,
            saliency_priors=priors,
            backbone_tag=self.tag,
            input_side=self.cfg.input_side,
            source_hash=group.content_hash(),
        )


@functools.lru_cache(maxsize=4)
def load_backbone(cfg: BackboneConfig) -> Backbone:
    return Backbone(cfg)


def extract_patch_features(images: Sequence[np.ndarray], cfg: BackboneConfig) -> np.ndarray:
    return load_backbone(cfg).extract(images)[0]


def extract_saliency_prior(images: Sequence[np.ndarray], cfg: BackboneConfig) -> np.ndarray:
    return load_backbone(cfg).extract(images)[1]


class CachedBackbone:
    """Serves features and priors from ``<cache_dir>/<group>.cosp`` files; needs no torch."""

    suffix = ".cosp"

    def __init__(self, cache_dir):
        self.cache_dir = Path(cache_dir)

    def path_for(self, group_name: str) -> Path:
        return self.cache_dir / f"{group_name}{self.suffix}"

    def record(self, group_name: str) -> FeatureCacheRecord:
        path = self.path_for(group_name)
        if not path.is_file():
            raise FileNotFoundError(f"no feature cache for group {group_name!r} at {path}")
        return read_feature_cache(path)

    def encode_group(self, group: ImageGroup) -> FeatureCacheRecord:
        rec = self.record(group.group_name)
        if rec.image_ids != list(group.stems):
            raise ContractError(
                f"cache for {group.group_name!r} holds images {rec.image_ids[:3]}..., "
                f"group has {group.stems[:3]}..."
            )
        return rec
