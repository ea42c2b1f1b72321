"""Stage-1 correspondence head, numpy forward pass.

Residual 1x1 projection, key/query 1x1 projections, group-wide patch
similarity reduced to a per-patch mean, per-image min-max normalization and a
sharpened sigmoid. The row mean of the similarity matrix is computed as
``K @ mean(Q)`` which never materializes the (NHW x NHW) matrix;
:func:`similarity_matrix` keeps the materialized form for checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, NumericError

DEFAULT_K = 6.66
DEFAULT_S_TH = 0.65

ArrayOrList = Union[np.ndarray, List[np.ndarray]]


@dataclass
class HeadParams:
    """Trainable 1x1 projections (weights are (C_out, C_in)) plus persisted scalars."""

    w_res: np.ndarray
    b_res: np.ndarray
    w_key: np.ndarray
    b_key: np.ndarray
    w_query: np.ndarray
    b_query: np.ndarray
    k: float = DEFAULT_K
    s_th: float = DEFAULT_S_TH
    b_bar: float = 0.0

    TENSORS = ("w_res", "b_res", "w_key", "b_key", "w_query", "b_query")

    def __post_init__(self):
        c = self.channels
        for name in self.TENSORS:
            arr = np.asarray(getattr(self, name))
            want = (c,) if name.startswith("b_") else (c, c)
            if arr.shape != want:
                raise ContractError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} contains non-finite values")
            setattr(self, name, arr)
        if not self.k > 0:
            raise ContractError(f"k must be positive, got {self.k}")
        if not 0.0 < self.s_th < 1.0:
            raise ContractError(f"s_th must lie in (0, 1), got {self.s_th}")
        if not 0.0 <= self.b_bar <= 1.0:
            raise ContractError(f"b_bar must lie in [0, 1], got {self.b_bar}")

    @property
    def channels(self) -> int:
        return int(np.asarray(self.w_res).shape[0])

    @property
    def n_trainable(self) -> int:
        return sum(int(np.asarray(getattr(self, n)).size) for n in self.TENSORS)

    def tensors(self) -> dict:
        return {n: getattr(self, n) for n in self.TENSORS}

    def with_b_bar(self, b_bar: float) -> "HeadParams":
        return replace(self, b_bar=float(b_bar))


def init_head_params(channels: int, seed: int = 0, dtype=np.float32, **scalars) -> HeadParams:
    """Kernels ~ U(-1/sqrt(C), 1/sqrt(C)), zero biases."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(channels)
    kern = lambda: rng.uniform(-bound, bound, size=(channels, channels)).astype(dtype)
    zero = lambda: np.zeros(channels, dtype=dtype)
    return HeadParams(kern(), zero(), kern(), zero(), kern(), zero(), **scalars)


@dataclass
class CrossAttentionMap:
    """Per-image maps in [0, 1]; an (N, H, W) array at patch resolution, a list at image resolution."""

    maps: ArrayOrList
    resolution_tag: str = "patch"
    normalized: Optional[ArrayOrList] = field(default=None, repr=False)

    def __len__(self):
        return len(self.maps)


def _check_features(feats: np.ndarray, params: HeadParams) -> np.ndarray:
    feats = np.asarray(feats)
    if feats.ndim != 4:
        raise ContractError(f"features must be (N, C, H, W), got shape {feats.shape}")
    if feats.shape[0] < 1:
        raise ContractError("need at least one image")
    if feats.shape[1] != params.channels:
        raise ContractError(f"features have C={feats.shape[1]}, head expects {params.channels}")
    if not np.all(np.isfinite(feats)):
        raise NumericError("features contain non-finite values")
    return feats.astype(np.float64, copy=False)


def conv1x1(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("oc,nchw->nohw", w, x, optimize=True) + np.asarray(b)[None, :, None, None]


def residual_features(feats: np.ndarray, params: HeadParams) -> np.ndarray:
    x = _check_features(feats, params)
    return x + conv1x1(x, params.w_res.astype(np.float64), params.b_res.astype(np.float64))


def key_query(f_res: np.ndarray, params: HeadParams):
    """Return K, Q flattened to (N*H*W, C)."""
    n, c, h, w = f_res.shape
    k = conv1x1(f_res, params.w_key.astype(np.float64), params.b_key.astype(np.float64))
    q = conv1x1(f_res, params.w_query.astype(np.float64), params.b_query.astype(np.float64))
    flat = lambda t: t.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    return flat(k), flat(q)


def similarity_matrix(f_res: np.ndarray, params: HeadParams) -> np.ndarray:
    """Materialized (NHW, NHW) scaled similarity; O((NHW)^2) memory, for checking only."""
    k, q = key_query(f_res, params)
    return k @ q.T / np.sqrt(f_res.shape[1])


def row_mean_scores(f_res: np.ndarray, params: HeadParams) -> np.ndarray:
    """Mean similarity of each patch to every patch of the group, (N, H, W)."""
    n, c, h, w = f_res.shape
    k, q = key_query(f_res, params)
    return (k @ q.mean(axis=0) / np.sqrt(c)).reshape(n, h, w)


def minmax_per_image(scores: np.ndarray) -> np.ndarray:
    lo = scores.min(axis=(1, 2), keepdims=True)
    span = scores.max(axis=(1, 2), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (scores - lo) / safe, 0.0)


def sharpened_sigmoid(s: np.ndarray, k: float = DEFAULT_K, s_th: float = DEFAULT_S_TH) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-k * (np.asarray(s, dtype=np.float64) - s_th)))


def cross_attention(f_res: np.ndarray, params: HeadParams) -> CrossAttentionMap:
    """Patch-resolution cross-attention maps for one whole group."""
    f_res = _check_features(f_res, params)
    normalized = minmax_per_image(row_mean_scores(f_res, params))
    return CrossAttentionMap(sharpened_sigmoid(normalized, params.k, params.s_th), "patch", normalized)


def forward(feats: np.ndarray, params: HeadParams) -> CrossAttentionMap:
    """Residual strengthening followed by cross attention."""
    return cross_attention(residual_features(feats, params), params)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) bilinear weights, half-pixel centers, edge clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def upsample_bilinear(m: np.ndarray, size) -> np.ndarray:
    h, w = int(size[0]), int(size[1])
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or h < 1 or w < 1:
        raise ContractError(f"cannot resize map of shape {m.shape} to {size}")
    return _interp_matrix(m.shape[0], h) @ m @ _interp_matrix(m.shape[1], w).T


def upsample_maps(cam: CrossAttentionMap, sizes: Sequence) -> CrossAttentionMap:
    """Bilinearly resize every map to its image's original (h, w)."""
    if cam.resolution_tag != "patch":
        raise ContractError("maps are already at image resolution")
    if len(sizes) != len(cam.maps):
        raise ContractError(f"{len(cam.maps)} maps but {len(sizes)} target sizes")
    maps = [np.clip(upsample_bilinear(m, s), 0.0, 1.0) for m, s in zip(cam.maps, sizes)]
    normalized = None
    if cam.normalized is not None:
        normalized = [np.clip(upsample_bilinear(m, s), 0.0, 1.0) for m, s in zip(cam.normalized, sizes)]
    return CrossAttentionMap(maps, "image", normalized)
