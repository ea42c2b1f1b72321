"""Two-label fully connected CRF with Gaussian pairwise kernels, solved by mean field.

Pairwise energy is Potts, so one mean-field round reads

    Q <- softmax(-U + w_s * K_s(Q) + w_b * K_b(Q))

where K_s is the spatial Gaussian (stddev theta_gamma) and K_b the bilateral
kernel over (x/theta_alpha, y/theta_alpha, rgb/theta_beta). Both kernels are
symmetrically normalized, n K n with n = (K 1)^-1/2. K_s is separable and is
applied exactly; K_b goes through the permutohedral lattice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy import ndimage

from .. import kernels
from ..errors import ContractError

_P_CLAMP = 1e-8


@dataclass(frozen=True)
class CrfConfig:
    theta_gamma: float = 10.0
    theta_alpha: float = 10.0
    theta_beta: float = 3.0
    iterations: int = 10
    unary_fg_prob: float = 0.9
    w_smooth: float = 3.0
    w_appearance: float = 10.0

    def __post_init__(self):
        for name in ("theta_gamma", "theta_alpha", "theta_beta"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be > 0")
        if not 0.5 < self.unary_fg_prob <= 1.0:
            raise ContractError(f"unary_fg_prob must lie in (0.5, 1], got {self.unary_fg_prob}")
        if self.iterations < 0:
            raise ContractError("iterations must be >= 0")
        if self.w_smooth < 0 or self.w_appearance < 0:
            raise ContractError("kernel weights must be >= 0")


def unary_from_mask(mask: np.ndarray, p: float) -> np.ndarray:
    """(2, H, W) energies -log P(label); label 1 is foreground."""
    p = min(float(p), 1.0 - _P_CLAMP)
    m = np.asarray(mask).astype(bool)
    fg = np.where(m, p, 1.0 - p)
    return -np.log(np.stack([1.0 - fg, fg]))


def softmax_labels(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


class SpatialKernel:
    def __init__(self, shape, sigma: float):
        self.sigma = float(sigma)
        self.norm = 1.0 / np.sqrt(self._raw(np.ones(shape)) + 1e-20)

    def _raw(self, x):
        return ndimage.gaussian_filter(x, self.sigma, mode="constant", cval=0.0, truncate=4.0)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return np.stack([self.norm * self._raw(self.norm * c) for c in q])


class BilateralKernel:
    def __init__(self, image: np.ndarray, theta_alpha: float, theta_beta: float):
        h, w = image.shape[:2]
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        feats = np.concatenate(
            [
                np.stack([xx.ravel(), yy.ravel()], axis=1) / theta_alpha,
                image.reshape(-1, image.shape[2]).astype(np.float64) / theta_beta,
            ],
            axis=1,
        )
        self.shape = (h, w)
        self.lattice = kernels.build_lattice(feats)
        ones = np.ones((h * w, 1))
        self.norm = 1.0 / np.sqrt(kernels.lattice_filter(ones, *self.lattice)[:, 0] + 1e-20)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        flat = q.reshape(q.shape[0], -1).T * self.norm[:, None]
        out = kernels.lattice_filter(flat, *self.lattice) * self.norm[:, None]
        return out.T.reshape(q.shape)


def mean_field(unary: np.ndarray, pairwise, iterations: int, history: List[np.ndarray] = None) -> np.ndarray:
    """``pairwise`` is a list of (weight, kernel) with kernel: (L, H, W) -> (L, H, W)."""
    q = softmax_labels(-unary)
    for _ in range(iterations):
        logits = -unary
        for weight, kern in pairwise:
            if weight:
                logits = logits + weight * kern(q)
        q = softmax_labels(logits)
        if history is not None:
            history.append(q)
    return q


def dense_crf(image: np.ndarray, mask: np.ndarray, cfg: CrfConfig = CrfConfig(), return_marginals: bool = False):
    """Refine a binary mask against image edges; returns the argmax labeling."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    mask = np.asarray(mask).astype(bool)
    if image.shape[:2] != mask.shape:
        raise ContractError(f"image {image.shape[:2]} and mask {mask.shape} differ in size")
    unary = unary_from_mask(mask, cfg.unary_fg_prob)
    pairwise = []
    if cfg.w_smooth:
        pairwise.append((cfg.w_smooth, SpatialKernel(mask.shape, cfg.theta_gamma)))
    if cfg.w_appearance:
        pairwise.append((cfg.w_appearance, BilateralKernel(image, cfg.theta_alpha, cfg.theta_beta)))
    history = [] if return_marginals else None
    q = mean_field(unary, pairwise, cfg.iterations, history)
    out = q[1] > q[0]
    if return_marginals:
        return out, history
    return out
