"""Self-supervised losses over cross-attention maps (torch, differentiable)."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .forms import COOC_FORMS, SAL_REDUCTIONS

DEFAULT_LAMBDA_SAL = 0.3


@dataclass
class LossBreakdown:
    l_cooc: torch.Tensor
    l_sal: torch.Tensor
    l_total: torch.Tensor
    lambda_sal: float
    pair_count: int

    def as_floats(self) -> dict:
        return {
            "l_cooc": float(self.l_cooc.detach()),
            "l_sal": float(self.l_sal.detach()),
            "l_total": float(self.l_total.detach()),
        }


def masked_embedding(mask: torch.Tensor, feats: torch.Tensor) -> torch.Tensor:
    """Sum of mask-weighted patch descriptors divided by the patch count H*W.

    Accepts a single (H, W) mask with (C, H, W) features, or batched (N, H, W) / (N, C, H, W).
    """
    if mask.shape[-2:] != feats.shape[-2:]:
        raise ValueError(f"mask {tuple(mask.shape)} and features {tuple(feats.shape)} disagree on H, W")
    n_p = mask.shape[-1] * mask.shape[-2]
    return torch.einsum("...hw,...chw->...c", mask, feats) / n_p


def safe_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last axis; 0 where either vector has zero norm."""
    denom = a.norm(dim=-1) * b.norm(dim=-1)
    dot = (a * b).sum(dim=-1)
    ok = denom > 0
    return torch.where(ok, dot / torch.where(ok, denom, torch.ones_like(denom)), torch.zeros_like(dot))


def pair_distances(maps: torch.Tensor, feats: torch.Tensor):
    """Return (d_plus, d_minus), both (N, N)."""
    fg = masked_embedding(maps, feats)
    bg = masked_embedding(1.0 - maps, feats)
    fg_fg = safe_cosine(fg[:, None, :], fg[None, :, :])
    fg_bg = safe_cosine(fg, bg)
    d_plus = 1.0 - fg_fg
    d_minus = 1.0 - (fg_bg[:, None] + fg_bg[None, :])
    return d_plus, d_minus


def cooccurrence_loss(maps: torch.Tensor, feats: torch.Tensor, form: str = "log_softmax") -> torch.Tensor:
    """Sum over pairs n <= m (self pairs included) of the contrastive pair term."""
    if form not in COOC_FORMS:
        raise ValueError(f"cooc_form must be one of {COOC_FORMS}, got {form!r}")
    d_plus, d_minus = pair_distances(maps, feats)
    iu = torch.triu_indices(maps.shape[0], maps.shape[0])
    dp, dm = d_plus[iu[0], iu[1]], d_minus[iu[0], iu[1]]
    if form == "log_softmax":
        terms = F.softplus(dp - dm)
    else:
        terms = torch.sigmoid(dm - dp)
    return terms.sum()


def saliency_loss(maps: torch.Tensor, priors: torch.Tensor, reduction: str = "weighted") -> torch.Tensor:
    """One minus the mean per-image saliency of the detections, clamped to [0, 1]."""
    if maps.shape != priors.shape:
        raise ValueError(f"maps {tuple(maps.shape)} and priors {tuple(priors.shape)} differ")
    if reduction == "weighted":
        score = (maps * priors).sum(dim=(1, 2)) / maps.sum(dim=(1, 2))
    elif reduction == "plain":
        score = (maps * priors).mean(dim=(1, 2))
    else:
        raise ValueError(f"sal_reduction must be one of {SAL_REDUCTIONS}, got {reduction!r}")
    return (1.0 - score.mean()).clamp(0.0, 1.0)


def total_loss(
    maps: torch.Tensor,
    feats: torch.Tensor,
    priors: torch.Tensor,
    lambda_sal: float = DEFAULT_LAMBDA_SAL,
    cooc_form: str = "log_softmax",
    sal_reduction: str = "weighted",
) -> LossBreakdown:
    l_cooc = cooccurrence_loss(maps, feats, cooc_form)
    l_sal = saliency_loss(maps, priors, sal_reduction)
    n = maps.shape[0]
    return LossBreakdown(l_cooc, l_sal, l_cooc + lambda_sal * l_sal, lambda_sal, n * (n + 1) // 2)
