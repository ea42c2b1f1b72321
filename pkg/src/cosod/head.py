"""Torch version of the correspondence head, used for training."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from .correspondence import DEFAULT_K, DEFAULT_S_TH, HeadParams


def minmax_per_image(scores: torch.Tensor) -> torch.Tensor:
    lo = scores.amin(dim=(1, 2), keepdim=True)
    span = scores.amax(dim=(1, 2), keepdim=True) - lo
    safe = torch.where(span > 0, span, torch.ones_like(span))
    return torch.where(span > 0, (scores - lo) / safe, torch.zeros_like(scores))


class CorrespondenceHead(nn.Module):
    """Three 1x1 projections; ``forward`` returns (maps, normalized scores), both (N, H, W)."""

    def __init__(self, channels: int, k: float = DEFAULT_K, s_th: float = DEFAULT_S_TH):
        super().__init__()
        self.channels = channels
        self.k = k
        self.s_th = s_th
        self.res = nn.Conv2d(channels, channels, 1)
        self.key = nn.Conv2d(channels, channels, 1)
        self.query = nn.Conv2d(channels, channels, 1)
        bound = 1.0 / math.sqrt(channels)
        for conv in (self.res, self.key, self.query):
            nn.init.uniform_(conv.weight, -bound, bound)
            nn.init.zeros_(conv.bias)
        n = sum(p.numel() for p in self.parameters())
        assert n == 3 * (channels * channels + channels), n

    def forward(self, feats: torch.Tensor):
        f_res = feats + self.res(feats)
        n, c, h, w = f_res.shape
        k = self.key(f_res).permute(0, 2, 3, 1).reshape(-1, c)
        q = self.query(f_res).permute(0, 2, 3, 1).reshape(-1, c)
        scores = (k @ q.mean(dim=0) / math.sqrt(c)).reshape(n, h, w)
        normalized = minmax_per_image(scores)
        return torch.sigmoid(self.k * (normalized - self.s_th)), normalized

    def to_params(self, b_bar: float = 0.0) -> HeadParams:
        w = lambda conv: conv.weight.detach().cpu().numpy()[:, :, 0, 0].astype(np.float32).copy()
        b = lambda conv: conv.bias.detach().cpu().numpy().astype(np.float32).copy()
        return HeadParams(
            w(self.res), b(self.res), w(self.key), b(self.key), w(self.query), b(self.query),
            k=self.k, s_th=self.s_th, b_bar=b_bar,
        )

    @classmethod
    def from_params(cls, params: HeadParams) -> "CorrespondenceHead":
        head = cls(params.channels, params.k, params.s_th)
        with torch.no_grad():
            for conv, wn, bn in (
                (head.res, "w_res", "b_res"),
                (head.key, "w_key", "b_key"),
                (head.query, "w_query", "b_query"),
            ):
                conv.weight.copy_(torch.from_numpy(np.asarray(getattr(params, wn), dtype=np.float32))[:, :, None, None])
                conv.bias.copy_(torch.from_numpy(np.asarray(getattr(params, bn), dtype=np.float32)))
        return head
