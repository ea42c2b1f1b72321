"""Saliency / co-saliency evaluation: MAE, max F-measure, max E-measure, S-measure.

Predictions are [0,1] rasters, ground truths binary. F and E are swept over a
256-level grid: the prediction is quantized to q = round(255 * pred) and
binarized as q > t for t = 0..255, so an all-zero prediction is never
foreground. Within a group, F and E curves are averaged over images before
the max is taken; dataset values are the mean of group values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from .errors import ContractError, FormatError

BETA2 = 0.3
ALPHA = 0.5
LEVELS = 256
METRICS = ("mae", "f_max", "e_max", "s_measure")
_EPS = np.spacing(1)


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ContractError(f"prediction {pred.shape} and ground truth {gt.shape} must be equal 2-D shapes")
    return np.clip(pred, 0.0, 1.0), gt


def quantize(pred: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pred, 0.0, 1.0) * (LEVELS - 1)).astype(np.int64)


def mae(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return float(np.abs(pred - gt).mean())


def _confusion(pred, gt):
    """TP, FP, FN, TN per threshold t = 0..255 for q > t."""
    q = quantize(pred)
    pos = np.bincount(q[gt], minlength=LEVELS)
    neg = np.bincount(q[~gt], minlength=LEVELS)
    # count of q > t is the suffix sum from t + 1
    tp = np.concatenate([np.cumsum(pos[::-1])[::-1][1:], [0]]).astype(np.float64)
    fp = np.concatenate([np.cumsum(neg[::-1])[::-1][1:], [0]]).astype(np.float64)
    fn = pos.sum() - tp
    tn = neg.sum() - fp
    return tp, fp, fn, tn


def _ratio(a, b):
    return np.divide(a, b, out=np.zeros_like(a, dtype=np.float64), where=b > 0)


def f_curve(pred, gt) -> np.ndarray:
    pred, gt = _check(pred, gt)
    tp, fp, fn, _ = _confusion(pred, gt)
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return _ratio((1 + BETA2) * p * r, BETA2 * p + r)


def f_max(pred, gt) -> float:
    return float(f_curve(pred, gt).max())


def e_curve(pred, gt) -> np.ndarray:
    """Enhanced-alignment score per threshold.

    A binarized map takes two values, so the alignment matrix takes at most four;
    the mean is assembled from the confusion counts instead of per-pixel maps.
    """
    pred, gt = _check(pred, gt)
    n = gt.size
    tp, fp, fn, tn = _confusion(pred, gt)
    n_gt = tp + fn
    if n_gt[0] == 0:
        return (fn + tn) / n  # 1 - FM averaged
    if n_gt[0] == n:
        return (tp + fp) / n  # FM averaged
    mu_f = (tp + fp) / n
    mu_g = n_gt / n
    total = np.zeros(LEVELS)
    for a, b, cnt in ((1, 1, tp), (1, 0, fp), (0, 1, fn), (0, 0, tn)):
        da, db = a - mu_f, b - mu_g
        align = 2 * da * db / (da * da + db * db)
        total += cnt * (align + 1) ** 2 / 4
    return total / n


def e_max(pred, gt) -> float:
    return float(e_curve(pred, gt).max())


def _object_score(x: np.ndarray, region: np.ndarray) -> float:
    vals = x[region]
    mean = vals.mean()
    sigma = vals.std(ddof=1) if vals.size > 1 else 0.0
    return 2 * mean / (mean * mean + 1 + sigma + _EPS)


def _s_object(pred, gt) -> float:
    u = gt.mean()
    fg = _object_score(pred * gt, gt)
    bg = _object_score((1 - pred) * (~gt), ~gt)
    return u * fg + (1 - u) * bg


def _ssim(pred, gt) -> float:
    n = pred.size
    gt = gt.astype(np.float64)
    x, y = pred.mean(), gt.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + _EPS)
    sy = ((gt - y) ** 2).sum() / (n - 1 + _EPS)
    sxy = ((pred - x) * (gt - y)).sum() / (n - 1 + _EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + _EPS)
    return 1.0 if b == 0 else 0.0


def _centroid(gt):
    h, w = gt.shape
    if not gt.any():
        return int(np.round(w / 2)) + 1, int(np.round(h / 2)) + 1
    yx = np.argwhere(gt).mean(axis=0).round()
    return int(yx[1]) + 1, int(yx[0]) + 1


def _s_region(pred, gt) -> float:
    h, w = gt.shape
    cx, cy = _centroid(gt)
    cx, cy = min(cx, w), min(cy, h)
    score = 0.0
    for ys, xs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p, g = pred[ys, xs], gt[ys, xs]
        if p.size:
            score += p.size / (h * w) * _ssim(p, g)
    return score


def s_measure(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1 - pred.mean())
    if y == 1:
        return float(pred.mean())
    return float(max(0.0, ALPHA * _s_object(pred, gt) + (1 - ALPHA) * _s_region(pred, gt)))


def evaluate_image(pred, gt) -> dict:
    return {"mae": mae(pred, gt), "f_curve": f_curve(pred, gt), "e_curve": e_curve(pred, gt), "s_measure": s_measure(pred, gt)}


def aggregate_group(per_image: Sequence[dict]) -> Dict[str, float]:
    if not per_image:
        raise ContractError("cannot aggregate an empty group")
    return {
        "mae": float(np.mean([r["mae"] for r in per_image])),
        "f_max": float(np.mean([r["f_curve"] for r in per_image], axis=0).max()),
        "e_max": float(np.mean([r["e_curve"] for r in per_image], axis=0).max()),
        "s_measure": float(np.mean([r["s_measure"] for r in per_image])),
    }


@dataclass
class MetricsReport:
    per_group: Dict[str, Dict[str, float]] = field(default_factory=dict)
    dataset_mean: Dict[str, float] = field(default_factory=dict)
    threshold_grid: int = LEVELS
    missing: Dict[str, List[str]] = field(default_factory=dict)

    @classmethod
    def from_groups(cls, per_group: Dict[str, Dict[str, float]], missing=None) -> "MetricsReport":
        names = sorted(per_group)
        mean = {k: float(np.mean([per_group[g][k] for g in names])) for k in METRICS} if names else {}
        return cls({g: dict(per_group[g]) for g in names}, mean, LEVELS, dict(missing or {}))

    def to_jsonl(self) -> str:
        lines = [json.dumps({"group": g, **v, "missing": self.missing.get(g, [])}, sort_keys=True) for g, v in self.per_group.items()]
        lines.append(json.dumps({"dataset_mean": True, **self.dataset_mean, "threshold_grid": self.threshold_grid}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        head = f"{'group':<24} {'MAE':>8} {'F_max':>8} {'E_max':>8} {'S':>8}"
        rows = [head, "-" * len(head)]
        for g, v in list(self.per_group.items()) + [("mean", self.dataset_mean)]:
            if v:
                rows.append(f"{g[:24]:<24} {v['mae']:8.4f} {v['f_max']:8.4f} {v['e_max']:8.4f} {v['s_measure']:8.4f}")
        return "\n".join(rows) + "\n"


def evaluate_groups(groups: Dict[str, Sequence[tuple]], missing=None) -> MetricsReport:
    """``groups`` maps a group name to a list of (pred, gt) pairs."""
    per_group = {g: aggregate_group([evaluate_image(p, t) for p, t in pairs]) for g, pairs in groups.items() if pairs}
    return MetricsReport.from_groups(per_group, missing)


def write_report(report: MetricsReport, out_dir) -> tuple:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jl, tb = out_dir / "metrics.jsonl", out_dir / "metrics.txt"
    jl.write_text(report.to_jsonl())
    tb.write_text(report.table())
    return jl, tb


def read_report(path) -> MetricsReport:
    per_group, missing, mean, grid = {}, {}, {}, LEVELS
    try:
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("dataset_mean"):
                mean = {k: float(rec[k]) for k in METRICS if k in rec}
                grid = int(rec.get("threshold_grid", LEVELS))
            else:
                per_group[rec["group"]] = {k: float(rec[k]) for k in METRICS}
                if rec.get("missing"):
                    missing[rec["group"]] = list(rec["missing"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: malformed metrics report ({exc})") from exc
    return MetricsReport(per_group, mean, grid, missing)
