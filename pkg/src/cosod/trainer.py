"""Self-supervised training of the correspondence head over group-structured data."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .checkpoint import Checkpoint
from .data_io import FeatureCacheRecord, ImageGroup
from .errors import ConfigurationError, NumericError
from .forms import COOC_FORMS, SAL_REDUCTIONS
from .segmenter.threshold import confidence_stats

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 80
    lr: float = 1e-4
    weight_decay: float = 1e-4
    max_group_sample: int = 24
    input_side: int = 224
    seed: int = 0
    datasets: List[str] = field(default_factory=list)
    lambda_sal: float = 0.3
    enable_sal_loss: bool = True
    cooc_form: str = "log_softmax"
    sal_reduction: str = "weighted"
    grad_clip: float = 5.0  # global norm; <= 0 disables
    b_bar_all_epochs: bool = False
    max_steps: int = 0  # 0 means no cap

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.max_group_sample < 1:
            raise ConfigurationError("max_group_sample must be >= 1")
        if self.cooc_form not in COOC_FORMS:
            raise ConfigurationError(f"cooc_form must be one of {COOC_FORMS}")
        if self.sal_reduction not in SAL_REDUCTIONS:
            raise ConfigurationError(f"sal_reduction must be one of {SAL_REDUCTIONS}")

    @property
    def effective_lambda(self) -> float:
        return self.lambda_sal if self.enable_sal_loss else 0.0

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def batch_size_for(group_size: int, max_group_sample: int) -> int:
    return min(max_group_sample, group_size)


def sample_batch(group_size: int, max_group_sample: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of min(max_group_sample, group_size) images drawn without replacement."""
    k = batch_size_for(group_size, max_group_sample)
    return np.sort(rng.choice(group_size, size=k, replace=False))


def update_b_bar(current: float, batch_b_values: Sequence[float], count_so_far: int):
    """Fold a batch of per-image b_M values into a running mean. Returns (mean, count)."""
    total = current * count_so_far
    count = count_so_far
    for b in batch_b_values:
        count += 1
        total += float(b)
    if count == 0:
        return float(current), 0
    return total / count, count


def _adam_state_to_numpy(opt, head):
    out, step = {}, 0
    for name, p in head.named_parameters():
        st = opt.state.get(p, {})
        if not st:
            continue
        out[f"exp_avg.{name}"] = st["exp_avg"].detach().numpy().copy()
        out[f"exp_avg_sq.{name}"] = st["exp_avg_sq"].detach().numpy().copy()
        step = int(st["step"])
    return out, step


def _adam_state_from_numpy(opt, head, state: dict, step: int):
    import torch

    for name, p in head.named_parameters():
        if f"exp_avg.{name}" not in state:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(state[f"exp_avg.{name}"].copy()),
            "exp_avg_sq": torch.from_numpy(state[f"exp_avg_sq.{name}"].copy()),
        }


GroupLike = Union[ImageGroup, FeatureCacheRecord]


def encode_groups(groups: Sequence[GroupLike], backbone) -> List[FeatureCacheRecord]:
    """Features for every group; the backbone is frozen so each group is encoded once."""
    records = []
    for g in groups:
        if isinstance(g, FeatureCacheRecord):
            records.append(g)
        else:
            if backbone is None:
                raise ConfigurationError("a backbone is required to encode image groups")
            records.append(backbone.encode_group(g))
    return records


def fit(
    groups: Sequence[GroupLike],
    backbone,
    cfg: TrainConfig,
    resume: Optional[Checkpoint] = None,
    callback: Optional[Callable[[dict], None]] = None,
) -> Checkpoint:
    """Train the head with Adam; one step per group visit, one epoch per pass over all groups."""
    import torch

    from .head import CorrespondenceHead
    from .objectives import total_loss

    records = encode_groups(groups, backbone)
    if not records:
        raise ConfigurationError("training dataset is empty")
    channels = records[0].patch_features.shape[1]
    tags = {r.backbone_tag for r in records}
    if len(tags) > 1:
        raise ConfigurationError(f"feature caches come from different backbones: {sorted(tags)}")
    backbone_tag = tags.pop()

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        head = CorrespondenceHead(channels)
    opt = torch.optim.Adam(head.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    start_epoch = 1
    b_bar, b_count = 0.0, 0
    log_rows = []
    if resume is not None:
        head = CorrespondenceHead.from_params(resume.head_params)
        opt = torch.optim.Adam(head.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
        _adam_state_from_numpy(opt, head, resume.optimizer_state, resume.optimizer_step)
        start_epoch = resume.epoch + 1
        b_bar = resume.head_params.b_bar
        log_rows = list(resume.meta.get("log", []))
        # replay the sampling stream so a resumed run matches an uninterrupted one
        for _ in range(resume.epoch):
            order = rng.permutation(len(records))
            for gi in order:
                sample_batch(records[gi].patch_features.shape[0], cfg.max_group_sample, rng)

    feats_t = [torch.from_numpy(r.patch_features) for r in records]
    priors_t = [torch.from_numpy(r.saliency_priors) for r in records]
    lam = cfg.effective_lambda
    step = 0
    last_epoch = start_epoch - 1
    final_epoch = cfg.epochs
    if cfg.max_steps:
        final_epoch = min(final_epoch, last_epoch + -(-cfg.max_steps // len(records)))
    for epoch in range(start_epoch, final_epoch + 1):
        track = cfg.b_bar_all_epochs or epoch == final_epoch
        if track and not cfg.b_bar_all_epochs:
            b_bar, b_count = 0.0, 0
        sums = np.zeros(3)
        visits = 0
        for gi in rng.permutation(len(records)):
            idx = torch.from_numpy(sample_batch(feats_t[gi].shape[0], cfg.max_group_sample, rng))
            x, sa = feats_t[gi][idx], priors_t[gi][idx]
            maps, _ = head(x)
            losses = total_loss(maps, x, sa, lam, cfg.cooc_form, cfg.sal_reduction)
            if not torch.isfinite(losses.l_total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, group {records[gi].group_name!r}: "
                    f"{losses.as_floats()}"
                )
            opt.zero_grad()
            losses.l_total.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(head.parameters(), cfg.grad_clip)
            opt.step()
            if track:
                b_vals = [confidence_stats(m)[1] for m in maps.detach().numpy()]
                b_bar, b_count = update_b_bar(b_bar, b_vals, b_count)
            vals = losses.as_floats()
            sums += [vals["l_cooc"], vals["l_sal"], vals["l_total"]]
            visits += 1
            step += 1
            if callback is not None:
                callback({"epoch": epoch, "step": step, "group": records[gi].group_name, **vals, "b_bar": b_bar})
            if cfg.max_steps and step >= cfg.max_steps:
                break
        mean = sums / max(visits, 1)
        row = {"epoch": epoch, "l_cooc": mean[0], "l_sal": mean[1], "l_total": mean[2], "b_bar": b_bar}
        log_rows.append(row)
        logger.info("epoch %d: %s", epoch, row)
        last_epoch = epoch
        if cfg.max_steps and step >= cfg.max_steps:
            break

    optim_state, optim_step = _adam_state_to_numpy(opt, head)
    return Checkpoint(
        head_params=head.to_params(b_bar=min(max(b_bar, 0.0), 1.0)),
        epoch=last_epoch,
        config_fingerprint=cfg.fingerprint(),
        backbone_tag=backbone_tag,
        optimizer_state=optim_state,
        optimizer_step=optim_step,
        meta={"log": log_rows, "train_config": asdict(cfg)},
    )
