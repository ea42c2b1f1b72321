"""``cosod`` command line: extract-features, train, infer, eval.

Every command takes ``--config FILE`` and repeatable ``--set key=value``
overrides on top of ``COSOD__SECTION__KEY`` environment variables.
Feature caches for a dataset root ``R`` live in ``<cache_dir>/<basename R>/``.

Exit codes: 0 success, 1 runtime/format failure, 2 configuration or missing input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

from . import __version__
from .config import RunConfig, load_config, write_fingerprint
from .data_io import FeatureCacheRecord, list_groups, load_group, read_feature_cache, read_mask, write_feature_cache, write_masks
from .errors import ConfigurationError, ContractError, CosodError, FormatError

logger = logging.getLogger("cosod")


def cache_dir_for(cfg: RunConfig, root) -> Path:
    return Path(cfg.paths.cache_dir) / Path(root).resolve().name


def _current_cache(path: Path, group, tag: str, input_side: int) -> Optional[FeatureCacheRecord]:
    """The cached record if it is readable and matches the group and backbone, else None."""
    if not path.is_file():
        return None
    try:
        rec = read_feature_cache(path)
    except FormatError as exc:
        logger.warning("cache %s is unreadable (%s); recomputing", path, exc)
        return None
    fresh = (
        rec.source_hash == group.content_hash()
        and rec.backbone_tag == tag
        and rec.input_side == input_side
        and rec.image_ids == list(group.stems)
    )
    return rec if fresh else None


def ensure_caches(cfg: RunConfig, root, groups: Optional[Sequence[str]] = None):
    """Feature records for every group under ``root``, computing only stale caches.

    Returns (records by group name, loaded ImageGroups, number recomputed).
    """
    from .backbone import load_backbone

    bcfg = cfg.backbone
    out_dir = cache_dir_for(cfg, root)
    names = list(groups) if groups is not None else list_groups(root)
    if not names:
        raise ConfigurationError(f"no image groups under {root}")
    records, loaded, computed = {}, {}, 0
    for name in names:
        group = load_group(root, name)
        loaded[name] = group
        path = out_dir / f"{name}.cosp"
        rec = _current_cache(path, group, bcfg.tag, bcfg.input_side)
        if rec is not None:
            records[name] = rec
            continue
        rec = load_backbone(bcfg).encode_group(group)
        write_feature_cache(rec, path)
        records[name] = rec
        computed += 1
    return records, loaded, computed


def cmd_extract_features(cfg: RunConfig, args) -> int:
    root = args.data_root or cfg.paths.data_root
    records, _, computed = ensure_caches(cfg, root)
    out = cache_dir_for(cfg, root)
    write_fingerprint(cfg, out)
    print(f"{len(records)} groups, {computed} recomputed, {len(records) - computed} up to date -> {out}")
    return 0


def _training_roots(cfg: RunConfig, args) -> List[str]:
    if args.data_root:
        return list(args.data_root)
    return list(cfg.train.datasets) or [cfg.paths.data_root]


def cmd_train(cfg: RunConfig, args) -> int:
    from .checkpoint import load_checkpoint, save_checkpoint
    from .trainer import fit

    tcfg = cfg.train_config()
    records: List[FeatureCacheRecord] = []
    for root in _training_roots(cfg, args):
        recs, _, computed = ensure_caches(cfg, root)
        logger.info("%s: %d groups (%d encoded)", root, len(recs), computed)
        records.extend(recs.values())
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume, tcfg.fingerprint(), cfg.backbone.tag)
    ckpt = fit(records, None, tcfg, resume=resume)
    ckpt.meta["run_fingerprint"] = cfg.fingerprint()
    path = Path(args.checkpoint or cfg.paths.checkpoint)
    save_checkpoint(ckpt, path)
    log_path = path.with_suffix(".log.jsonl")
    log_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in ckpt.meta["log"]))
    write_fingerprint(cfg, path.parent)
    print(f"checkpoint {path} (epoch {ckpt.epoch}, b_bar {ckpt.head_params.b_bar:.6f}); log {log_path}")
    return 0


def cmd_infer(cfg: RunConfig, args) -> int:
    from .checkpoint import load_checkpoint
    from .segmenter.pipeline import dump_intermediates, segment_group

    ckpt_path = Path(args.checkpoint or cfg.paths.checkpoint)
    if not ckpt_path.is_file():
        raise ConfigurationError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    root = args.data_root or cfg.paths.data_root
    out = Path(args.out or cfg.paths.out_dir)
    max_group = args.max_group if args.max_group is not None else cfg.infer.max_group
    names = list_groups(root)
    if max_group:
        for name in names:
            n = len(load_group(root, name).stems)
            if n > max_group:
                raise ConfigurationError(
                    f"group {name!r} has {n} images, above --max-group {max_group}; "
                    "groups are never split because the group-mean query depends on every image"
                )
    records, groups, _ = ensure_caches(cfg, root, names)
    seg_cfg = cfg.segment_config()
    dump = args.dump_debug or cfg.infer.dump_debug
    for name in names:
        rec, group = records[name], groups[name]
        if rec.backbone_tag != ckpt.backbone_tag:
            msg = f"group {name!r}: features from {rec.backbone_tag!r}, checkpoint trained on {ckpt.backbone_tag!r}"
            if not args.force:
                raise ConfigurationError(msg + " (use --force to override)")
            warnings.warn(msg)
        result = segment_group(group, rec.patch_features, ckpt.head_params, seg_cfg)
        write_masks(group, result.masks, out / name)
        if dump:
            dump_intermediates(result, group.stems, out / "debug" / name)
    write_fingerprint(cfg, out)
    print(f"{len(names)} groups -> {out}")
    return 0


def _find_prediction(pred_dir: Path, stem: str) -> Optional[Path]:
    for ext in (".png", ".jpg", ".jpeg", ".bmp"):
        p = pred_dir / f"{stem}{ext}"
        if p.is_file():
            return p
    return None


def _read_prediction(path: Path, size) -> np.ndarray:
    im = Image.open(path).convert("L")
    if im.size != (size[1], size[0]):
        im = im.resize((size[1], size[0]), Image.NEAREST)
    return np.asarray(im, dtype=np.float64) / 255.0


def evaluate_directory(pred_dir, gt_root):
    """Score ``pred_dir/<group>/<stem>.png`` against ``gt_root/gt/<group>/``."""
    from .metrics import evaluate_groups

    pred_dir, gt_dir = Path(pred_dir), Path(gt_root) / "gt"
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt_dir}")
    pairs, missing = {}, {}
    for gdir in sorted(p for p in gt_dir.iterdir() if p.is_dir() and not p.name.startswith(".")):
        pairs[gdir.name] = []
        for gt_path in sorted(p for p in gdir.iterdir() if p.is_file() and not p.name.startswith(".")):
            gt = read_mask(gt_path)
            pred_path = _find_prediction(pred_dir / gdir.name, gt_path.stem)
            if pred_path is None:
                missing.setdefault(gdir.name, []).append(gt_path.stem)
                pred = np.zeros(gt.shape)
            else:
                pred = _read_prediction(pred_path, gt.shape)
            pairs[gdir.name].append((pred, gt))
    for g, stems in missing.items():
        warnings.warn(f"group {g!r}: {len(stems)} predictions missing, scored as all-zero: {stems[:5]}")
    return evaluate_groups(pairs, missing)


def cmd_eval(cfg: RunConfig, args) -> int:
    from .metrics import write_report

    pred_dir = Path(args.pred_dir or cfg.paths.out_dir)
    report = evaluate_directory(pred_dir, args.gt_root or cfg.paths.data_root)
    out = Path(args.out) if args.out else pred_dir
    jl, _ = write_report(report, out)
    write_fingerprint(cfg, out)
    sys.stdout.write(report.table())
    print(f"report {jl}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cosod", description="Self-supervised co-salient object detection")
    parser.add_argument("--version", action="version", version=f"cosod {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", parents=[common], help="encode groups into feature caches")
    p.add_argument("--data-root")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("train", parents=[common], help="train the correspondence head")
    p.add_argument("--data-root", action="append", help="dataset root; repeat for several")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="segment every group of a dataset")
    p.add_argument("--data-root")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--max-group", type=int, default=None)
    p.add_argument("--dump-debug", action="store_true", help="write S, M, G, R maps under <out>/debug")
    p.add_argument("--force", action="store_true", help="ignore backbone tag mismatches")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score predicted masks")
    p.add_argument("--pred-dir")
    p.add_argument("--gt-root")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def _parse_sets(items) -> dict:
    pairs = {}
    for item in items:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _parse_sets(args.set))
        return args.func(cfg, args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CosodError, ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
