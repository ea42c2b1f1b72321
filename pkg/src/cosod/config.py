"""Run configuration and its flat ``section.key = value`` file form.

Example::

    backbone.variant = vit-base-8
    cat.alpha_c = 1.0
    toggles.enable_crf = false
    train.datasets = ["data/coco9213", "data/duts_class"]

Values are parsed by the type of the field they address. Environment
variables ``COSOD__<SECTION>__<KEY>`` override file values.
"""

from __future__ import annotations

import hashlib
import json
import os
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, Mapping

from .backbone import BackboneConfig
from .errors import ConfigurationError
from .segmenter.crf import CrfConfig
from .segmenter.pipeline import SegmentConfig
from .segmenter.regions import RefineConfig
from .segmenter.threshold import CatConfig
from .trainer import TrainConfig

ENV_PREFIX = "COSOD__"
# train fields owned by other sections
_DERIVED = {"train.enable_sal_loss": "toggles.enable_sal_loss", "train.input_side": "backbone.input_side"}


@dataclass(frozen=True)
class Toggles:
    enable_sal_loss: bool = True
    enable_cat: bool = True
    enable_rfc: bool = True
    enable_crf: bool = True


@dataclass(frozen=True)
class Paths:
    data_root: str = "data"
    cache_dir: str = "cache"
    out_dir: str = "out"
    checkpoint: str = "out/head.ckpt"


@dataclass(frozen=True)
class InferOptions:
    max_group: int = 0  # 0 disables the guard
    dump_debug: bool = False


# the five ablation rows as toggle sets, each adding one component
ABLATIONS = {
    "cooc": Toggles(enable_sal_loss=False, enable_cat=False, enable_rfc=False, enable_crf=False),
    "cooc+sal": Toggles(enable_sal_loss=True, enable_cat=False, enable_rfc=False, enable_crf=False),
    "cooc+sal+cat": Toggles(enable_cat=True, enable_rfc=False, enable_crf=False),
    "cooc+sal+cat+rfc": Toggles(enable_crf=False),
    "full": Toggles(),
}


@dataclass(frozen=True)
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cat: CatConfig = field(default_factory=CatConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    crf: CrfConfig = field(default_factory=CrfConfig)
    toggles: Toggles = field(default_factory=Toggles)
    paths: Paths = field(default_factory=Paths)
    infer: InferOptions = field(default_factory=InferOptions)

    def train_config(self) -> TrainConfig:
        return replace(self.train, enable_sal_loss=self.toggles.enable_sal_loss, input_side=self.backbone.input_side)

    def segment_config(self) -> SegmentConfig:
        t = self.toggles
        return SegmentConfig(self.cat, self.refine, self.crf, t.enable_cat, t.enable_rfc, t.enable_crf)

    def to_flat(self) -> Dict[str, object]:
        out = {}
        for sec in fields(self):
            for f in fields(getattr(self, sec.name)):
                key = f"{sec.name}.{f.name}"
                if key not in _DERIVED:
                    out[key] = getattr(getattr(self, sec.name), f.name)
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items())

    def fingerprint(self) -> str:
        """Hash of everything except paths, so moving a dataset keeps provenance stable."""
        flat = {k: v for k, v in self.to_flat().items() if not k.startswith("paths.")}
        return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, pairs: Mapping[str, str]) -> "RunConfig":
        sections = {s.name: {} for s in fields(self)}
        for key, raw in pairs.items():
            if key in _DERIVED:
                raise ConfigurationError(f"{key} is set through {_DERIVED[key]}")
            sec, _, name = key.partition(".")
            if sec not in sections or not name:
                raise ConfigurationError(f"unknown config key {key!r}")
            target = getattr(self, sec)
            if name not in {f.name for f in fields(target)}:
                raise ConfigurationError(f"unknown config key {key!r}")
            hint = typing.get_type_hints(type(target))[name]
            sections[sec][name] = _parse(raw, hint, key)
        try:
            return RunConfig(**{s: replace(getattr(self, s), **kv) if kv else getattr(self, s) for s, kv in sections.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return json.dumps(list(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(raw: str, hint, key: str):
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if typing.get_origin(hint) in (list, typing.List):
            val = json.loads(raw) if raw.startswith("[") else [s.strip() for s in raw.split(",") if s.strip()]
            if not isinstance(val, list):
                raise ValueError(raw)
            return [str(v) for v in val]
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    raise ConfigurationError(f"unsupported type for {key}: {hint}")


def parse_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    pairs = {}
    for i, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigurationError(f"{source}:{i}: expected 'key = value'")
        k, v = text.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def env_overrides(environ: Mapping[str, str] = None) -> Dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX):
            parts = k[len(ENV_PREFIX):].lower().split("__")
            if len(parts) == 2:
                out[f"{parts[0]}.{parts[1]}"] = v
    return out


def load_config(path=None, overrides: Mapping[str, str] = None, environ: Mapping[str, str] = None) -> RunConfig:
    """Defaults, then the file, then environment, then explicit overrides."""
    pairs: Dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        pairs.update(parse_lines(p.read_text().splitlines(), str(p)))
    pairs.update(env_overrides(environ))
    pairs.update(overrides or {})
    return RunConfig().with_overrides(pairs)


def loads(text: str) -> RunConfig:
    return RunConfig().with_overrides(parse_lines(text.splitlines()))


def write_fingerprint(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.dumps())
    path = out_dir / "FINGERPRINT"
    path.write_text(cfg.fingerprint() + "\n")
    return path

