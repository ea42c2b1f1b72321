"""Single-file checkpoint for the correspondence head.

Layout (little-endian)::

    b"COSPCKPT" | uint32 version | uint32 header_len | header (UTF-8 JSON) | float32 tensors

The header lists every tensor by name with its shape and byte offset into the
payload, plus the fingerprint, backbone tag, b_bar, epoch and head scalars.
"""

from __future__ import annotations

import json
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .correspondence import HeadParams
from .errors import FormatError

MAGIC = b"COSPCKPT"
VERSION = 1
_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    head_params: HeadParams
    epoch: int = 0
    config_fingerprint: str = ""
    backbone_tag: str = ""
    optimizer_state: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_step: int = 0
    meta: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    tensors = {f"head.{k}": v for k, v in ckpt.head_params.tensors().items()}
    tensors.update({f"optim.{k}": v for k, v in ckpt.optimizer_state.items()})
    table, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        blob = np.ascontiguousarray(arr, dtype=_F32).tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    p = ckpt.head_params
    header = json.dumps(
        {
            "fingerprint": ckpt.config_fingerprint,
            "backbone_tag": ckpt.backbone_tag,
            "b_bar": float(p.b_bar),
            "k": float(p.k),
            "s_th": float(p.s_th),
            "channels": p.channels,
            "epoch": int(ckpt.epoch),
            "optimizer_step": int(ckpt.optimizer_step),
            "meta": ckpt.meta,
            "tensors": table,
        },
        sort_keys=True,
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)
    return path


def load_checkpoint(
    path,
    expected_fingerprint: Optional[str] = None,
    expected_backbone_tag: Optional[str] = None,
) -> Checkpoint:
    """Read a checkpoint; mismatching fingerprint or backbone tag only warns."""
    path = Path(path)
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise FormatError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", data[pos : pos + 8])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    payload = memoryview(data)[pos + hlen :]
    tensors = {}
    try:
        for entry in header["tensors"]:
            start, nbytes = entry["offset"], entry["nbytes"]
            if start + nbytes > len(payload):
                raise FormatError(f"{path}: truncated tensor {entry['name']}")
            arr = np.frombuffer(payload[start : start + nbytes], dtype=_F32)
            tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
        head = HeadParams(
            **{n: tensors[f"head.{n}"] for n in HeadParams.TENSORS},
            k=header["k"],
            s_th=header["s_th"],
            b_bar=header["b_bar"],
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"{path}: inconsistent checkpoint ({exc})") from exc

    ckpt = Checkpoint(
        head_params=head,
        epoch=int(header.get("epoch", 0)),
        config_fingerprint=header.get("fingerprint", ""),
        backbone_tag=header.get("backbone_tag", ""),
        optimizer_state={k[len("optim."):]: v for k, v in tensors.items() if k.startswith("optim.")},
        optimizer_step=int(header.get("optimizer_step", 0)),
        meta=header.get("meta", {}),
    )
    if expected_fingerprint is not None and expected_fingerprint != ckpt.config_fingerprint:
        warnings.warn(
            f"checkpoint fingerprint {ckpt.config_fingerprint!r} differs from config "
            f"{expected_fingerprint!r}",
            stacklevel=2,
        )
    if expected_backbone_tag is not None and expected_backbone_tag != ckpt.backbone_tag:
        warnings.warn(
            f"checkpoint backbone tag {ckpt.backbone_tag!r} differs from {expected_backbone_tag!r}",
            stacklevel=2,
        )
    return ckpt
