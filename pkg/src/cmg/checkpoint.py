"""Shared checkpoint format: versioned torch blob plus a JSON sidecar carrying
the vocabulary hash, the producing config and stage metrics."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path

import torch

from .instparse import Vocab

FORMAT_VERSION = 1


def vocab_hash(vocab: Vocab) -> str:
    return hashlib.sha256(vocab.to_json().encode()).hexdigest()[:16]


def params_hash(state_dict: dict) -> str:
    """Order-stable hash of parameter bytes; used to pin frozen models."""
    h = hashlib.sha256()
    for name in sorted(state_dict):
        h.update(name.encode())
        h.update(state_dict[name].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:16]


def module_hash(module: torch.nn.Module) -> str:
    return params_hash(module.state_dict())


def _jsonable(config) -> dict:
    if is_dataclass(config):
        return asdict(config)
    return dict(config)


def save_checkpoint(path: str | Path, kind: str, payload: dict,
                    config, metrics: dict | None = None) -> dict:
    """Write ``path`` (torch blob) and ``path`` + ``.json`` (sidecar)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {"format_version": FORMAT_VERSION, "kind": kind, "payload": payload}
    torch.save(blob, path)
    sidecar = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "vocab_hash": vocab_hash(Vocab.default()),
        "config": _jsonable(config) if config is not None else None,
        "metrics": metrics or {},
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2))
    return sidecar


def load_checkpoint(path: str | Path, expect_kind: str | None = None) -> dict:
    path = Path(path)
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version in {path}")
    if expect_kind is not None and blob.get("kind") != expect_kind:
        raise ValueError(
            f"expected {expect_kind} checkpoint, found {blob.get('kind')}")
    return blob["payload"]


def load_sidecar(path: str | Path) -> dict:
    path = Path(path)
    return json.loads(path.with_suffix(path.suffix + ".json").read_text())


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()[:16]
