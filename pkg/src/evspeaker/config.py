"""Run configuration: one JSON document covering model, training and
augmentation settings plus dataset paths.

Parsing is strict: unknown keys anywhere in the document are rejected. The
canonical serialized form is hashed (sha256) and recorded in every output
directory so results stay traceable to their exact configuration; input
datasets are fingerprinted with git-style blob hashes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .preprocess import AugmentConfig
from .training import ModelConfig, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    augment: AugmentConfig = AugmentConfig()
    manifest: Optional[str] = None
    out_dir: Optional[str] = None


def _parse_section(cls, data: dict, section: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kwargs = dict(data)
    for key in ("blocks", "geometry", "drop_ratio_range"):
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}")


def run_config_from_dict(data: dict) -> RunConfig:
    known = {"model", "train", "augment", "manifest", "out_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    return RunConfig(
        model=_parse_section(ModelConfig, data.get("model", {}), "model"),
        train=_parse_section(TrainConfig, data.get("train", {}), "train"),
        augment=_parse_section(AugmentConfig, data.get("augment", {}), "augment"),
        manifest=data.get("manifest"),
        out_dir=data.get("out_dir"),
    )


def run_config_to_dict(cfg: RunConfig) -> dict:
    def section(obj) -> dict:
        out = {}
        for name in obj.__dataclass_fields__:
            value = getattr(obj, name)
            if isinstance(value, tuple):
                value = list(value)
            out[name] = value
        return out

    return {
        "model": section(cfg.model),
        "train": section(cfg.train),
        "augment": section(cfg.augment),
        "manifest": cfg.manifest,
        "out_dir": cfg.out_dir,
    }


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    return run_config_from_dict(data)


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(run_config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _git_blob_sha(data: bytes) -> str:
    h = hashlib.sha1()
    h.update(f"blob {len(data)}\0".encode("ascii"))
    h.update(data)
    return h.hexdigest()


def hash_inputs(manifest_path) -> str:
    """Content hash of a manifest and every file it references."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    lines = [f"manifest {_git_blob_sha(manifest_path.read_bytes())}"]
    with open(manifest_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            name = json.loads(line)["file"]
            lines.append(f"{name} {_git_blob_sha((root / name).read_bytes())}")
    top = hashlib.sha1("\n".join(lines).encode("utf-8")).hexdigest()
    return top


def write_run_outputs(out_dir, cfg: RunConfig, extra: Optional[dict] = None) -> None:
    """Record the exact configuration and provenance hashes in out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = run_config_to_dict(cfg)
    doc["config_hash"] = config_hash(cfg)
    if cfg.manifest and Path(cfg.manifest).exists():
        doc["inputs_hash"] = hash_inputs(cfg.manifest)
    if extra:
        doc.update(extra)
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
