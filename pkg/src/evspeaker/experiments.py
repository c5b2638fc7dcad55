"""Higher-level experiment drivers: scene sweeps and component ablations.

Each driver trains under the matched protocol on the source scene (so a
held-out test split exists there) and evaluates the resulting model on the
source test split plus every requested unseen scene in full. These are pure
orchestrations over the training module.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

from .config import RunConfig, config_hash
from .rng import derive_rng
from .splits import SplitSpec, Splits
from .training import Dataset, TrainResult, evaluate, make_splits, train

# Ablation variants: the adjustments each one makes to the model config.
ABLATION_VARIANTS = {
    "full": {},
    "A_no_lta": {"lta_mode": "indicator"},
    "B_no_sse_pcr": {"enhancer_mode": "fixed_avg", "lambda_pcr": 0.0},
    "C_no_pcr": {"lambda_pcr": 0.0},
}


def scene_indices(dataset: Dataset, scene: str) -> tuple[int, ...]:
    return tuple(i for i, e in enumerate(dataset.entries) if e.scene == scene)


def train_and_eval_scenes(
    dataset: Dataset,
    cfg: RunConfig,
    source_scene: str,
    eval_scenes: Sequence[str],
    out_dir=None,
    log_fn=None,
) -> tuple[TrainResult, dict[str, float]]:
    """Matched-protocol training on the source scene, then per-scene accuracy."""
    spec = SplitSpec(protocol="matched", source_scene=source_scene)
    result = train(
        dataset, cfg.model, cfg.train, spec, augment_cfg=cfg.augment,
        out_dir=out_dir, log_fn=log_fn,
    )
    accs = {"matched": result.report.overall_accuracy}
    for scene in eval_scenes:
        idx = scene_indices(dataset, scene)
        if idx:
            accs[scene] = evaluate(result.model, dataset, idx,
                                   batch_size=cfg.train.batch_size).overall_accuracy
    return result, accs


def _subsample_train(dataset: Dataset, train_idx, per_subject: int, seed: int):
    groups: dict[int, list[int]] = {}
    for i in train_idx:
        groups.setdefault(dataset.entries[i].subject, []).append(i)
    kept = []
    for subject in sorted(groups):
        pool = groups[subject]
        rng = derive_rng(seed, "sweep-subsample", subject)
        picks = rng.permutation(len(pool))[:per_subject]
        kept += [pool[j] for j in picks]
    return tuple(sorted(kept))


def sweep(
    dataset: Dataset,
    base_cfg: RunConfig,
    axis: str,
    values: Sequence,
    source_scene: str,
    eval_scenes: Sequence[str],
    log_fn=None,
) -> list[dict]:
    """Train/evaluate once per value of the swept axis; returns table rows."""
    if axis not in ("lambda", "channels", "samples"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    rows = []
    for value in values:
        cfg = base_cfg
        if axis == "lambda":
            cfg = replace(cfg, model=replace(cfg.model, lambda_pcr=float(value)))
        elif axis == "channels":
            cfg = replace(cfg, model=replace(cfg.model, channels=int(value)))
        spec = SplitSpec(protocol="matched", source_scene=source_scene)
        if axis == "samples":
            full = make_splits(dataset.entries, spec, cfg.train.seed)
            reduced = _subsample_train(dataset, full.train, int(value), cfg.train.seed)
            fixed = Splits(reduced, full.val, full.test)
            result = train(dataset, cfg.model, cfg.train, spec,
                           augment_cfg=cfg.augment, log_fn=log_fn, splits=fixed)
        else:
            result = train(dataset, cfg.model, cfg.train, spec,
                           augment_cfg=cfg.augment, log_fn=log_fn)
        row = {"value": value, "matched": result.report.overall_accuracy,
               "config_hash": config_hash(cfg)}
        for scene in eval_scenes:
            idx = scene_indices(dataset, scene)
            if idx:
                row[scene] = evaluate(result.model, dataset, idx,
                                      batch_size=cfg.train.batch_size).overall_accuracy
        rows.append(row)
    return rows


def ablate(
    dataset: Dataset,
    base_cfg: RunConfig,
    variants: Sequence[str],
    source_scene: str,
    eval_scenes: Sequence[str],
    out_root=None,
    log_fn=None,
) -> list[dict]:
    """Run the component ablations; one report row per variant."""
    rows = []
    for variant in variants:
        if variant not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant {variant!r}")
        cfg = replace(
            base_cfg,
            model=replace(base_cfg.model, **ABLATION_VARIANTS[variant]),
        )
        out_dir = None if out_root is None else f"{out_root}/{variant}"
        result, accs = train_and_eval_scenes(
            dataset, cfg, source_scene, eval_scenes, out_dir=out_dir, log_fn=log_fn
        )
        rows.append({"variant": variant, "config_hash": config_hash(cfg), **accs})
    return rows
