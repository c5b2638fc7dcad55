"""Command line entry point.

Subcommands: ``gen`` (synthetic dataset), ``denoise``, ``encode``,
``train``, ``eval``, ``fewshot``, ``gradcheck``, ``sweep``, ``ablate``.
Human-readable progress goes to stderr; machine-readable JSON/CSV goes to
stdout or to files. Exit codes: 0 success, 1 validation or assertion
failure, 2 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import (
    ConfigError,
    RunConfig,
    config_hash,
    load_run_config,
    run_config_to_dict,
    write_run_outputs,
)
from .encoder import TemporalVoxelEncoder, TveConfig
from .events import (
    ParseError,
    SensorGeometry,
    downscale,
    load_manifest,
    load_stream,
    save_stream,
)
from .experiments import ABLATION_VARIANTS, ablate, scene_indices, sweep
from .preprocess import DenoiseConfig, denoise
from .rng import derive_rng
from .splits import SplitError, SplitSpec, matched_split
from .synthgen import SCENES, generate_dataset
from .training import Dataset, Model, evaluate, fewshot_adapt, train
from .verification import run_gradcheck_suite


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_cfg(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if getattr(args, "manifest", None):
        cfg = replace(cfg, manifest=args.manifest)
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=str(args.out))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    return cfg


def _dataset(cfg: RunConfig) -> Dataset:
    if not cfg.manifest:
        raise ConfigError("a manifest is required (--manifest or config)")
    manifest = Path(cfg.manifest)
    entries = load_manifest(manifest)
    _info(f"loading {len(entries)} samples from {manifest} ...")
    return Dataset.load(entries, manifest.parent, cfg.model)


def _scene_args(args, cfg) -> SplitSpec:
    return SplitSpec(
        protocol=args.protocol,
        source_scene=args.source_scene,
        target_scene=args.target_scene,
        shots=getattr(args, "shots_int", 0),
        shots_per_digit=getattr(args, "per_digit", False),
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.per_scene % 10 != 0:
        raise ConfigError("--per-scene must be a multiple of 10 (one per digit)")
    scenes = args.scenes.split(",") if args.scenes else list(SCENES)
    entries = generate_dataset(
        args.out,
        subjects=args.subjects,
        reps_per_digit=args.per_scene // 10,
        scenes=scenes,
        seed=args.seed,
    )
    summary = {
        "samples": len(entries),
        "scenes": scenes,
        "subjects": args.subjects,
        "manifest": str(Path(args.out) / "manifest.jsonl"),
    }
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_denoise(args) -> int:
    geometry = None
    if args.width and args.height:
        geometry = SensorGeometry(args.width, args.height)
    stream = load_stream(args.input, geometry=geometry)
    out = denoise(stream, DenoiseConfig(args.tf_us))
    if args.output:
        save_stream(out, args.output)
    print(json.dumps({"total": len(stream), "retained": len(out)}, sort_keys=True))
    return 0


def cmd_encode(args) -> int:
    geometry = None
    if args.width and args.height:
        geometry = SensorGeometry(args.width, args.height)
    stream = load_stream(args.input, geometry=geometry)
    if args.downsample > 1:
        stream = downscale(stream, args.downsample)
    encoder = TemporalVoxelEncoder(
        TveConfig(args.bins, stream.geometry),
        derive_rng(args.seed, "init", "tve"),
        oracle=args.oracle,
    )
    if args.params:
        tensors, _ = ckpt.load_tensors(args.params)
        for p in encoder.params:
            if p.name in tensors:
                p.value[...] = tensors[p.name].reshape(p.value.shape)
    grid, _ = encoder.encode(stream)
    meta = {
        "bins": args.bins,
        "geometry": [stream.geometry.width, stream.geometry.height],
        "oracle": bool(args.oracle),
    }
    ckpt.save_tensors(args.output, {"v_att": grid}, meta)
    _info(f"encoded {len(stream)} events into {grid.shape} -> {args.output}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    dataset = _dataset(cfg)
    spec = _scene_args(args, cfg)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    log_fn = _info if args.verbose else None
    result = train(dataset, cfg.model, cfg.train, spec, augment_cfg=cfg.augment,
                   out_dir=out_dir, log_fn=log_fn)
    if out_dir is not None:
        write_run_outputs(out_dir, cfg, {"protocol": spec.protocol,
                                         "source_scene": spec.source_scene,
                                         "target_scene": spec.target_scene})
        _info(f"checkpoint and metrics written to {out_dir}")
    print(json.dumps(result.report.to_dict(), sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    model = Model.load(args.checkpoint)
    cfg = _load_cfg(args)
    cfg = replace(cfg, model=model.cfg)
    dataset = _dataset(cfg)
    if args.protocol == "matched":
        splits = matched_split(dataset.entries, args.source_scene, args.seed or 0)
        indices = splits.test
    else:
        indices = scene_indices(dataset, args.target_scene)
    report = evaluate(model, dataset, indices, batch_size=cfg.train.batch_size)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def _parse_shots(spec: str) -> list[int]:
    if ":" in spec:
        lo, hi = spec.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(spec)]


def cmd_fewshot(args) -> int:
    cfg = _load_cfg(args)
    shots_list = _parse_shots(args.shots)
    base = Model.load(args.checkpoint)
    cfg = replace(cfg, model=base.cfg)
    dataset = _dataset(cfg)
    curve = []
    for shots in shots_list:
        model = Model.load(args.checkpoint)
        model, report, shot_idx = fewshot_adapt(
            model, dataset, args.target_scene, shots, cfg.train,
            adapt_epochs=args.adapt_epochs, augment_cfg=cfg.augment,
            per_digit=args.per_digit,
        )
        curve.append({"shots": shots, "accuracy": report.overall_accuracy,
                      "n_eval": report.n_samples})
        _info(f"shots={shots}: accuracy={report.overall_accuracy:.4f}")
        if args.out and len(shots_list) == 1:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            model.save(out / "adapted.ntc")
            with open(out / "metrics.json", "w") as fh:
                json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
    if args.out and len(shots_list) > 1:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "fewshot_curve.json", "w") as fh:
            json.dump(curve, fh, sort_keys=True, indent=2)
    print(json.dumps(curve, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradcheck_suite()
    ok = True
    for r in results:
        status = "pass" if r.passed else "FAIL"
        _info(f"[{status}] {r.name}: error={r.error:.3e} threshold={r.threshold:.0e}")
        ok &= r.passed
    print(json.dumps(
        [{"name": r.name, "error": r.error, "threshold": r.threshold,
          "passed": r.passed} for r in results], sort_keys=True))
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    dataset = _dataset(cfg)
    values = [float(v) if args.axis == "lambda" else int(v)
              for v in args.values.split(",")]
    eval_scenes = [s for s in args.eval_scenes.split(",") if s]
    rows = sweep(dataset, cfg, args.axis, values, args.source_scene, eval_scenes,
                 log_fn=_info if args.verbose else None)
    header = ["value", "matched", *eval_scenes, "config_hash"]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row.get(k, "")) for k in header))
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(csv_text)
    print(csv_text, end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    dataset = _dataset(cfg)
    variants = list(ABLATION_VARIANTS) if args.variant == "all" else [args.variant]
    eval_scenes = [s for s in args.eval_scenes.split(",") if s]
    rows = ablate(dataset, cfg, variants, args.source_scene, eval_scenes,
                  out_root=args.out, log_fn=_info if args.verbose else None)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ablation_report.json", "w") as fh:
            json.dump(rows, fh, sort_keys=True, indent=2)
    print(json.dumps(rows, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evspeaker",
        description="Event-based lip-motion speaker recognition pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic cross-scene dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--per-scene", type=int, default=40,
                   help="samples per subject per scene (multiple of 10)")
    p.add_argument("--scenes", default=",".join(SCENES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("denoise", help="spatiotemporal event denoising")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--tf-us", type=int, default=10_000)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("encode", help="encode a stream into a voxel tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--bins", type=int, default=16)
    p.add_argument("--params", help="checkpoint supplying encoder parameters")
    p.add_argument("--oracle", action="store_true",
                   help="use the fixed hard-binning indicator kernel")
    p.add_argument("--downsample", type=int, default=1)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_encode)

    def add_run_args(p, protocols):
        p.add_argument("--manifest")
        p.add_argument("--config")
        p.add_argument("--protocol", choices=protocols, default=protocols[0])
        p.add_argument("--source-scene", default="frontal")
        p.add_argument("--target-scene")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("train", help="train a recognizer")
    add_run_args(p, ["matched", "cross"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    add_run_args(p, ["matched", "cross"])
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fewshot", help="few-shot adaptation to a target scene")
    add_run_args(p, ["fewshot"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shots", default="2", help="K, or a range like 0:5")
    p.add_argument("--adapt-epochs", type=int, default=12)
    p.add_argument("--per-digit", action="store_true",
                   help="interpret K as shots per subject per digit")
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("gradcheck", help="run the gradient verification suite")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="hyperparameter / sample-size sweep")
    add_run_args(p, ["matched"])
    p.add_argument("--axis", choices=["lambda", "channels", "samples"], required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--eval-scenes", default="view45,view90,lowlight")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="component ablation harness")
    add_run_args(p, ["matched"])
    p.add_argument("--variant", choices=["all", *ABLATION_VARIANTS], default="all")
    p.add_argument("--eval-scenes", default="view45,lowlight")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, OSError, json.JSONDecodeError) as exc:
        _info(f"error: {exc}")
        return 2
    except (SplitError, ValueError, AssertionError) as exc:
        _info(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
