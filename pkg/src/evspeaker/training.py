"""Model assembly, training loop, evaluation, and few-shot adaptation.

The model is the encoder -> enhancer -> backbone chain plus the polarity
reconstruction head; the objective is cross-entropy on the subject label
plus ``lambda_pcr`` times the polarity-consistency loss. The loop follows
a fixed recipe: Adam, learning rate halved every ``decay_every`` epochs,
augmentation on the training split only, and the checkpoint with the
lowest validation total loss wins.

Every random choice derives from the run seed through named streams, and
all reductions have a fixed order, so a repeated run with the same seed
and configuration reproduces its checkpoint and metrics byte for byte.
Full-resolution streams are integer-downscaled before encoding (the
``downsample`` knob) to keep desk-scale runs within CPU budgets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import checkpoint as ckpt
from .backbone import BackboneConfig, ResidualBackbone
from .encoder import SensorGeometry, TemporalVoxelEncoder, TveConfig
from .enhancer import EnhancerConfig, FixedAverageProjector, SpatialEnhancer
from .events import EventStream, ManifestEntry, downscale, load_manifest_stream
from .kernels import softmax_cross_entropy
from .metrics import MetricsReport, build_report
from .optim import Adam
from .preprocess import AugmentConfig, DenoiseConfig, augment, denoise, sample_rng
from .regularizer import PcrConfig, PolarityHead, pcr_loss, reference_map, reference_map_backward
from .rng import derive_rng
from .splits import SplitSpec, Splits, cross_split, fewshot_split, matched_split


@dataclass(frozen=True)
class ModelConfig:
    bins: int = 16                 # temporal bins B (grid has 2B channels)
    channels: int = 16             # compressed channel count C
    num_classes: Optional[int] = None  # inferred from the manifest when None
    blocks: tuple[int, ...] = (1, 1, 1, 1)
    base_width: int = 16
    lambda_pcr: float = 0.05
    geometry: tuple[int, int] = (200, 160)  # full-resolution (W, H)
    downsample: int = 4
    denoise: bool = True
    denoise_tf_us: int = 10_000
    tcr_kernel: int = 1
    smooth_kernel: int = 3
    att_kernel: int = 1
    pcr_expansion: int = 2
    lta_mode: str = "learned"       # "learned" | "indicator"
    enhancer_mode: str = "learned"  # "learned" | "fixed_avg"

    def __post_init__(self):
        if self.lambda_pcr < 0:
            raise ValueError("lambda_pcr must be >= 0")
        if self.lta_mode not in ("learned", "indicator"):
            raise ValueError(f"unknown lta_mode {self.lta_mode!r}")
        if self.enhancer_mode not in ("learned", "fixed_avg"):
            raise ValueError(f"unknown enhancer_mode {self.enhancer_mode!r}")

    @property
    def encode_geometry(self) -> SensorGeometry:
        w, h = self.geometry
        return SensorGeometry(max(1, w // self.downsample), max(1, h // self.downsample))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-4
    batch_size: int = 8
    lr_decay: float = 0.5
    decay_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.decay_every) < 1:
            raise ValueError("epochs, batch_size and decay_every must be positive")
        if self.lr <= 0 or not (0 < self.lr_decay <= 1):
            raise ValueError("lr must be positive and lr_decay in (0, 1]")


class Model:
    """The full recognizer; owns all learnable state."""

    def __init__(self, cfg: ModelConfig, class_labels: Sequence[int], seed: int,
                 dtype=np.float32):
        if cfg.num_classes is not None and cfg.num_classes != len(class_labels):
            raise ValueError(
                f"num_classes={cfg.num_classes} but manifest has "
                f"{len(class_labels)} subjects"
            )
        self.cfg = cfg
        self.class_labels = list(class_labels)
        self.dtype = dtype
        twob = 2 * cfg.bins
        self.encoder = TemporalVoxelEncoder(
            TveConfig(cfg.bins, cfg.encode_geometry),
            derive_rng(seed, "init", "tve"),
            dtype=dtype,
            tcr_kernel=cfg.tcr_kernel,
            oracle=(cfg.lta_mode == "indicator"),
        )
        if cfg.enhancer_mode == "learned":
            self.enhancer = SpatialEnhancer(
                EnhancerConfig(twob, cfg.channels, cfg.smooth_kernel, cfg.att_kernel),
                derive_rng(seed, "init", "sse"),
                dtype=dtype,
            )
        else:
            self.enhancer = FixedAverageProjector(twob, cfg.channels, dtype=dtype)
        self.pcr_head = PolarityHead(
            PcrConfig(cfg.channels, cfg.pcr_expansion),
            derive_rng(seed, "init", "pcr"),
            dtype=dtype,
        )
        self.backbone = ResidualBackbone(
            BackboneConfig(cfg.channels, len(class_labels), cfg.blocks, cfg.base_width),
            derive_rng(seed, "init", "backbone"),
            dtype=dtype,
        )

    def trainable_params(self):
        """Parameters the optimizer updates; the PCR head only counts when
        its loss is active."""
        params = [*self.encoder.params, *self.enhancer.params, *self.backbone.params]
        if self.cfg.lambda_pcr > 0:
            params += self.pcr_head.params
        return params

    def all_params(self):
        return [*self.encoder.params, *self.enhancer.params,
                *self.pcr_head.params, *self.backbone.params]

    def batchnorms(self):
        bns = list(self.backbone.batchnorms())
        if isinstance(self.enhancer, SpatialEnhancer):
            bns.append(self.enhancer.bn)
        return bns

    # -- forward / backward ------------------------------------------------

    def forward(self, streams: list[EventStream], training: bool):
        vatt, enc_caches = self.encoder.encode_batch(streams)
        venh, enh_cache = self.enhancer.forward(vatt, training)
        logits, bb_cache = self.backbone.forward(venh, training)
        recon, pcr_cache = self.pcr_head.forward(venh)
        ref = reference_map(vatt, self.cfg.bins)
        return logits, (vatt, venh, recon, ref, enc_caches, enh_cache, bb_cache, pcr_cache)

    def loss_and_grads(self, streams, labels, training: bool):
        """Full forward + backward; returns (l_total, l_ce, l_pcr, n_correct)."""
        logits, cache = self.forward(streams, training)
        _, _, recon, ref, enc_caches, enh_cache, bb_cache, pcr_cache = cache
        l_ce, dlogits, probs = softmax_cross_entropy(logits, labels)
        l_pcr, drecon, dref = pcr_loss(recon, ref)
        lam = self.cfg.lambda_pcr
        dvenh = self.backbone.backward(dlogits, bb_cache)
        dvatt_extra = None
        if lam > 0:
            dvenh = dvenh + self.pcr_head.backward(lam * drecon, pcr_cache)
            dvatt_extra = reference_map_backward(lam * dref, self.cfg.bins)
        dvatt = self.enhancer.backward(dvenh, enh_cache)
        if dvatt_extra is not None:
            dvatt = dvatt + dvatt_extra
        self.encoder.backward_batch(dvatt, enc_caches)
        n_correct = int((np.argmax(probs, axis=1) == np.asarray(labels)).sum())
        return l_ce + lam * l_pcr, l_ce, l_pcr, n_correct

    def predict(self, streams: list[EventStream], labels=None):
        """Eval-mode forward; returns (pred_idx, l_total or None)."""
        logits, cache = self.forward(streams, training=False)
        recon, ref = cache[2], cache[3]
        pred = np.argmax(logits, axis=1)
        if labels is None:
            return pred, None
        l_ce, _, _ = softmax_cross_entropy(logits, labels)
        l_pcr, _, _ = pcr_loss(recon, ref)
        return pred, l_ce + self.cfg.lambda_pcr * l_pcr

    # -- state -------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        tensors = {p.name: p.value.copy() for p in self.all_params()}
        for bn in self.batchnorms():
            tensors.update({k: v.copy() for k, v in bn.state_tensors().items()})
        return tensors

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        for p in self.all_params():
            src = tensors[p.name].astype(p.value.dtype).reshape(p.value.shape)
            p.value[...] = src
        for bn in self.batchnorms():
            for key, arr in bn.state_tensors().items():
                arr[...] = tensors[key].astype(arr.dtype).reshape(arr.shape)

    def save(self, path) -> None:
        meta = {
            "format": 1,
            "class_labels": self.class_labels,
            "model": _config_to_dict(self.cfg),
        }
        ckpt.save_tensors(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path) -> "Model":
        tensors, meta = ckpt.load_tensors(path)
        cfg = config_from_dict(meta["model"])
        model = cls(cfg, meta["class_labels"], seed=0)
        model.load_state_dict(tensors)
        return model


def _config_to_dict(cfg: ModelConfig) -> dict:
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    d["blocks"] = list(cfg.blocks)
    d["geometry"] = list(cfg.geometry)
    return d


def config_from_dict(d: dict) -> ModelConfig:
    known = set(ModelConfig.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    kwargs = dict(d)
    if "blocks" in kwargs:
        kwargs["blocks"] = tuple(kwargs["blocks"])
    if "geometry" in kwargs:
        kwargs["geometry"] = tuple(kwargs["geometry"])
    return ModelConfig(**kwargs)


# ---------------------------------------------------------------------------
# Dataset plumbing
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Manifest entries with their denoised full-resolution streams in memory."""

    entries: list[ManifestEntry]
    streams: list[EventStream]
    root: Path

    @classmethod
    def load(cls, entries: Sequence[ManifestEntry], root, cfg: ModelConfig) -> "Dataset":
        root = Path(root)
        streams = []
        dn_cfg = DenoiseConfig(cfg.denoise_tf_us)
        for entry in entries:
            stream = load_manifest_stream(entry, root)
            if cfg.denoise:
                stream = denoise(stream, dn_cfg)
            streams.append(stream)
        return cls(list(entries), streams, root)

    def subjects(self) -> list[int]:
        return sorted({e.subject for e in self.entries})


def _encode_ready(stream: EventStream, cfg: ModelConfig) -> EventStream:
    return downscale(stream, cfg.downsample)


def _batches(indices: Sequence[int], size: int):
    for i in range(0, len(indices), size):
        yield list(indices[i:i + size])


def make_splits(entries: Sequence[ManifestEntry], spec: SplitSpec, seed: int) -> Splits:
    if spec.protocol == "matched":
        return matched_split(entries, spec.source_scene, seed)
    if spec.protocol == "cross":
        return cross_split(entries, spec.source_scene, spec.target_scene, seed)
    raise ValueError(f"protocol {spec.protocol!r} has no train/val/test splits")


# ---------------------------------------------------------------------------
# Training / evaluation
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    report: MetricsReport
    splits: Splits
    log_lines: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def train(
    dataset: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    split_spec: SplitSpec,
    augment_cfg: Optional[AugmentConfig] = None,
    out_dir=None,
    log_fn: Optional[Callable[[str], None]] = None,
    splits: Optional[Splits] = None,
) -> TrainResult:
    """Train on the split's train part, select on val, report on test.

    ``splits`` overrides the protocol-derived partition (the sample-size
    sweep reduces the train part while keeping val/test fixed).
    """
    entries = dataset.entries
    if splits is None:
        splits = make_splits(entries, split_spec, train_cfg.seed)
    class_labels = sorted({entries[i].subject for i in splits.train})
    label_index = {s: k for k, s in enumerate(class_labels)}
    model = Model(model_cfg, class_labels, seed=train_cfg.seed)
    if augment_cfg is None:
        augment_cfg = AugmentConfig(seed=train_cfg.seed)
    else:
        augment_cfg = replace(augment_cfg, seed=train_cfg.seed)

    eval_streams = {i: _encode_ready(dataset.streams[i], model_cfg)
                    for i in (*splits.val, *splits.test)}

    optimizer = Adam(model.trainable_params(), lr=train_cfg.lr)
    log_lines: list[dict] = []

    def emit(line: dict) -> None:
        log_lines.append(line)
        if log_fn is not None:
            log_fn(json.dumps(line, sort_keys=True))

    best_state = model.state_dict()
    best_val = float("inf")
    best_epoch = -1
    train_curve: list[float] = []
    val_curve: list[float] = []
    step = 0

    for epoch in range(train_cfg.epochs):
        optimizer.lr = train_cfg.lr * (train_cfg.lr_decay ** (epoch // train_cfg.decay_every))
        order_rng = derive_rng(train_cfg.seed, "order", epoch)
        order = [splits.train[j] for j in order_rng.permutation(len(splits.train))]
        epoch_loss = 0.0
        for batch in _batches(order, train_cfg.batch_size):
            streams = []
            labels = []
            for i in batch:
                aug = augment(dataset.streams[i], augment_cfg, sample_rng(augment_cfg, epoch, i))
                streams.append(_encode_ready(aug, model_cfg))
                labels.append(label_index[entries[i].subject])
            optimizer.zero_grad()
            l_total, l_ce, l_pcr, _ = model.loss_and_grads(
                streams, np.asarray(labels), training=True
            )
            optimizer.step()
            step += 1
            epoch_loss += l_total * len(batch)
            emit({"step": step, "epoch": epoch, "l_ce": l_ce, "l_pcr": l_pcr,
                  "l_total": l_total})
        epoch_loss /= len(splits.train)

        val_loss, val_acc = _run_eval_loss(model, dataset, splits.val, eval_streams,
                                           label_index, train_cfg.batch_size)
        train_curve.append(epoch_loss)
        val_curve.append(val_loss)
        emit({"epoch": epoch, "train_loss": epoch_loss, "val_loss": val_loss,
              "val_acc": val_acc, "lr": optimizer.lr})
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = model.state_dict()

    model.load_state_dict(best_state)
    report = evaluate(model, dataset, splits.test, batch_size=train_cfg.batch_size)
    report.loss_curves = {"train": train_curve, "val": val_curve}

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        model.save(out_dir / "checkpoint.ntc")
        with open(out_dir / "metrics.json", "w") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        with open(out_dir / "train_log.jsonl", "w") as fh:
            for line in log_lines:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
    return TrainResult(model, report, splits, log_lines, best_epoch)


def _run_eval_loss(model, dataset, indices, stream_cache, label_index, batch_size):
    total_loss = 0.0
    correct = 0
    for batch in _batches(indices, batch_size):
        streams = [stream_cache[i] for i in batch]
        labels = np.asarray([label_index[dataset.entries[i].subject] for i in batch])
        pred, loss = model.predict(streams, labels)
        total_loss += loss * len(batch)
        correct += int((pred == labels).sum())
    return total_loss / len(indices), correct / len(indices)


def evaluate(
    model: Model,
    dataset: Dataset,
    indices: Sequence[int],
    batch_size: int = 8,
) -> MetricsReport:
    """Eval-mode metrics over the given samples (no augmentation)."""
    if len(indices) == 0:
        raise ValueError("evaluation set is empty")
    label_index = {s: k for k, s in enumerate(model.class_labels)}
    for i in indices:
        if dataset.entries[i].subject not in label_index:
            raise ValueError(f"subject {dataset.entries[i].subject} unseen in training")
    preds = []
    total_loss = 0.0
    for batch in _batches(indices, batch_size):
        streams = [_encode_ready(dataset.streams[i], model.cfg) for i in batch]
        labels = np.asarray([label_index[dataset.entries[i].subject] for i in batch])
        pred, loss = model.predict(streams, labels)
        preds += [model.class_labels[k] for k in pred]
        total_loss += loss * len(batch)
    return build_report(
        true_subjects=[dataset.entries[i].subject for i in indices],
        pred_subjects=preds,
        digits=[dataset.entries[i].digit for i in indices],
        scenes=[dataset.entries[i].scene for i in indices],
        class_labels=model.class_labels,
        mean_loss=total_loss / len(indices),
    )


def fewshot_adapt(
    model: Model,
    dataset: Dataset,
    target_scene: str,
    shots: int,
    train_cfg: TrainConfig,
    adapt_epochs: int = 12,
    augment_cfg: Optional[AugmentConfig] = None,
    per_digit: bool = False,
    log_fn: Optional[Callable[[str], None]] = None,
) -> tuple[Model, MetricsReport, tuple[int, ...]]:
    """Fine-tune on K target-scene shots per subject; evaluate on the rest.

    ``shots=0`` performs no update, so the report equals the zero-shot
    cross-scene evaluation. All parameters are tuned for ``adapt_epochs``
    epochs with the training augmentation recipe; the final-epoch weights
    are kept (no validation split exists at these sample counts).
    """
    shot_idx, eval_idx = fewshot_split(
        dataset.entries, target_scene, shots, train_cfg.seed, per_digit
    )
    assert not set(shot_idx) & set(eval_idx)
    if shots > 0:
        if augment_cfg is None:
            augment_cfg = AugmentConfig(seed=train_cfg.seed)
        else:
            augment_cfg = replace(augment_cfg, seed=train_cfg.seed)
        label_index = {s: k for k, s in enumerate(model.class_labels)}
        optimizer = Adam(model.trainable_params(), lr=train_cfg.lr)
        step = 0
        for epoch in range(adapt_epochs):
            order_rng = derive_rng(train_cfg.seed, "adapt-order", epoch)
            order = [shot_idx[j] for j in order_rng.permutation(len(shot_idx))]
            for batch in _batches(order, train_cfg.batch_size):
                streams = []
                labels = []
                for i in batch:
                    rng = derive_rng(augment_cfg.seed, "adapt-augment", epoch, i)
                    aug = augment(dataset.streams[i], augment_cfg, rng)
                    streams.append(_encode_ready(aug, model.cfg))
                    labels.append(label_index[dataset.entries[i].subject])
                optimizer.zero_grad()
                l_total, l_ce, l_pcr, _ = model.loss_and_grads(
                    streams, np.asarray(labels), training=True
                )
                optimizer.step()
                step += 1
                if log_fn is not None:
                    log_fn(json.dumps(
                        {"step": step, "epoch": epoch, "l_ce": l_ce,
                         "l_pcr": l_pcr, "l_total": l_total}, sort_keys=True))
    report = evaluate(model, dataset, eval_idx, batch_size=train_cfg.batch_size)
    return model, report, shot_idx
