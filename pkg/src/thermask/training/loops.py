"""Training loops for the autoencoder, the encoder classifier and the ViT.

Every loop follows the same protocol:

* the TRAIN subset (or every image when no split is set) is divided into a
  fit part and a validation part of ``spec.val_fraction``;
* losses are measured in inference mode before the first update (epoch 0) and
  after every epoch, on both parts, so all logged values are comparable;
* shuffling, augmentation and dropout draw from generators seeded by
  ``spec.seed``, so identical inputs give identical logs.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from thermask.dataset import MaskClass, Split
from thermask.evalkit import ClassificationReport, classification_report
from thermask.models import (
    CAEConfig,
    Checkpoint,
    ClassifierConfig,
    ViTConfig,
    build_cae,
    build_classifier_from_encoder,
    build_vit,
    checkpoint_from_model,
    checkpoint_id,
    load_checkpoint,
    save_checkpoint,
)
from thermask.training.data import ImageSet, augment_batch
from thermask.training.spec import (
    CAE_DEFAULTS,
    CLASSIFIER_DEFAULTS,
    VIT_DEFAULTS,
    Loss,
    Optimizer,
    RunLog,
    TrainSpec,
    early_stop,
)

log = logging.getLogger(__name__)

EVAL_BATCH = 64
MINI_BATCH_NOTE = "MINI_BATCH_GD is plain SGD with momentum 0 on shuffled mini-batches"


def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded (fit, validation) index partition of ``range(n)``.

    At least one image stays in the fit part; the validation part is empty
    when ``fraction`` is 0 or ``n`` is 1.
    """
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(int(np.floor(fraction * n + 0.5)), n - 1) if fraction > 0 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def make_optimizer(spec: TrainSpec, params) -> torch.optim.Optimizer:
    if spec.optimizer == Optimizer.ADAM:
        return torch.optim.Adam(params, lr=spec.learning_rate)
    # SGD and MINI_BATCH_GD differ only in how they are reported
    return torch.optim.SGD(params, lr=spec.learning_rate, momentum=0.0)


def _loss_fn(loss: Loss):
    if loss == Loss.BCE:
        return lambda out, x, _y: F.binary_cross_entropy(out, x)
    return lambda out, _x, y: F.cross_entropy(out, y)


@torch.no_grad()
def evaluate_loss(model: nn.Module, data: ImageSet, loss: Loss, idx=None) -> float:
    """Mean loss over ``data`` (optionally restricted to ``idx``) in inference mode."""
    idx = np.arange(len(data)) if idx is None else np.asarray(idx)
    if len(idx) == 0:
        return float("nan")
    fn = _loss_fn(loss)
    was_training = model.training
    model.eval()
    total = 0.0
    try:
        for start in range(0, len(idx), EVAL_BATCH):
            chunk = idx[start : start + EVAL_BATCH]
            x = data.tensor(chunk)
            y = torch.from_numpy(data.labels[chunk])
            total += float(fn(model(x), x, y)) * len(chunk)
    finally:
        model.train(was_training)
    return total / len(idx)


def _train_indices(data: ImageSet) -> np.ndarray:
    idx = data.indices(Split.TRAIN)
    if len(idx) == 0:
        raise ValueError("no training images")
    return idx


def _fit(
    model: nn.Module,
    data: ImageSet,
    spec: TrainSpec,
    params,
    frozen: nn.Module | None = None,
    notes: dict | None = None,
) -> RunLog:
    train_idx = _train_indices(data)
    fit_local, val_local = split_validation(len(train_idx), spec.val_fraction, spec.seed)
    fit_idx, val_idx = train_idx[fit_local], train_idx[val_local]

    torch.manual_seed(spec.seed)
    gen = torch.Generator().manual_seed(spec.seed)
    fn = _loss_fn(spec.loss)
    opt = make_optimizer(spec, params)
    runlog = RunLog(notes=dict(notes or {}))
    runlog.notes.update({"n_fit": int(len(fit_idx)), "n_val": int(len(val_idx))})
    if spec.optimizer == Optimizer.MINI_BATCH_GD:
        runlog.notes["optimizer"] = MINI_BATCH_NOTE
    runlog.initial_train_loss = evaluate_loss(model, data, spec.loss, fit_idx)
    runlog.initial_val_loss = evaluate_loss(model, data, spec.loss, val_idx)

    for epoch in range(spec.epochs):
        started = time.perf_counter()
        model.train()
        if frozen is not None:
            frozen.eval()
        perm = fit_idx[torch.randperm(len(fit_idx), generator=gen).numpy()]
        for start in range(0, len(perm), spec.batch_size):
            chunk = perm[start : start + spec.batch_size]
            x = augment_batch(data.tensor(chunk), spec, gen)
            y = torch.from_numpy(data.labels[chunk])
            opt.zero_grad()
            loss = fn(model(x), x, y)
            loss.backward()
            opt.step()
        runlog.train_loss.append(evaluate_loss(model, data, spec.loss, fit_idx))
        runlog.val_loss.append(evaluate_loss(model, data, spec.loss, val_idx))
        runlog.epoch_seconds.append(time.perf_counter() - started)
        log.info("epoch %d/%d train %.5f val %.5f", epoch + 1, spec.epochs, runlog.train_loss[-1], runlog.val_loss[-1])
        if spec.patience is not None:
            monitored = runlog.val_loss if len(val_idx) else runlog.train_loss
            if early_stop(monitored, spec.patience):
                runlog.notes["early_stopped_at"] = epoch + 1
                break
    model.eval()
    return runlog


def _finish(model: nn.Module, runlog: RunLog, spec: TrainSpec, checkpoint_path, metadata: dict) -> Checkpoint:
    meta = {
        **metadata,
        "spec": spec.to_dict(),
        "epochs_completed": runlog.epochs_completed,
        "final_train_loss": runlog.train_loss[-1] if runlog.train_loss else runlog.initial_train_loss,
    }
    ckpt = checkpoint_from_model(model, meta)
    if checkpoint_path is not None:
        save_checkpoint(ckpt, checkpoint_path)
        runlog.checkpoint = checkpoint_id(checkpoint_path)
    return ckpt


def _require_data(data: ImageSet) -> None:
    if len(data) == 0:
        raise ValueError("dataset is empty")


def train_cae(
    data: ImageSet,
    spec: TrainSpec | None = None,
    config: CAEConfig | None = None,
    checkpoint_path=None,
) -> tuple[Checkpoint, RunLog]:
    """Reconstruction training; labels are ignored."""
    _require_data(data)
    spec = (spec or TrainSpec()).resolved(CAE_DEFAULTS)
    if spec.loss != Loss.BCE:
        raise ValueError(f"the autoencoder is trained with BCE, got {spec.loss.value}")
    config = config or CAEConfig(input_size=data.images.shape[-1])
    model = build_cae(config, seed=spec.seed)
    runlog = _fit(model, data, spec, model.parameters())
    return _finish(model, runlog, spec, checkpoint_path, {}), runlog


def train_classifier(
    cae_checkpoint,
    data: ImageSet,
    spec: TrainSpec | None = None,
    config: ClassifierConfig | None = None,
    freeze_encoder: bool = False,
    checkpoint_path=None,
) -> tuple[Checkpoint, RunLog]:
    """Fine-tune a classifier whose encoder starts from ``cae_checkpoint``.

    ``cae_checkpoint`` may be a path, a Checkpoint or a ConvAutoencoder. With
    ``freeze_encoder`` the encoder gets no gradient and keeps its batch-norm
    statistics.
    """
    _require_data(data)
    train_idx = _train_indices(data)
    if np.any(data.labels[train_idx] < 0):
        raise ValueError("every training image needs a mask-class label")
    spec = (spec or TrainSpec()).resolved(CLASSIFIER_DEFAULTS)
    if spec.loss != Loss.CROSS_ENTROPY:
        raise ValueError(f"the classifier is trained with CROSS_ENTROPY, got {spec.loss.value}")
    config = config or ClassifierConfig(seed=spec.seed)
    source_id = None
    if isinstance(cae_checkpoint, (str, Path)):
        source_id = checkpoint_id(cae_checkpoint)
        cae_checkpoint = load_checkpoint(cae_checkpoint)
    model = build_classifier_from_encoder(cae_checkpoint, config)
    notes = {"encoder_init": config.encoder_init}
    if config.encoder_init == "RANDOM":
        notes["ablation"] = "encoder left at random initialisation"
    if freeze_encoder:
        for p in model.encoder.parameters():
            p.requires_grad_(False)
        notes["frozen_encoder"] = True
    params = [p for p in model.parameters() if p.requires_grad]
    runlog = _fit(model, data, spec, params, frozen=model.encoder if freeze_encoder else None, notes=notes)
    meta = {"cae_checkpoint": source_id, "encoder_init": config.encoder_init, "frozen_encoder": freeze_encoder}
    return _finish(model, runlog, spec, checkpoint_path, meta), runlog


def train_vit(
    data: ImageSet,
    spec: TrainSpec | None = None,
    config: ViTConfig | None = None,
    checkpoint_path=None,
) -> tuple[Checkpoint, RunLog]:
    _require_data(data)
    train_idx = _train_indices(data)
    if np.any(data.labels[train_idx] < 0):
        raise ValueError("every training image needs a mask-class label")
    spec = (spec or TrainSpec()).resolved(VIT_DEFAULTS)
    if spec.loss != Loss.CROSS_ENTROPY:
        raise ValueError(f"the ViT is trained with CROSS_ENTROPY, got {spec.loss.value}")
    side = data.images.shape[-1]
    config = config or ViTConfig(image_size=side)
    if side % config.patch_size or data.images.shape[-2] % config.patch_size:
        raise ValueError(f"image size {data.images.shape[-2:]} not divisible by patch size {config.patch_size}")
    model = build_vit(config, seed=spec.seed)
    runlog = _fit(model, data, spec, model.parameters())
    return _finish(model, runlog, spec, checkpoint_path, {}), runlog


@torch.no_grad()
def predict_classes(model: nn.Module, data: ImageSet, idx=None) -> np.ndarray:
    idx = np.arange(len(data)) if idx is None else np.asarray(idx)
    model.eval()
    out = [model(data.tensor(idx[s : s + EVAL_BATCH])).argmax(dim=1).numpy() for s in range(0, len(idx), EVAL_BATCH)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate_classifier(model: nn.Module | Checkpoint, data: ImageSet, split: Split | None = Split.TEST) -> ClassificationReport:
    """Confusion matrix and per-class scores on ``split`` (all images when None)."""
    if isinstance(model, Checkpoint):
        model = model.to_model()
    if not hasattr(model, "predict_proba"):
        raise TypeError(f"expected a classifier model, got {type(model).__name__}")
    idx = data.indices(split)
    if len(idx) == 0:
        raise ValueError(f"no images in the {split.value if split else 'selected'} subset")
    if np.any(data.labels[idx] < 0):
        raise ValueError("evaluation images need mask-class labels")
    pred = predict_classes(model, data, idx)
    return classification_report([MaskClass(int(v)) for v in data.labels[idx]], [MaskClass(int(v)) for v in pred])
