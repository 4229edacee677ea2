"""Training hyperparameters, run logs and the early-stopping rule."""

from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence


class Optimizer(str, enum.Enum):
    SGD = "SGD"
    MINI_BATCH_GD = "MINI_BATCH_GD"  # plain SGD without momentum on mini-batches
    ADAM = "ADAM"


class Loss(str, enum.Enum):
    BCE = "BCE"
    CROSS_ENTROPY = "CROSS_ENTROPY"


class Augment(str, enum.Enum):
    H_FLIP = "H_FLIP"
    RANDOM_CROP = "RANDOM_CROP"
    ROTATION = "ROTATION"


IMPROVEMENT_EPS = 1e-6


def _json_num(value: float):
    # NaN (no validation images) is written as null to keep the file strict JSON
    return None if value != value else value


def _from_json(value) -> float:
    return float("nan") if value is None else value


@dataclass(frozen=True)
class TrainSpec:
    """Hyperparameters of one training run.

    Fields left as ``None`` are filled from the per-model defaults by
    :meth:`resolved`. ``patience=None`` disables early stopping.
    """

    epochs: int | None = None
    batch_size: int | None = None
    optimizer: Optimizer | None = None
    learning_rate: float | None = None
    loss: Loss | None = None
    augmentation: frozenset[Augment] | None = None
    patience: int | None = None
    repetitions: int = 3
    seed: int = 0
    rotation_degrees: float = 10.0
    crop_scale: tuple[float, float] = (0.8, 1.0)
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.optimizer is not None:
            object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.loss is not None:
            object.__setattr__(self, "loss", Loss(self.loss))
        if self.augmentation is not None:
            object.__setattr__(self, "augmentation", frozenset(Augment(a) for a in self.augmentation))
        for name in ("epochs", "batch_size", "repetitions"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience is not None and self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        lo, hi = self.crop_scale
        if not 0.0 < lo <= hi <= 1.0:
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")

    def resolved(self, defaults: "TrainSpec") -> "TrainSpec":
        updates = {f.name: getattr(defaults, f.name) for f in fields(self) if getattr(self, f.name) is None}
        return replace(self, **updates)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value if self.optimizer else None
        d["loss"] = self.loss.value if self.loss else None
        d["augmentation"] = sorted(a.value for a in self.augmentation) if self.augmentation is not None else None
        d["crop_scale"] = list(self.crop_scale)
        return d


CAE_DEFAULTS = TrainSpec(
    epochs=50, batch_size=32, optimizer=Optimizer.ADAM, learning_rate=1.5e-4, loss=Loss.BCE, augmentation=frozenset()
)
CLASSIFIER_DEFAULTS = TrainSpec(
    epochs=100,
    batch_size=32,
    optimizer=Optimizer.MINI_BATCH_GD,
    learning_rate=1e-3,
    loss=Loss.CROSS_ENTROPY,
    augmentation=frozenset(),
)
VIT_DEFAULTS = TrainSpec(
    epochs=100,
    batch_size=16,
    optimizer=Optimizer.ADAM,
    learning_rate=3e-5,
    loss=Loss.CROSS_ENTROPY,
    augmentation=frozenset({Augment.H_FLIP, Augment.RANDOM_CROP}),
)


def early_stop(val_losses: Sequence[float], patience: int) -> bool:
    """True once the last ``patience`` epochs brought no improvement.

    An epoch improves only if its loss is below the best earlier loss by more
    than ``IMPROVEMENT_EPS``; equal values count as no improvement.
    """
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    stale, best = 0, float("inf")
    for loss in val_losses:
        if loss < best - IMPROVEMENT_EPS:
            best, stale = loss, 0
        else:
            stale += 1
    return stale >= patience


@dataclass
class RunLog:
    """Per-epoch losses of one run.

    ``initial_*`` losses are measured before the first update (inference
    mode). Wall-clock timings are excluded from equality and from the JSONL
    file so reruns compare byte-identical.
    """

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float = float("nan")
    checkpoint: str | None = None
    notes: dict = field(default_factory=dict)
    epoch_seconds: list[float] = field(default_factory=list, compare=False)

    @property
    def epochs_completed(self) -> int:
        return len(self.train_loss)

    def jsonl_lines(self) -> list[str]:
        head = {
            "epoch": 0,
            "train_loss": _json_num(self.initial_train_loss),
            "val_loss": _json_num(self.initial_val_loss),
            "checkpoint": self.checkpoint,
            "notes": self.notes,
        }
        lines = [json.dumps(head, sort_keys=True)]
        for i, (t, v) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            lines.append(json.dumps({"epoch": i, "train_loss": _json_num(t), "val_loss": _json_num(v)}, sort_keys=True))
        return lines

    def write(self, path) -> None:
        """JSON Lines (epoch 0 = pre-training losses) plus a ``.timing.json`` sidecar."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("".join(line + "\n" for line in self.jsonl_lines()))
        os.replace(tmp, path)
        path.with_suffix(".timing.json").write_text(json.dumps({"epoch_seconds": self.epoch_seconds}) + "\n")

    @classmethod
    def read(cls, path) -> "RunLog":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        head, epochs = rows[0], rows[1:]
        log = cls(
            train_loss=[_from_json(r["train_loss"]) for r in epochs],
            val_loss=[_from_json(r["val_loss"]) for r in epochs],
            initial_train_loss=_from_json(head["train_loss"]),
            initial_val_loss=_from_json(head["val_loss"]),
            checkpoint=head.get("checkpoint"),
            notes=head.get("notes", {}),
        )
        timing = Path(path).with_suffix(".timing.json")
        if timing.exists():
            log.epoch_seconds = json.loads(timing.read_text())["epoch_seconds"]
        return log
