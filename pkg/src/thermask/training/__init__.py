from thermask.training.baseline import BaselineAdapter, BaselineParams, baseline_detect
from thermask.training.data import ImageSet, augment_batch, crop_faces, full_frames
from thermask.training.loops import evaluate_classifier, evaluate_loss, predict_classes, train_cae, train_classifier, train_vit
from thermask.training.scenario import (
    ADAPTERS,
    DetectorAdapter,
    ScenarioError,
    ScenarioResult,
    TrainingScenario,
    make_adapter,
    pretrain_baseline,
    run_scenario,
)
from thermask.training.spec import (
    CAE_DEFAULTS,
    CLASSIFIER_DEFAULTS,
    VIT_DEFAULTS,
    Augment,
    Loss,
    Optimizer,
    RunLog,
    TrainSpec,
    early_stop,
)

__all__ = [
    "ADAPTERS",
    "Augment",
    "BaselineAdapter",
    "BaselineParams",
    "CAE_DEFAULTS",
    "CLASSIFIER_DEFAULTS",
    "DetectorAdapter",
    "ImageSet",
    "Loss",
    "Optimizer",
    "RunLog",
    "ScenarioError",
    "ScenarioResult",
    "TrainSpec",
    "TrainingScenario",
    "VIT_DEFAULTS",
    "augment_batch",
    "baseline_detect",
    "crop_faces",
    "early_stop",
    "evaluate_classifier",
    "evaluate_loss",
    "full_frames",
    "make_adapter",
    "predict_classes",
    "pretrain_baseline",
    "run_scenario",
    "train_cae",
    "train_classifier",
    "train_vit",
]
