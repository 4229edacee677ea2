from thermask.models.cae import (
    CAEConfig,
    ClassifierConfig,
    ConvAutoencoder,
    EncoderClassifier,
    build_cae,
    build_classifier,
    build_classifier_from_encoder,
    encode,
)
from thermask.models.checkpoint import (
    Checkpoint,
    CheckpointError,
    checkpoint_from_model,
    checkpoint_id,
    load_checkpoint,
    save_checkpoint,
)
from thermask.models.vit import SPTViT, ViTConfig, build_vit, count_parameters, spt_tokenize

__all__ = [
    "CAEConfig",
    "Checkpoint",
    "CheckpointError",
    "ClassifierConfig",
    "ConvAutoencoder",
    "EncoderClassifier",
    "SPTViT",
    "ViTConfig",
    "build_cae",
    "build_classifier",
    "build_classifier_from_encoder",
    "build_vit",
    "checkpoint_from_model",
    "checkpoint_id",
    "count_parameters",
    "encode",
    "load_checkpoint",
    "save_checkpoint",
    "spt_tokenize",
]
