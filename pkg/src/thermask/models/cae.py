"""Convolutional autoencoder and the encoder-based mask-type classifier."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import torch
from torch import nn

N_CLASSES = 3


@dataclass(frozen=True)
class CAEConfig:
    input_size: int = 128
    in_channels: int = 1
    ladder: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 3
    stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "ladder", tuple(int(c) for c in self.ladder))
        if not self.ladder or any(c <= 0 for c in self.ladder):
            raise ValueError(f"ladder must be a nonempty list of positive channel counts, got {self.ladder}")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        factor = self.stride ** len(self.ladder)
        if self.input_size % factor:
            raise ValueError(f"input size {self.input_size} is not divisible by total downsampling {factor}")

    @property
    def latent_size(self) -> int:
        return self.input_size // self.stride ** len(self.ladder)

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.ladder[-1], self.latent_size, self.latent_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ladder"] = list(self.ladder)
        return d


@dataclass(frozen=True)
class ClassifierConfig:
    dense: tuple[int, ...] = (256, 128)
    n_classes: int = N_CLASSES
    encoder_init: str = "FROM_CAE"  # or "RANDOM"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dense", tuple(int(d) for d in self.dense))
        if self.n_classes != N_CLASSES:
            raise ValueError(f"n_classes must be {N_CLASSES}, got {self.n_classes}")
        if self.encoder_init not in ("FROM_CAE", "RANDOM"):
            raise ValueError(f"encoder_init must be FROM_CAE or RANDOM, got {self.encoder_init!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dense"] = list(self.dense)
        return d


def _encoder(config: CAEConfig) -> nn.Sequential:
    layers, c_in, pad = [], config.in_channels, config.kernel_size // 2
    for c_out in config.ladder:
        layers += [
            nn.Conv2d(c_in, c_out, config.kernel_size, stride=config.stride, padding=pad),
            nn.BatchNorm2d(c_out),
            nn.ReLU(inplace=True),
        ]
        c_in = c_out
    return nn.Sequential(*layers)


def _decoder(config: CAEConfig) -> nn.Sequential:
    # mirror of the encoder; the final transposed conv has no batch norm
    pad = config.kernel_size // 2
    out_pad = config.stride - 1
    chans = list(reversed(config.ladder)) + [config.in_channels]
    layers = []
    for i, (c_in, c_out) in enumerate(zip(chans[:-1], chans[1:])):
        layers.append(nn.ConvTranspose2d(c_in, c_out, config.kernel_size, stride=config.stride, padding=pad, output_padding=out_pad))
        if i < len(chans) - 2:
            layers += [nn.BatchNorm2d(c_out), nn.ReLU(inplace=True)]
    layers.append(nn.Sigmoid())
    return nn.Sequential(*layers)


class ConvAutoencoder(nn.Module):
    kind = "cae"

    def __init__(self, config: CAEConfig):
        super().__init__()
        self.config = config
        self.encoder = _encoder(config)
        self.decoder = _decoder(config)

    def check_input(self, x: torch.Tensor) -> None:
        c = self.config
        expected = (c.in_channels, c.input_size, c.input_size)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(f"expected input of shape (N, {', '.join(map(str, expected))}), got {tuple(x.shape)}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.decoder(self.encoder(x))

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.encoder(x)

    def config_dict(self) -> dict:
        return self.config.to_dict()


def build_cae(config: CAEConfig | None = None, seed: int | None = None) -> ConvAutoencoder:
    if seed is not None:
        torch.manual_seed(seed)
    return ConvAutoencoder(config or CAEConfig())


@torch.no_grad()
def encode(model: ConvAutoencoder, batch: torch.Tensor) -> torch.Tensor:
    """Latent tensor in inference mode (batch-norm running statistics)."""
    was_training = model.training
    model.eval()
    try:
        return model.encode(batch)
    finally:
        model.train(was_training)


class EncoderClassifier(nn.Module):
    """CAE encoder followed by flatten -> dense 256 -> dense 128 -> 3 logits."""

    kind = "classifier"

    def __init__(self, cae_config: CAEConfig, config: ClassifierConfig):
        super().__init__()
        self.cae_config = cae_config
        self.config = config
        self.encoder = _encoder(cae_config)
        width = cae_config.ladder[-1] * cae_config.latent_size**2
        layers: list[nn.Module] = [nn.Flatten()]
        for d in config.dense:
            layers += [nn.Linear(width, d), nn.ReLU(inplace=True)]
            width = d
        layers.append(nn.Linear(width, config.n_classes))
        self.head = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = self.cae_config
        if x.dim() != 4 or tuple(x.shape[1:]) != (c.in_channels, c.input_size, c.input_size):
            raise ValueError(f"expected input of shape (N, {c.in_channels}, {c.input_size}, {c.input_size}), got {tuple(x.shape)}")
        return self.head(self.encoder(x))

    @torch.no_grad()
    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(x), dim=1)

    def backbone_parameters(self):
        return self.encoder.parameters()

    def config_dict(self) -> dict:
        return {"cae": self.cae_config.to_dict(), "classifier": self.config.to_dict()}


def build_classifier(cae_config: CAEConfig, config: ClassifierConfig) -> EncoderClassifier:
    torch.manual_seed(config.seed)
    return EncoderClassifier(cae_config, config)


def build_classifier_from_encoder(cae_checkpoint, config: ClassifierConfig | None = None) -> EncoderClassifier:
    """New classifier whose encoder is an exact copy of the checkpoint's encoder.

    The dense head is freshly initialised from ``config.seed``. With
    ``encoder_init="RANDOM"`` the encoder weights are left at their random
    initialisation instead (ablation).
    """
    from thermask.models.checkpoint import Checkpoint

    config = config or ClassifierConfig()
    if isinstance(cae_checkpoint, ConvAutoencoder):
        cae_model = cae_checkpoint
    elif isinstance(cae_checkpoint, Checkpoint):
        if cae_checkpoint.kind != ConvAutoencoder.kind:
            raise ValueError(f"expected a '{ConvAutoencoder.kind}' checkpoint, got '{cae_checkpoint.kind}'")
        cae_model = cae_checkpoint.to_model()
    else:
        raise TypeError(f"expected a CAE checkpoint or model, got {type(cae_checkpoint).__name__}")

    model = build_classifier(cae_model.config, config)
    if config.encoder_init == "FROM_CAE":
        model.encoder.load_state_dict(copy.deepcopy(cae_model.encoder.state_dict()))
    return model
