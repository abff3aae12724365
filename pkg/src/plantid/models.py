"""Model construction: a compact scratch CNN and five adapted backbones.

Backbone internals come from torchvision and are consumed together with
their published ImageNet weight artifacts; only the classification head
is replaced (a fresh linear layer sized to the target class count) and
the whole network stays trainable. The scratch CNN is defined here.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn
import torchvision.models as tvm

from .errors import DataError, WeightsUnavailableError

WEIGHTS_DIR_ENV = "PLANTID_WEIGHTS_DIR"

SCRATCH = "scratch"
ARCHITECTURES = ("scratch", "resnet34", "densenet121", "vgg11_bn", "convnext_base", "swin_t")

_CONSTRUCTORS = {
    "resnet34": tvm.resnet34,
    "densenet121": tvm.densenet121,
    "vgg11_bn": tvm.vgg11_bn,
    "convnext_base": tvm.convnext_base,
    "swin_t": tvm.swin_t,
}

_WEIGHTS = {
    "resnet34": tvm.ResNet34_Weights.IMAGENET1K_V1,
    "densenet121": tvm.DenseNet121_Weights.IMAGENET1K_V1,
    "vgg11_bn": tvm.VGG11_BN_Weights.IMAGENET1K_V1,
    "convnext_base": tvm.ConvNeXt_Base_Weights.IMAGENET1K_V1,
    "swin_t": tvm.Swin_T_Weights.IMAGENET1K_V1,
}

# Dotted attribute path of the final classification layer per backbone.
_HEAD_ATTR = {
    "resnet34": "fc",
    "densenet121": "classifier",
    "vgg11_bn": "classifier.6",
    "convnext_base": "classifier.2",
    "swin_t": "head",
}


def default_resolution(architecture: str) -> int:
    """Input side length each architecture is run at (224 for swin_t)."""
    return 224 if architecture == "swin_t" else 128


@dataclass(frozen=True)
class ModelSpec:
    """Which network to build and at which resolution."""

    architecture: str
    num_classes: int
    pretrained: bool = False
    input_resolution: Optional[int] = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}"
            )
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.architecture == SCRATCH and self.pretrained:
            raise ValueError("the scratch model has no pretrained weights")
        expected = default_resolution(self.architecture)
        if self.input_resolution is None:
            object.__setattr__(self, "input_resolution", expected)
        elif self.input_resolution != expected:
            raise ValueError(
                f"{self.architecture} runs at {expected}x{expected}, "
                f"got {self.input_resolution}"
            )


class ScratchCNN(nn.Module):
    """Three conv stages (32/64/128 channels, 3x3 kernels, same padding),
    each followed by a 2x2 max pool; flatten; 512-unit hidden linear layer
    with ReLU; linear output layer."""

    HIDDEN_WIDTH = 512

    def __init__(self, num_classes: int, input_resolution: int = 128):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 32, kernel_size=3, padding=1),
            nn.MaxPool2d(2),
            nn.Conv2d(32, 64, kernel_size=3, padding=1),
            nn.MaxPool2d(2),
            nn.Conv2d(64, 128, kernel_size=3, padding=1),
            nn.MaxPool2d(2),
        )
        side = input_resolution // 2 // 2 // 2
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(128 * side * side, self.HIDDEN_WIDTH),
            nn.ReLU(),
            nn.Linear(self.HIDDEN_WIDTH, num_classes),
        )

    def forward(self, x):
        return self.classifier(self.features(x))


class ImageClassifier(nn.Module):
    """A network plus the spec it was built from; enforces the input
    contract (B, 3, R, R) on every forward pass."""

    def __init__(self, net: nn.Module, spec: ModelSpec, seed: int):
        super().__init__()
        self.net = net
        self.spec = spec
        self.seed = seed

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        r = self.spec.input_resolution
        if batch.ndim != 4 or batch.shape[1] != 3 or batch.shape[2] != r or batch.shape[3] != r:
            raise DataError(
                f"expected batch of shape (B, 3, {r}, {r}), got {tuple(batch.shape)}"
            )
        return self.net(batch)


def _get_attr_path(module: nn.Module, path: str) -> nn.Module:
    node = module
    for part in path.split("."):
        node = node[int(part)] if part.isdigit() else getattr(node, part)
    return node


def _set_attr_path(module: nn.Module, path: str, value: nn.Module) -> None:
    parts = path.split(".")
    parent = _get_attr_path(module, ".".join(parts[:-1])) if len(parts) > 1 else module
    if parts[-1].isdigit():
        parent[int(parts[-1])] = value
    else:
        setattr(parent, parts[-1], value)


def head_parameter_prefix(architecture: str) -> str:
    """state_dict key prefix of the replaceable classification head."""
    return _HEAD_ATTR[architecture] + "."


def _replace_head(net: nn.Module, architecture: str, num_classes: int) -> None:
    path = _HEAD_ATTR[architecture]
    old = _get_attr_path(net, path)
    _set_attr_path(net, path, nn.Linear(old.in_features, num_classes))


# Upstream DenseNet artifacts use legacy '.norm.1' style keys.
_DENSENET_KEY_PATTERN = re.compile(
    r"^(.*denselayer\d+\.(?:norm|relu|conv))\.((?:[12])\.(?:weight|bias|running_mean|running_var))$"
)


def _fix_densenet_keys(state: dict) -> dict:
    fixed = {}
    for key, value in state.items():
        m = _DENSENET_KEY_PATTERN.match(key)
        fixed[m.group(1) + m.group(2) if m else key] = value
    return fixed


def load_backbone_state(architecture: str, weights_file: Optional[Path | str] = None) -> dict:
    """Resolve a backbone's published weight artifact to a state dict.

    Resolution order: explicit ``weights_file``, then the torch hub cache
    (relocatable via the PLANTID_WEIGHTS_DIR environment variable), then a
    download. Raises WeightsUnavailableError with fetch instructions when
    none of those work.
    """
    if architecture not in _WEIGHTS:
        raise DataError(f"no published weights for architecture {architecture!r}")
    if weights_file is not None:
        try:
            state = torch.load(weights_file, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise DataError(f"cannot load weights file {weights_file}: {exc}") from exc
    else:
        weights_dir = os.environ.get(WEIGHTS_DIR_ENV)
        if weights_dir:
            torch.hub.set_dir(weights_dir)
        enum = _WEIGHTS[architecture]
        try:
            state = enum.get_state_dict(progress=False, check_hash=True)
        except Exception as exc:
            cache = Path(torch.hub.get_dir()) / "checkpoints"
            raise WeightsUnavailableError(
                f"weights for {architecture} are not cached and could not be "
                f"downloaded ({exc}). Fetch {enum.url} and place it under "
                f"{cache}/, or point {WEIGHTS_DIR_ENV} at a directory whose "
                f"checkpoints/ subdirectory holds it."
            ) from exc
    if architecture == "densenet121":
        state = _fix_densenet_keys(dict(state))
    return state


def _construct_net(spec: ModelSpec) -> nn.Module:
    """Randomly initialized network with the spec's shapes (no weight I/O)."""
    if spec.architecture == SCRATCH:
        return ScratchCNN(spec.num_classes, spec.input_resolution)
    net = _CONSTRUCTORS[spec.architecture](weights=None)
    _replace_head(net, spec.architecture, spec.num_classes)
    return net


def build_model(
    spec: ModelSpec, seed: int, weights_file: Optional[Path | str] = None
) -> ImageClassifier:
    """Build the network for ``spec`` with seeded initialization.

    For pretrained specs, every parameter except the freshly initialized
    head comes from the published artifact; the whole network remains
    trainable. Building twice with the same spec and seed yields
    bit-identical initial parameters.
    """
    torch.manual_seed(seed)
    if spec.pretrained:
        state = load_backbone_state(spec.architecture, weights_file)
        net = _CONSTRUCTORS[spec.architecture](weights=None)
        try:
            net.load_state_dict(state)
        except RuntimeError as exc:
            raise DataError(
                f"weight artifact does not match {spec.architecture}: {exc}"
            ) from exc
        _replace_head(net, spec.architecture, spec.num_classes)
    else:
        net = _construct_net(spec)
    return ImageClassifier(net, spec, seed)


def parameter_count(model: nn.Module) -> int:
    """Total trainable scalar parameters."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(model: ImageClassifier, path: Path | str, epoch: int, **extra) -> Path:
    path = Path(path)
    payload = {
        "architecture": model.spec.architecture,
        "num_classes": model.spec.num_classes,
        "pretrained": model.spec.pretrained,
        "input_resolution": model.spec.input_resolution,
        "seed": model.seed,
        "epoch": epoch,
        "extra": extra,
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: Path | str) -> tuple[ImageClassifier, dict]:
    """Rebuild a model from a checkpoint (no weight-artifact access needed)."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        spec = ModelSpec(
            architecture=payload["architecture"],
            num_classes=payload["num_classes"],
            pretrained=payload["pretrained"],
            input_resolution=payload["input_resolution"],
        )
    except (OSError, KeyError, ValueError, RuntimeError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from exc
    torch.manual_seed(payload["seed"])
    model = ImageClassifier(_construct_net(spec), spec, payload["seed"])
    model.load_state_dict(payload["state_dict"])
    meta = {"epoch": payload["epoch"], **payload.get("extra", {})}
    return model, meta
