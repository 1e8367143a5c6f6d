"""Image encoder: residual backbone plus projection head with a swappable output layer.

The backbone maps a batch of images to a 512-dimensional representation h;
the projection head (512 -> 1024 -> out_dim) yields the loss-bearing output
z. Downstream feature consumers read h through ``representations``. Two
backbone variants exist:

* ``small_input``: first convolution reduced to 3x3 stride 1 and the initial
  max-pool removed, for 28x28-class inputs.
* ``standard``: the unmodified residual-18 layout without its classification
  layer, for 96x96-class inputs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import torch
import torchvision
from torch import nn

BackboneVariant = Literal["small_input", "standard"]
BACKBONE_VARIANTS = ("small_input", "standard")

FEATURE_DIM = 512
HIDDEN_DIM = 1024


class EncoderModel(nn.Module):
    """Backbone producing h (B x 512) plus projector producing z (B x out_dim)."""

    def __init__(self, variant: BackboneVariant, out_dim: int):
        super().__init__()
        if variant not in BACKBONE_VARIANTS:
            raise ValueError(f"unknown backbone variant {variant!r}")
        if out_dim < 1:
            raise ValueError(f"out_dim must be >= 1, got {out_dim}")
        self.variant = variant
        self.out_dim = out_dim
        backbone = torchvision.models.resnet18(weights=None)
        if variant == "small_input":
            backbone.conv1 = nn.Conv2d(3, 64, kernel_size=3, stride=1, padding=1, bias=False)
            backbone.maxpool = nn.Identity()
        backbone.fc = nn.Identity()
        self.backbone = backbone
        self.projector = nn.Sequential(
            nn.Linear(FEATURE_DIM, HIDDEN_DIM),
            nn.ReLU(inplace=True),
            nn.Linear(HIDDEN_DIM, out_dim),
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.backbone(x)
        z = self.projector(h)
        return h, z

    def representations(self, x: torch.Tensor) -> torch.Tensor:
        """The backbone output h, the layer consumed by feature-space baselines."""
        return self.backbone(x)

    @property
    def output_layer(self) -> nn.Linear:
        return self.projector[-1]


def build_model(variant: BackboneVariant, out_dim: int, init_seed: int = 0) -> EncoderModel:
    """Construct an encoder with deterministic initialization given the seed."""
    with torch.random.fork_rng():
        torch.manual_seed(init_seed)
        model = EncoderModel(variant, out_dim)
    return model


def swap_output_layer(model: EncoderModel, new_out_dim: int, init_seed: int = 0) -> EncoderModel:
    """Replace only the final projector layer with a freshly initialized one.

    All other parameters (backbone and hidden layer) are preserved bit-exactly.
    """
    if new_out_dim < 1:
        raise ValueError(f"new_out_dim must be >= 1, got {new_out_dim}")
    with torch.random.fork_rng():
        torch.manual_seed(init_seed)
        model.projector[-1] = nn.Linear(HIDDEN_DIM, new_out_dim)
    model.out_dim = new_out_dim
    return model


def freeze_backbone(model: EncoderModel, frozen: bool) -> EncoderModel:
    """Disable (or re-enable) gradient flow to the backbone. Idempotent."""
    for p in model.backbone.parameters():
        p.requires_grad_(not frozen)
    return model


def save_checkpoint(model: EncoderModel, path: str | Path, stage: int | None = None,
                    extra: dict | None = None) -> Path:
    """Write named parameter tensors plus config and stage tag; round-trips bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "variant": model.variant,
            "out_dim": model.out_dim,
            "state_dict": model.state_dict(),
            "stage": stage,
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> tuple[EncoderModel, dict]:
    """Rebuild the model from a checkpoint; returns (model, metadata)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint does not exist: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = EncoderModel(payload["variant"], payload["out_dim"])
    model.load_state_dict(payload["state_dict"])
    meta = {"stage": payload.get("stage"), "extra": payload.get("extra", {})}
    return model, meta
