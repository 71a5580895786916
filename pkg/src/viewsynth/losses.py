"""The five training loss terms and their weighted combination.

All terms operate on (B, C, H, W) tensors, return differentiable scalars,
are non-negative, and vanish on exact-match inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from .warp import WarpResult

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for the five terms of the total loss."""

    alpha: float = 1.0    # multi-scale reconstruction of the novel view
    beta: float = 1.0     # photometric reprojection
    gamma: float = 0.01   # perceptual feature distance
    delta: float = 0.1    # edge-aware smoothness (source + target)
    omega: float = 0.1    # depth consistency between decoding paths

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.delta, self.omega)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LossReport:
    """Scalar tensors for each term plus their weighted total."""

    recon: Tensor
    photo: Tensor
    vgg: Tensor
    smooth_s: Tensor
    smooth_t: Tensor
    skip: Tensor
    total: Tensor

    def as_floats(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


def _upsample(x: Tensor, size) -> Tensor:
    if x.shape[-2:] == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def _downsample(x: Tensor, size) -> Tensor:
    if x.shape[-2:] == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="area")


def recon_loss(pred: list, target: Tensor) -> Tensor:
    """Sum over levels of the mean L1 gap after upsampling to full resolution."""
    if pred[0].shape[-2:] != target.shape[-2:]:
        raise ValueError(f"level 0 is {tuple(pred[0].shape[-2:])}, "
                         f"target is {tuple(target.shape[-2:])}")
    total = target.new_zeros(())
    for level in pred:
        total = total + (_upsample(level, target.shape[-2:]) - target).abs().mean()
    return total


def photometric_loss(reprojected: list, target: Tensor) -> Tensor:
    """Sum over levels of the masked L1 gap against the downsampled target.

    Only pixels the reprojection marked valid contribute; a level with an
    empty mask contributes zero.
    """
    if reprojected[0].warped.shape[-2:] != target.shape[-2:]:
        raise ValueError("level 0 of the reprojection must match the target resolution")
    total = target.new_zeros(())
    for level in reprojected:
        ref = _downsample(target, level.warped.shape[-2:])
        diff = (level.warped - ref).abs() * level.valid
        count = level.valid.sum() * ref.shape[1]
        total = total + diff.sum() / count.clamp(min=1)
    return total


def perceptual_loss(pred: Tensor, target: Tensor, extractor) -> Tensor:
    """Mean L1 distance between frozen extractor features of the two images."""
    if extractor is None:
        raise ValueError("perceptual loss requires a feature extractor")
    total = pred.new_zeros(())
    for fp, ft in zip(extractor(pred), extractor(target)):
        total = total + (fp - ft).abs().mean()
    return total


def smoothness_loss(depth: Tensor, image: Tensor) -> Tensor:
    """Edge-aware first-order smoothness of mean-normalized inverse depth.

    Depth gradients are downweighted by exp(-|image gradient|) so that
    discontinuities co-located with image edges stay cheap.
    """
    if depth.shape[-2:] != image.shape[-2:]:
        raise ValueError("depth and image must share a resolution")
    disp = 1.0 / depth
    norm = disp / (disp.mean(dim=(2, 3), keepdim=True) + 1e-7)
    grad_x = (norm[..., :, 1:] - norm[..., :, :-1]).abs()
    grad_y = (norm[..., 1:, :] - norm[..., :-1, :]).abs()
    img_x = (image[..., :, 1:] - image[..., :, :-1]).abs().mean(1, keepdim=True)
    img_y = (image[..., 1:, :] - image[..., :-1, :]).abs().mean(1, keepdim=True)
    return (grad_x * torch.exp(-img_x)).mean() + (grad_y * torch.exp(-img_y)).mean()


def depth_consistency_loss(depth_from_target: Tensor, depth_from_source: Tensor) -> Tensor:
    """Mean absolute difference between the two full-resolution depth maps."""
    if depth_from_target.shape != depth_from_source.shape:
        raise ValueError("depth maps must share a shape")
    return (depth_from_target - depth_from_source).abs().mean()


def total_loss(recon, photo, vgg, smooth_s, smooth_t, skip,
               weights: LossWeights) -> LossReport:
    """Weighted sum; raises naming the offending term if any part is not finite."""
    parts = {"recon": recon, "photo": photo, "vgg": vgg,
             "smooth_s": smooth_s, "smooth_t": smooth_t, "skip": skip}
    for name, value in parts.items():
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise ValueError(f"loss term '{name}' is not finite")
    total = (weights.alpha * recon + weights.beta * photo + weights.gamma * vgg
             + weights.delta * (smooth_s + smooth_t) + weights.omega * skip)
    return LossReport(recon=recon, photo=photo, vgg=vgg, smooth_s=smooth_s,
                      smooth_t=smooth_t, skip=skip, total=total)


class VGG16Features(nn.Module):
    """Frozen VGG-16 feature extractor: maps after the first three pool stages.

    Needs the torchvision pretrained weights; construction fails where they
    cannot be loaded (e.g. no network access), in which case the perceptual
    term must be disabled via gamma = 0.
    """

    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self):
        super().__init__()
        from torchvision.models import vgg16
        try:
            features = vgg16(weights="IMAGENET1K_V1").features
        except Exception as exc:
            raise RuntimeError(
                "pretrained VGG-16 weights are unavailable; disable the "
                "perceptual term (gamma=0) or provide another extractor") from exc
        self.slice1 = features[:5]     # through pool1
        self.slice2 = features[5:10]   # through pool2
        self.slice3 = features[10:17]  # through pool3
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x):
        mean = x.new_tensor(self.MEAN).view(1, 3, 1, 1)
        std = x.new_tensor(self.STD).view(1, 3, 1, 1)
        x = (x - mean) / std
        f1 = self.slice1(x)
        f2 = self.slice2(f1)
        f3 = self.slice3(f2)
        return [f1, f2, f3]


def resolve_extractor(gamma: float, extractor=None):
    """Pick the perceptual extractor for a training run.

    A provided extractor is used as is. Otherwise the VGG-16 one is built;
    with gamma > 0 an unavailable network is a hard error, with gamma = 0
    the term is simply disabled with a warning.
    """
    if extractor is not None:
        return extractor
    if gamma > 0:
        return VGG16Features()
    log.warning("perceptual term disabled (gamma = 0); no feature extractor loaded")
    return None
