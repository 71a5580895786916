"""Learned components: feature encoder, shared depth decoder, view decoder.

The encoder is built from ResNet-18 convolutional blocks with the final
pooling stage replaced by a fully connected layer that produces a compact
embedding, reshaped to N x 3 latent points. Both decoders follow a U-Net
style layout: five upsampling stages with per-level skip concatenation and
per-level output heads. One DepthDecoder instance serves both the source
and the target view; weight sharing is a hard contract, not a convention.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor
from torchvision.models import resnet18

from .warp import WarpResult

CHECKPOINT_FORMAT = "viewsynth.checkpoint/1"

# encoder feature channels at {1/2, 1/4, 1/8, 1/16, 1/32} of the input
ENCODER_CHANNELS = (64, 64, 128, 256, 512)


@dataclass(frozen=True)
class ModelConfig:
    embedding_width: int = 1536      # latent size, reshaped to (width/3) x 3 points
    d_min: float = 0.1
    d_max: float = 100.0
    input_size: int = 256            # images are resized to this square size
    decoder_channels: tuple = (256, 128, 64, 32, 16)   # coarse to fine
    pretrained_encoder: bool = False

    def __post_init__(self):
        if self.embedding_width % 3 != 0 or self.embedding_width <= 0:
            raise ValueError("embedding_width must be a positive multiple of 3")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")
        if self.input_size % 32 != 0 or self.input_size < 32:
            raise ValueError("input_size must be a positive multiple of 32")
        if len(self.decoder_channels) != 5:
            raise ValueError("decoder_channels must list 5 stage widths")

    @property
    def num_points(self) -> int:
        return self.embedding_width // 3


@dataclass
class EncoderOutput:
    z: Tensor                 # (B, N, 3) latent points
    features: list            # 5 maps at {1/2 .. 1/32} of the input size


def sigmoid_to_depth(sig: Tensor, d_min: float, d_max: float) -> Tensor:
    """Map raw decoder output in (0,1) to depth in [d_min, d_max].

    depth = 1 / (sig * (1/d_min - 1/d_max) + 1/d_max): monotone decreasing in
    sig and range-exact at sig in {0, 1}.
    """
    return 1.0 / (sig * (1.0 / d_min - 1.0 / d_max) + 1.0 / d_max)


class Encoder(nn.Module):
    """ResNet-18 blocks plus an FC head that emits the flat latent embedding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        weights = "IMAGENET1K_V1" if config.pretrained_encoder else None
        net = resnet18(weights=weights)
        self.conv1, self.bn1, self.relu = net.conv1, net.bn1, net.relu
        self.maxpool = net.maxpool
        self.layer1, self.layer2 = net.layer1, net.layer2
        self.layer3, self.layer4 = net.layer3, net.layer4
        bottleneck = config.input_size // 32
        self.fc = nn.Linear(512 * bottleneck * bottleneck, config.embedding_width)

    def forward(self, image: Tensor) -> EncoderOutput:
        s = self.config.input_size
        if image.shape[-2:] != (s, s):
            image = F.interpolate(image, size=(s, s), mode="bilinear", align_corners=False)
        f1 = self.relu(self.bn1(self.conv1(image)))
        f2 = self.layer1(self.maxpool(f1))
        f3 = self.layer2(f2)
        f4 = self.layer3(f3)
        f5 = self.layer4(f4)
        z = self.fc(f5.flatten(1)).reshape(image.shape[0], -1, 3)
        return EncoderOutput(z=z, features=[f1, f2, f3, f4, f5])


class _ConvBlock(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.act = nn.ELU()

    def forward(self, x):
        return self.act(self.conv(x))


class PyramidDecoder(nn.Module):
    """U-Net style decoder from a flat latent plus five (maskable) skip levels.

    Produces five maps at {1, 1/2, 1/4, 1/8, 1/16} of the input resolution,
    each through a sigmoid head. Every skip level enters together with a
    validity-mask channel so the decoder can tell holes from dark content.
    """

    def __init__(self, config: ModelConfig, out_channels: int):
        super().__init__()
        self.config = config
        ch = config.decoder_channels
        self.stem_fc = nn.Conv2d(config.embedding_width, ch[0], 1)
        self.stem_up = nn.ModuleList()
        size = 1
        while size < config.input_size // 32:
            self.stem_up.append(_ConvBlock(ch[0], ch[0]))
            size *= 2
        skip_ch = list(reversed(ENCODER_CHANNELS))    # coarse to fine
        self.blocks = nn.ModuleList()
        prev = ch[0]
        for i in range(5):
            self.blocks.append(_ConvBlock(prev + skip_ch[i] + 1, ch[i]))
            prev = ch[i]
        self.final = _ConvBlock(ch[4], ch[4])
        self.heads = nn.ModuleList(
            nn.Conv2d(c, out_channels, 3, padding=1) for c in [ch[1], ch[2], ch[3], ch[4], ch[4]])

    def _skip(self, skips, i, reference):
        b, _, h, w = reference.shape
        c = list(reversed(ENCODER_CHANNELS))[i]
        if skips is None:
            return reference.new_zeros(b, c + 1, h, w)
        level = skips[4 - i]    # skips are stored fine to coarse
        if isinstance(level, WarpResult):
            feat, mask = level.warped, level.valid
        else:
            feat, mask = level, level.new_ones(b, 1, h, w)
        if feat.shape[-2:] != (h, w):
            raise ValueError(f"skip level {4 - i} is {tuple(feat.shape[-2:])}, expected {(h, w)}")
        return torch.cat([feat, mask], dim=1)

    def forward(self, z: Tensor, skips=None) -> list:
        if skips is not None and len(skips) != 5:
            raise ValueError(f"expected 5 skip levels, got {len(skips)}")
        x = self.stem_fc(z.reshape(z.shape[0], -1, 1, 1))
        for block in self.stem_up:
            x = block(F.interpolate(x, scale_factor=2, mode="nearest"))
        outputs = []
        for i, block in enumerate(self.blocks):
            x = block(torch.cat([x, self._skip(skips, i, x)], dim=1))
            if i >= 1:
                outputs.append(torch.sigmoid(self.heads[i - 1](x)))
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.final(x)
        outputs.append(torch.sigmoid(self.heads[4](x)))
        return outputs[::-1]      # index 0 = full resolution


class DepthDecoder(PyramidDecoder):
    """Depth pyramid decoder; the same instance decodes source and target views."""

    def __init__(self, config: ModelConfig):
        super().__init__(config, out_channels=1)

    def forward(self, z, skips=None):
        sigs = super().forward(z, skips)
        return [sigmoid_to_depth(s, self.config.d_min, self.config.d_max) for s in sigs]


class NVSDecoder(PyramidDecoder):
    """RGB pyramid decoder for the synthesized novel view."""

    def __init__(self, config: ModelConfig):
        super().__init__(config, out_channels=3)


class SynthesisModel(nn.Module):
    """Encoder plus the two decoders of the full synthesis pipeline."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.encoder = Encoder(self.config)
        self.depth_decoder = DepthDecoder(self.config)
        self.nvs_decoder = NVSDecoder(self.config)

    def encode(self, image: Tensor) -> EncoderOutput:
        return self.encoder(image)

    def decode_depth(self, z: Tensor, skips=None) -> list:
        return self.depth_decoder(z, skips)

    def decode_nvs(self, z: Tensor, skips=None) -> list:
        return self.nvs_decoder(z, skips)


def save_checkpoint(model: SynthesisModel, path, extra: dict | None = None):
    """Write a single archive with named parameters and the model config."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[SynthesisModel, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    tag = payload.get("format")
    if tag != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unsupported checkpoint format {tag!r}")
    cfg = payload["model_config"]
    cfg["decoder_channels"] = tuple(cfg["decoder_channels"])
    model = SynthesisModel(ModelConfig(**cfg))
    model.load_state_dict(payload["state_dict"])
    return model, payload["extra"]


def parameter_checksum(module: nn.Module) -> float:
    """Cheap content fingerprint used to verify weight sharing across calls."""
    with torch.no_grad():
        return float(sum(p.double().sum() for p in module.parameters()))
