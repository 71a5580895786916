"""Source-to-target novel view synthesis with jointly learned self-supervised depth."""

from .geometry import (CameraIntrinsics, PixelGrid, Pose, compose, invert,
                       project_pixels, transform_latent)
from .warp import WarpResult, forward_warp, inverse_warp, warp_pyramid

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "PixelGrid",
    "Pose",
    "WarpResult",
    "compose",
    "forward_warp",
    "inverse_warp",
    "invert",
    "project_pixels",
    "transform_latent",
    "warp_pyramid",
    "__version__",
]
