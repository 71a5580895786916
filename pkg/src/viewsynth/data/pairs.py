"""Sample pairs, batching, pair-sampling policies and on-disk serialization.

A serialized dataset is a directory of per-scene subdirectories, each holding
``source.png``/``target.png``, a 4x4 ``pose_s_to_t.txt``, a 3x3
``intrinsics.txt`` and optional 16-bit ``depth_*.png`` maps in millimeters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..geometry import (CameraIntrinsics, Pose, load_intrinsics, load_pose,
                        save_intrinsics, save_pose)

log = logging.getLogger(__name__)

DEPTH_PNG_SCALE = 1000.0   # stored millimeters per scene unit (meter)


@dataclass
class SamplePair:
    """One training/eval example: two views, their relative pose, intrinsics."""

    source_image: torch.Tensor          # (3, H, W) in [0, 1]
    target_image: torch.Tensor          # (3, H, W) in [0, 1]
    pose_s_to_t: Pose
    intrinsics: CameraIntrinsics
    gt_depth_s: torch.Tensor | None = None   # (1, H, W), positive where defined
    gt_depth_t: torch.Tensor | None = None

    def __post_init__(self):
        if self.source_image.shape != self.target_image.shape:
            raise ValueError("source and target images must share a resolution")
        if self.source_image.dim() != 3 or self.source_image.shape[0] != 3:
            raise ValueError("images must be (3, H, W)")
        for name in ("gt_depth_s", "gt_depth_t"):
            d = getattr(self, name)
            if d is None:
                continue
            if d.shape[-2:] != self.source_image.shape[-2:]:
                raise ValueError(f"{name} resolution differs from the images")
            if not torch.isfinite(d).all() or (d < 0).any():
                raise ValueError(f"{name} must be finite and non-negative")


@dataclass
class Batch:
    """Stacked pairs ready for a forward pass."""

    source: torch.Tensor            # (B, 3, H, W)
    target: torch.Tensor
    pose_s_to_t: Pose               # batched rotation (B,3,3) / translation (B,3)
    intrinsics: CameraIntrinsics    # batched parameters (B,)
    gt_depth_s: torch.Tensor | None
    gt_depth_t: torch.Tensor | None


def collate(pairs: list) -> Batch:
    if not pairs:
        raise ValueError("cannot collate an empty list of pairs")

    def stack_depth(name):
        maps = [getattr(p, name) for p in pairs]
        if any(m is None for m in maps):
            return None
        return torch.stack(maps)

    return Batch(
        source=torch.stack([p.source_image for p in pairs]),
        target=torch.stack([p.target_image for p in pairs]),
        pose_s_to_t=Pose.stack([p.pose_s_to_t for p in pairs]),
        intrinsics=CameraIntrinsics.stack([p.intrinsics for p in pairs]),
        gt_depth_s=stack_depth("gt_depth_s"),
        gt_depth_t=stack_depth("gt_depth_t"),
    )


@dataclass(frozen=True)
class PairPolicy:
    """Constraints a sampled (source, target) pair must satisfy."""

    kind: str = "synthetic"            # synthetic | shapenet | kitti
    azimuth_window_deg: float = 40.0   # shapenet: |azimuth difference| bound
    azimuth_step_deg: float = 10.0     # shapenet: view lattice step
    elevation_range_deg: tuple = (0.0, 40.0)
    frame_window: int = 7              # kitti: max |frame_t - frame_s|
    min_translation: float = 0.5       # kitti: static-scene exclusion threshold

    def azimuth_offsets(self):
        steps = int(round(self.azimuth_window_deg / self.azimuth_step_deg))
        return [i * self.azimuth_step_deg for i in range(-steps, steps + 1)]


def sample_pair(dataset, policy: PairPolicy, rng_seed: int) -> SamplePair:
    """Draw one pair satisfying the policy; deterministic in the seed."""
    return dataset.sample_pair(policy, np.random.default_rng(rng_seed))


class SyntheticDataset:
    """In-memory list of pairs; the policy window is already baked in."""

    def __init__(self, pairs: list):
        self.pairs = list(pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i) -> SamplePair:
        return self.pairs[i]

    def sample_pair(self, policy, rng) -> SamplePair:
        return self.pairs[int(rng.integers(len(self.pairs)))]


# ---------------------------------------------------------------------------
# serialization

def _write_image_png(tensor: torch.Tensor, path: Path):
    arr = (tensor.clamp(0, 1).numpy().transpose(1, 2, 0) * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def _read_image_png(path: Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1))


def _write_depth_png(depth: torch.Tensor, path: Path):
    mm = (depth.squeeze(0).numpy() * DEPTH_PNG_SCALE).round()
    if mm.max() > np.iinfo(np.uint16).max:
        raise ValueError("depth too large for 16-bit millimeter storage")
    Image.fromarray(mm.astype(np.uint16)).save(path)


def _read_depth_png(path: Path) -> torch.Tensor:
    arr = np.asarray(Image.open(path), dtype=np.float32) / DEPTH_PNG_SCALE
    return torch.from_numpy(arr).unsqueeze(0)


def save_pairs(pairs: list, out_dir) -> Path:
    """Serialize pairs as scene_#### subdirectories; returns the root."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, pair in enumerate(pairs):
        d = out_dir / f"scene_{i:04d}"
        d.mkdir(exist_ok=True)
        _write_image_png(pair.source_image, d / "source.png")
        _write_image_png(pair.target_image, d / "target.png")
        save_pose(pair.pose_s_to_t, d / "pose_s_to_t.txt")
        save_intrinsics(pair.intrinsics, d / "intrinsics.txt")
        if pair.gt_depth_s is not None:
            _write_depth_png(pair.gt_depth_s, d / "depth_source.png")
        if pair.gt_depth_t is not None:
            _write_depth_png(pair.gt_depth_t, d / "depth_target.png")
    return out_dir


def load_pairs(root) -> SyntheticDataset:
    """Read a serialized directory back; missing depth maps stay None."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    pairs = []
    for d in sorted(root.glob("scene_*")):
        try:
            depth_s = _read_depth_png(d / "depth_source.png") if (d / "depth_source.png").exists() else None
            depth_t = _read_depth_png(d / "depth_target.png") if (d / "depth_target.png").exists() else None
            pairs.append(SamplePair(
                source_image=_read_image_png(d / "source.png"),
                target_image=_read_image_png(d / "target.png"),
                pose_s_to_t=load_pose(d / "pose_s_to_t.txt"),
                intrinsics=load_intrinsics(d / "intrinsics.txt"),
                gt_depth_s=depth_s,
                gt_depth_t=depth_t,
            ))
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", d.name, exc)
    return SyntheticDataset(pairs)
