"""Loader for pre-rendered object-centric view collections.

Expected structure under the root::

    <root>/<category>/<model_id>/render_NNN.png
    <root>/<category>/<model_id>/pose_NNN.txt       (4x4 camera-from-world)
    <root>/<category>/<model_id>/views.txt          (lines: NNN azimuth elevation)
    <root>/<category>/intrinsics.txt                (optional 3x3 matrix)

``category`` accepts the friendly names ``chairs``/``cars`` or their synset
directory names. When no intrinsics file is present they are synthesized from
a 50 degree field of view at the requested image size. Pair sampling follows
the azimuth window policy; elevation is unconstrained inside its range. An
explicit model-id split file may be passed; otherwise a deterministic 90/10
model-level split is used (a fallback, not a published split).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..geometry import CameraIntrinsics, Pose, compose, invert, load_intrinsics, load_pose
from .pairs import PairPolicy, SamplePair

log = logging.getLogger(__name__)

CATEGORY_SYNSETS = {"chairs": "03001627", "cars": "02958343"}
DEFAULT_FOV_DEG = 50.0


@dataclass
class _View:
    index: int
    image: Path
    pose: Path
    azimuth: float
    elevation: float


@dataclass
class _Model:
    model_id: str
    views: list


def default_intrinsics(image_size: int) -> CameraIntrinsics:
    f = (image_size / 2.0) / math.tan(math.radians(DEFAULT_FOV_DEG) / 2.0)
    c = (image_size - 1) / 2.0
    return CameraIntrinsics(f, f, c, c)


class ShapeNetDataset:
    def __init__(self, models, intrinsics, image_size, native_size=None):
        self.models = models
        self.intrinsics = intrinsics
        self.image_size = image_size
        self.native_size = native_size

    def __len__(self):
        return sum(len(m.views) for m in self.models)

    @property
    def num_models(self):
        return len(self.models)

    def _load_view(self, view: _View) -> torch.Tensor:
        img = Image.open(view.image).convert("RGB")
        if img.size != (self.image_size, self.image_size):
            img = img.resize((self.image_size, self.image_size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
        return torch.from_numpy(arr.transpose(2, 0, 1))

    def make_pair(self, model: _Model, i: int, j: int) -> SamplePair:
        vs, vt = model.views[i], model.views[j]
        cam_s = load_pose(vs.pose)
        cam_t = load_pose(vt.pose)
        return SamplePair(
            source_image=self._load_view(vs),
            target_image=self._load_view(vt),
            pose_s_to_t=compose(cam_t, invert(cam_s)),
            intrinsics=self.intrinsics,
        )

    @staticmethod
    def _azimuth_gap(a: float, b: float) -> float:
        gap = (b - a) % 360.0
        return gap - 360.0 if gap > 180.0 else gap

    def candidate_pairs(self, model: _Model, i: int, policy: PairPolicy):
        src = model.views[i]
        lo, hi = policy.elevation_range_deg
        out = []
        for j, v in enumerate(model.views):
            if j == i:
                continue
            gap = self._azimuth_gap(src.azimuth, v.azimuth)
            if abs(gap) > policy.azimuth_window_deg + 1e-9:
                continue
            if abs(gap / policy.azimuth_step_deg - round(gap / policy.azimuth_step_deg)) > 1e-6:
                continue
            if not lo - 1e-9 <= v.elevation <= hi + 1e-9:
                continue
            out.append(j)
        return out

    def sample_pair(self, policy: PairPolicy, rng) -> SamplePair:
        if not self.models:
            raise ValueError("dataset is empty")
        for _ in range(64):
            model = self.models[int(rng.integers(len(self.models)))]
            i = int(rng.integers(len(model.views)))
            candidates = self.candidate_pairs(model, i, policy)
            if candidates:
                return self.make_pair(model, i, candidates[int(rng.integers(len(candidates)))])
        raise ValueError("no view pair satisfies the sampling policy")


def _resolve_category_dir(root: Path, category: str) -> Path:
    options = [category]
    if category in CATEGORY_SYNSETS:
        options.append(CATEGORY_SYNSETS[category])
    for name in options:
        if (root / name).is_dir():
            return root / name
    raise FileNotFoundError(f"category directory not found under {root}: tried {options}")


def _read_views(model_dir: Path):
    views_file = model_dir / "views.txt"
    if not views_file.exists():
        raise FileNotFoundError("views.txt missing")
    views = []
    for line in views_file.read_text().splitlines():
        parts = line.split()
        if len(parts) < 3:
            continue
        idx = int(parts[0])
        image = model_dir / f"render_{idx:03d}.png"
        pose = model_dir / f"pose_{idx:03d}.txt"
        if not image.exists() or not pose.exists():
            raise FileNotFoundError(f"view {idx} files missing")
        views.append(_View(idx, image, pose, float(parts[1]), float(parts[2])))
    if not views:
        raise FileNotFoundError("views.txt lists no views")
    return views


def load_shapenet(root, category: str, split: str = "train",
                  image_size: int = 256, split_file=None) -> ShapeNetDataset:
    """Index one category; ``split`` is train/test over model ids."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    cat_dir = _resolve_category_dir(root, category)

    models = []
    for model_dir in sorted(p for p in cat_dir.iterdir() if p.is_dir()):
        try:
            models.append(_Model(model_dir.name, _read_views(model_dir)))
        except (OSError, ValueError, FileNotFoundError) as exc:
            log.warning("skipping model %s: %s", model_dir.name, exc)

    if split_file is not None:
        keep = set(Path(split_file).read_text().split())
        models = [m for m in models if m.model_id in keep]
    elif models:
        # deterministic 90/10 model-level fallback split (not a published one)
        log.info("using the deterministic 90/10 fallback split for %s/%s", category, split)
        cut = max(1, int(round(len(models) * 0.9)))
        if split == "train":
            models = models[:cut] if len(models) > 1 else models
        elif split == "test":
            models = models[cut:] if len(models) > 1 else models
        else:
            raise ValueError(f"unknown split {split!r}")

    k_file = cat_dir / "intrinsics.txt"
    if k_file.exists() and models:
        # the recorded matrix describes the native render resolution
        native = Image.open(models[0].views[0].image).size[0]
        intrinsics = load_intrinsics(k_file).scaled(native / image_size)
    else:
        if not k_file.exists():
            log.info("no intrinsics.txt for %s; synthesizing a %g degree fov",
                     category, DEFAULT_FOV_DEG)
        intrinsics = default_intrinsics(image_size)
    return ShapeNetDataset(models, intrinsics, image_size)
