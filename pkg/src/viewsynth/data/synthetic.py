"""Procedural synthetic scenes with analytic ground truth.

A scene is a fronto-parallel background plane plus a few axis-aligned boxes,
each carrying a smooth sinusoid texture over world coordinates. Both views
are rendered by exact per-pixel ray casting, so depth maps are analytic and
reprojecting one view into the other via the true depth and pose reproduces
it up to pure resampling error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..geometry import CameraIntrinsics, Pose
from .pairs import SamplePair


@dataclass(frozen=True)
class SceneSpec:
    """Distribution parameters for random scene generation."""

    image_size: int = 64
    fov_deg: float = 50.0
    n_boxes: int = 2
    background_depth: float = 2.4
    box_depth_range: tuple = (1.5, 2.0)
    box_size_range: tuple = (0.25, 0.5)
    texture_frequency: float = 2.2     # max |omega| of the sinusoids, rad per unit
    texture_amplitude: float = 0.3     # total amplitude budget around the 0.5 base
    max_rotation_deg: float = 6.0
    max_translation: float = 0.12

    def __post_init__(self):
        if self.image_size < 8:
            raise ValueError("image_size too small")
        if not 0 < self.fov_deg < 120:
            raise ValueError("fov_deg out of range")
        if self.n_boxes < 0:
            raise ValueError("n_boxes must be non-negative")
        if self.background_depth <= 0:
            raise ValueError("background must be in front of the camera")
        if not 0 < self.box_depth_range[0] <= self.box_depth_range[1]:
            raise ValueError("box_depth_range must be positive and ordered")
        if self.texture_amplitude >= 0.5:
            raise ValueError("texture_amplitude must keep colors inside (0, 1)")

    def intrinsics(self) -> CameraIntrinsics:
        f = (self.image_size / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)
        c = (self.image_size - 1) / 2.0
        return CameraIntrinsics(f, f, c, c)


@dataclass
class _Texture:
    omegas: np.ndarray   # (K, 3) wave vectors
    amps: np.ndarray     # (3, K) per-channel amplitudes
    phases: np.ndarray   # (3, K)

    @classmethod
    def random(cls, rng, frequency, amplitude, harmonics=3):
        omegas = rng.uniform(-1, 1, size=(harmonics, 3))
        omegas *= rng.uniform(0.3, 1.0, size=(harmonics, 1)) * frequency \
            / np.linalg.norm(omegas, axis=1, keepdims=True)
        amps = rng.uniform(0.5, 1.0, size=(3, harmonics))
        amps *= amplitude / amps.sum(axis=1, keepdims=True)
        phases = rng.uniform(0, 2 * np.pi, size=(3, harmonics))
        return cls(omegas, amps, phases)

    def colors(self, points: np.ndarray) -> np.ndarray:
        """(N, 3) world points -> (N, 3) colors strictly inside (0, 1)."""
        phase = points @ self.omegas.T                     # (N, K)
        waves = np.sin(phase[:, None, :] + self.phases)    # (N, 3, K)
        return 0.5 + (waves * self.amps).sum(axis=2)


@dataclass
class _Box:
    lo: np.ndarray
    hi: np.ndarray
    texture: _Texture

    def contains(self, point) -> bool:
        return bool(np.all(point >= self.lo) & np.all(point <= self.hi))

    def intersect(self, origin, dirs):
        """Entry distance of rays origin + t * dirs, inf where missed."""
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (self.lo - origin) * inv
            t2 = (self.hi - origin) * inv
        near = np.minimum(t1, t2)
        far = np.maximum(t1, t2)
        # parallel rays: inside the slab keeps (-inf, inf), outside kills the hit
        parallel = np.abs(dirs) < 1e-12
        inside = (origin >= self.lo) & (origin <= self.hi)
        near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
        far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
        tmin = near.max(axis=-1)
        tmax = far.min(axis=-1)
        hit = (tmax >= tmin) & (tmin > 1e-9)
        return np.where(hit, tmin, np.inf)


@dataclass
class SyntheticScene:
    """Analytic scene plus the two camera poses; cameras look along +z."""

    spec: SceneSpec
    boxes: list
    background_texture: _Texture
    rotation_t: np.ndarray    # target camera-to-world rotation
    center_t: np.ndarray      # target camera center in world
    intrinsics: CameraIntrinsics = field(init=False)

    def __post_init__(self):
        self.intrinsics = self.spec.intrinsics()
        for cam, name in ((np.zeros(3), "source"), (self.center_t, "target")):
            for box in self.boxes:
                if box.contains(cam):
                    raise ValueError(f"degenerate scene: {name} camera is inside a box")
            if cam[2] >= self.spec.background_depth:
                raise ValueError(f"degenerate scene: {name} camera behind the background")

    @classmethod
    def from_spec(cls, spec: SceneSpec, seed: int) -> "SyntheticScene":
        rng = np.random.default_rng(seed)
        bg_tex = _Texture.random(rng, spec.texture_frequency, spec.texture_amplitude)
        boxes = []
        span = 0.5 * spec.box_depth_range[0] * math.tan(math.radians(spec.fov_deg) / 2)
        for _ in range(spec.n_boxes):
            size = rng.uniform(*spec.box_size_range, size=3)
            size[2] = min(size[2], 0.3)
            z_near = rng.uniform(*spec.box_depth_range)
            center = np.array([rng.uniform(-span, span), rng.uniform(-span, span),
                               z_near + size[2] / 2])
            boxes.append(_Box(center - size / 2, center + size / 2,
                              _Texture.random(rng, spec.texture_frequency,
                                              spec.texture_amplitude)))
        angle = math.radians(rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg))
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        rot = np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)
        center = rng.uniform(-spec.max_translation, spec.max_translation, size=3)
        center[2] *= 0.5   # keep the depth change gentler than the lateral motion
        return cls(spec, boxes, bg_tex, rot, center)

    # -- ray casting ------------------------------------------------------

    def _camera(self, view: str):
        if view == "source":
            return np.eye(3), np.zeros(3)
        if view == "target":
            return self.rotation_t, self.center_t
        raise ValueError(f"unknown view {view!r}")

    def _cast(self, view: str, xy: np.ndarray):
        """Exact scene intersection for rays through continuous pixel coords.

        Returns (depth, primitive index) with -1 denoting the background.
        Depth is the camera-frame z, which equals the ray parameter because
        camera-frame directions are normalized to unit z.
        """
        r_c2w, center = self._camera(view)
        fx = float(self.intrinsics.fx)
        fy = float(self.intrinsics.fy)
        cx = float(self.intrinsics.cx)
        cy = float(self.intrinsics.cy)
        d_cam = np.stack([(xy[..., 0] - cx) / fx, (xy[..., 1] - cy) / fy,
                          np.ones_like(xy[..., 0])], axis=-1)
        dirs = d_cam @ r_c2w.T
        t_best = (self.spec.background_depth - center[2]) / dirs[..., 2]
        prim = np.full(t_best.shape, -1, dtype=np.int64)
        for i, box in enumerate(self.boxes):
            t_box = box.intersect(center, dirs)
            closer = t_box < t_best
            t_best = np.where(closer, t_box, t_best)
            prim = np.where(closer, i, prim)
        return t_best, prim, dirs, center

    def depth_at(self, view: str, xy) -> np.ndarray:
        """Analytic depth at arbitrary continuous pixel coordinates."""
        t, _, _, _ = self._cast(view, np.asarray(xy, dtype=np.float64))
        return t

    def render(self, view: str):
        """(3, S, S) image in (0, 1) and (S, S) exact depth for one view."""
        s = self.spec.image_size
        v, u = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
        xy = np.stack([u, v], axis=-1).astype(np.float64)
        t, prim, dirs, center = self._cast(view, xy)
        points = center + t[..., None] * dirs
        flat_pts = points.reshape(-1, 3)
        flat_prim = prim.reshape(-1)
        colors = self.background_texture.colors(flat_pts)
        for i, box in enumerate(self.boxes):
            sel = flat_prim == i
            if sel.any():
                colors[sel] = box.texture.colors(flat_pts[sel])
        image = colors.reshape(s, s, 3).transpose(2, 0, 1)
        return image, t

    def pose_s_to_t(self) -> Pose:
        """Maps source-camera coordinates into the target camera frame."""
        r = self.rotation_t.T
        return Pose(r, -r @ self.center_t)

    def sample_pair(self) -> SamplePair:
        img_s, depth_s = self.render("source")
        img_t, depth_t = self.render("target")
        return SamplePair(
            source_image=torch.tensor(img_s, dtype=torch.float32),
            target_image=torch.tensor(img_t, dtype=torch.float32),
            pose_s_to_t=self.pose_s_to_t(),
            intrinsics=self.intrinsics,
            gt_depth_s=torch.tensor(depth_s, dtype=torch.float32).unsqueeze(0),
            gt_depth_t=torch.tensor(depth_t, dtype=torch.float32).unsqueeze(0),
        )


def generate_synthetic_scene(spec: SceneSpec, seed: int) -> SamplePair:
    """One training/eval pair with full ground-truth depth for both views."""
    return SyntheticScene.from_spec(spec, seed).sample_pair()


def generate_dataset(spec: SceneSpec, count: int, seed: int) -> list:
    """Deterministic list of pairs; scene i uses sub-seed seed + i."""
    return [generate_synthetic_scene(spec, seed + i) for i in range(count)]
