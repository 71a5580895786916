"""Camera model, rigid transforms, pixel reprojection and the latent-code transform.

Everything here is pure, differentiable tensor math with no learned state.
Conventions used throughout the package:

* pixel centers sit at integer coordinates, so a W x H image spans
  [0, W-1] x [0, H-1];
* depth is the z-coordinate of a point in the camera frame (not ray length);
* a pose maps points from one camera frame into another: ``p_b = R p_a + t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import torch
from torch import Tensor

# Depth values are clamped to this floor before back-projection so that a
# zero/negative depth pixel never turns into a division by zero.
MIN_DEPTH_EPS = 1e-4

# Projected coordinates closer than this to an integer are snapped onto it.
COORD_SNAP_EPS = 1e-9


def _canonical(value, shape_hint: str) -> Tensor:
    t = torch.as_tensor(value, dtype=torch.float64)
    if not torch.isfinite(t).all():
        raise ValueError(f"{shape_hint} contains non-finite values")
    return t


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole projection parameters, scalar or batched along a leading dim."""

    fx: Tensor
    fy: Tensor
    cx: Tensor
    cy: Tensor

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, _canonical(getattr(self, name), name))
        if not bool((self.fx > 0).all()) or not bool((self.fy > 0).all()):
            raise ValueError("focal lengths must be positive")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for an image downsampled by ``factor`` (all four divided)."""
        return CameraIntrinsics(self.fx / factor, self.fy / factor,
                                self.cx / factor, self.cy / factor)

    def matrix(self) -> Tensor:
        """3x3 calibration matrix K, batched if the parameters are."""
        batch = self.fx.shape
        m = torch.zeros(batch + (3, 3), dtype=torch.float64)
        m[..., 0, 0] = self.fx
        m[..., 1, 1] = self.fy
        m[..., 0, 2] = self.cx
        m[..., 1, 2] = self.cy
        m[..., 2, 2] = 1.0
        return m

    @classmethod
    def from_matrix(cls, m) -> "CameraIntrinsics":
        m = _canonical(m, "intrinsics matrix")
        if m.shape[-2:] != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got {tuple(m.shape)}")
        return cls(m[..., 0, 0], m[..., 1, 1], m[..., 0, 2], m[..., 1, 2])

    @classmethod
    def stack(cls, items) -> "CameraIntrinsics":
        return cls(torch.stack([i.fx for i in items]),
                   torch.stack([i.fy for i in items]),
                   torch.stack([i.cx for i in items]),
                   torch.stack([i.cy for i in items]))


@dataclass(frozen=True)
class Pose:
    """Rigid transform between two camera frames, stored as R (..,3,3) and t (..,3).

    Validated on construction: R must be orthonormal with det(R) = 1 within
    1e-6. Supports an optional leading batch dimension on both parts.
    """

    rotation: Tensor
    translation: Tensor

    def __post_init__(self):
        r = _canonical(self.rotation, "rotation")
        t = _canonical(self.translation, "translation")
        if r.shape[-2:] != (3, 3):
            raise ValueError(f"rotation must be (...,3,3), got {tuple(r.shape)}")
        if t.shape[-1:] != (3,):
            raise ValueError(f"translation must be (...,3), got {tuple(t.shape)}")
        eye = torch.eye(3, dtype=torch.float64).expand_as(r)
        if not torch.allclose(r @ r.mT, eye, atol=1e-6):
            raise ValueError("rotation is not orthonormal within 1e-6")
        if not torch.allclose(torch.linalg.det(r), torch.ones(r.shape[:-2], dtype=torch.float64), atol=1e-6):
            raise ValueError("rotation determinant differs from 1 by more than 1e-6")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, batch: int | None = None) -> "Pose":
        r = torch.eye(3, dtype=torch.float64)
        t = torch.zeros(3, dtype=torch.float64)
        if batch is not None:
            r = r.expand(batch, 3, 3).clone()
            t = t.expand(batch, 3).clone()
        return cls(r, t)

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = _canonical(m, "pose matrix")
        if m.shape[-2:] != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {tuple(m.shape)}")
        return cls(m[..., :3, :3], m[..., :3, 3])

    def matrix(self) -> Tensor:
        batch = self.rotation.shape[:-2]
        m = torch.zeros(batch + (4, 4), dtype=torch.float64)
        m[..., :3, :3] = self.rotation
        m[..., :3, 3] = self.translation
        m[..., 3, 3] = 1.0
        return m

    @classmethod
    def stack(cls, poses) -> "Pose":
        return cls(torch.stack([p.rotation for p in poses]),
                   torch.stack([p.translation for p in poses]))


def compose(t2: Pose, t1: Pose) -> Pose:
    """Pose equal to applying ``t1`` first and then ``t2`` (4x4 product t2 @ t1)."""
    return Pose(t2.rotation @ t1.rotation,
                (t2.rotation @ t1.translation.unsqueeze(-1)).squeeze(-1) + t2.translation)


def invert(t: Pose) -> Pose:
    """Inverse transform: rotation R^T, translation -R^T t."""
    r_inv = t.rotation.mT
    return Pose(r_inv, -(r_inv @ t.translation.unsqueeze(-1)).squeeze(-1))


def transform_latent(z: Tensor, pose: Pose) -> Tensor:
    """Rigidly move a latent code viewed as points in 3-space.

    ``z`` has shape (..., N, 3); each point p becomes R p + t. The input is
    not modified and gradients flow through ``z``.
    """
    if z.shape[-1] != 3:
        raise ValueError(f"latent code must have shape (...,N,3), got {tuple(z.shape)}")
    r = pose.rotation.to(z.dtype)
    t = pose.translation.to(z.dtype)
    return z @ r.mT + t.unsqueeze(-2)


@dataclass(frozen=True)
class PixelGrid:
    """Integer pixel lattice of a W x H image, exposed as homogeneous coords."""

    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("grid dimensions must be positive")

    def coords(self, dtype=torch.float64, device=None) -> Tensor:
        """(H, W, 2) tensor of (u, v) pixel-center coordinates."""
        v, u = torch.meshgrid(
            torch.arange(self.height, dtype=dtype, device=device),
            torch.arange(self.width, dtype=dtype, device=device),
            indexing="ij")
        return torch.stack([u, v], dim=-1)

    def homogeneous(self, dtype=torch.float64, device=None) -> Tensor:
        """(H, W, 3) tensor of (u, v, 1) coordinates."""
        uv = self.coords(dtype=dtype, device=device)
        return torch.cat([uv, torch.ones_like(uv[..., :1])], dim=-1)


class Projection(NamedTuple):
    """Result of reprojecting a pixel grid into another view."""

    coords: Tensor   # (B, H, W, 2) continuous (x, y) in the other view
    depth: Tensor    # (B, 1, H, W) depth after the transform (z-buffer key)
    mask: Tensor     # (B, 1, H, W) bool, False where depth <= 0 or off-image


def project_pixels(depth: Tensor, intrinsics: CameraIntrinsics, pose: Pose,
                   grid: PixelGrid | None = None,
                   min_depth: float = MIN_DEPTH_EPS) -> Projection:
    """Back-project every pixel with its depth, transform, and reproject.

    ``depth`` is (B, 1, H, W) or (H, W). A pixel is masked out when its
    transformed point has non-positive depth or falls outside the sampling
    support of the image (no bilinear tap available); masked coordinates are
    replaced by a sentinel far outside the image so downstream samplers
    naturally zero-fill instead of propagating NaNs.
    """
    squeeze = depth.dim() == 2
    if squeeze:
        depth = depth.unsqueeze(0).unsqueeze(0)
    if depth.dim() != 4 or depth.shape[1] != 1:
        raise ValueError(f"depth must be (B,1,H,W) or (H,W), got {tuple(depth.shape)}")
    b, _, h, w = depth.shape
    if grid is None:
        grid = PixelGrid(w, h)
    elif (grid.width, grid.height) != (w, h):
        raise ValueError("grid size does not match the depth map")

    dtype, device = depth.dtype, depth.device
    uv = grid.coords(dtype=dtype, device=device)          # (H, W, 2)
    u, v = uv[..., 0], uv[..., 1]

    def param(p: Tensor) -> Tensor:
        return p.to(dtype=dtype, device=device).reshape(-1, 1, 1)

    fx, fy, cx, cy = (param(p) for p in (intrinsics.fx, intrinsics.fy,
                                         intrinsics.cx, intrinsics.cy))
    d = depth.squeeze(1).clamp(min=min_depth)             # (B, H, W)
    x = (u - cx) / fx * d
    y = (v - cy) / fy * d
    pts = torch.stack([x, y, d], dim=-1)                  # (B, H, W, 3)

    r = pose.rotation.to(dtype=dtype, device=device)
    t = pose.translation.to(dtype=dtype, device=device)
    if r.dim() == 2:
        r = r.unsqueeze(0)
        t = t.unsqueeze(0)
    moved = pts @ r.mT.unsqueeze(1) + t.reshape(-1, 1, 1, 3)

    z = moved[..., 2]
    px = fx * moved[..., 0] / z.clamp(min=min_depth) + cx
    py = fy * moved[..., 1] / z.clamp(min=min_depth) + cy

    # snap coordinates a rounding error away from the pixel lattice so that
    # identity-like transforms stay exact and never split bilinear weights
    px = torch.where((px - px.round()).abs() < COORD_SNAP_EPS, px.round(), px)
    py = torch.where((py - py.round()).abs() < COORD_SNAP_EPS, py.round(), py)

    # a coordinate keeps at least one bilinear tap while strictly inside (-1, W)
    valid = (z > 0) & (px > -1) & (px < w) & (py > -1) & (py < h)
    sentinel = torch.tensor(-2.0 * max(h, w), dtype=dtype, device=device)
    px = torch.where(valid, px, sentinel)
    py = torch.where(valid, py, sentinel)

    coords = torch.stack([px, py], dim=-1)
    proj = Projection(coords, z.unsqueeze(1), valid.unsqueeze(1))
    if squeeze:
        proj = Projection(coords[0], proj.depth[0], proj.mask[0])
    return proj


# ---------------------------------------------------------------------------
# Text file formats: 4x4 row-major pose matrices and 3x3 intrinsics matrices,
# whitespace separated, one row per line (common odometry export style).

def _read_matrix(path, rows: int, cols: int) -> Tensor:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    values = []
    for lineno, line in enumerate(lines, start=1):
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        values.append((lineno, row))
    flat = [v for _, row in values for v in row]
    if len(flat) != rows * cols:
        where = values[-1][0] if values else 1
        raise ValueError(f"{path}: line {where}: expected {rows * cols} values total, got {len(flat)}")
    return torch.tensor(flat, dtype=torch.float64).reshape(rows, cols)


def load_pose(path) -> Pose:
    """Read a pose from a 4x4 row-major text matrix; errors carry line numbers."""
    m = _read_matrix(path, 4, 4)
    bottom = torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=torch.float64)
    if not torch.allclose(m[3], bottom, atol=1e-6):
        raise ValueError(f"{path}: line 4: bottom row must be 0 0 0 1")
    return Pose.from_matrix(m)


def save_pose(pose: Pose, path):
    m = pose.matrix()
    if m.dim() != 2:
        raise ValueError("only a single (unbatched) pose can be written to a file")
    _write_matrix(m, path)


def load_intrinsics(path) -> CameraIntrinsics:
    return CameraIntrinsics.from_matrix(_read_matrix(path, 3, 3))


def save_intrinsics(intrinsics: CameraIntrinsics, path):
    m = intrinsics.matrix()
    if m.dim() != 2:
        raise ValueError("only unbatched intrinsics can be written to a file")
    _write_matrix(m, path)


def _write_matrix(m: Tensor, path):
    rows = [" ".join(f"{v:.17g}" for v in row) for row in m.tolist()]
    Path(path).write_text("\n".join(rows) + "\n")


def rotation_about_axis(axis, angle_rad: float) -> Tensor:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = torch.as_tensor(axis, dtype=torch.float64)
    a = a / torch.linalg.norm(a)
    k = torch.tensor([[0.0, -a[2], a[1]],
                      [a[2], 0.0, -a[0]],
                      [-a[1], a[0], 0.0]], dtype=torch.float64)
    eye = torch.eye(3, dtype=torch.float64)
    return eye + math.sin(angle_rad) * k + (1.0 - math.cos(angle_rad)) * (k @ k)
