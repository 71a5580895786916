"""Differentiable inverse (bilinear-sampling) and direct (splatting) warping.

Both operators are driven by :func:`viewsynth.geometry.project_pixels` and
agree with the naive per-pixel implementations in :mod:`viewsynth.reference`.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

from .geometry import CameraIntrinsics, Pose, project_pixels

# Splat taps with bilinear weight at or below this threshold are discarded;
# they carry no real mass but could otherwise hijack the z-buffer.
SPLAT_WEIGHT_EPS = 1e-12


@dataclass
class WarpResult:
    """A warped tensor plus its per-pixel validity mask (1 = real content)."""

    warped: Tensor   # (B, C, H, W), zero wherever valid == 0
    valid: Tensor    # (B, 1, H, W) in {0, 1}


def _check_inputs(src: Tensor, depth: Tensor):
    if src.dim() != 4 or depth.dim() != 4:
        raise ValueError("src and depth must be (B,C,H,W) and (B,1,H,W)")
    if src.shape[-2:] != depth.shape[-2:] or src.shape[0] != depth.shape[0]:
        raise ValueError(f"src {tuple(src.shape)} and depth {tuple(depth.shape)} do not match")


def bilinear_sample(src: Tensor, coords: Tensor) -> WarpResult:
    """Sample ``src`` (B,C,H,W) at continuous ``coords`` (B,H,W,2), zero padded.

    A sample is valid when at least one of its four taps lies inside the
    image; taps outside contribute zero.
    """
    b, c, h, w = src.shape
    x, y = coords[..., 0], coords[..., 1]
    x0, y0 = x.floor(), y.floor()
    tx, ty = x - x0, y - y0

    out = src.new_zeros(b, c, h, w)
    any_in = torch.zeros(b, h, w, dtype=torch.bool, device=src.device)
    flat = src.reshape(b, c, -1)
    for dx, dy, wgt in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                        (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
        xi = (x0 + dx).long()
        yi = (y0 + dy).long()
        inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        any_in |= inside
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).reshape(b, 1, -1).expand(b, c, -1)
        taps = flat.gather(2, idx).reshape(b, c, h, w)
        out = out + (wgt * inside).unsqueeze(1) * taps
    return WarpResult(out, any_in.unsqueeze(1).to(src.dtype))


def inverse_warp(src: Tensor, depth_t: Tensor, intrinsics: CameraIntrinsics,
                 pose_t_to_s: Pose) -> WarpResult:
    """Backward-warp ``src`` into the view whose depth map is ``depth_t``.

    For each target pixel the source sampling location follows from
    back-projecting with ``depth_t`` and applying ``pose_t_to_s``.
    Differentiable with respect to both ``src`` and ``depth_t``.
    """
    _check_inputs(src, depth_t)
    proj = project_pixels(depth_t, intrinsics, pose_t_to_s)
    return bilinear_sample(src, proj.coords.to(src.dtype))


def forward_warp(src: Tensor, depth_s: Tensor, intrinsics: CameraIntrinsics,
                 pose_s_to_t: Pose) -> WarpResult:
    """Splat every source pixel to its projected target location.

    Bilinear splatting into the four neighboring target pixels; collisions are
    resolved by the smallest transformed depth (z-buffer), exact ties by the
    source pixel visited first in raster order. Target pixels no splat
    reaches stay zero with a zero mask.
    """
    _check_inputs(src, depth_s)
    b, c, h, w = src.shape
    n = h * w
    proj = project_pixels(depth_s, intrinsics, pose_s_to_t)
    coords = proj.coords.to(src.dtype)
    x, y = coords[..., 0].reshape(-1), coords[..., 1].reshape(-1)
    ok = proj.mask.reshape(-1)
    # z-buffer keys never need gradients; comparisons happen on raw values
    z = proj.depth.detach().to(src.dtype).reshape(-1)

    x0, y0 = x.floor(), y.floor()
    tx, ty = x - x0, y - y0
    src_idx = torch.arange(b * n, device=src.device)

    tgt_parts, wgt_parts, z_parts, sidx_parts = [], [], [], []
    for dx, dy, wgt in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                        (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
        xi = (x0 + dx).long()
        yi = (y0 + dy).long()
        keep = ok & (wgt > SPLAT_WEIGHT_EPS) & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        tgt = (src_idx // n) * n + yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)
        tgt_parts.append(tgt[keep])
        wgt_parts.append(wgt[keep])
        z_parts.append(z[keep])
        sidx_parts.append(src_idx[keep])

    tgt = torch.cat(tgt_parts)
    wgt = torch.cat(wgt_parts)
    zc = torch.cat(z_parts)
    sidx = torch.cat(sidx_parts)

    out_flat = src.new_zeros(b * n, c)
    valid = src.new_zeros(b * n)
    if tgt.numel():
        valid[tgt] = 1.0

        zbuf = torch.full((b * n,), float("inf"), dtype=zc.dtype, device=src.device)
        zbuf.scatter_reduce_(0, tgt, zc, reduce="amin", include_self=True)
        nearest = zc == zbuf[tgt]

        ibuf = torch.full((b * n,), b * n, dtype=torch.long, device=src.device)
        ibuf.scatter_reduce_(0, tgt[nearest], sidx[nearest], reduce="amin", include_self=True)
        win = nearest & (sidx == ibuf[tgt])

        values = wgt[win].unsqueeze(1) * src.permute(0, 2, 3, 1).reshape(-1, c)[sidx[win]]
        out_flat = out_flat.index_add(0, tgt[win], values)
    out = out_flat.reshape(b, h, w, c).permute(0, 3, 1, 2)
    return WarpResult(out, valid.reshape(b, 1, h, w))


def warp_pyramid(features: list[Tensor], depths: list[Tensor],
                 intrinsics: CameraIntrinsics, pose: Pose, mode: str,
                 full_size: int) -> list[WarpResult]:
    """Warp each pyramid level with intrinsics rescaled to its resolution.

    ``features[l]`` and ``depths[l]`` must share spatial size; the per-level
    intrinsics divide fx, fy, cx, cy by ``full_size / level_size``.
    """
    if mode not in ("forward", "inverse"):
        raise ValueError(f"mode must be 'forward' or 'inverse', got {mode!r}")
    if len(features) != len(depths):
        raise ValueError(f"{len(features)} feature levels vs {len(depths)} depth levels")
    op = forward_warp if mode == "forward" else inverse_warp
    results = []
    for feat, depth in zip(features, depths):
        if feat.shape[-2:] != depth.shape[-2:]:
            raise ValueError(f"level size mismatch: {tuple(feat.shape)} vs {tuple(depth.shape)}")
        factor = full_size / feat.shape[-1]
        results.append(op(feat, depth, intrinsics.scaled(factor), pose))
    return results
