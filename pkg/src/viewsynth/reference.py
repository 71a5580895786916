"""Brute-force per-pixel reference implementations of projection and warping.

These are deliberately naive numpy loops that follow the documented contract
step by step. They share no code with the vectorized tensor paths and exist
so those paths can be checked against an independent computation (see the
``warp-check`` command and the test suite).
"""

from __future__ import annotations

import math

import numpy as np

MIN_DEPTH_EPS = 1e-4
COORD_SNAP_EPS = 1e-9
SPLAT_WEIGHT_EPS = 1e-12


def _snap(x):
    return round(x) if abs(x - round(x)) < COORD_SNAP_EPS else x


def project_pixels_ref(depth, k, rotation, translation):
    """Reproject every pixel of a (H, W) depth map.

    ``k`` is (fx, fy, cx, cy). Returns (coords (H,W,2), z (H,W), mask (H,W));
    masked pixels get sentinel coordinates far outside the image.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    fx, fy, cx, cy = (float(v) for v in k)
    r = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64)
    coords = np.empty((h, w, 2))
    z_out = np.empty((h, w))
    mask = np.zeros((h, w), dtype=bool)
    sentinel = -2.0 * max(h, w)
    for v in range(h):
        for u in range(w):
            d = max(depth[v, u], MIN_DEPTH_EPS)
            p = np.array([(u - cx) / fx * d, (v - cy) / fy * d, d])
            q = r @ p + t
            z = q[2]
            x = _snap(fx * q[0] / max(z, MIN_DEPTH_EPS) + cx)
            y = _snap(fy * q[1] / max(z, MIN_DEPTH_EPS) + cy)
            ok = z > 0 and -1 < x < w and -1 < y < h
            coords[v, u] = (x, y) if ok else (sentinel, sentinel)
            z_out[v, u] = z
            mask[v, u] = ok
    return coords, z_out, mask


def bilinear_sample_ref(src, x, y):
    """Sample one (C, H, W) image at a continuous coordinate with zero padding.

    Returns (value (C,), valid) where valid is True when at least one of the
    four bilinear taps lies inside the image.
    """
    src = np.asarray(src, dtype=np.float64)
    c, h, w = src.shape
    x0, y0 = math.floor(x), math.floor(y)
    tx, ty = x - x0, y - y0
    value = np.zeros(c)
    valid = False
    for dx, dy, wgt in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                        (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
        xi, yi = x0 + dx, y0 + dy
        if 0 <= xi < w and 0 <= yi < h:
            valid = True
            value += wgt * src[:, yi, xi]
    return value, valid


def inverse_warp_ref(src, depth_t, k, rotation, translation):
    """Backward-warp a (C, H, W) source into the target view, pixel by pixel."""
    src = np.asarray(src, dtype=np.float64)
    coords, _, _ = project_pixels_ref(depth_t, k, rotation, translation)
    c, h, w = src.shape
    out = np.zeros((c, h, w))
    mask = np.zeros((h, w))
    for v in range(h):
        for u in range(w):
            value, ok = bilinear_sample_ref(src, coords[v, u, 0], coords[v, u, 1])
            if ok:
                out[:, v, u] = value
                mask[v, u] = 1.0
    return out, mask


def forward_warp_ref(src, depth_s, k, rotation, translation):
    """Splat a (C, H, W) source into the target view with a z-buffer.

    Each valid source pixel splats into its four neighboring target pixels
    with bilinear weights (zero-weight taps do not participate). When several
    source pixels hit the same target pixel, the one with the smallest
    transformed depth wins; exact depth ties go to the pixel visited first in
    raster order.
    """
    src = np.asarray(src, dtype=np.float64)
    coords, z, mask = project_pixels_ref(depth_s, k, rotation, translation)
    c, h, w = src.shape
    out = np.zeros((c, h, w))
    out_mask = np.zeros((h, w))
    zbuf = np.full((h, w), np.inf)
    for v in range(h):
        for u in range(w):
            if not mask[v, u]:
                continue
            x, y = coords[v, u]
            x0, y0 = math.floor(x), math.floor(y)
            tx, ty = x - x0, y - y0
            for dx, dy, wgt in ((0, 0, (1 - tx) * (1 - ty)), (1, 0, tx * (1 - ty)),
                                (0, 1, (1 - tx) * ty), (1, 1, tx * ty)):
                xi, yi = x0 + dx, y0 + dy
                if wgt <= SPLAT_WEIGHT_EPS or not (0 <= xi < w and 0 <= yi < h):
                    continue
                out_mask[yi, xi] = 1.0
                # strict comparison implements the first-visited tie break
                if z[v, u] < zbuf[yi, xi]:
                    zbuf[yi, xi] = z[v, u]
                    out[:, yi, xi] = wgt * src[:, v, u]
    return out, out_mask
