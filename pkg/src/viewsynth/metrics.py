"""Evaluation metrics: image quality (L1, SSIM, PSNR, optional LPIPS) and the
eight standard depth error and accuracy numbers, plus the report writers.

Everything runs in float64 numpy; inputs may be numpy arrays or CPU tensors.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

REPORT_COLUMNS = ("l1", "ssim", "psnr", "lpips", "silog", "abs_rel", "sq_rel",
                  "rmse", "rmse_log", "delta1", "delta2", "delta3")


@dataclass(frozen=True)
class ImageMetrics:
    l1: float
    ssim: float
    psnr: float
    lpips: float | None = None


@dataclass(frozen=True)
class DepthMetrics:
    silog: float
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float


def _to_numpy(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


def _gaussian_window(size=11, sigma=1.5) -> np.ndarray:
    half = (size - 1) / 2
    g = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred, gt, window_size=11, sigma=1.5, c1=0.01**2, c2=0.03**2) -> float:
    """Structural similarity with a Gaussian window, per channel, averaged.

    Windowed means and (population) covariances are taken over all fully
    inside windows; constants assume a data range of 1.
    """
    pred, gt = _to_numpy(pred), _to_numpy(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    if pred.shape[-1] < window_size or pred.shape[-2] < window_size:
        raise ValueError(f"images must be at least {window_size} px per side")
    w = _gaussian_window(window_size, sigma)
    values = []
    for c in range(pred.shape[0]):
        x = np.lib.stride_tricks.sliding_window_view(pred[c], (window_size, window_size))
        y = np.lib.stride_tricks.sliding_window_view(gt[c], (window_size, window_size))
        mu_x = np.tensordot(x, w, axes=([2, 3], [0, 1]))
        mu_y = np.tensordot(y, w, axes=([2, 3], [0, 1]))
        xx = np.tensordot(x * x, w, axes=([2, 3], [0, 1]))
        yy = np.tensordot(y * y, w, axes=([2, 3], [0, 1]))
        xy = np.tensordot(x * y, w, axes=([2, 3], [0, 1]))
        var_x = xx - mu_x**2
        var_y = yy - mu_y**2
        cov = xy - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        values.append(np.mean(num / den))
    return float(np.mean(values))


def psnr(pred, gt) -> float:
    """10 log10(1 / MSE) for a data range of 1; +inf for identical inputs."""
    pred, gt = _to_numpy(pred), _to_numpy(gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def image_metrics(pred, gt, lpips_extractor=None) -> ImageMetrics:
    """L1, SSIM and PSNR between two same-size images in [0, 1].

    LPIPS is included only when an extractor is supplied; it is never
    fabricated.
    """
    pred, gt = _to_numpy(pred), _to_numpy(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    lp = None
    if lpips_extractor is not None:
        lp = lpips(pred, gt, lpips_extractor)
    return ImageMetrics(l1=float(np.abs(pred - gt).mean()),
                        ssim=ssim(pred, gt),
                        psnr=psnr(pred, gt),
                        lpips=lp)


def depth_metrics(pred, gt, mask=None, min_depth=None, max_depth=None) -> DepthMetrics:
    """Standard depth error set over the masked pixels.

    ``gt`` must be positive on the mask; ``pred`` is clamped into the
    evaluation range first when bounds are given. Thresholds use
    max(pred/gt, gt/pred) < 1.25**i.
    """
    pred, gt = _to_numpy(pred), _to_numpy(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if mask is None:
        mask = gt > 0
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("depth evaluation mask is empty")
    p, g = pred[mask], gt[mask]
    if (g <= 0).any():
        raise ValueError("ground-truth depth must be positive on the mask")
    if min_depth is not None:
        p = np.maximum(p, min_depth)
    if max_depth is not None:
        p = np.minimum(p, max_depth)

    ratio = np.maximum(p / g, g / p)
    log_diff = np.log(p) - np.log(g)
    log_var = max(float(np.mean(log_diff**2) - np.mean(log_diff) ** 2), 0.0)
    return DepthMetrics(
        silog=float(np.sqrt(log_var) * 100.0),
        abs_rel=float(np.mean(np.abs(g - p) / g)),
        sq_rel=float(np.mean((g - p) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((g - p) ** 2))),
        rmse_log=float(np.sqrt(np.mean(log_diff**2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
    )


def lpips(pred, gt, extractor) -> float:
    """Perceptual patch distance from a user-supplied feature extractor.

    The distance is a mean over layers of the mean squared difference of
    channel-normalized features, which makes it symmetric and zero on
    identical inputs. ``extractor`` maps a (1,3,H,W) tensor in [0,1] to a
    list of feature tensors.
    """
    import torch

    if extractor is None:
        raise ValueError("lpips requires a pretrained feature extractor")
    pred, gt = _to_numpy(pred), _to_numpy(gt)

    def prep(a):
        t = torch.from_numpy(np.ascontiguousarray(a))
        if t.dim() == 2:
            t = t.unsqueeze(0).repeat(3, 1, 1)
        return t.unsqueeze(0).double()

    with torch.no_grad():
        total, count = 0.0, 0
        for fp, fg in zip(extractor(prep(pred)), extractor(prep(gt))):
            fp = fp / (fp.square().sum(dim=1, keepdim=True).sqrt() + 1e-10)
            fg = fg / (fg.square().sum(dim=1, keepdim=True).sqrt() + 1e-10)
            total += float((fp - fg).square().mean())
            count += 1
    return total / max(count, 1)


def eigen_validity_mask(gt, min_depth=1e-3, max_depth=80.0, apply_crop=True) -> np.ndarray:
    """Validity mask for sparse road-scene depth maps: range plus center crop."""
    gt = _to_numpy(gt)
    mask = (gt > min_depth) & (gt < max_depth)
    if apply_crop:
        h, w = gt.shape
        crop = np.zeros_like(mask)
        crop[int(0.40810811 * h):int(0.99189189 * h),
             int(0.03594771 * w):int(0.96405229 * w)] = True
        mask &= crop
    return mask


def _json_safe(value):
    if value is None:
        return None
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def aggregate_records(records: list[dict]) -> dict:
    """Mean of each metric column over per-sample records, skipping absents."""
    agg = {}
    for col in REPORT_COLUMNS:
        vals = [r[col] for r in records if r.get(col) is not None]
        finite = [v for v in vals if isinstance(v, (int, float)) and math.isfinite(v)]
        agg[col] = float(np.mean(finite)) if finite else None
    return agg


def write_report(records: list[dict], out_prefix):
    """Emit ``<prefix>.json`` (records + aggregates) and ``<prefix>.txt`` table."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    agg = aggregate_records(records)
    doc = {"columns": list(REPORT_COLUMNS),
           "samples": [{k: _json_safe(v) for k, v in r.items()} for r in records],
           "aggregate": {k: _json_safe(v) for k, v in agg.items()}}
    out_prefix.with_suffix(".json").write_text(json.dumps(doc, indent=2) + "\n")

    def fmt(v):
        if v is None:
            return "   --  "
        if isinstance(v, float) and math.isinf(v):
            return "    inf"
        return f"{v:7.4f}"

    header = "sample   " + "  ".join(f"{c:>7}" for c in REPORT_COLUMNS)
    lines = [header, "-" * len(header)]
    for r in records:
        label = str(r.get("sample", "?"))[:8]
        lines.append(f"{label:8} " + "  ".join(fmt(r.get(c)) for c in REPORT_COLUMNS))
    lines.append("-" * len(header))
    lines.append(f"{'mean':8} " + "  ".join(fmt(agg.get(c)) for c in REPORT_COLUMNS))
    out_prefix.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    return agg


def merge_metrics(image: ImageMetrics | None, depth: DepthMetrics | None,
                  sample=None) -> dict:
    """One report record from the two metric bundles; absent parts stay None."""
    record = {col: None for col in REPORT_COLUMNS}
    if sample is not None:
        record["sample"] = sample
    if image is not None:
        record.update(asdict(image))
    if depth is not None:
        record.update(asdict(depth))
    return record
