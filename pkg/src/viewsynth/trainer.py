"""End-to-end training: the full forward pass, loss assembly, optimization
schedule, checkpointing, evaluation and the ablation harness."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data.pairs import Batch, collate
from .geometry import invert, transform_latent
from .losses import (LossReport, LossWeights, depth_consistency_loss,
                     perceptual_loss, photometric_loss, recon_loss,
                     resolve_extractor, smoothness_loss, total_loss)
from .metrics import (aggregate_records, depth_metrics, image_metrics,
                      merge_metrics, write_report)
from .networks import ModelConfig, SynthesisModel, save_checkpoint
from .warp import inverse_warp, warp_pyramid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AblationSwitches:
    """Architecture toggles; the full configuration has everything on."""

    use_second_depth_decoder: bool = True   # off: forward-warped features feed the view decoder
    nvs_skips: bool = True
    depth_skips: bool = True


# variant id -> (switch overrides, loss-weight overrides)
VARIANTS = {
    "I": ({"use_second_depth_decoder": False}, {}),
    "II": ({"nvs_skips": False}, {}),
    "III": ({"depth_skips": False}, {}),
    "IV": ({}, {"alpha": 0.0}),
    "V": ({}, {"gamma": 0.0}),
    "VI": ({}, {"beta": 0.0}),
    "VII": ({}, {"delta": 0.0}),
    "VIII": ({}, {"omega": 0.0}),
}


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 100_000
    batch_size: int = 8
    lr: float = 6e-5
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 1000
    val_fraction: float = 0.1
    log_every: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    switches: AblationSwitches = field(default_factory=AblationSwitches)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must not be negative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")

    def lr_at(self, step: int) -> float:
        """Linear decay to zero over the configured step budget."""
        return self.lr * max(0.0, 1.0 - step / max(self.steps, 1))

    def to_mapping(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        data = dict(mapping)
        if "weights" in data and not isinstance(data["weights"], LossWeights):
            data["weights"] = LossWeights(**data["weights"])
        if "switches" in data and not isinstance(data["switches"], AblationSwitches):
            data["switches"] = AblationSwitches(**data["switches"])
        if "model" in data and not isinstance(data["model"], ModelConfig):
            m = dict(data["model"])
            if "decoder_channels" in m:
                m["decoder_channels"] = tuple(m["decoder_channels"])
            data["model"] = ModelConfig(**m)
        return cls(**data)


def apply_variant(config: TrainConfig, variant: str) -> TrainConfig:
    """Ablated copy of a configuration; raises listing valid ids when unknown."""
    if variant == "full":
        return config
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; valid ids: "
                         f"{', '.join(VARIANTS)} (or 'full')")
    switch_over, weight_over = VARIANTS[variant]
    return replace(config,
                   switches=replace(config.switches, **switch_over),
                   weights=replace(config.weights, **weight_over))


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


def _ensure_finite(stage: str, *tensors):
    for t in tensors:
        if t is not None and not torch.isfinite(t).all():
            raise RuntimeError(f"non-finite values produced at stage '{stage}'")


def _feature_level_depths(depth_levels: list) -> list:
    """Match depth maps (sizes S..S/16) to feature levels (S/2..S/32).

    Levels 1..4 of the depth pyramid align with the first four feature
    levels; the coarsest feature level reuses the last depth map pooled once
    more (average pooling keeps depths positive).
    """
    return depth_levels[1:] + [F.avg_pool2d(depth_levels[4], 2)]


def forward_pass(model: SynthesisModel, batch: Batch,
                 switches: AblationSwitches = AblationSwitches(),
                 need_consistency: bool = True) -> dict:
    """Run the whole synthesis pipeline on one batch.

    Execution order: encode the source; decode its depth pyramid; forward-warp
    the encoder features with that depth; rigidly transform the latent code;
    decode the target-view depth from the transformed code plus the
    forward-warped features; inverse-warp the encoder features (and the source
    image per level) with the target depth; decode the novel view. When the
    consistency branch is requested the target image is encoded as well.
    """
    size = model.config.input_size
    if batch.source.shape[-2:] != (size, size):
        raise ValueError(f"batch images are {tuple(batch.source.shape[-2:])}, "
                         f"model expects {(size, size)}")
    pose = batch.pose_s_to_t
    k = batch.intrinsics

    enc_s = model.encode(batch.source)
    _ensure_finite("encode_source", enc_s.z, *enc_s.features)

    depth_s = model.decode_depth(enc_s.z, enc_s.features if switches.depth_skips else None)
    _ensure_finite("decode_source_depth", *depth_s)

    feats_dir = warp_pyramid(enc_s.features, _feature_level_depths(depth_s),
                             k, pose, "forward", size)
    _ensure_finite("forward_warp_features", *(r.warped for r in feats_dir))

    z_hat = transform_latent(enc_s.z, pose)
    _ensure_finite("transform_latent", z_hat)

    out = {"depth_s": depth_s, "feats_dir": feats_dir, "z_hat": z_hat,
           "depth_t": None, "feats_inv": None, "reproj": None,
           "z_t": None, "f_t": None, "depth_from_target": None}

    if switches.use_second_depth_decoder:
        depth_t = model.decode_depth(z_hat, feats_dir if switches.depth_skips else None)
        _ensure_finite("decode_target_depth", *depth_t)
        pose_t_to_s = invert(pose)
        feats_inv = warp_pyramid(enc_s.features, _feature_level_depths(depth_t),
                                 k, pose_t_to_s, "inverse", size)
        _ensure_finite("inverse_warp_features", *(r.warped for r in feats_inv))
        reproj = []
        src = batch.source
        for i, d in enumerate(depth_t):
            level_src = src if i == 0 else F.interpolate(
                src, size=d.shape[-2:], mode="area")
            reproj.append(inverse_warp(level_src, d, k.scaled(2.0**i), pose_t_to_s))
        _ensure_finite("reproject_source", *(r.warped for r in reproj))
        out.update(depth_t=depth_t, feats_inv=feats_inv, reproj=reproj)
        nvs_feats = feats_inv
    else:
        nvs_feats = feats_dir

    nvs = model.decode_nvs(z_hat, nvs_feats if switches.nvs_skips else None)
    _ensure_finite("decode_novel_view", *nvs)
    out["nvs"] = nvs

    if need_consistency and switches.use_second_depth_decoder:
        enc_t = model.encode(batch.target)
        _ensure_finite("encode_target", enc_t.z, *enc_t.features)
        depth_from_target = model.decode_depth(
            enc_t.z, enc_t.features if switches.depth_skips else None)[0]
        _ensure_finite("decode_consistency_depth", depth_from_target)
        out.update(z_t=enc_t.z, f_t=enc_t.features, depth_from_target=depth_from_target)
    return out


def compute_losses(outputs: dict, batch: Batch, weights: LossWeights,
                   extractor=None) -> LossReport:
    """Assemble the five terms from the forward pass products.

    Terms whose inputs were not produced (ablated paths) contribute zero.
    """
    zero = batch.source.new_zeros(())
    recon = recon_loss(outputs["nvs"], batch.target)
    photo = photometric_loss(outputs["reproj"], batch.target) \
        if outputs["reproj"] is not None else zero
    vgg = perceptual_loss(outputs["nvs"][0], batch.target, extractor) \
        if weights.gamma > 0 and extractor is not None else zero
    smooth_s = smoothness_loss(outputs["depth_s"][0], batch.source)
    smooth_t = smoothness_loss(outputs["depth_t"][0], batch.target) \
        if outputs["depth_t"] is not None else zero
    skip = depth_consistency_loss(outputs["depth_from_target"], outputs["depth_t"][0]) \
        if outputs["depth_from_target"] is not None and outputs["depth_t"] is not None else zero
    return total_loss(recon, photo, vgg, smooth_s, smooth_t, skip, weights)


@dataclass
class TrainResult:
    model: SynthesisModel
    history: list
    final_checkpoint: Path | None
    best_checkpoint: Path | None
    out_dir: Path | None


def _split_validation(pairs, fraction, seed):
    if fraction <= 0 or len(pairs) < 2:
        return list(pairs), []
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_val = max(1, int(round(len(pairs) * fraction)))
    val_idx = set(order[:n_val].tolist())
    train = [p for i, p in enumerate(pairs) if i not in val_idx]
    val = [p for i, p in enumerate(pairs) if i in val_idx]
    return train, val


def _validation_ssim(model, pairs, switches) -> float:
    model.eval()
    scores = []
    with torch.no_grad():
        for pair in pairs:
            outputs = forward_pass(model, collate([pair]), switches,
                                   need_consistency=False)
            m = image_metrics(outputs["nvs"][0][0].numpy(),
                              pair.target_image.numpy())
            scores.append(m.ssim)
    model.train()
    return float(np.mean(scores))


def train(config: TrainConfig, pairs, out_dir=None, extractor=None,
          val_pairs=None) -> TrainResult:
    """Optimize the full pipeline on a list of sample pairs.

    Deterministic given the seed. Writes checkpoints at the configured
    cadence plus best-by-validation-SSIM, a jsonl training log, and a final
    evaluation report when ``out_dir`` is given. Divergence (non-finite loss)
    aborts with the last good checkpoint retained.
    """
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    if val_pairs is None:
        train_pairs, val_pairs = _split_validation(pairs, config.val_fraction, config.seed)
    else:
        train_pairs = list(pairs)
    if not train_pairs:
        raise ValueError("no training pairs")

    model = SynthesisModel(config.model)
    model.train()
    extractor = resolve_extractor(config.weights.gamma, extractor)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr,
                           betas=(config.beta1, config.beta2))
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda k: max(0.0, 1.0 - k / max(config.steps, 1)))

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    last_checkpoint = best_checkpoint = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(json.dumps(config.to_mapping(), indent=2))
        log_file = (out_dir / "train_log.jsonl").open("w")
        last_checkpoint = out_dir / "checkpoints" / "init.pt"
        save_checkpoint(model, last_checkpoint, extra={"step": 0})

    history = []
    best_ssim = -math.inf
    start = time.monotonic()
    need_consistency = config.weights.omega > 0

    for step in range(config.steps):
        idx = rng.integers(len(train_pairs), size=config.batch_size)
        batch = collate([train_pairs[int(i)] for i in idx])
        try:
            outputs = forward_pass(model, batch, config.switches, need_consistency)
            report = compute_losses(outputs, batch, config.weights, extractor)
        except (RuntimeError, ValueError) as exc:
            if log_file:
                log_file.close()
            raise TrainingDiverged(f"aborted at step {step}: {exc}",
                                   checkpoint=last_checkpoint) from exc

        opt.zero_grad()
        report.total.backward()
        opt.step()
        sched.step()

        entry = {"step": step, **report.as_floats(),
                 "lr": float(opt.param_groups[0]["lr"]),
                 "wall": time.monotonic() - start}
        history.append(entry)
        if log_file and (step % config.log_every == 0 or step == config.steps - 1):
            log_file.write(json.dumps(entry) + "\n")
            log_file.flush()

        if (step + 1) % config.checkpoint_every == 0:
            if out_dir is not None:
                last_checkpoint = out_dir / "checkpoints" / f"step_{step + 1:06d}.pt"
                save_checkpoint(model, last_checkpoint, extra={"step": step + 1})
            if val_pairs:
                ssim_now = _validation_ssim(model, val_pairs, config.switches)
                if ssim_now > best_ssim:
                    best_ssim = ssim_now
                    if out_dir is not None:
                        best_checkpoint = out_dir / "checkpoints" / "best.pt"
                        save_checkpoint(model, best_checkpoint,
                                        extra={"step": step + 1, "val_ssim": ssim_now})

    final_checkpoint = None
    if out_dir is not None:
        final_checkpoint = out_dir / "checkpoints" / "final.pt"
        save_checkpoint(model, final_checkpoint, extra={"step": config.steps})
        eval_pairs = val_pairs if val_pairs else train_pairs
        model.eval()
        evaluate(model, eval_pairs, switches=config.switches,
                 out_prefix=out_dir / "evaluation",
                 depth_range=(config.model.d_min, config.model.d_max))
        log_file.close()
    model.eval()
    return TrainResult(model=model, history=history,
                       final_checkpoint=final_checkpoint,
                       best_checkpoint=best_checkpoint, out_dir=out_dir)


def evaluate(model: SynthesisModel, pairs, switches: AblationSwitches = AblationSwitches(),
             lpips_extractor=None, out_prefix=None, depth_range=None,
             eigen_crop=False) -> tuple:
    """Per-sample and aggregate metrics for a list of pairs.

    Depth metrics compare the decoded target-view depth against ground truth
    where available and are reported absent otherwise. Deterministic: two
    evaluations of the same checkpoint produce identical reports.
    """
    from .metrics import eigen_validity_mask

    model.eval()
    records = []
    with torch.no_grad():
        for i, pair in enumerate(pairs):
            batch = collate([pair])
            outputs = forward_pass(model, batch, switches, need_consistency=False)
            img = image_metrics(outputs["nvs"][0][0].numpy(),
                                batch.target[0].numpy(), lpips_extractor)
            dm = None
            if pair.gt_depth_t is not None and outputs["depth_t"] is not None:
                gt = pair.gt_depth_t[0].numpy()
                pred = outputs["depth_t"][0]
                if pred.shape[-2:] != gt.shape:
                    pred = F.interpolate(pred, size=gt.shape, mode="bilinear",
                                         align_corners=False)
                pred = pred[0, 0].numpy()
                if eigen_crop:
                    lo, hi = depth_range if depth_range else (1e-3, 80.0)
                    mask = eigen_validity_mask(gt, min_depth=lo, max_depth=hi)
                else:
                    mask = gt > 0
                lo, hi = depth_range if depth_range else (None, None)
                dm = depth_metrics(pred, gt, mask, min_depth=lo, max_depth=hi)
            records.append(merge_metrics(img, dm, sample=i))
    if out_prefix is not None:
        agg = write_report(records, out_prefix)
    else:
        agg = aggregate_records(records)
    return records, agg
