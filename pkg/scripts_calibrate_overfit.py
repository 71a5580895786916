"""Calibration probe for the desk-scale overfit benchmark (not shipped)."""
import json
import sys
import time

import numpy as np
import torch

from viewsynth.data import SceneSpec, generate_dataset
from viewsynth.losses import LossWeights
from viewsynth.networks import ModelConfig
from viewsynth.trainer import TrainConfig, evaluate, train

lr = float(sys.argv[1]) if len(sys.argv) > 1 else 2e-4
omega = float(sys.argv[2]) if len(sys.argv) > 2 else 0.1
steps = int(sys.argv[3]) if len(sys.argv) > 3 else 2000

cfg = TrainConfig(
    steps=steps, batch_size=2, lr=lr, seed=0, checkpoint_every=100000,
    val_fraction=0.0, log_every=100,
    weights=LossWeights(alpha=1.0, beta=1.0, gamma=0.0, delta=0.1, omega=omega),
    model=ModelConfig(embedding_width=1536, d_min=0.5, d_max=3.0, input_size=64,
                      decoder_channels=(256, 128, 64, 32, 16)),
)
pairs = generate_dataset(SceneSpec(), 10, seed=100)
t0 = time.monotonic()
result = train(cfg, pairs)
dt = time.monotonic() - t0
records, agg = evaluate(result.model, pairs,
                        depth_range=(cfg.model.d_min, cfg.model.d_max))
first = result.history[0]["recon"]
last = np.mean([h["recon"] for h in result.history[-50:]])
print(json.dumps({"lr": lr, "omega": omega, "steps": steps,
                  "minutes": round(dt / 60, 1),
                  "recon_first": round(first, 4), "recon_last": round(float(last), 4),
                  "l1": round(agg["l1"], 4), "ssim": round(agg["ssim"], 4),
                  "abs_rel": round(agg["abs_rel"], 4)}))
