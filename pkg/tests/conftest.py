import numpy as np
import pytest
import torch
import torch.nn as nn

from viewsynth.geometry import CameraIntrinsics, Pose


def random_rotation(rng, max_angle_rad=np.pi):
    """Uniform-axis random rotation with angle up to ``max_angle_rad`` (Rodrigues)."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle_rad, max_angle_rad)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def random_pose(rng, max_angle_rad=np.pi, max_trans=1.0):
    return Pose(random_rotation(rng, max_angle_rad),
                rng.uniform(-max_trans, max_trans, size=3))


def smooth_map(rng, h, w, lo=1.0, hi=3.0):
    """Random smooth positive map built from a few low-frequency sinusoids."""
    v, u = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.zeros((h, w))
    for _ in range(3):
        fu, fv = rng.uniform(-0.5, 0.5, size=2) / max(h, w) * 2 * np.pi
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.uniform(0.2, 1.0) * np.sin(fu * u + fv * v + phase)
    out -= out.min()
    if out.max() > 0:
        out /= out.max()
    return lo + (hi - lo) * out


class TinyFeatureExtractor(nn.Module):
    """Frozen 2-layer conv stand-in for a pretrained perceptual network."""

    def __init__(self, seed=0):
        super().__init__()
        torch.manual_seed(seed)
        self.conv1 = nn.Conv2d(3, 8, 3, padding=1)
        self.conv2 = nn.Conv2d(8, 8, 3, stride=2, padding=1)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        f1 = torch.relu(self.conv1(x))
        f2 = torch.relu(self.conv2(f1))
        return [f1, f2]


@pytest.fixture
def tiny_extractor():
    return TinyFeatureExtractor().double()


@pytest.fixture
def simple_intrinsics():
    return CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
