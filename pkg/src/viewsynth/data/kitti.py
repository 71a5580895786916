"""Road-scene dataset loader over the raw sync+rect directory layout.

Expected structure under the root::

    <root>/<date>/calib_cam_to_cam.txt
    <root>/<date>/calib_imu_to_velo.txt
    <root>/<date>/calib_velo_to_cam.txt
    <root>/<date>/<date>_drive_XXXX_sync/image_02/data/NNNNNNNNNN.png
    <root>/<date>/<date>_drive_XXXX_sync/oxts/data/NNNNNNNNNN.txt
    <root>/<date>/<drive>/proj_depth/groundtruth/image_02/NNNNNNNNNN.png  (optional)

Camera poses are derived from the oxts GPS/IMU records (mercator projection
plus roll/pitch/yaw), chained through the imu->velo->cam calibration when the
calibration files are present. Images are center-cropped to a square and
resized to the requested model input size, with intrinsics adjusted to match.
Split files live at ``<root>/splits/<name>.txt`` with lines
``<date>/<drive> <frame>``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..geometry import CameraIntrinsics, Pose, compose, invert
from .pairs import PairPolicy, SamplePair

log = logging.getLogger(__name__)

EARTH_RADIUS = 6378137.0

# imu axes are (forward, left, up); camera axes are (right, down, forward)
IMU_TO_CAM_APPROX = np.array([[0.0, -1.0, 0.0],
                              [0.0, 0.0, -1.0],
                              [1.0, 0.0, 0.0]])


def _rot_from_rpy(roll, pitch, yaw) -> np.ndarray:
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


def oxts_to_world_pose(record, scale: float) -> np.ndarray:
    """4x4 imu-to-world matrix from one oxts record (lat lon alt r p y ...)."""
    lat, lon, alt, roll, pitch, yaw = record[:6]
    mx = scale * math.radians(lon) * EARTH_RADIUS
    my = scale * EARTH_RADIUS * math.log(math.tan(math.radians(90.0 + lat) / 2.0))
    m = np.eye(4)
    m[:3, :3] = _rot_from_rpy(roll, pitch, yaw)
    m[:3, 3] = (mx, my, alt)
    return m


def _parse_calib(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            out[key.strip()] = np.array([float(v) for v in rest.split()])
        except ValueError:
            continue
    return out


def _rigid_from_calib(calib: dict) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = calib["R"].reshape(3, 3)
    m[:3, 3] = calib["T"]
    return m


@dataclass
class _Frame:
    drive: str
    index: int
    image: Path
    cam_from_world: np.ndarray   # 4x4


class KittiDataset:
    """Indexed frames with camera poses, pair sampling and image preparation."""

    def __init__(self, frames, intrinsics_by_drive, image_size):
        self.frames = frames
        self.intrinsics_by_drive = intrinsics_by_drive
        self.image_size = image_size
        self._by_drive = {}
        for i, f in enumerate(frames):
            self._by_drive.setdefault(f.drive, []).append(i)

    def __len__(self):
        return len(self.frames)

    def relative_pose(self, i: int, j: int) -> Pose:
        """Source-to-target camera transform between frames i and j."""
        a, b = self.frames[i], self.frames[j]
        cam_t = Pose.from_matrix(b.cam_from_world)
        cam_s = Pose.from_matrix(a.cam_from_world)
        return compose(cam_t, invert(cam_s))

    def _prepare(self, frame: _Frame):
        img = Image.open(frame.image).convert("RGB")
        w, h = img.size
        side = min(w, h)
        left, top = (w - side) // 2, (h - side) // 2
        img = img.crop((left, top, left + side, top + side))
        img = img.resize((self.image_size, self.image_size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
        k = self.intrinsics_by_drive[frame.drive]
        scale = self.image_size / side
        adjusted = CameraIntrinsics((k.fx * scale), (k.fy * scale),
                                    ((k.cx - left) * scale), ((k.cy - top) * scale))
        return torch.from_numpy(arr.transpose(2, 0, 1)), adjusted

    def _gt_depth(self, frame: _Frame):
        path = (frame.image.parents[2] / "proj_depth" / "groundtruth"
                / "image_02" / frame.image.name)
        if not path.exists():
            return None
        arr = np.asarray(Image.open(path), dtype=np.float32) / 256.0
        return torch.from_numpy(arr).unsqueeze(0)

    def make_pair(self, i: int, j: int) -> SamplePair:
        src, k = self._prepare(self.frames[i])
        tgt, _ = self._prepare(self.frames[j])
        return SamplePair(source_image=src, target_image=tgt,
                          pose_s_to_t=self.relative_pose(i, j), intrinsics=k,
                          gt_depth_s=None, gt_depth_t=None)

    def raw_gt_depth(self, j: int):
        """Full-resolution sparse ground truth for frame j, if published."""
        return self._gt_depth(self.frames[j])

    def candidate_targets(self, i: int, policy: PairPolicy):
        drive_frames = self._by_drive[self.frames[i].drive]
        src_index = self.frames[i].index
        out = []
        for j in drive_frames:
            gap = abs(self.frames[j].index - src_index)
            if not 1 <= gap <= policy.frame_window:
                continue
            t = self.relative_pose(i, j).translation
            if float(torch.linalg.norm(t)) < policy.min_translation:
                continue
            out.append(j)
        return out

    def sample_pair(self, policy: PairPolicy, rng) -> SamplePair:
        order = rng.permutation(len(self.frames))
        for i in order:
            targets = self.candidate_targets(int(i), policy)
            if targets:
                return self.make_pair(int(i), targets[int(rng.integers(len(targets)))])
        raise ValueError("no frame pair satisfies the sampling policy")

    def iter_pairs(self, policy: PairPolicy, rng):
        """Deterministic pass: one sampled target per source frame."""
        for i in range(len(self.frames)):
            targets = self.candidate_targets(i, policy)
            if not targets:
                log.warning("skipping %s frame %d: no valid partner",
                            self.frames[i].drive, self.frames[i].index)
                continue
            yield i, targets[int(rng.integers(len(targets)))]


def _read_split(root: Path, split: str):
    names = {"eigen_train": ["eigen_train.txt"],
             "eigen_test_nvs": ["eigen_test_nvs.txt", "eigen_test.txt"]}
    if split not in names:
        raise ValueError(f"unknown split {split!r}; expected eigen_train or eigen_test_nvs")
    for name in names[split]:
        path = root / "splits" / name
        if path.exists():
            entries = set()
            for line in path.read_text().splitlines():
                parts = line.split()
                if len(parts) >= 2:
                    entries.add((parts[0].split("/")[-1], int(parts[1])))
            return entries
    log.warning("split file for %r not found under %s; using every frame", split, root)
    return None


def load_kitti(root, split: str, image_size: int = 256) -> KittiDataset:
    """Index the dataset under ``root`` for the given split."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    wanted = _read_split(root, split)

    frames, intrinsics = [], {}
    for date_dir in sorted(p for p in root.iterdir() if p.is_dir() and p.name != "splits"):
        calib_path = date_dir / "calib_cam_to_cam.txt"
        if not calib_path.exists():
            log.warning("skipping %s: missing calib_cam_to_cam.txt", date_dir.name)
            continue
        calib = _parse_calib(calib_path)
        if "P_rect_02" not in calib:
            log.warning("skipping %s: calibration lacks P_rect_02", date_dir.name)
            continue
        p2 = calib["P_rect_02"].reshape(3, 4)
        k = CameraIntrinsics(p2[0, 0], p2[1, 1], p2[0, 2], p2[1, 2])

        imu_to_cam = None
        imu2velo = date_dir / "calib_imu_to_velo.txt"
        velo2cam = date_dir / "calib_velo_to_cam.txt"
        if imu2velo.exists() and velo2cam.exists():
            imu_to_cam = _rigid_from_calib(_parse_calib(velo2cam)) \
                @ _rigid_from_calib(_parse_calib(imu2velo))
        else:
            log.warning("%s: missing imu/velo calibration, approximating the "
                        "camera pose from the imu axes", date_dir.name)

        for drive_dir in sorted(p for p in date_dir.iterdir()
                                if p.is_dir() and p.name.endswith("_sync")):
            image_dir = drive_dir / "image_02" / "data"
            oxts_dir = drive_dir / "oxts" / "data"
            if not image_dir.is_dir() or not oxts_dir.is_dir():
                log.warning("skipping %s: incomplete drive layout", drive_dir.name)
                continue
            scale = None
            drive = drive_dir.name
            intrinsics[drive] = k
            for image in sorted(image_dir.glob("*.png")):
                idx = int(image.stem)
                if wanted is not None and (drive, idx) not in wanted:
                    continue
                oxts = oxts_dir / f"{image.stem}.txt"
                if not oxts.exists():
                    log.warning("skipping %s frame %d: missing oxts record", drive, idx)
                    continue
                record = [float(v) for v in oxts.read_text().split()]
                if scale is None:
                    scale = math.cos(math.radians(record[0]))
                world_from_imu = oxts_to_world_pose(record, scale)
                if imu_to_cam is not None:
                    cam_from_world = imu_to_cam @ np.linalg.inv(world_from_imu)
                else:
                    approx = np.eye(4)
                    approx[:3, :3] = IMU_TO_CAM_APPROX
                    cam_from_world = approx @ np.linalg.inv(world_from_imu)
                frames.append(_Frame(drive, idx, image, cam_from_world))
    return KittiDataset(frames, intrinsics, image_size)
