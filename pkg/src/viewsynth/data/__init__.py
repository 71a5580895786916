"""Dataset access, pair sampling policies and the synthetic scene generator."""

from .kitti import KittiDataset, load_kitti, oxts_to_world_pose
from .pairs import (Batch, PairPolicy, SamplePair, SyntheticDataset, collate,
                    load_pairs, sample_pair, save_pairs)
from .shapenet import ShapeNetDataset, load_shapenet
from .synthetic import (SceneSpec, SyntheticScene, generate_dataset,
                        generate_synthetic_scene)

__all__ = [
    "Batch",
    "KittiDataset",
    "PairPolicy",
    "SamplePair",
    "SceneSpec",
    "ShapeNetDataset",
    "SyntheticDataset",
    "SyntheticScene",
    "collate",
    "generate_dataset",
    "generate_synthetic_scene",
    "load_kitti",
    "load_pairs",
    "load_shapenet",
    "oxts_to_world_pose",
    "sample_pair",
    "save_pairs",
]
