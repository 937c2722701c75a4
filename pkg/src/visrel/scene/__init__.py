from .state import (
    Block,
    Camera,
    Gripper,
    SceneState,
    TableRegions,
    GeometryParams,
    default_camera_rig,
    q9,
)
from .schema import PredicateSchema, PredicateVector, predicate_count
from .labeler import label_predicates
from .sampler import Color, GenConfig, sample_scene, test_palette, train_palette
from .image import read_ppm, write_ppm
from .raster import render_canonical_view, render_view, RenderRandomization
from .episodes import Episode, Frame, KinematicSim, generate_episode
from .dataset import read_dataset, write_dataset, read_manifest

__all__ = [
    "Block",
    "Camera",
    "Gripper",
    "SceneState",
    "TableRegions",
    "GeometryParams",
    "default_camera_rig",
    "q9",
    "PredicateSchema",
    "PredicateVector",
    "predicate_count",
    "label_predicates",
    "Color",
    "GenConfig",
    "sample_scene",
    "test_palette",
    "train_palette",
    "read_ppm",
    "write_ppm",
    "render_canonical_view",
    "render_view",
    "RenderRandomization",
    "Episode",
    "Frame",
    "KinematicSim",
    "generate_episode",
    "read_dataset",
    "write_dataset",
    "read_manifest",
]
