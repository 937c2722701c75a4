"""Flatten dataset episodes into training arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.dataset import read_dataset
from ..scene.schema import PredicateSchema


@dataclass
class FrameArrays:
    """Per-frame tensors for one dataset, in episode order.

    images: uint8 [F, C, H, W, 3] (C camera views)
    canon:  uint8 [F, N, p, p, 3]
    labels: float32 [F, size]
    openings: float32 [F]
    """

    images: np.ndarray
    canon: np.ndarray
    labels: np.ndarray
    openings: np.ndarray
    block_pos: np.ndarray    # float32 [F, N, 3] block centers
    gripper_pos: np.ndarray  # float32 [F, 3]
    schema: PredicateSchema
    manifest: dict

    @property
    def n_frames(self) -> int:
        return len(self.labels)

    @property
    def n_views(self) -> int:
        return self.images.shape[1]


def load_frame_arrays(root, views: int | None = None, max_frames: int = 0) -> FrameArrays:
    """Load a rendered dataset into arrays.

    ``views`` limits how many camera views are kept per frame (None = all).
    ``max_frames`` > 0 truncates the dataset after that many frames.
    """
    episodes, manifest = read_dataset(root)
    images, canon, labels, openings = [], [], [], []
    block_pos, gripper_pos = [], []
    schema = episodes[0].schema if episodes else None
    done = False
    for ep in episodes:
        if ep.schema != schema:
            raise ValueError("mixed schemas in one dataset")
        for fr in ep.frames:
            if fr.views is None or fr.canon_views is None:
                raise ValueError("dataset was generated without rendering")
            keep = fr.views if views is None else fr.views[:views]
            images.append(np.stack(keep))
            canon.append(np.stack(fr.canon_views))
            labels.append(fr.labels.values.astype(np.float32))
            g = fr.scene.gripper
            openings.append(np.float32(g.opening))
            gripper_pos.append((g.x, g.y, g.z))
            block_pos.append([(b.x, b.y, b.z) for b in fr.scene.blocks])
            if max_frames and len(labels) >= max_frames:
                done = True
                break
        if done:
            break
    return FrameArrays(
        images=np.stack(images),
        canon=np.stack(canon),
        labels=np.stack(labels),
        openings=np.asarray(openings, dtype=np.float32),
        block_pos=np.asarray(block_pos, dtype=np.float32),
        gripper_pos=np.asarray(gripper_pos, dtype=np.float32),
        schema=schema,
        manifest=manifest,
    )
