"""Random scene sampling and color palettes.

The held-out test palette is the 7 named colors (xkcd color-survey RGB
values). The train palette is procedurally spaced in hue with every hue
within ``HUE_MARGIN`` of a test color excluded, so the two palettes are
disjoint by construction and the color split is a genuine hold-out.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .state import Block, GeometryParams, Gripper, HOME_POSE, SceneState, q9


class Color(NamedTuple):
    name: str
    rgb: tuple[float, float, float]


TEST_COLORS = (
    Color("red", (0xE5 / 255, 0x00 / 255, 0x00 / 255)),
    Color("green", (0x15 / 255, 0xB0 / 255, 0x1A / 255)),
    Color("blue", (0x03 / 255, 0x43 / 255, 0xDF / 255)),
    Color("yellow", (0xFF / 255, 0xFF / 255, 0x14 / 255)),
    Color("aqua", (0x13 / 255, 0xEA / 255, 0xC9 / 255)),
    Color("pink", (0xFF / 255, 0x81 / 255, 0xC0 / 255)),
    Color("purple", (0x7E / 255, 0x1E / 255, 0x9C / 255)),
)

HUE_MARGIN = 0.035  # ~12.6 degrees


def test_palette() -> list[Color]:
    return list(TEST_COLORS)


def _hue_dist(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def train_palette(n: int = 300) -> list[Color]:
    """n colors whose hues avoid a margin around every test-color hue."""
    test_hues = [colorsys.rgb_to_hsv(*c.rgb)[0] for c in TEST_COLORS]
    candidates = [
        h for h in np.linspace(0.0, 1.0, 2400, endpoint=False)
        if all(_hue_dist(h, th) > HUE_MARGIN for th in test_hues)
    ]
    if len(candidates) < n:
        raise ValueError(f"only {len(candidates)} admissible hues for {n} colors")
    picks = np.linspace(0, len(candidates) - 1, n).round().astype(int)
    sats = (0.95, 0.7, 0.85)
    vals = (0.95, 0.85, 0.7)
    out = []
    for k, ci in enumerate(picks):
        h = candidates[ci]
        s, v = sats[k % 3], vals[(k // 3) % 3]
        rgb = colorsys.hsv_to_rgb(h, s, v)
        out.append(Color(f"train{k:03d}", tuple(q9(c) for c in rgb)))
    return out


def palette_by_name(name: str) -> list[Color]:
    if name == "train":
        return train_palette()
    if name == "test":
        return test_palette()
    raise ValueError(f"unknown palette {name!r} (expected 'train' or 'test')")


@dataclass
class GenConfig:
    n_blocks: int = 4
    palette: list[Color] = field(default_factory=train_palette)
    # block edges sized to cover most of a 16 px patch under the default rig
    size_range: tuple[float, float] = (0.065, 0.085)
    stack_prob: float = 0.25
    # gripper placement mix for i.i.d. frame sampling
    gripper_mode: str = "mixed"  # "home" | "mixed"
    min_separation: float = 0.17
    placement_retries: int = 200
    workspace: tuple[float, float, float, float] = (-0.28, 0.28, -0.26, 0.28)
    geom: GeometryParams = field(default_factory=GeometryParams)


class PlacementError(RuntimeError):
    pass


def _place_free(rng: np.random.Generator, cfg: GenConfig, taken_xy: list[tuple[float, float]]):
    x0, x1, y0, y1 = cfg.workspace
    for _ in range(cfg.placement_retries):
        x, y = rng.uniform(x0, x1), rng.uniform(y0, y1)
        if all((x - tx) ** 2 + (y - ty) ** 2 >= cfg.min_separation**2 for tx, ty in taken_xy):
            return q9(x), q9(y)
    raise PlacementError(
        f"could not place a block after {cfg.placement_retries} retries "
        f"(n_blocks={cfg.n_blocks}, min_separation={cfg.min_separation})"
    )


def sample_scene(cfg: GenConfig, rng: np.random.Generator) -> SceneState:
    """Sample a collision-free scene with distinct colors per block.

    Blocks either rest on the table (tower bases keep ``min_separation``
    between each other) or, with probability ``stack_prob`` each, go on
    top of a random currently-clear block. The gripper pose is drawn from
    ``gripper_mode``: always the home pose, or a mix of high/free poses,
    hovering above a block, and holding a block.
    """
    if cfg.n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    if len(cfg.palette) < cfg.n_blocks:
        raise ValueError(f"palette has {len(cfg.palette)} colors, need {cfg.n_blocks}")
    colors = [cfg.palette[k] for k in rng.choice(len(cfg.palette), cfg.n_blocks, replace=False)]

    blocks: list[Block] = []
    taken_xy: list[tuple[float, float]] = []
    clear_tops: list[int] = []
    for i, col in enumerate(colors):
        size = q9(rng.uniform(*cfg.size_range))
        yaw = q9(rng.uniform(0.0, np.pi / 2))
        if clear_tops and rng.random() < cfg.stack_prob:
            t_idx = int(rng.choice(clear_tops))
            top = blocks[t_idx]
            jitter = 0.1 * top.size
            x = q9(top.x + rng.uniform(-jitter, jitter))
            y = q9(top.y + rng.uniform(-jitter, jitter))
            z = q9(top.top + size / 2.0)
            clear_tops.remove(t_idx)
        else:
            x, y = _place_free(rng, cfg, taken_xy)
            z = q9(size / 2.0)
            taken_xy.append((x, y))
        clear_tops.append(i)
        blocks.append(Block(col.name, tuple(q9(c) for c in col.rgb), size, x, y, z, yaw))

    gripper = _sample_gripper(cfg, rng, blocks)
    scene = SceneState(blocks, gripper)
    scene.validate(cfg.geom)
    return scene


def _sample_gripper(cfg: GenConfig, rng: np.random.Generator, blocks: list[Block]) -> Gripper:
    if cfg.gripper_mode == "home":
        return Gripper(*(q9(v) for v in HOME_POSE), opening=1.0, held=None)
    covered = set()
    for i, a in enumerate(blocks):
        for j, b in enumerate(blocks):
            if i != j and abs(a.bottom - b.top) <= cfg.geom.contact_tol \
                    and (a.x - b.x) ** 2 + (a.y - b.y) ** 2 <= (b.size / 2) ** 2:
                covered.add(j)
    clear = [i for i in range(len(blocks)) if i not in covered]
    mode = rng.choice(("high", "hover", "hold"), p=(0.4, 0.35, 0.25))
    if mode == "hover":
        b = blocks[int(rng.choice(clear))]
        dz = rng.uniform(0.01, cfg.geom.approach_height - 0.01)
        return Gripper(q9(b.x), q9(b.y), q9(b.top + dz), opening=1.0, held=None)
    if mode == "hold":
        hi = int(rng.choice(clear))
        b = blocks[hi]
        # hold either high up or aligned above another clear block
        others = [i for i in clear if i != hi]
        if others and rng.random() < 0.5:
            t = blocks[int(rng.choice(others))]
            gap = rng.uniform(cfg.geom.contact_tol + 0.005, cfg.geom.align_gap_max - 0.005)
            b.x, b.y = t.x, t.y
            b.z = t.top + gap + b.size / 2.0
        else:
            b.z = b.size / 2.0 + rng.uniform(0.10, 0.22)
        b.x, b.y, b.z = q9(b.x), q9(b.y), q9(b.z)
        opening = max(0.0, min(1.0, (b.size / 2 - 0.012) / 0.048))
        return Gripper(b.x, b.y, q9(b.top), opening=q9(opening), held=hi)
    x0, x1, y0, y1 = cfg.workspace
    return Gripper(
        q9(rng.uniform(x0, x1)), q9(rng.uniform(y0, y1)), q9(rng.uniform(0.25, 0.4)),
        opening=q9(rng.uniform(0.3, 1.0)), held=None,
    )
