"""Flat-shaded triangle rasterizer for scene and canonical object views.

Perspective pinhole projection, z-buffering on inverse depth, one diffuse
directional light plus an ambient term. Good enough to make color, shape,
position and gripper opening visible; photorealism is a non-goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .state import Block, Camera, Gripper, SceneState

NEAR_PLANE = 0.02

TABLE_COLOR = (0.52, 0.42, 0.33)
GRIPPER_COLOR = (0.25, 0.25, 0.30)
BACKGROUND_COLOR = (0.35, 0.38, 0.44)


@dataclass
class RenderRandomization:
    """Jitter bounds for domain randomization (all applied per render).

    Ranges are deliberately mild: wide photometric jitter buries the
    color-matching signal that desk-scale training budgets can recover.
    """

    camera_jitter: float = 0.015  # +- meters per axis
    light_intensity: tuple[float, float] = (0.8, 1.05)
    ambient: tuple[float, float] = (0.38, 0.48)
    background_jitter: float = 0.04  # +- per channel


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


_CUBE_CORNERS = np.array(
    [[sx, sy, sz] for sz in (-0.5, 0.5) for sy in (-0.5, 0.5) for sx in (-0.5, 0.5)]
)
# 12 triangles, two per face, counter-clockwise seen from outside
_CUBE_FACES = np.array([
    [0, 2, 1], [1, 2, 3],  # bottom (z-)
    [4, 5, 6], [5, 7, 6],  # top (z+)
    [0, 1, 4], [1, 5, 4],  # y-
    [2, 6, 3], [3, 6, 7],  # y+
    [0, 4, 2], [2, 4, 6],  # x-
    [1, 3, 5], [3, 7, 5],  # x+
])


def box_triangles(center, half_extents, yaw: float = 0.0) -> np.ndarray:
    """Triangle vertex array [12, 3, 3] for an axis-box rotated about z."""
    verts = _CUBE_CORNERS * (2.0 * np.asarray(half_extents))
    verts = verts @ _rot_z(yaw).T + np.asarray(center)
    return verts[_CUBE_FACES]


GRIP_HALF_GAP_MIN = 0.012
GRIP_HALF_GAP_RANGE = 0.048


def grip_half_gap(opening: float) -> float:
    return GRIP_HALF_GAP_MIN + GRIP_HALF_GAP_RANGE * opening


def gripper_triangles(g: Gripper) -> np.ndarray:
    """Two-finger glyph: finger separation reflects the opening fraction."""
    half_gap = grip_half_gap(g.opening)
    finger = (0.008, 0.008, 0.05)
    parts = [
        box_triangles((g.x - half_gap, g.y, g.z + finger[2]), finger),
        box_triangles((g.x + half_gap, g.y, g.z + finger[2]), finger),
        box_triangles((g.x, g.y, g.z + 2 * finger[2] + 0.014),
                      (half_gap + 0.016, 0.010, 0.014)),
    ]
    return np.concatenate(parts, axis=0)


def scene_triangles(scene: SceneState) -> tuple[np.ndarray, np.ndarray]:
    """All world triangles plus per-triangle base colors [T, 3]."""
    tris = []
    colors = []
    t = scene.table
    table = np.array([
        [[t.x_min, t.y_min, 0.0], [t.x_max, t.y_min, 0.0], [t.x_max, t.y_max, 0.0]],
        [[t.x_min, t.y_min, 0.0], [t.x_max, t.y_max, 0.0], [t.x_min, t.y_max, 0.0]],
    ])
    tris.append(table)
    colors.append(np.tile(TABLE_COLOR, (2, 1)))
    for b in scene.blocks:
        tris.append(box_triangles((b.x, b.y, b.z), (b.size / 2,) * 3, b.yaw))
        colors.append(np.tile(b.rgb, (12, 1)))
    gt = gripper_triangles(scene.gripper)
    tris.append(gt)
    colors.append(np.tile(GRIPPER_COLOR, (len(gt), 1)))
    return np.concatenate(tris, axis=0), np.concatenate(colors, axis=0)


def project(camera: Camera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World points [..., 3] -> pixel coords [..., 2] and depths [...]."""
    right, down, fwd = (np.asarray(v) for v in camera.basis())
    rel = np.asarray(points) - np.asarray(camera.position)
    x = rel @ right
    y = rel @ down
    z = rel @ fwd
    f = camera.focal_px
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * x / z + camera.width / 2.0
        v = f * y / z + camera.height / 2.0
    return np.stack([u, v], axis=-1), z


def rasterize(
    triangles: np.ndarray,
    colors: np.ndarray,
    camera: Camera,
    light_dir: np.ndarray,
    light_intensity: float,
    ambient: float,
    background: np.ndarray,
) -> np.ndarray:
    """Z-buffered flat-shaded render -> uint8 [H, W, 3]."""
    h, w = camera.height, camera.width
    frame = np.empty((h, w, 3), dtype=np.float64)
    frame[:] = np.clip(background, 0.0, 1.0)
    zbuf = np.zeros((h, w), dtype=np.float64)  # stores 1/z, larger = closer

    uv, depth = project(camera, triangles.reshape(-1, 3))
    uv = uv.reshape(-1, 3, 2)
    depth = depth.reshape(-1, 3)
    if np.any(depth <= NEAR_PLANE):
        bad = np.any(depth <= NEAR_PLANE, axis=1)
        if np.all(bad):
            raise ValueError("degenerate camera: scene entirely behind the near plane")

    # flat shading per triangle
    e1 = triangles[:, 1] - triangles[:, 0]
    e2 = triangles[:, 2] - triangles[:, 0]
    normals = np.cross(e1, e2)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    normals /= norms
    lam = np.abs(normals @ light_dir)  # two-sided: faces are unordered
    shade = np.clip(ambient + light_intensity * lam, 0.0, 1.3)
    lit = np.clip(colors * shade[:, None], 0.0, 1.0)

    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    for t in range(len(triangles)):
        if np.any(depth[t] <= NEAR_PLANE):
            continue
        tri = uv[t]
        x0 = max(int(np.floor(tri[:, 0].min())), 0)
        x1 = min(int(np.ceil(tri[:, 0].max())) + 1, w)
        y0 = max(int(np.floor(tri[:, 1].min())), 0)
        y1 = min(int(np.ceil(tri[:, 1].max())) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        ax, ay = tri[0]
        bx, by = tri[1]
        cx, cy = tri[2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area) < 1e-12:
            continue
        px = xs[y0:y1, x0:x1]
        py = ys[y0:y1, x0:x1]
        w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / area
        w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        inv_z = w0 / depth[t, 0] + w1 / depth[t, 1] + w2 / depth[t, 2]
        zslice = zbuf[y0:y1, x0:x1]
        closer = inside & (inv_z > zslice)
        if not closer.any():
            continue
        zslice[closer] = inv_z[closer]
        frame[y0:y1, x0:x1][closer] = lit[t]

    return (frame * 255.0 + 0.5).astype(np.uint8)


def _sample_light(rng: np.random.Generator, rand: RenderRandomization):
    az = rng.uniform(0.0, 2 * math.pi)
    el = rng.uniform(math.radians(35), math.radians(80))
    light = np.array([
        math.cos(el) * math.cos(az),
        math.cos(el) * math.sin(az),
        math.sin(el),
    ])
    intensity = rng.uniform(*rand.light_intensity)
    ambient = rng.uniform(*rand.ambient)
    return light, intensity, ambient


def render_view(
    scene: SceneState,
    camera: Camera,
    rng: np.random.Generator,
    rand: RenderRandomization | None = None,
) -> np.ndarray:
    """Render one camera view with domain randomization.

    Deterministic given the rng state: the same seeded generator always
    produces a byte-identical image.
    """
    rand = rand or RenderRandomization()
    jit = rng.uniform(-rand.camera_jitter, rand.camera_jitter, size=3)
    cam = Camera(
        tuple(np.asarray(camera.position) + jit),
        camera.look_at, camera.width, camera.height, camera.fov_deg,
    )
    light, intensity, ambient = _sample_light(rng, rand)
    bg = np.asarray(BACKGROUND_COLOR) + rng.uniform(
        -rand.background_jitter, rand.background_jitter, size=3
    )
    tris, cols = scene_triangles(scene)
    return rasterize(tris, cols, cam, light, intensity, ambient, bg)


def render_canonical_view(
    color_rgb: tuple[float, float, float],
    size: float,
    patch_size: int,
    rng: np.random.Generator,
    rand: RenderRandomization | None = None,
) -> np.ndarray:
    """Render one block alone, centered, from a random viewpoint.

    The output is patch_size x patch_size, matching the model patch width,
    and uses lighting/pose randomization independent of any scene render.
    """
    rand = rand or RenderRandomization()
    az = rng.uniform(0.0, 2 * math.pi)
    el = rng.uniform(math.radians(15), math.radians(65))
    dist = size * rng.uniform(2.6, 3.4)
    center = np.array([0.0, 0.0, size / 2.0])
    pos = center + dist * np.array([
        math.cos(el) * math.cos(az),
        math.cos(el) * math.sin(az),
        math.sin(el),
    ])
    cam = Camera(tuple(pos), tuple(center), patch_size, patch_size, fov_deg=40.0)
    yaw = rng.uniform(0.0, 2 * math.pi)
    tris = box_triangles((0.0, 0.0, size / 2.0), (size / 2.0,) * 3, yaw)
    cols = np.tile(color_rgb, (12, 1))
    light, intensity, ambient = _sample_light(rng, rand)
    bg = np.asarray(BACKGROUND_COLOR) + rng.uniform(
        -rand.background_jitter, rand.background_jitter, size=3
    )
    return rasterize(tris, cols, cam, light, intensity, ambient, bg)


def render_block_views(scene: SceneState, patch_size: int, rng: np.random.Generator,
                       objects: list[int] | None = None) -> list[np.ndarray]:
    """Canonical views for the given blocks (default: all), in order."""
    idx = objects if objects is not None else range(scene.n_blocks)
    return [
        render_canonical_view(scene.blocks[i].rgb, scene.blocks[i].size, patch_size, rng)
        for i in idx
    ]
