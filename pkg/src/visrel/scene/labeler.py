"""Geometric ground-truth labeling of predicate vectors from scene state.

Labels are a pure function of the SceneState (never of rendering or
camera jitter), so identical states always yield identical vectors.
"""

from __future__ import annotations

import math

import numpy as np

from .schema import REGIONS, PredicateSchema, PredicateVector
from .state import Camera, GeometryParams, SceneState


def _xy_dist(ax: float, ay: float, bx: float, by: float) -> float:
    return math.hypot(ax - bx, ay - by)


def _resting_on_table(b, geom: GeometryParams) -> bool:
    return abs(b.z - b.size / 2.0) <= geom.contact_tol


def _stacked_on(top, base, geom: GeometryParams) -> bool:
    gap = top.bottom - base.top
    return abs(gap) <= geom.contact_tol and _xy_dist(top.x, top.y, base.x, base.y) <= base.size / 2.0


def label_predicates(
    scene: SceneState,
    schema: PredicateSchema,
    objects: list[int] | None = None,
    geom: GeometryParams | None = None,
    view_camera: Camera | None = None,
) -> PredicateVector:
    """Evaluate every schema literal against the scene geometry.

    ``objects`` maps schema object ids to block indices; by default the
    schema covers blocks 0..N-1 in order. Blocks outside the mapping still
    participate in the geometry (a distractor resting on a queried block
    makes its top not clear), they just have no slots of their own.

    ``view_camera`` supplies the reference view for the optional
    camera-relative relation families and defaults to the first camera of
    the standard rig.
    """
    geom = geom or GeometryParams()
    if objects is None:
        objects = list(range(schema.n_objects))
    if len(objects) != schema.n_objects:
        raise ValueError(
            f"schema has {schema.n_objects} objects but {len(objects)} block indices given"
        )
    for k in objects:
        if not 0 <= k < scene.n_blocks:
            raise ValueError(f"block index {k} out of range for scene with {scene.n_blocks}")

    g = scene.gripper
    held = g.held
    values = np.zeros(schema.size, dtype=bool)
    fam = schema.family_indices

    # stacked is evaluated over all scene blocks: derived facts such as
    # top_is_clear must see distractors too.
    def stacked(i: int, j: int) -> bool:
        if i == j or i == held:
            return False
        return _stacked_on(scene.blocks[i], scene.blocks[j], geom)

    on_surface = values[fam["on_surface"][0]:fam["on_surface"][-1] + 1].reshape(
        schema.n_objects, len(REGIONS)
    )
    for s, bi in enumerate(objects):
        b = scene.blocks[bi]
        if bi != held and _resting_on_table(b, geom):
            r = scene.table.region_of(b.x, b.y)
            on_surface[s, REGIONS.index(r)] = True
        if held == bi:
            values[fam["has_obj"][s]] = True
        if not any(stacked(i, bi) for i in range(scene.n_blocks)):
            values[fam["top_is_clear"][s]] = True
        if held is None:
            radius = geom.approach_radius_factor * b.size
            in_xy = _xy_dist(g.x, g.y, b.x, b.y) <= radius
            in_z = b.top - geom.contact_tol <= g.z <= b.top + geom.approach_height
            if in_xy and in_z:
                values[fam["in_approach_region"][s]] = True

    for p, (si, sj) in enumerate(schema.pairs):
        bi, bj = objects[si], objects[sj]
        a, b = scene.blocks[bi], scene.blocks[bj]
        values[fam["stacked"][p]] = stacked(bi, bj)
        if bi == held:
            gap = a.bottom - b.top
            if geom.contact_tol < gap <= geom.align_gap_max \
                    and _xy_dist(a.x, a.y, b.x, b.y) <= b.size / 2.0:
                values[fam["aligned_with"][p]] = True

    if schema.view_relations:
        from .state import default_camera_rig

        cam = view_camera or default_camera_rig()[0]
        right, _, fwd = cam.basis()
        sx, depth = [], []
        for bi in objects:
            b = scene.blocks[bi]
            rel = (b.x - cam.position[0], b.y - cam.position[1], b.z - cam.position[2])
            sx.append(sum(r * v for r, v in zip(rel, right)))
            depth.append(sum(r * v for r, v in zip(rel, fwd)))
        for p, (si, sj) in enumerate(schema.pairs):
            values[fam["left_of"][p]] = sx[si] < sx[sj]
            values[fam["right_of"][p]] = sx[si] > sx[sj]
            values[fam["front_of"][p]] = depth[si] < depth[sj]
            values[fam["behind_of"][p]] = depth[si] > depth[sj]

    return PredicateVector(schema, values)
