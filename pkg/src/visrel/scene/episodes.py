"""Manipulation episodes: plan a block-rearrangement task, execute it with
teleport-style kinematics, and label every frame.

Each frame snapshots the world after a skill completes. The kinematic
constants are chosen so that the geometric labels of every snapshot agree
literal-for-literal with the symbolic STRIPS trajectory; the generator
asserts this agreement on every frame it emits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labeler import label_predicates
from .sampler import GenConfig, sample_scene
from .schema import PredicateSchema, PredicateVector
from .state import Camera, GeometryParams, HOME_POSE, SceneState, default_camera_rig, q9
from .raster import RenderRandomization, render_block_views, render_view

HOVER_HEIGHT = 0.12     # gripper above block top after approach (< approach_height)
LIFT_DELTA = 0.18       # block rise after lift (> align_gap_max)
ALIGN_GAP = 0.045       # block bottom above target top after align (<= align_gap_max)
RETREAT_HEIGHT = 0.25   # gripper above placed block top (> approach_height)


class SkillNotApplicable(RuntimeError):
    def __init__(self, skill, why: str):
        super().__init__(f"{skill}: {why}")
        self.skill = skill
        self.why = why


def _grip_opening_for(size: float) -> float:
    # finger half-gap matches the block half-width (see raster.grip_half_gap)
    return q9(max(0.0, min(1.0, (size / 2.0 - 0.012) / 0.048)))


class KinematicSim:
    """Applies skills to a SceneState by teleporting gripper and blocks."""

    def __init__(self, scene: SceneState, geom: GeometryParams | None = None):
        self.scene = scene.copy()
        self.geom = geom or GeometryParams()

    def _index(self, obj_id: str) -> int:
        ids = self.scene.object_ids()
        if obj_id not in ids:
            raise KeyError(f"unknown object id {obj_id}")
        return ids.index(obj_id)

    def _clear(self, bi: int) -> bool:
        b = self.scene.blocks[bi]
        for j, other in enumerate(self.scene.blocks):
            if j == bi or j == self.scene.gripper.held:
                continue
            if abs(other.bottom - b.top) <= self.geom.contact_tol and \
                    (other.x - b.x) ** 2 + (other.y - b.y) ** 2 <= (b.size / 2) ** 2:
                return False
        return True

    def _move_gripper(self, x: float, y: float, z: float) -> None:
        g = self.scene.gripper
        g.x, g.y, g.z = q9(x), q9(y), q9(z)
        if g.held is not None:
            b = self.scene.blocks[g.held]
            b.x, b.y = g.x, g.y
            b.z = q9(g.z - b.size / 2.0)

    def apply(self, name: str, params: tuple[str, ...]) -> None:
        g = self.scene.gripper
        if name == "approach":
            if g.held is not None:
                raise SkillNotApplicable((name, params), "gripper is holding a block")
            b = self.scene.blocks[self._index(params[0])]
            g.opening = 1.0
            self._move_gripper(b.x, b.y, b.top + HOVER_HEIGHT)
        elif name == "grasp":
            bi = self._index(params[0])
            b = self.scene.blocks[bi]
            if g.held is not None:
                raise SkillNotApplicable((name, params), "gripper is holding a block")
            if not self._clear(bi):
                raise SkillNotApplicable((name, params), "target top is not clear")
            dx = ((g.x - b.x) ** 2 + (g.y - b.y) ** 2) ** 0.5
            if dx > self.geom.approach_radius_factor * b.size or \
                    not (b.top - self.geom.contact_tol <= g.z <= b.top + self.geom.approach_height):
                raise SkillNotApplicable((name, params), "gripper not in the approach region")
            g.held = bi
            g.opening = _grip_opening_for(b.size)
            self._move_gripper(b.x, b.y, b.top)
        elif name == "lift":
            bi = self._index(params[0])
            if g.held != bi:
                raise SkillNotApplicable((name, params), "block is not held")
            self._move_gripper(g.x, g.y, g.z + LIFT_DELTA)
        elif name == "align":
            bi, ti = self._index(params[0]), self._index(params[1])
            if g.held != bi:
                raise SkillNotApplicable((name, params), "block is not held")
            if not self._clear(ti):
                raise SkillNotApplicable((name, params), "target top is not clear")
            t = self.scene.blocks[ti]
            held = self.scene.blocks[bi]
            self._move_gripper(t.x, t.y, t.top + ALIGN_GAP + held.size)
        elif name == "place":
            bi, ti = self._index(params[0]), self._index(params[1])
            if g.held != bi:
                raise SkillNotApplicable((name, params), "block is not held")
            t = self.scene.blocks[ti]
            held = self.scene.blocks[bi]
            gap = held.bottom - t.top
            near = ((held.x - t.x) ** 2 + (held.y - t.y) ** 2) ** 0.5 <= t.size / 2.0
            if not (near and self.geom.contact_tol < gap <= self.geom.align_gap_max):
                raise SkillNotApplicable((name, params), "held block is not aligned with target")
            held.x, held.y = t.x, t.y
            held.z = q9(t.top + held.size / 2.0)
            g.held = None
            g.opening = 1.0
            self._move_gripper(t.x, t.y, held.top + RETREAT_HEIGHT)
        elif name == "go_home":
            g.opening = 1.0 if g.held is None else g.opening
            self._move_gripper(*HOME_POSE)
        else:
            raise KeyError(f"unknown skill {name!r}")
        self.scene.validate(self.geom)

    def labels(self, schema: PredicateSchema) -> PredicateVector:
        return label_predicates(self.scene, schema, geom=self.geom)


@dataclass
class Frame:
    scene: SceneState
    labels: PredicateVector
    skill: tuple[str, tuple[str, ...]] | None  # next skill, None on terminal frame
    views: list[np.ndarray] | None = None
    canon_views: list[np.ndarray] | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        def imgs_eq(a, b):
            if (a is None) != (b is None):
                return False
            return a is None or (len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b)))
        return (
            self.scene.blocks == other.scene.blocks
            and self.scene.gripper == other.scene.gripper
            and self.labels == other.labels
            and self.skill == other.skill
            and imgs_eq(self.views, other.views)
            and imgs_eq(self.canon_views, other.canon_views)
        )


@dataclass
class Episode:
    task: str
    goal: list[str]
    object_ids: list[str]
    frames: list[Frame]
    schema: PredicateSchema

    def __eq__(self, other) -> bool:
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.task == other.task
            and self.goal == other.goal
            and self.object_ids == other.object_ids
            and self.schema == other.schema
            and self.frames == other.frames
        )


@dataclass
class EpisodeConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    task: str = "tower"  # "tower" | "multi_tower"
    cameras: tuple[Camera, ...] = field(default_factory=default_camera_rig)
    patch_size: int = 16
    render: bool = True
    view_relations: bool = False
    node_budget: int = 1_000_000


class EpisodeGenerationError(RuntimeError):
    pass


def sample_goal(task: str, object_ids: list[str], rng: np.random.Generator) -> list[str]:
    """Goal literal list for a task template.

    tower: one stack of all blocks in random order. multi_tower: blocks
    split into two towers (each of size >= 2 when possible).
    """
    perm = [object_ids[i] for i in rng.permutation(len(object_ids))]
    if task == "tower":
        groups = [perm]
    elif task == "multi_tower":
        if len(perm) < 4:
            raise ValueError("multi_tower needs at least 4 blocks")
        cut = int(rng.integers(2, len(perm) - 1))
        groups = [perm[:cut], perm[cut:]]
    else:
        raise ValueError(f"unknown task template {task!r}")
    goal = []
    for grp in groups:
        goal.extend(f"stacked({a},{b})" for a, b in zip(grp, grp[1:]))
    return goal


def generate_episode(cfg: EpisodeConfig, rng: np.random.Generator) -> Episode:
    """Sample a scene and goal, plan, execute kinematically, label frames.

    The symbolic trajectory (planner apply_skill) is checked against the
    geometric labels of every frame; disagreement aborts generation since
    it means the operator table and the labeler have drifted apart.
    """
    from .. import planner as pl

    init_cfg = GenConfig(**{**cfg.gen.__dict__, "stack_prob": 0.0, "gripper_mode": "home"})
    scene = sample_scene(init_cfg, rng)
    schema = PredicateSchema(scene.object_ids(), view_relations=cfg.view_relations)
    goal = sample_goal(cfg.task, scene.object_ids(), rng)

    sim = KinematicSim(scene, cfg.gen.geom)
    labels0 = sim.labels(schema)
    table = pl.default_operator_table()
    state = pl.state_from_vector(labels0)
    result = pl.plan(state, goal, table, schema, node_budget=cfg.node_budget)
    if not result.success:
        raise EpisodeGenerationError(f"planner failed: {result.reason}")

    frames: list[Frame] = []

    def snapshot(labels: PredicateVector, next_skill) -> None:
        views = canon = None
        if cfg.render:
            views = [render_view(sim.scene, cam, rng) for cam in cfg.cameras]
            canon = render_block_views(sim.scene, cfg.patch_size, rng)
        frames.append(Frame(sim.scene.copy(), labels, next_skill, views, canon))

    plan_steps = [(sk.name, sk.params) for sk in result.skills]
    snapshot(labels0, plan_steps[0] if plan_steps else None)
    for k, sk in enumerate(result.skills):
        state = pl.apply_skill(state, sk)
        sim.apply(sk.name, sk.params)
        labels = sim.labels(schema)
        if pl.state_from_vector(labels) != state:
            sym = {str(l) for l in state}
            geo = {str(l) for l in pl.state_from_vector(labels)}
            raise EpisodeGenerationError(
                f"symbolic/geometric divergence after {sk}: "
                f"symbolic-only={sorted(sym - geo)}, geometric-only={sorted(geo - sym)}"
            )
        snapshot(labels, plan_steps[k + 1] if k + 1 < len(plan_steps) else None)

    final = frames[-1].labels.true_literals()
    if not set(goal) <= final:
        raise EpisodeGenerationError("episode finished without satisfying its goal")
    return Episode(cfg.task, goal, scene.object_ids(), frames, schema)
