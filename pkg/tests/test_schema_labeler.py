"""Predicate schema enumeration and geometric labeling rules."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from visrel.scene.labeler import label_predicates
from visrel.scene.schema import REGIONS, PredicateSchema, PredicateVector, predicate_count
from visrel.scene.state import Block, GeometryParams, Gripper, SceneState, TableRegions


def make_block(x, y, z, size=0.05, name="c", rgb=(1.0, 0.0, 0.0)):
    return Block(name, rgb, size, x, y, z, 0.0)


def scene_with(blocks, gripper=None):
    g = gripper or Gripper(0.0, -0.38, 0.45, 1.0, None)
    return SceneState(blocks, g)


class TestPredicateCount:
    @pytest.mark.parametrize("n,expected", [(4, 52), (5, 75), (6, 102), (1, 7), (0, 0)])
    def test_reference_counts(self, n, expected):
        assert predicate_count(7, 2, n) == expected

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            predicate_count(7, 2, -1)
        with pytest.raises(ValueError):
            predicate_count(-7, 2, 4)

    @given(st.integers(min_value=0, max_value=8))
    def test_matches_schema_enumeration(self, n):
        schema = PredicateSchema([f"obj{i}" for i in range(n)])
        assert len(schema.literals) == predicate_count(7, 2, n)

    @given(st.integers(min_value=0, max_value=6))
    def test_view_relation_variant(self, n):
        schema = PredicateSchema([f"obj{i}" for i in range(n)], view_relations=True)
        assert len(schema.literals) == predicate_count(7, 6, n)


class TestSchemaEnumeration:
    def test_order_is_family_major_object_major(self):
        s = PredicateSchema(["a", "b"])
        assert s.literals[:8] == [
            "on_surface(a,left)", "on_surface(a,right)", "on_surface(a,far)",
            "on_surface(a,center)", "on_surface(b,left)", "on_surface(b,right)",
            "on_surface(b,far)", "on_surface(b,center)",
        ]
        assert s.literals[8:10] == ["has_obj(robot,a)", "has_obj(robot,b)"]
        # stacked pairs precede aligned pairs
        assert s.literals[14:16] == ["stacked(a,b)", "stacked(b,a)"]
        assert s.literals[16:18] == ["aligned_with(a,b)", "aligned_with(b,a)"]

    def test_pair_enumeration_outer_i_inner_j(self):
        s = PredicateSchema(["a", "b", "c"])
        assert s.pairs == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]

    def test_index_and_unknown_literal(self):
        s = PredicateSchema(["a"])
        assert s.literals[s.index("top_is_clear(a)")] == "top_is_clear(a)"
        with pytest.raises(KeyError):
            s.index("stacked(a,a)")

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            PredicateSchema(["a", "a"])

    def test_vector_length_checked(self):
        s = PredicateSchema(["a", "b"])
        with pytest.raises(ValueError):
            PredicateVector(s, np.zeros(5, dtype=bool))
        with pytest.raises(ValueError):
            PredicateVector(s, np.full(s.size, 2, dtype=np.int64))


class TestRegions:
    def test_partition_reference_points(self):
        t = TableRegions()
        assert t.region_of(-0.2, 0.0) == "left"
        assert t.region_of(0.2, 0.0) == "right"
        assert t.region_of(0.0, 0.3) == "far"
        assert t.region_of(0.0, 0.0) == "center"

    @given(st.floats(-0.4, 0.4, allow_nan=False), st.floats(-0.4, 0.4, allow_nan=False))
    def test_every_point_in_exactly_one_region(self, x, y):
        t = TableRegions()
        assert t.region_of(x, y) in t.names


class TestLabeler:
    def test_stacked_pair_hand_evaluated(self):
        # block j resting at z=0.025 (size 0.05), block i directly on top
        j = make_block(0.1, 0.0, 0.025, name="j", rgb=(0, 1, 0))
        i = make_block(0.1, 0.0, 0.075, name="i")
        scene = scene_with([i, j])
        schema = PredicateSchema(scene.object_ids())
        v = label_predicates(scene, schema)
        lit = v.true_literals()
        assert "stacked(obj0,obj1)" in lit
        assert "top_is_clear(obj1)" not in lit
        assert "top_is_clear(obj0)" in lit
        assert not any(l.startswith("on_surface(obj0") for l in lit)
        assert "on_surface(obj1,center)" in lit

    def test_empty_gripper_far_away_all_interaction_predicates_false(self):
        scene = scene_with([make_block(0.1, 0.1, 0.025), make_block(-0.2, 0.1, 0.025)])
        v = label_predicates(scene, PredicateSchema(scene.object_ids()))
        for lit in v.true_literals():
            assert not lit.startswith(("has_obj", "aligned_with", "in_approach_region"))

    def test_region_centroid_exclusive(self):
        scene = scene_with([make_block(0.0, 0.0, 0.025)])
        v = label_predicates(scene, PredicateSchema(scene.object_ids()))
        on = [l for l in v.true_literals() if l.startswith("on_surface")]
        assert on == ["on_surface(obj0,center)"]

    def test_held_block_labels(self):
        b = make_block(0.1, 0.0, 0.2)
        g = Gripper(0.1, 0.0, 0.225, 0.4, held=0)
        scene = scene_with([b], g)
        v = label_predicates(scene, PredicateSchema(scene.object_ids()))
        lit = v.true_literals()
        assert lit == {"has_obj(robot,obj0)", "top_is_clear(obj0)"}

    def test_aligned_with_window(self):
        geom = GeometryParams()
        t = make_block(0.0, 0.0, 0.025, name="t", rgb=(0, 0, 1))
        held = make_block(0.0, 0.0, 0.05 + 0.03 + 0.025, name="h")  # gap 0.03
        g = Gripper(0.0, 0.0, held.top, 0.4, held=0)
        scene = scene_with([held, t], g)
        v = label_predicates(scene, PredicateSchema(scene.object_ids()), geom=geom)
        assert "aligned_with(obj0,obj1)" in v.true_literals()
        # too high: beyond the gap cap
        held_hi = make_block(0.0, 0.0, 0.05 + geom.align_gap_max + 0.03 + 0.025, name="h")
        scene2 = scene_with([held_hi, t], Gripper(0.0, 0.0, held_hi.top, 0.4, held=0))
        v2 = label_predicates(scene2, PredicateSchema(scene2.object_ids()), geom=geom)
        assert "aligned_with(obj0,obj1)" not in v2.true_literals()

    def test_approach_region_cylinder(self):
        b = make_block(0.0, 0.0, 0.025)
        inside = Gripper(0.02, 0.0, 0.12, 1.0, None)
        outside_r = Gripper(0.2, 0.0, 0.12, 1.0, None)
        above = Gripper(0.0, 0.0, 0.3, 1.0, None)
        for g, expect in ((inside, True), (outside_r, False), (above, False)):
            v = label_predicates(scene_with([b], g), PredicateSchema(["obj0"]))
            assert ("in_approach_region(robot,obj0)" in v.true_literals()) == expect

    def test_labels_depend_only_on_state(self):
        scene = scene_with([make_block(0.05, -0.1, 0.025)])
        schema = PredicateSchema(scene.object_ids())
        a = label_predicates(scene, schema)
        b = label_predicates(scene.copy(), schema)
        assert a == b

    def test_distractor_geometry_visible_through_mapping(self):
        # schema covers only block 0; block 1 stacked on it still blocks its top
        base = make_block(0.0, 0.0, 0.025, name="base")
        top = make_block(0.0, 0.0, 0.075, name="top", rgb=(0, 1, 0))
        scene = scene_with([base, top])
        sub = PredicateSchema(["obj0"])
        v = label_predicates(scene, sub, objects=[0])
        assert "top_is_clear(obj0)" not in v.true_literals()

    def test_schema_scene_mismatch_rejected(self):
        scene = scene_with([make_block(0.0, 0.0, 0.025)])
        with pytest.raises(ValueError):
            label_predicates(scene, PredicateSchema(["a", "b"]))

    def test_view_relations_antisymmetric(self):
        a = make_block(-0.1, -0.1, 0.025, name="a")
        b = make_block(0.1, 0.2, 0.025, name="b", rgb=(0, 1, 0))
        scene = scene_with([a, b])
        schema = PredicateSchema(scene.object_ids(), view_relations=True)
        lit = label_predicates(scene, schema).true_literals()
        assert ("left_of(obj0,obj1)" in lit) != ("left_of(obj1,obj0)" in lit)
        assert ("left_of(obj0,obj1)" in lit) != ("right_of(obj0,obj1)" in lit)
        assert ("front_of(obj0,obj1)" in lit) != ("front_of(obj1,obj0)" in lit)


class TestMutualExclusionInvariants:
    def test_sampled_scenes_satisfy_exclusions(self):
        from visrel.rng import rng_for
        from visrel.scene.sampler import GenConfig, sample_scene, train_palette

        cfg = GenConfig(n_blocks=4, palette=train_palette(), stack_prob=0.4)
        rng = rng_for(42, "labeler-invariants")
        for _ in range(300):
            scene = sample_scene(cfg, rng)
            schema = PredicateSchema(scene.object_ids())
            v = label_predicates(scene, schema)
            assert_label_invariants(v)


def assert_label_invariants(v: PredicateVector) -> None:
    """Mutual-exclusion rules every labeled frame must satisfy."""
    schema = v.schema
    lit = v.true_literals()
    fam = schema.family_indices
    n = schema.n_objects
    on = v.values[fam["on_surface"]].reshape(n, len(REGIONS))
    assert np.all(on.sum(axis=1) <= 1), "regions are mutually exclusive"
    for p, (i, j) in enumerate(schema.pairs):
        if v.values[fam["stacked"][p]]:
            assert not v.values[fam["top_is_clear"][j]], "stacked(i,j) => not clear(j)"
            q = schema.pairs.index((j, i))
            assert not v.values[fam["stacked"][q]], "stacked antisymmetric"
    for k in range(n):
        if v.values[fam["has_obj"][k]]:
            assert not on[k].any(), "held => not on any surface"
    assert v.values[fam["has_obj"]].sum() <= 1, "at most one block held"
