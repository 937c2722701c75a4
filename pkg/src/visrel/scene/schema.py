"""Predicate vocabulary: deterministic enumeration of spatial predicates.

For N objects the vector holds 7N unary slots followed by 2N(N-1) binary
slots (plus 4N(N-1) camera-relative view relations when enabled):

    on_surface(o, r)            object-major, region order left/right/far/center
    has_obj(robot, o)
    top_is_clear(o)
    in_approach_region(robot, o)
    stacked(i, j)               ordered pairs, i outer, j inner, j != i
    aligned_with(i, j)          same pair order

The enumeration is a pure function of the object order, so two schemas
over the same ids are interchangeable.
"""

from __future__ import annotations

import numpy as np

REGIONS = ("left", "right", "far", "center")
UNARY_FAMILIES = ("on_surface", "has_obj", "top_is_clear", "in_approach_region")
BINARY_FAMILIES = ("stacked", "aligned_with")
VIEW_FAMILIES = ("left_of", "right_of", "front_of", "behind_of")

M_UNARY = 7  # 4 on_surface regions + has_obj + top_is_clear + in_approach_region
M_BINARY = 2


def predicate_count(m_unary: int, m_binary: int, n_objects: int) -> int:
    """Total predicate slots for n objects: m_unary*N + m_binary*N*(N-1)."""
    if m_unary < 0 or m_binary < 0 or n_objects < 0:
        raise ValueError("predicate_count arguments must be non-negative")
    return m_unary * n_objects + m_binary * n_objects * (n_objects - 1)


class PredicateSchema:
    def __init__(self, object_ids: list[str], view_relations: bool = False):
        if len(set(object_ids)) != len(object_ids):
            raise ValueError("object ids must be distinct")
        self.object_ids = list(object_ids)
        self.view_relations = bool(view_relations)
        n = len(self.object_ids)
        self.pairs: list[tuple[int, int]] = [
            (i, j) for i in range(n) for j in range(n) if j != i
        ]
        self.literals: list[str] = []
        self.family_indices: dict[str, np.ndarray] = {}

        def emit(family: str, names: list[str]) -> None:
            start = len(self.literals)
            self.literals.extend(names)
            self.family_indices[family] = np.arange(start, len(self.literals))

        ids = self.object_ids
        emit("on_surface", [f"on_surface({o},{r})" for o in ids for r in REGIONS])
        emit("has_obj", [f"has_obj(robot,{o})" for o in ids])
        emit("top_is_clear", [f"top_is_clear({o})" for o in ids])
        emit("in_approach_region", [f"in_approach_region(robot,{o})" for o in ids])
        for fam in BINARY_FAMILIES:
            emit(fam, [f"{fam}({ids[i]},{ids[j]})" for i, j in self.pairs])
        if self.view_relations:
            for fam in VIEW_FAMILIES:
                emit(fam, [f"{fam}({ids[i]},{ids[j]})" for i, j in self.pairs])
        self._index = {lit: k for k, lit in enumerate(self.literals)}

    @property
    def n_objects(self) -> int:
        return len(self.object_ids)

    @property
    def m_unary(self) -> int:
        return M_UNARY

    @property
    def m_binary(self) -> int:
        return M_BINARY + (len(VIEW_FAMILIES) if self.view_relations else 0)

    @property
    def size(self) -> int:
        return len(self.literals)

    @property
    def families(self) -> list[str]:
        return list(self.family_indices)

    def index(self, literal: str) -> int:
        try:
            return self._index[literal]
        except KeyError:
            raise KeyError(f"unknown predicate literal: {literal}") from None

    def has_literal(self, literal: str) -> bool:
        return literal in self._index

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PredicateSchema)
            and self.object_ids == other.object_ids
            and self.view_relations == other.view_relations
        )

    def __repr__(self) -> str:
        return f"PredicateSchema(n={self.n_objects}, size={self.size})"


class PredicateVector:
    """A boolean label vector or float logit vector over a schema."""

    def __init__(self, schema: PredicateSchema, values: np.ndarray):
        values = np.asarray(values)
        if values.shape != (schema.size,):
            raise ValueError(f"expected {schema.size} values, got shape {values.shape}")
        if values.dtype == bool or np.issubdtype(values.dtype, np.integer):
            u = np.unique(values)
            if u.size and not np.all((u == 0) | (u == 1)):
                raise ValueError("label values must be 0/1")
            values = values.astype(bool)
        self.schema = schema
        self.values = values

    @property
    def is_labels(self) -> bool:
        return self.values.dtype == bool

    def true_literals(self) -> set[str]:
        if not self.is_labels:
            raise TypeError("true_literals requires a boolean vector")
        return {self.schema.literals[k] for k in np.flatnonzero(self.values)}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PredicateVector)
            and self.schema == other.schema
            and self.values.dtype == other.values.dtype
            and bool(np.array_equal(self.values, other.values))
        )
