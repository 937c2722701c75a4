"""Symbolic task planning over the predicate vocabulary.

Skills are STRIPS-style operators (precondition / add / delete literal
sets) grounded over the scene objects. Plans come from breadth-first
search with duplicate-state pruning and deterministic lexicographic
tie-breaking, and every returned plan is replay-validated before it is
handed out.

The search runs over the four state-changing skills (approach, grasp,
align, place). ``lift`` and ``go_home`` are physical phases with no
symbolic effect, so no state-space search can ever select them; the
planner inserts lift after each grasp and go_home at the end, which is
the canonical phase expansion of a pick-and-place round.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .scene.schema import PredicateSchema, PredicateVector, REGIONS

SymbolicState = frozenset

_LIT_RE = re.compile(r"^(!?)([a-z_]+)\(([^)]*)\)$")


@dataclass(frozen=True)
class Literal:
    """A predicate literal, optionally negated; '*' args are wildcards."""

    name: str
    args: tuple[str, ...]
    negated: bool = False

    def __str__(self) -> str:
        return ("!" if self.negated else "") + f"{self.name}({','.join(self.args)})"

    @staticmethod
    def parse(text: str) -> "Literal":
        m = _LIT_RE.match(text.strip())
        if not m:
            raise ValueError(f"malformed literal: {text!r}")
        neg, name, args = m.groups()
        return Literal(name, tuple(a.strip() for a in args.split(",") if a.strip()), bool(neg))

    def matches(self, other: "Literal") -> bool:
        """Pattern match against a ground literal ('*' matches any arg)."""
        return (
            self.name == other.name
            and len(self.args) == len(other.args)
            and all(a == "*" or a == b for a, b in zip(self.args, other.args))
        )

    def is_ground(self) -> bool:
        return "*" not in self.args


class UnknownLiteralError(KeyError):
    pass


class PreconditionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Skill:
    """A grounded primitive skill."""

    name: str
    params: tuple[str, ...]
    pre: tuple[Literal, ...]
    add: tuple[Literal, ...]
    delete: tuple[Literal, ...]

    def __str__(self) -> str:
        return f"{self.name}({','.join(self.params)})"


@dataclass
class SkillTemplate:
    """Operator with ?x placeholders, grounded by substituting object ids."""

    name: str
    variables: tuple[str, ...]
    pre: tuple[Literal, ...]
    add: tuple[Literal, ...]
    delete: tuple[Literal, ...]

    def ground(self, binding: dict[str, str]) -> Skill:
        def sub(lit: Literal) -> Literal:
            return Literal(lit.name, tuple(binding.get(a, a) for a in lit.args), lit.negated)

        return Skill(
            self.name,
            tuple(binding[v] for v in self.variables),
            tuple(sub(l) for l in self.pre),
            tuple(sub(l) for l in self.add),
            tuple(sub(l) for l in self.delete),
        )


@dataclass
class OperatorTable:
    templates: list[SkillTemplate] = field(default_factory=list)

    def names(self) -> list[str]:
        return [t.name for t in self.templates]

    def template(self, name: str) -> SkillTemplate:
        for t in self.templates:
            if t.name == name:
                return t
        raise KeyError(f"unknown skill {name!r}")

    def ground(self, objects: list[str]) -> list[Skill]:
        """All groundings over distinct object tuples, lexicographic order."""
        skills = []
        for t in self.templates:
            if not t.variables:
                skills.append(t.ground({}))
            elif len(t.variables) == 1:
                for o in objects:
                    skills.append(t.ground({t.variables[0]: o}))
            elif len(t.variables) == 2:
                for o in objects:
                    for u in objects:
                        if o != u:
                            skills.append(t.ground({t.variables[0]: o, t.variables[1]: u}))
            else:
                raise ValueError("skills with >2 parameters are not supported")
        return sorted(skills, key=lambda s: (s.name, s.params))

    def ground_skill(self, name: str, params: tuple[str, ...]) -> Skill:
        t = self.template(name)
        if len(params) != len(t.variables):
            raise ValueError(f"{name} expects {len(t.variables)} params, got {len(params)}")
        return t.ground(dict(zip(t.variables, params)))

    def to_text(self) -> str:
        lines = []
        for t in self.templates:
            lines.append(f"skill {t.name} {' '.join(t.variables)}".rstrip())
            for tag, lits in (("pre", t.pre), ("add", t.add), ("del", t.delete)):
                for l in lits:
                    lines.append(f"{tag} {l}")
            lines.append("end")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "OperatorTable":
        table = OperatorTable()
        cur: dict | None = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "skill":
                cur = {"name": tok[1], "vars": tuple(tok[2:]), "pre": [], "add": [], "del": []}
            elif tok[0] in ("pre", "add", "del"):
                if cur is None:
                    raise ValueError("literal line outside a skill block")
                cur[tok[0]].append(Literal.parse(tok[1]))
            elif tok[0] == "end":
                table.templates.append(SkillTemplate(
                    cur["name"], cur["vars"],
                    tuple(cur["pre"]), tuple(cur["add"]), tuple(cur["del"]),
                ))
                cur = None
            else:
                raise ValueError(f"unrecognized operator line: {raw!r}")
        return table


# Skills whose effects change the symbolic state; the rest are phases.
SEARCH_SKILLS = ("approach", "grasp", "align", "place")
PHASE_ONLY_SKILLS = ("lift", "go_home")


def default_operator_table() -> OperatorTable:
    """The six-skill pick-and-place vocabulary.

    Effects keep the symbolic trajectory of an episode in lockstep with
    the geometric labeler: approach relocates the gripper so it deletes
    any previous approach literal, grasp lifts the block out of resting
    contact so stacked/on_surface facts about it are deleted, place
    releases and retreats.
    """
    L = Literal.parse
    return OperatorTable([
        SkillTemplate(
            "approach", ("?o",),
            pre=(L("!has_obj(robot,*)"),),
            add=(L("in_approach_region(robot,?o)"),),
            delete=(L("in_approach_region(robot,*)"),),
        ),
        SkillTemplate(
            "grasp", ("?o",),
            pre=(L("in_approach_region(robot,?o)"), L("top_is_clear(?o)"),
                 L("!has_obj(robot,*)")),
            add=(L("has_obj(robot,?o)"),),
            delete=(L("on_surface(?o,*)"), L("stacked(?o,*)"),
                    L("in_approach_region(robot,*)")),
        ),
        SkillTemplate(
            "lift", ("?o",),
            pre=(L("has_obj(robot,?o)"),),
            add=(),
            delete=(),
        ),
        SkillTemplate(
            "align", ("?o", "?t"),
            pre=(L("has_obj(robot,?o)"), L("top_is_clear(?t)")),
            add=(L("aligned_with(?o,?t)"),),
            delete=(L("aligned_with(?o,*)"),),
        ),
        SkillTemplate(
            "place", ("?o", "?t"),
            pre=(L("has_obj(robot,?o)"), L("aligned_with(?o,?t)"), L("top_is_clear(?t)")),
            add=(L("stacked(?o,?t)"),),
            delete=(L("has_obj(robot,?o)"), L("aligned_with(?o,*)"),
                    L("in_approach_region(robot,*)")),
        ),
        SkillTemplate(
            "go_home", (),
            pre=(),
            add=(),
            delete=(L("in_approach_region(robot,*)"), L("aligned_with(*,*)")),
        ),
    ])


def state_from_vector(vec: PredicateVector) -> SymbolicState:
    """Turn a boolean predicate vector into a set of true literals."""
    return frozenset(Literal.parse(l) for l in vec.true_literals())


def _validate_literal(lit: Literal, schema: PredicateSchema) -> None:
    if not lit.is_ground():
        return
    if not schema.has_literal(str(Literal(lit.name, lit.args))):
        raise UnknownLiteralError(f"literal not in schema: {lit}")


def check_preconditions(state: SymbolicState, skill: Skill,
                        schema: PredicateSchema | None = None) -> bool:
    """True iff every positive precondition holds and no negated one does."""
    for p in skill.pre:
        if schema is not None:
            _validate_literal(p, schema)
        if p.is_ground() and not p.negated:
            if Literal(p.name, p.args) not in state:
                return False
        else:
            hit = any(p.matches(l) for l in state)
            if p.negated and hit:
                return False
            if not p.negated and not hit:
                return False
    return True


def apply_skill(state: SymbolicState, skill: Skill) -> SymbolicState:
    """STRIPS application: (state - delete) | add, then re-derive clear facts.

    top_is_clear is a derived predicate (nothing rests on the object);
    adding or deleting stacked facts updates it so operators do not need
    conditional effects.
    """
    if not check_preconditions(state, skill):
        raise PreconditionError(f"preconditions of {skill} violated")
    removed = {l for l in state if any(d.matches(l) for d in skill.delete)}
    out = set(state) - removed
    out |= set(skill.add)
    for lit in removed:
        if lit.name == "stacked":
            base = lit.args[1]
            if not any(l.name == "stacked" and l.args[1] == base for l in out):
                out.add(Literal("top_is_clear", (base,)))
    for lit in skill.add:
        if lit.name == "stacked":
            out.discard(Literal("top_is_clear", (lit.args[1],)))
    return frozenset(out)


@dataclass
class PlanResult:
    success: bool
    skills: list[Skill] = field(default_factory=list)
    reason: str = ""
    nodes_expanded: int = 0

    def __iter__(self):
        return iter(self.skills)


class PlanValidationError(RuntimeError):
    pass


def _goal_literals(goal, schema: PredicateSchema) -> frozenset:
    lits = []
    for g in goal:
        lit = Literal.parse(g) if isinstance(g, str) else g
        if lit.negated or not lit.is_ground():
            raise ValueError(f"goal literals must be positive and ground: {lit}")
        _validate_literal(lit, schema)
        lits.append(lit)
    return frozenset(lits)


def validate_plan(initial: SymbolicState, goal_lits: frozenset, skills: list[Skill]) -> None:
    """Replay a plan with apply_skill; raise unless it achieves the goal."""
    state = initial
    for sk in skills:
        if not check_preconditions(state, sk):
            raise PlanValidationError(f"plan replay failed at {sk}")
        state = apply_skill(state, sk)
    if not goal_lits <= state:
        raise PlanValidationError("plan does not achieve the goal")


def expand_phases(skills: list[Skill], table: OperatorTable) -> list[Skill]:
    """Insert lift after each grasp and append go_home."""
    out: list[Skill] = []
    for sk in skills:
        out.append(sk)
        if sk.name == "grasp":
            out.append(table.ground_skill("lift", sk.params))
    out.append(table.ground_skill("go_home", ()))
    return out


def plan(
    initial: SymbolicState,
    goal,
    table: OperatorTable,
    schema: PredicateSchema,
    node_budget: int = 1_000_000,
    phases: bool = True,
) -> PlanResult:
    """Breadth-first search from ``initial`` to a state satisfying ``goal``.

    Returns a shortest plan found by the search (over the state-changing
    skills), expanded with the lift/go_home phases unless ``phases`` is
    false. An empty plan is returned when the goal already holds; plans
    are always replay-validated before being returned.
    """
    try:
        goal_lits = _goal_literals(goal, schema)
    except UnknownLiteralError as e:
        return PlanResult(False, reason=str(e))
    if goal_lits <= initial:
        return PlanResult(True, [])

    grounded = [s for s in table.ground(schema.object_ids) if s.name in SEARCH_SKILLS]
    parent: dict[SymbolicState, tuple[SymbolicState, Skill] | None] = {initial: None}
    queue = deque([initial])
    expanded = 0
    while queue:
        state = queue.popleft()
        expanded += 1
        if expanded > node_budget:
            return PlanResult(False, reason="node budget exhausted", nodes_expanded=expanded)
        for sk in grounded:
            if not check_preconditions(state, sk):
                continue
            nxt = apply_skill(state, sk)
            if nxt in parent:
                continue
            parent[nxt] = (state, sk)
            if goal_lits <= nxt:
                skills: list[Skill] = [sk]
                cur = state
                while parent[cur] is not None:
                    prev, psk = parent[cur]
                    skills.append(psk)
                    cur = prev
                skills.reverse()
                if phases:
                    skills = expand_phases(skills, table)
                validate_plan(initial, goal_lits, skills)
                return PlanResult(True, skills, nodes_expanded=expanded)
            queue.append(nxt)
    return PlanResult(False, reason="state space exhausted without reaching the goal",
                      nodes_expanded=expanded)


def executability(vec: PredicateVector, table: OperatorTable,
                  schema: PredicateSchema | None = None) -> dict[str, bool]:
    """Executability of every grounded skill under a predicate vector.

    Boolean vectors are taken literally; float vectors are thresholded at
    logit 0. A skill is executable iff all its precondition literals hold.
    """
    schema = schema or vec.schema
    values = vec.values if vec.is_labels else vec.values > 0.0
    state = frozenset(
        Literal.parse(schema.literals[k]) for k in np.flatnonzero(values)
    )
    out = {}
    for sk in table.ground(schema.object_ids):
        out[str(sk)] = check_preconditions(state, sk, schema)
    return out


@dataclass
class OpenLoopResult:
    success: bool
    plan_result: PlanResult
    trace: list[tuple[Skill, bool]] = field(default_factory=list)
    failed_skill: Skill | None = None
    note: str = ""


def open_loop_execute(predicted: PredicateVector | SymbolicState, goal,
                      table: OperatorTable, schema: PredicateSchema,
                      simulator) -> OpenLoopResult:
    """Plan once from a (predicted) state, then replay against ground truth.

    ``simulator`` exposes ``apply(name, params)`` and ``labels(schema)``
    over the true world state. The plan is computed open-loop from the
    predicted state; each skill's preconditions are then checked against
    the true geometric labels before it executes. The result records the
    first inapplicable skill, and success means the goal literals hold in
    the true final state.
    """
    if isinstance(predicted, PredicateVector):
        if predicted.is_labels:
            state = state_from_vector(predicted)
        else:
            state = repair_state(predicted.values, schema)
    else:
        state = predicted
    result = plan(state, goal, table, schema)
    if not result.success:
        return OpenLoopResult(False, result, note=f"planning failed: {result.reason}")
    goal_lits = _goal_literals(goal, schema)
    trace: list[tuple[Skill, bool]] = []
    for sk in result.skills:
        true_state = state_from_vector(simulator.labels(schema))
        ok = check_preconditions(true_state, sk)
        trace.append((sk, ok))
        if not ok:
            return OpenLoopResult(False, result, trace, failed_skill=sk,
                                  note="precondition violated during replay")
        try:
            simulator.apply(sk.name, sk.params)
        except Exception as e:  # kinematic refusal counts as failure too
            return OpenLoopResult(False, result, trace, failed_skill=sk, note=str(e))
    final = state_from_vector(simulator.labels(schema))
    achieved = goal_lits <= final
    return OpenLoopResult(achieved, result, trace,
                          note="" if achieved else "goal not satisfied in final state")


# conflict resolution for thresholded predictions

def repair_state(logits: np.ndarray, schema: PredicateSchema) -> SymbolicState:
    """Threshold logits at 0 and repair mutual-exclusion violations.

    Whenever two true literals cannot hold together (two regions for one
    object, held vs resting, stacked both ways, stacked under a clear
    top), the lower-logit literal is dropped. aligned_with additionally
    requires its subject to be held.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (schema.size,):
        raise ValueError(f"expected {schema.size} logits")
    on = logits > 0.0
    fam = schema.family_indices
    n = schema.n_objects

    def drop_lower(i: int, j: int) -> None:
        if on[i] and on[j]:
            on[j if logits[i] >= logits[j] else i] = False

    # single gripper: at most one has_obj
    ho = fam["has_obj"]
    true_held = [k for k in range(n) if on[ho[k]]]
    if len(true_held) > 1:
        best = max(true_held, key=lambda k: logits[ho[k]])
        for k in true_held:
            if k != best:
                on[ho[k]] = False
    # per object: one region at most; held excludes resting
    os_idx = fam["on_surface"].reshape(n, len(REGIONS))
    for k in range(n):
        regions = [i for i in os_idx[k] if on[i]]
        if len(regions) > 1:
            best = max(regions, key=lambda i: logits[i])
            for i in regions:
                if i != best:
                    on[i] = False
        for i in os_idx[k]:
            drop_lower(ho[k], i) if on[ho[k]] else None
    # pairs: stacked antisymmetry, stacked vs on_surface/has_obj of the top
    pair_index = {p: i for i, p in enumerate(schema.pairs)}
    st = fam["stacked"]
    for p, (i, j) in enumerate(schema.pairs):
        if not on[st[p]]:
            continue
        q = pair_index.get((j, i))
        if q is not None and on[st[q]]:
            drop_lower(st[p], st[q])
    for p, (i, j) in enumerate(schema.pairs):
        if not on[st[p]]:
            continue
        drop_lower(st[p], ho[i]) if on[ho[i]] else None
        for r in os_idx[i]:
            if on[r]:
                drop_lower(st[p], r)
        # a block with something stacked on it is not clear
        drop_lower(st[p], fam["top_is_clear"][j]) if on[fam["top_is_clear"][j]] else None
    # aligned_with implies holding the subject
    al = fam["aligned_with"]
    for p, (i, j) in enumerate(schema.pairs):
        if on[al[p]] and not on[ho[i]]:
            on[al[p]] = False
    return frozenset(
        Literal.parse(schema.literals[k]) for k in np.flatnonzero(on)
    )
