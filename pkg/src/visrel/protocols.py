"""Evaluation protocols: zero-shot generalization, skill executability,
and open-loop planning over datasets.

The zero-shot suite runs one checkpoint, unchanged, across object counts:
the plain 4-object test, 5/6-object scenes queried for 4 objects only
(extra blocks act as distractors: no canonical views, no predicate
slots), and 5/6-object scenes with the full query. A color-leak check
aborts any run whose test palette intersects the training palette.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import planner as pl
from .metrics import MetricReport, aggregate_multiview, build_report
from .model.bundle import PredicateModel
from .nn import no_grad
from .scene.dataset import manifest_palette
from .scene.episodes import Episode, KinematicSim
from .scene.schema import PredicateSchema, PredicateVector
from .train.data import FrameArrays


class ColorLeakError(RuntimeError):
    pass


def check_color_leak(train_colors, test_colors, tol: float = 1e-6) -> None:
    """Abort if any evaluation color appears in the training palette.

    Both arguments are (name, (r, g, b)) sequences; pass manifests through
    :func:`colors_from_manifest`.
    """
    train_rgb = np.array([c for _, c in train_colors], dtype=np.float64)
    for name, rgb in test_colors:
        if train_rgb.size and np.any(np.all(np.abs(train_rgb - np.array(rgb)) <= tol, axis=1)):
            raise ColorLeakError(f"evaluation color {name!r} found in the training palette")


def colors_from_manifest(manifest: dict) -> list[tuple[str, tuple[float, float, float]]]:
    return manifest_palette(manifest)


def _subschema_indices(full: PredicateSchema, sub: PredicateSchema) -> np.ndarray:
    """Positions of the sub-schema's literals inside the full schema."""
    return np.array([full.index(lit) for lit in sub.literals])


def predict_protocol_logits(model: PredicateModel, data: FrameArrays,
                            n_query: int | None = None, views: int = 1,
                            batch_size: int = 64) -> tuple[np.ndarray, np.ndarray, PredicateSchema]:
    """Logits and matching labels for a (possibly distractor) protocol.

    ``n_query`` < N drops the canonical views of the remaining blocks;
    labels are restricted to the queried objects' slots of the stored
    full-schema labels, so facts caused by distractors (a distractor
    resting on a queried block) stay visible.
    """
    full = data.schema
    n = full.n_objects
    n_query = n if n_query is None else n_query
    if not 1 <= n_query <= n:
        raise ValueError(f"cannot query {n_query} of {n} objects")
    if n_query == n:
        sub = full
        labels = data.labels
    else:
        sub = PredicateSchema(full.object_ids[:n_query], full.view_relations)
        labels = data.labels[:, _subschema_indices(full, sub)]

    per_view = []
    order = np.arange(data.n_frames)
    with no_grad():
        for v in range(views):
            rows = []
            for start in range(0, data.n_frames, batch_size):
                idx = order[start:start + batch_size]
                opening = data.openings[idx] if model.cfg.gripper_concat else None
                logits = model.logits(data.images[idx, v], data.canon[idx, :n_query], opening)
                rows.append(logits.data)
            per_view.append(np.concatenate(rows, axis=0))
    return aggregate_multiview(per_view), labels, sub


@dataclass
class ZeroShotConfig:
    views: int = 1
    distractor_queries: int = 4
    method: str = "model"


def zero_shot_protocols(model: PredicateModel, datasets: dict[str, FrameArrays],
                        cfg: ZeroShotConfig | None = None) -> list[MetricReport]:
    """Run the full zero-shot suite with one set of weights.

    ``datasets`` maps protocol tags to frame arrays; a tag "plain"
    evaluates the full query, tags "n障<k>" are handled by object count:
    every dataset with more objects than ``distractor_queries`` is
    evaluated twice (distractor protocol + full query).
    """
    cfg = cfg or ZeroShotConfig()
    digest_before = model.digest()
    reports = []
    for tag, data in datasets.items():
        n = data.schema.n_objects
        if n > cfg.distractor_queries:
            logits, labels, sub = predict_protocol_logits(
                model, data, cfg.distractor_queries, cfg.views)
            reports.append(build_report(
                cfg.method, f"{tag}/{n - cfg.distractor_queries}-distractors",
                logits, labels, sub))
        logits, labels, sub = predict_protocol_logits(model, data, None, cfg.views)
        reports.append(build_report(cfg.method, f"{tag}/full-query", logits, labels, sub))
    if model.digest() != digest_before:
        raise RuntimeError("model parameters changed during evaluation")
    return reports


# -- skill executability ------------------------------------------------------


@dataclass
class ExecutabilityReport:
    per_skill: dict[str, dict]  # skill name -> {accuracy, n}
    overall: float
    annotation_consistency: float

    def summary(self) -> str:
        parts = [f"all {self.overall:.4f}"]
        parts += [f"{k} {v['accuracy']:.4f}" for k, v in self.per_skill.items()]
        return "executability: " + "  ".join(parts)


def executability_eval(pred_logits: np.ndarray, episodes: list[Episode],
                       table: pl.OperatorTable) -> ExecutabilityReport:
    """Compare predicted vs ground-truth executability of every grounded
    skill on every frame; also check dataset annotations for consistency.

    ``pred_logits`` rows follow the dataset frame order. Ground-truth
    executability of each frame's annotated next skill must be true by
    construction; that consistency fraction is reported alongside.
    """
    n_frames = sum(len(ep.frames) for ep in episodes)
    if len(pred_logits) != n_frames:
        raise ValueError(f"{len(pred_logits)} logit rows for {n_frames} frames")
    counts: dict[str, list[int]] = {}
    annotated = consistent = 0
    row = 0
    for ep in episodes:
        schema = ep.schema
        grounded = table.ground(schema.object_ids)
        for fr in ep.frames:
            gt_vec = fr.labels
            gt_state = pl.state_from_vector(gt_vec)
            pred_vec = PredicateVector(schema, pred_logits[row].astype(np.float64))
            pred_state = frozenset(
                pl.Literal.parse(schema.literals[k])
                for k in np.flatnonzero(pred_vec.values > 0)
            )
            for sk in grounded:
                truth = pl.check_preconditions(gt_state, sk)
                guess = pl.check_preconditions(pred_state, sk)
                c = counts.setdefault(sk.name, [0, 0])
                c[0] += int(truth == guess)
                c[1] += 1
            if fr.skill is not None:
                annotated += 1
                sk = table.ground_skill(fr.skill[0], fr.skill[1])
                consistent += int(pl.check_preconditions(gt_state, sk))
            row += 1
    per_skill = {
        name: {"accuracy": c[0] / c[1], "n": c[1]} for name, c in sorted(counts.items())
    }
    overall = sum(c[0] for c in counts.values()) / max(1, sum(c[1] for c in counts.values()))
    return ExecutabilityReport(
        per_skill, overall,
        annotation_consistency=consistent / annotated if annotated else 1.0,
    )


# -- open-loop planning -------------------------------------------------------


@dataclass
class PlanningSummary:
    episodes: int
    successes: int
    failures_by_skill: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    results: list[pl.OpenLoopResult] = field(default_factory=list)

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    def summary(self) -> str:
        lines = [f"open-loop planning: {self.successes}/{self.episodes} succeeded "
                 f"({self.success_rate:.1%})"]
        for name, n in sorted(self.failures_by_skill.items()):
            lines.append(f"  first failure at {name}: {n}")
        return "\n".join(lines)


def open_loop_eval(episodes: list[Episode], table: pl.OperatorTable,
                   initial_logits: np.ndarray | None = None,
                   geom=None) -> PlanningSummary:
    """Plan every episode's goal from its initial frame and replay.

    With ``initial_logits`` (one row per episode, schema-sized) the plan
    starts from the thresholded+repaired prediction; otherwise from the
    ground-truth labels (oracle mode). Replay always runs against the
    true kinematic simulator seeded with the episode's initial scene.
    """
    summary = PlanningSummary(episodes=len(episodes), successes=0)
    for k, ep in enumerate(episodes):
        schema = ep.schema
        first = ep.frames[0]
        if initial_logits is None:
            predicted: pl.PredicateVector | frozenset = first.labels
        else:
            predicted = PredicateVector(schema, initial_logits[k].astype(np.float64))
        sim = KinematicSim(first.scene, geom) if geom else KinematicSim(first.scene)
        res = pl.open_loop_execute(predicted, ep.goal, table, schema, sim)
        summary.results.append(res)
        if res.success:
            summary.successes += 1
        else:
            key = res.failed_skill.name if res.failed_skill else "planning"
            summary.failures_by_skill[key] = summary.failures_by_skill.get(key, 0) + 1
            summary.notes.append(f"episode {k}: {res.note}")
    return summary
