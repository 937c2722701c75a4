"""Multi-label metrics and report assembly.

All metrics threshold logits at 0 (probability one half). Accuracy and F1
are computed per predicate slot across frames and averaged (unweighted)
within each family and overall. All-match treats a family's sub-vector as
a single prediction: any wrong slot makes the frame wrong.

Convention: a slot with no positive predictions and no positive labels
has precision = recall = F1 = 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .scene.schema import PredicateSchema


def _as_preds(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if values.dtype == bool:
        return values
    return values > 0.0


def _check_shapes(preds: np.ndarray, labels: np.ndarray, schema: PredicateSchema):
    if preds.ndim == 1:
        preds = preds[None]
    if labels.ndim == 1:
        labels = labels[None]
    if preds.shape != labels.shape:
        raise ValueError(f"prediction shape {preds.shape} != label shape {labels.shape}")
    if preds.shape[1] != schema.size:
        raise ValueError(f"{preds.shape[1]} slots but schema has {schema.size}")
    return preds, labels


def per_predicate_metrics(logits: np.ndarray, labels: np.ndarray,
                          schema: PredicateSchema) -> dict[str, dict[str, float]]:
    """Per-family and overall {accuracy, f1}, averaged over slots."""
    preds, labels = _check_shapes(_as_preds(logits), np.asarray(labels, dtype=bool), schema)
    correct = preds == labels
    tp = (preds & labels).sum(axis=0).astype(np.float64)
    fp = (preds & ~labels).sum(axis=0).astype(np.float64)
    fn = (~preds & labels).sum(axis=0).astype(np.float64)
    acc_slot = correct.mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        rec = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        f1_slot = np.where(prec + rec > 0, 2 * prec * rec / np.maximum(prec + rec, 1e-300), 0.0)
    out = {}
    for fam, idx in schema.family_indices.items():
        out[fam] = {"accuracy": float(acc_slot[idx].mean()), "f1": float(f1_slot[idx].mean())}
    out["overall"] = {"accuracy": float(acc_slot.mean()), "f1": float(f1_slot.mean())}
    return out


def all_match(logits: np.ndarray, labels: np.ndarray,
              schema: PredicateSchema) -> dict[str, float]:
    """Fraction of frames whose family sub-vector (or full vector) is exact."""
    preds, labels = _check_shapes(_as_preds(logits), np.asarray(labels, dtype=bool), schema)
    correct = preds == labels
    out = {}
    for fam, idx in schema.family_indices.items():
        out[fam] = float(correct[:, idx].all(axis=1).mean())
    out["overall"] = float(correct.all(axis=1).mean())
    return out


def aggregate_multiview(logit_sets: list[np.ndarray]) -> np.ndarray:
    """Sum per-view logits elementwise (occlusion-robust voting)."""
    if not logit_sets:
        raise ValueError("no logit sets to aggregate")
    base = np.asarray(logit_sets[0])
    for other in logit_sets[1:]:
        if np.asarray(other).shape != base.shape:
            raise ValueError("logit sets must share a shape")
    return np.sum([np.asarray(x) for x in logit_sets], axis=0)


def euclidean_error(pred_direction: np.ndarray, gt_direction: np.ndarray,
                    unit_tol: float = 1e-3) -> np.ndarray:
    """Per-row ||p - g||_2 for unit vectors; in [0, 2]."""
    p = np.atleast_2d(np.asarray(pred_direction, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gt_direction, dtype=np.float64))
    if p.shape != g.shape or p.shape[-1] != 3:
        raise ValueError("expected matching [n, 3] direction arrays")
    for name, arr in (("pred", p), ("gt", g)):
        norms = np.linalg.norm(arr, axis=-1)
        if np.any(np.abs(norms - 1.0) > unit_tol):
            raise ValueError(f"{name} directions are not unit vectors (tol {unit_tol})")
    return np.linalg.norm(p - g, axis=-1)


@dataclass
class MetricReport:
    """Metrics for one evaluation protocol run."""

    method: str
    protocol: str
    n_pred: int
    n_frames: int
    overall: dict[str, float]
    families: dict[str, dict[str, float]] = field(default_factory=dict)

    def validate(self) -> None:
        for fam, m in [("overall", self.overall), *self.families.items()]:
            for k, v in m.items():
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{fam}.{k} = {v} outside [0, 1]")
            if m["all_match"] > m["accuracy"] + 1e-12:
                raise ValueError(f"{fam}: all_match {m['all_match']} > accuracy {m['accuracy']}")
        for fam, m in self.families.items():
            if self.overall["all_match"] > m["all_match"] + 1e-12:
                raise ValueError(f"overall all_match exceeds family {fam}")

    def rows(self) -> list[list]:
        out = [[self.method, self.protocol, self.n_pred, self.n_frames, "overall",
                self.overall["accuracy"], self.overall["f1"], self.overall["all_match"]]]
        for fam, m in self.families.items():
            out.append([self.method, self.protocol, self.n_pred, self.n_frames, fam,
                        m["accuracy"], m["f1"], m["all_match"]])
        return out

    def summary(self) -> str:
        o = self.overall
        return (f"{self.method} / {self.protocol}: {self.n_pred} predicates, "
                f"{self.n_frames} frames | acc {o['accuracy']:.4f} "
                f"f1 {o['f1']:.4f} all-match {o['all_match']:.4f}")


def build_report(method: str, protocol: str, logits: np.ndarray, labels: np.ndarray,
                 schema: PredicateSchema) -> MetricReport:
    pp = per_predicate_metrics(logits, labels, schema)
    am = all_match(logits, labels, schema)
    families = {
        fam: {**pp[fam], "all_match": am[fam]} for fam in schema.family_indices
    }
    report = MetricReport(
        method=method,
        protocol=protocol,
        n_pred=schema.size,
        n_frames=np.atleast_2d(logits).shape[0],
        overall={**pp["overall"], "all_match": am["overall"]},
        families=families,
    )
    report.validate()
    return report


REPORT_HEADER = ["method", "protocol", "n_pred", "n_frames", "family",
                 "accuracy", "f1", "all_match"]


def write_reports_csv(path, reports: list[MetricReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_HEADER)
        for rep in reports:
            w.writerows(rep.rows())
