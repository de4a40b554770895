"""Per-type precision/recall/F1, weighted and macro aggregation, and
confusion matrices for classifier evaluation.

Conventions: a score with a zero denominator is 0 and flagged; the macro
average runs over types present in the gold labels only; predictions of
``unknown`` (None) count as a false negative for the gold type and as a
false positive for nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hierarchy import ObjectType

UNKNOWN_LABEL = "unknown"


@dataclass(frozen=True)
class TypeScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    labels: list[str]  # confusion axis order
    counts: np.ndarray  # [L, L] raw confusion, rows = gold
    per_type: dict[str, TypeScores]
    weighted_avg: tuple[float, float, float]
    macro_avg: tuple[float, float, float]
    zero_support_labels: list[str] = field(default_factory=list)
    undefined_precision_labels: list[str] = field(default_factory=list)

    @property
    def normalized(self) -> np.ndarray:
        """Confusion rows divided by gold support; zero-support rows stay
        all-zero (and are listed in ``zero_support_labels``)."""
        supports = self.counts.sum(axis=1, keepdims=True)
        out = np.zeros_like(self.counts, dtype=np.float64)
        np.divide(self.counts, supports, out=out, where=supports > 0)
        return out

    def total(self) -> int:
        return int(self.counts.sum())

    def to_json(self) -> str:
        payload = {
            "macro_note": "macro average over types present in gold only",
            "labels": self.labels,
            "per_type": {
                name: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                }
                for name, s in self.per_type.items()
            },
            "weighted_avg": dict(zip(("precision", "recall", "f1"), self.weighted_avg)),
            "macro_avg": dict(zip(("precision", "recall", "f1"), self.macro_avg)),
            "counts": self.counts.tolist(),
            "normalized": self.normalized.tolist(),
            "zero_support_labels": self.zero_support_labels,
            "undefined_precision_labels": self.undefined_precision_labels,
        }
        return json.dumps(payload, indent=2)

    def to_text_table(self) -> str:
        width = max([len(n) for n in self.per_type] + [12])
        lines = [f"{'Type':<{width}}  {'Precision':>9}  {'Recall':>9}  {'F-score':>9}  {'Support':>8}"]
        for name, s in self.per_type.items():
            lines.append(
                f"{name:<{width}}  {100 * s.precision:>9.1f}  {100 * s.recall:>9.1f}"
                f"  {100 * s.f1:>9.1f}  {s.support:>8d}"
            )
        for label, avg in (("Weighted avg", self.weighted_avg), ("Macro avg", self.macro_avg)):
            p, r, f1 = avg
            lines.append(f"{label:<{width}}  {100 * p:>9.1f}  {100 * r:>9.1f}  {100 * f1:>9.1f}  {self.total():>8d}")
        return "\n".join(lines)

    def confusion_csv(self) -> str:
        norm = self.normalized
        lines = ["gold\\pred," + ",".join(self.labels)]
        for i, name in enumerate(self.labels):
            lines.append(name + "," + ",".join(f"{v:.6f}" for v in norm[i]))
        return "\n".join(lines)


def _label_name(label: "ObjectType | str | None") -> str:
    if label is None:
        return UNKNOWN_LABEL
    if isinstance(label, ObjectType):
        return label.value
    return str(label)


def _axis_labels(pred_names: list[str], gold_names: list[str], labels: Sequence[str] | None) -> list[str]:
    if labels is not None:
        axis = list(labels)
        extras = [n for n in pred_names + gold_names if n not in set(axis)]
    else:
        taxonomy = [t.value for t in ObjectType]
        present = set(pred_names) | set(gold_names)
        axis = [t for t in taxonomy if t in present]
        extras = sorted(present - set(taxonomy) - {UNKNOWN_LABEL})
    axis += [e for e in extras if e != UNKNOWN_LABEL]
    if UNKNOWN_LABEL in set(pred_names) | set(gold_names) and UNKNOWN_LABEL not in axis:
        axis.append(UNKNOWN_LABEL)
    return axis


def confusion(
    preds: Sequence["ObjectType | str | None"],
    golds: Sequence["ObjectType | str"],
    labels: Sequence[str] | None = None,
) -> tuple[list[str], np.ndarray]:
    """Raw confusion counts; rows are gold labels, columns predictions."""
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    pred_names = [_label_name(p) for p in preds]
    gold_names = [_label_name(g) for g in golds]
    axis = _axis_labels(pred_names, gold_names, labels)
    index = {name: i for i, name in enumerate(axis)}
    counts = np.zeros((len(axis), len(axis)), dtype=np.int64)
    for p, g in zip(pred_names, gold_names):
        counts[index[g], index[p]] += 1
    return axis, counts


def per_type_scores(
    preds: Sequence["ObjectType | str | None"],
    golds: Sequence["ObjectType | str"],
    labels: Sequence[str] | None = None,
) -> dict[str, TypeScores]:
    axis, counts = confusion(preds, golds, labels)
    scores, _, _ = _scores_from_counts(axis, counts)
    return scores


def _scores_from_counts(
    axis: list[str], counts: np.ndarray
) -> tuple[dict[str, TypeScores], list[str], list[str]]:
    scores: dict[str, TypeScores] = {}
    zero_support: list[str] = []
    undefined_precision: list[str] = []
    for i, name in enumerate(axis):
        if name == UNKNOWN_LABEL:
            continue
        tp = int(counts[i, i])
        support = int(counts[i, :].sum())
        predicted = int(counts[:, i].sum())
        if predicted == 0:
            precision = 0.0
            undefined_precision.append(name)
        else:
            precision = tp / predicted
        recall = tp / support if support > 0 else 0.0
        if support == 0:
            zero_support.append(name)
        f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
        scores[name] = TypeScores(precision, recall, f1, support)
    return scores, zero_support, undefined_precision


def aggregate(
    per_type: dict[str, TypeScores], mode: str
) -> tuple[float, float, float]:
    """Support-weighted or unweighted mean of per-type scores; types with
    zero support are excluded from both."""
    if mode not in ("weighted", "macro"):
        raise ValueError(f"mode must be 'weighted' or 'macro', got {mode!r}")
    present = {n: s for n, s in per_type.items() if s.support > 0}
    if not present:
        raise ValueError("no type has nonzero support")
    if mode == "weighted":
        total = sum(s.support for s in present.values())
        weights = {n: s.support / total for n, s in present.items()}
    else:
        weights = {n: 1.0 / len(present) for n in present}
    p = sum(weights[n] * s.precision for n, s in present.items())
    r = sum(weights[n] * s.recall for n, s in present.items())
    f1 = sum(weights[n] * s.f1 for n, s in present.items())
    return (p, r, f1)


def compute_report(
    preds: Sequence["ObjectType | str | None"],
    golds: Sequence["ObjectType | str"],
    labels: Sequence[str] | None = None,
) -> EvalReport:
    axis, counts = confusion(preds, golds, labels)
    scores, zero_support, undefined_precision = _scores_from_counts(axis, counts)
    return EvalReport(
        labels=axis,
        counts=counts,
        per_type=scores,
        weighted_avg=aggregate(scores, "weighted"),
        macro_avg=aggregate(scores, "macro"),
        zero_support_labels=zero_support,
        undefined_precision_labels=undefined_precision,
    )


def harmonic_mean(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
