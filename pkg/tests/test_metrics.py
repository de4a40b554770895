import numpy as np
import pytest

from uiclean.hierarchy import ObjectType
from uiclean.metrics import (
    UNKNOWN_LABEL,
    aggregate,
    compute_report,
    confusion,
    harmonic_mean,
    per_type_scores,
)


def brute_force_tally(preds, golds):
    """Independent per-type tally with plain dict loops."""
    names = set()
    for p, g in zip(preds, golds):
        if p is not None:
            names.add(p if isinstance(p, str) else p.value)
        names.add(g if isinstance(g, str) else g.value)
    names.discard(UNKNOWN_LABEL)
    out = {}
    for t in names:
        tp = fp = fn = 0
        for p, g in zip(preds, golds):
            p_name = UNKNOWN_LABEL if p is None else (p if isinstance(p, str) else p.value)
            g_name = g if isinstance(g, str) else g.value
            if p_name == t and g_name == t:
                tp += 1
            elif p_name == t:
                fp += 1
            elif g_name == t:
                fn += 1
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[t] = (precision, recall, f1, tp + fn)
    return out


def test_perfect_predictions():
    golds = [ObjectType.BUTTON, ObjectType.TEXT, ObjectType.TEXT, ObjectType.IMAGE]
    report = compute_report(list(golds), golds)
    for scores in report.per_type.values():
        assert (scores.precision, scores.recall, scores.f1) == (1.0, 1.0, 1.0)
    assert report.weighted_avg == (1.0, 1.0, 1.0)
    assert report.macro_avg == (1.0, 1.0, 1.0)
    norm = report.normalized
    assert np.allclose(norm, np.eye(len(report.labels)))


def test_unknown_counts_against_recall_only():
    golds = [ObjectType.BUTTON, ObjectType.TEXT]
    preds = [None, None]
    scores = per_type_scores(preds, golds)
    for t in ("BUTTON", "TEXT"):
        assert scores[t].recall == 0.0
        assert scores[t].precision == 0.0  # zero-denominator convention
    report = compute_report(preds, golds)
    assert UNKNOWN_LABEL in report.labels
    assert UNKNOWN_LABEL not in report.per_type
    assert set(report.undefined_precision_labels) == {"BUTTON", "TEXT"}


def test_reference_detector_triple_is_harmonically_consistent():
    # Published reference detector metrics: P=83.3, R=82.0, F1=82.7 (all
    # rounded to one decimal). The F1 of the rounded P/R is 82.64; the
    # consistency claim is about the underlying unrounded values, so check
    # that the F1 interval reachable from any (P, R) within rounding
    # distance intersects [82.65, 82.75).
    from uiclean.reference import DETECTOR_TEST_PRF

    p, r, f1 = DETECTOR_TEST_PRF
    assert abs(harmonic_mean(p, r) - f1) < 0.1
    low = harmonic_mean(p - 0.05, r - 0.05)
    high = harmonic_mean(p + 0.05, r + 0.05)
    assert low < f1 + 0.05 and high >= f1 - 0.05


def test_matches_brute_force_tally(rng):
    type_pool = [t for t in ObjectType if t is not ObjectType.INVALID]
    golds = [type_pool[i] for i in rng.integers(0, 8, size=200)]
    preds = [
        None if rng.random() < 0.1 else type_pool[i]
        for i in rng.integers(0, 8, size=200)
    ]
    report = compute_report(preds, golds)
    expected = brute_force_tally(preds, golds)
    assert set(report.per_type) == set(expected)
    for name, (p, r, f1, support) in expected.items():
        got = report.per_type[name]
        assert got.precision == pytest.approx(p, abs=1e-12)
        assert got.recall == pytest.approx(r, abs=1e-12)
        assert got.f1 == pytest.approx(f1, abs=1e-12)
        assert got.support == support


def test_aggregate_single_type():
    golds = [ObjectType.MAP, ObjectType.MAP]
    preds = [ObjectType.MAP, ObjectType.CONTAINER]
    report = compute_report(preds, golds)
    map_scores = report.per_type["MAP"]
    assert report.weighted_avg[2] == pytest.approx(
        map_scores.f1 * 1.0
    )  # CONTAINER has zero support and is excluded
    assert report.macro_avg == report.weighted_avg


def test_aggregate_weighted_vs_macro():
    # supports 3:1 with f1s 1.0 and 0.0
    golds = [ObjectType.TEXT] * 3 + [ObjectType.BUTTON]
    preds = [ObjectType.TEXT] * 3 + [ObjectType.IMAGE]
    report = compute_report(preds, golds)
    assert report.weighted_avg[2] == pytest.approx(0.75)
    assert report.macro_avg[2] == pytest.approx(0.5)


def test_aggregate_mode_validation():
    scores = per_type_scores([ObjectType.TEXT], [ObjectType.TEXT])
    with pytest.raises(ValueError):
        aggregate(scores, "median")


def test_weighted_invariant_to_absent_types():
    golds = [ObjectType.TEXT, ObjectType.BUTTON, ObjectType.TEXT]
    preds = [ObjectType.TEXT, ObjectType.BUTTON, ObjectType.BUTTON]
    base = compute_report(preds, golds)
    padded = compute_report(preds, golds, labels=[t.value for t in ObjectType])
    assert padded.weighted_avg == pytest.approx(base.weighted_avg)
    assert padded.macro_avg == pytest.approx(base.macro_avg)


def test_confusion_counts_and_normalization():
    golds = [ObjectType.TEXT, ObjectType.TEXT, ObjectType.BUTTON]
    preds = [ObjectType.TEXT, ObjectType.BUTTON, ObjectType.BUTTON]
    labels, counts = confusion(preds, golds)
    ti, bi = labels.index("TEXT"), labels.index("BUTTON")
    assert counts[ti, ti] == 1 and counts[ti, bi] == 1 and counts[bi, bi] == 1
    report = compute_report(preds, golds)
    norm = report.normalized
    supports = counts.sum(axis=1)
    for i in range(len(labels)):
        if supports[i]:
            assert norm[i].sum() == pytest.approx(1.0, abs=1e-9)
        else:
            assert norm[i].sum() == 0.0


def test_all_predictions_one_class_column_mass():
    golds = [ObjectType.TEXT, ObjectType.BUTTON, ObjectType.IMAGE]
    preds = [ObjectType.MAP] * 3
    report = compute_report(preds, golds)
    mi = report.labels.index("MAP")
    assert report.counts[:, mi].sum() == 3
    assert report.counts.sum() == 3


def test_length_mismatch_errors():
    with pytest.raises(ValueError):
        confusion([ObjectType.TEXT], [])


def test_totals_and_micro_consistency(rng):
    type_pool = [ObjectType.TEXT, ObjectType.BUTTON, ObjectType.IMAGE]
    golds = [type_pool[i] for i in rng.integers(0, 3, size=90)]
    preds = [type_pool[i] for i in rng.integers(0, 3, size=90)]
    report = compute_report(preds, golds)
    assert report.total() == 90
    diagonal = sum(report.counts[i, i] for i in range(len(report.labels)))
    micro_recall = diagonal / report.total()
    manual = sum(p is g for p, g in zip(preds, golds)) / 90
    assert micro_recall == pytest.approx(manual)


def test_report_serialization_roundtrip():
    import json

    golds = [ObjectType.TEXT, ObjectType.BUTTON]
    preds = [ObjectType.TEXT, None]
    report = compute_report(preds, golds)
    payload = json.loads(report.to_json())
    assert payload["per_type"]["TEXT"]["f1"] == 1.0
    table = report.to_text_table()
    assert "Weighted avg" in table and "Macro avg" in table
    csv = report.confusion_csv()
    assert csv.splitlines()[0].startswith("gold\\pred,")
