"""Corpus ingestion, package-wise splits, and the two-phase cleaning
pipeline: rule preprocessing, learned invalid-object removal, then type
assignment by the configured model.
"""

from __future__ import annotations

import json
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import heuristics
from .bpe import TokenizerModel
from .detector import DetectorExample, InvalidObjectDetector, predict_examples
from .geometry import BoundingBox
from .gnn import MessagePassingTypeModel, prepare_graph
from .heuristics import HeuristicRule, infer_type
from .hierarchy import (
    Node,
    ObjectType,
    ParseError,
    Screen,
    ViewHierarchy,
    iter_preorder,
    parse_hierarchy,
    screen_admissible,
    serialize_node,
)
from .metrics import EvalReport, compute_report
from .preprocess import DropReason, PreprocessReport, drop_nodes, preprocess
from .transformer import TransformerTypeModel, prepare_nodes

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


# --------------------------------------------------------------------------
# Screen store and ingestion


@dataclass
class IngestStats:
    screens: int = 0
    inadmissible: int = 0
    nodes_total: int = 0
    class_histogram: Counter = field(default_factory=Counter)
    skipped: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "screens": self.screens,
                "inadmissible": self.inadmissible,
                "nodes_total": self.nodes_total,
                "unique_classes": len(self.class_histogram),
                "class_histogram": dict(self.class_histogram.most_common()),
                "skipped": self.skipped,
            },
            indent=2,
        )


class ScreenStore:
    """Maps source ids to (hierarchy JSON, screenshot, optional gold
    labels) file triples, loading screens lazily with a small cache."""

    def __init__(self, cache_size: int = 64):
        self._paths: dict[str, tuple[Path, Path]] = {}
        self._labels: dict[str, Path] = {}
        self._packages: dict[str, str] = {}
        self._cache: OrderedDict[str, Screen] = OrderedDict()
        self._cache_size = cache_size

    def add(self, source_id: str, json_path: Path, image_path: Path, package: str,
            labels_path: Path | None = None) -> None:
        self._paths[source_id] = (json_path, image_path)
        self._packages[source_id] = package
        if labels_path is not None:
            self._labels[source_id] = labels_path

    def ids(self) -> list[str]:
        return sorted(self._paths)

    def __len__(self) -> int:
        return len(self._paths)

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._paths

    def package_of(self, source_id: str) -> str:
        return self._packages[source_id]

    def packages(self) -> list[str]:
        return sorted(set(self._packages.values()))

    def load(self, source_id: str) -> Screen:
        if source_id in self._cache:
            self._cache.move_to_end(source_id)
            return self._cache[source_id]
        json_path, image_path = self._paths[source_id]
        hierarchy = parse_hierarchy(json_path.read_text(encoding="utf-8"))
        raster = np.asarray(Image.open(image_path).convert("RGB"))
        screen = Screen(hierarchy=hierarchy, screenshot=raster, source_id=source_id)
        self._cache[source_id] = screen
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return screen

    def gold_labels(self, source_id: str) -> dict[int, ObjectType] | None:
        path = self._labels.get(source_id)
        if path is None:
            return None
        raw = json.loads(path.read_text(encoding="utf-8"))
        return {int(k): ObjectType.from_name(v) for k, v in raw.items()}


def ingest(corpus_dir: str | Path) -> tuple[ScreenStore, IngestStats]:
    """Scan a directory of ``<id>.json`` + ``<id>.png|.jpg`` pairs; parse,
    filter inadmissible screens, and collect corpus statistics. Unpaired
    files are skipped with a warning entry."""
    corpus = Path(corpus_dir)
    store = ScreenStore()
    stats = IngestStats()
    json_files = {p.stem: p for p in sorted(corpus.glob("*.json")) if not p.name.endswith(".labels.json")}
    image_files: dict[str, Path] = {}
    for suffix in IMAGE_SUFFIXES:
        for p in sorted(corpus.glob(f"*{suffix}")):
            image_files.setdefault(p.stem, p)

    for stem, image_path in sorted(image_files.items()):
        if stem not in json_files:
            stats.skipped.append(f"{image_path.name}: no matching layout JSON")
    for stem, json_path in sorted(json_files.items()):
        image_path = image_files.get(stem)
        if image_path is None:
            stats.skipped.append(f"{json_path.name}: no matching screenshot")
            continue
        try:
            hierarchy = parse_hierarchy(json_path.read_text(encoding="utf-8"))
        except ParseError as exc:
            stats.skipped.append(f"{json_path.name}: {exc}")
            continue
        if not screen_admissible(hierarchy):
            stats.inadmissible += 1
            continue
        nodes = hierarchy.preorder()
        stats.screens += 1
        stats.nodes_total += len(nodes)
        stats.class_histogram.update(node.android_class for node in nodes)
        labels_path = corpus / f"{stem}.labels.json"
        store.add(
            stem,
            json_path,
            image_path,
            hierarchy.package_name,
            labels_path if labels_path.exists() else None,
        )
    return store, stats


# --------------------------------------------------------------------------
# Package-wise splits


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]
    ratios: tuple[float, float, float]
    seed: int

    def of(self, name: str) -> list[str]:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def to_json(self) -> str:
        return json.dumps(
            {
                "ratios": list(self.ratios),
                "seed": self.seed,
                "train": self.train,
                "validation": self.validation,
                "test": self.test,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplit":
        raw = json.loads(text)
        return cls(
            train=list(raw["train"]),
            validation=list(raw["validation"]),
            test=list(raw["test"]),
            ratios=tuple(raw["ratios"]),
            seed=int(raw["seed"]),
        )


def package_bucket(package: str, seed: int, ratios: Sequence[float]) -> int:
    """Deterministic bucket index from a seeded hash of the package name,
    against cumulative ratio boundaries."""
    import hashlib

    digest = hashlib.sha256(f"{seed}:{package}".encode("utf-8")).digest()
    u = int.from_bytes(digest[:8], "big") / 2**64
    total = sum(ratios)
    acc = 0.0
    for i, r in enumerate(ratios):
        acc += r / total
        if u < acc:
            return i
    return len(ratios) - 1


def split(
    store: ScreenStore,
    ratios: tuple[float, float, float] = (0.75, 0.10, 0.15),
    seed: int = 0,
) -> DatasetSplit:
    """Assign whole packages to train/validation/test so screens from one
    app never cross splits; ratios are approximate by construction."""
    packages = store.packages()
    if len(packages) < 3:
        raise ValueError(f"need at least 3 packages to split, got {len(packages)}")
    buckets: dict[str, int] = {p: package_bucket(p, seed, ratios) for p in packages}
    out: tuple[list[str], list[str], list[str]] = ([], [], [])
    for source_id in store.ids():
        out[buckets[store.package_of(source_id)]].append(source_id)
    return DatasetSplit(train=out[0], validation=out[1], test=out[2], ratios=ratios, seed=seed)


# --------------------------------------------------------------------------
# Pipeline configuration and the clean operation


class PipelineConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    type_model: str = "heuristic"  # heuristic | gnn | transformer
    detector_checkpoint: str | None = None
    typer_checkpoint: str | None = None
    tokenizer_path: str | None = None
    rules_path: str | None = None
    detector_threshold: float = 0.5
    output_dir: str | None = None
    # rule-preprocessing thresholds (library defaults when omitted)
    min_aspect_ratio: float = 0.01
    min_area_fraction: float = 0.0001
    blank_modal_share: float = 0.99

    def preprocess_config(self) -> "PreprocessConfig":
        from .preprocess import PreprocessConfig

        return PreprocessConfig(
            min_aspect_ratio=self.min_aspect_ratio,
            min_area_fraction=self.min_area_fraction,
            blank_modal_share=self.blank_modal_share,
        )

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        unknown = set(raw) - set(known)
        if unknown:
            raise PipelineConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**known)


@dataclass
class CleanedNode:
    node_id: int
    bounds: BoundingBox
    clay_type: str | None  # semantic type name; None when the heuristic is unsure
    type_prob: float
    invalid_prob: float


@dataclass
class CleanedScreen:
    """Every original node is accounted for exactly once: survived,
    rule-removed, or model-removed."""

    source_id: str
    nodes: list[CleanedNode]
    rule_removed: list[tuple[int, DropReason]]
    model_removed: list[int]
    hierarchy: ViewHierarchy
    original_count: int
    report: PreprocessReport

    def __post_init__(self) -> None:
        accounted = len(self.nodes) + len(self.rule_removed) + len(self.model_removed)
        synthetic = sum(1 for n in self.nodes if n.node_id < 0)
        if accounted - synthetic != self.original_count:
            raise ValueError(
                f"{self.source_id}: ledger mismatch "
                f"({accounted - synthetic} accounted vs {self.original_count} original)"
            )

    def to_document(self, original: ViewHierarchy) -> dict:
        """The input hierarchy shape annotated per node: survivors carry
        clay_type / type_prob / invalid_prob (and their final bounds);
        removed nodes carry removed_reason."""
        extra: dict[int, dict] = {}
        for node in self.nodes:
            extra[node.node_id] = {
                "bounds": list(node.bounds.as_tuple()),
                "clay_type": node.clay_type,
                "type_prob": node.type_prob,
                "invalid_prob": node.invalid_prob,
            }
        for node_id, reason in self.rule_removed:
            extra[node_id] = {"removed_reason": reason.value}
        for node_id in self.model_removed:
            extra[node_id] = {"removed_reason": "model_invalid"}
        return {
            "activity_name": f"{original.package_name}/",
            "screen_width": original.screen_width,
            "screen_height": original.screen_height,
            "activity": {"root": serialize_node(original.root, extra)},
        }


class LoadedPipeline:
    """Models and rule table resolved from a PipelineConfig; fails at
    startup on any checkpoint/config mismatch."""

    def __init__(
        self,
        config: PipelineConfig,
        rules: list[HeuristicRule],
        detector: InvalidObjectDetector | None,
        typer_gnn: MessagePassingTypeModel | None = None,
        typer_transformer: TransformerTypeModel | None = None,
    ):
        self.config = config
        self.rules = rules
        self.detector = detector
        self.typer_gnn = typer_gnn
        self.typer_transformer = typer_transformer

    @classmethod
    def from_config(cls, config: PipelineConfig) -> "LoadedPipeline":
        if config.type_model not in ("heuristic", "gnn", "transformer"):
            raise PipelineConfigError(f"unknown type_model {config.type_model!r}")
        rules = (
            heuristics.load_rules(config.rules_path)
            if config.rules_path
            else heuristics.default_rules()
        )
        detector = None
        if config.detector_checkpoint:
            detector = InvalidObjectDetector.load(config.detector_checkpoint)
            detector.config.threshold = config.detector_threshold
        typer_gnn = None
        typer_transformer = None
        if config.type_model in ("gnn", "transformer"):
            if not config.typer_checkpoint or not config.tokenizer_path:
                raise PipelineConfigError(
                    f"type_model={config.type_model} requires typer_checkpoint and tokenizer_path"
                )
            tokenizer = TokenizerModel.load(config.tokenizer_path)
            if config.type_model == "gnn":
                typer_gnn = MessagePassingTypeModel.load(config.typer_checkpoint, tokenizer)
            else:
                typer_transformer = TransformerTypeModel.load(config.typer_checkpoint, tokenizer)
        return cls(config, rules, detector, typer_gnn, typer_transformer)


def clean(screen: Screen, pipeline: LoadedPipeline) -> CleanedScreen:
    """Rule preprocessing, then learned invalid-object removal, then type
    assignment for the survivors."""
    original_count = screen.hierarchy.node_count()
    labeler = heuristics.make_labeler(pipeline.rules)
    cleaned_h, report = preprocess(
        screen, labeler=labeler, config=pipeline.config.preprocess_config()
    )

    survivors = [n for n in iter_preorder(cleaned_h.root) if n.node_id >= 0]
    invalid_prob: dict[int, float] = {n.node_id: 0.0 for n in survivors}
    model_removed: list[int] = []
    if pipeline.detector is not None and survivors:
        examples = [DetectorExample(screen.source_id, n.bounds, False) for n in survivors]
        probs = predict_examples(pipeline.detector, examples, lambda _sid: screen)
        for node, prob in zip(survivors, probs):
            invalid_prob[node.node_id] = float(prob)
        threshold = pipeline.detector.config.threshold
        model_removed = [n.node_id for n, p in zip(survivors, probs) if p > threshold]
        if model_removed:
            cleaned_h = drop_nodes(cleaned_h, set(model_removed))

    final_nodes = [n for n in iter_preorder(cleaned_h.root) if n.node_id >= 0]
    synthetic_nodes = [n for n in iter_preorder(cleaned_h.root) if n.node_id < 0]
    typed = _assign_types(screen, cleaned_h, final_nodes, pipeline)

    nodes = [
        CleanedNode(
            node_id=n.node_id,
            bounds=n.bounds,
            clay_type=typed[n.node_id][0],
            type_prob=typed[n.node_id][1],
            invalid_prob=invalid_prob.get(n.node_id, 0.0),
        )
        for n in final_nodes
    ]
    nodes += [
        CleanedNode(n.node_id, n.bounds, ObjectType.CONTAINER.value, 1.0, 0.0)
        for n in synthetic_nodes
    ]
    return CleanedScreen(
        source_id=screen.source_id,
        nodes=nodes,
        rule_removed=list(report.removed),
        model_removed=model_removed,
        hierarchy=cleaned_h,
        original_count=original_count,
        report=report,
    )


def _assign_types(
    screen: Screen,
    cleaned_h: ViewHierarchy,
    nodes: list[Node],
    pipeline: LoadedPipeline,
) -> dict[int, tuple[str | None, float]]:
    if not nodes:
        return {}
    if pipeline.typer_gnn is not None:
        prepared = prepare_graph(screen, cleaned_h, pipeline.typer_gnn.tokenizer, pipeline.typer_gnn.config)
        return {
            node_id: (kind.value, prob)
            for node_id, kind, prob in pipeline.typer_gnn.predict(prepared)
            if node_id >= 0
        }
    if pipeline.typer_transformer is not None:
        prepared = prepare_nodes(
            screen, cleaned_h, pipeline.typer_transformer.tokenizer, pipeline.typer_transformer.config
        )
        return {
            node_id: (kind.value, prob)
            for node_id, kind, prob in pipeline.typer_transformer.predict(prepared)
            if node_id >= 0
        }
    out: dict[int, tuple[str | None, float]] = {}
    for node in nodes:
        kind = infer_type(node, pipeline.rules)
        out[node.node_id] = (kind.value if kind is not None else None, 1.0 if kind else 0.0)
    return out


# --------------------------------------------------------------------------
# Evaluation drivers


def phase2_examples(
    store: ScreenStore,
    ids: Sequence[str],
    labeler: heuristics.Labeler | None = None,
) -> list[tuple[Screen, ViewHierarchy, dict[int, ObjectType]]]:
    """Preprocess each screen and keep the gold-labeled valid survivors."""
    out = []
    for source_id in ids:
        gold = store.gold_labels(source_id)
        if gold is None:
            continue
        screen = store.load(source_id)
        cleaned_h, _ = preprocess(screen, labeler=labeler)
        valid_gold = {
            n.node_id: gold[n.node_id]
            for n in iter_preorder(cleaned_h.root)
            if n.node_id in gold and gold[n.node_id] is not ObjectType.INVALID
        }
        out.append((screen, cleaned_h, valid_gold))
    return out


def evaluate_heuristic(
    store: ScreenStore, ids: Sequence[str], rules: list[HeuristicRule] | None = None
) -> EvalReport:
    table = rules if rules is not None else heuristics.default_rules()
    preds: list[ObjectType | None] = []
    golds: list[ObjectType] = []
    for _screen, cleaned_h, valid_gold in phase2_examples(store, ids, heuristics.make_labeler(table)):
        by_id = {n.node_id: n for n in iter_preorder(cleaned_h.root)}
        for node_id, gold in valid_gold.items():
            preds.append(infer_type(by_id[node_id], table))
            golds.append(gold)
    return compute_report(preds, golds)


def evaluate_typer(
    model: MessagePassingTypeModel | TransformerTypeModel,
    store: ScreenStore,
    ids: Sequence[str],
) -> EvalReport:
    preds: list[ObjectType] = []
    golds: list[ObjectType] = []
    for screen, cleaned_h, valid_gold in phase2_examples(store, ids):
        if not valid_gold:
            continue
        if isinstance(model, MessagePassingTypeModel):
            prepared = prepare_graph(screen, cleaned_h, model.tokenizer, model.config)
        else:
            prepared = prepare_nodes(screen, cleaned_h, model.tokenizer, model.config)
        predicted = {node_id: kind for node_id, kind, _prob in model.predict(prepared)}
        for node_id, gold in valid_gold.items():
            preds.append(predicted[node_id])
            golds.append(gold)
    return compute_report(preds, golds)


def detector_dataset(
    store: ScreenStore, ids: Sequence[str]
) -> list[DetectorExample]:
    """Per labeled screen: rule-surviving nodes as (box, is_invalid)
    examples for the detector."""
    examples: list[DetectorExample] = []
    for source_id in ids:
        gold = store.gold_labels(source_id)
        if gold is None:
            continue
        screen = store.load(source_id)
        cleaned_h, _ = preprocess(screen)
        for node in iter_preorder(cleaned_h.root):
            if node.node_id in gold:
                examples.append(
                    DetectorExample(
                        screen_id=source_id,
                        box=node.bounds,
                        invalid=gold[node.node_id] is ObjectType.INVALID,
                    )
                )
    return examples


def evaluate_detector(
    model: InvalidObjectDetector, store: ScreenStore, ids: Sequence[str]
) -> EvalReport:
    examples = detector_dataset(store, ids)
    probs = predict_examples(model, examples, store.load)
    preds = ["INVALID" if p > model.config.threshold else "VALID" for p in probs]
    golds = ["INVALID" if e.invalid else "VALID" for e in examples]
    return compute_report(preds, golds, labels=["VALID", "INVALID"])
