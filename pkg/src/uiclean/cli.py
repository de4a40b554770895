"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/configuration error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import heuristics, pipeline as pl, synth
from .bpe import TokenizerModel, train_bpe
from .detector import (
    DESK_SCALE_DETECTOR_TRAIN,
    DetectorConfig,
    InvalidObjectDetector,
    train_detector,
)
from .gnn import (
    DESK_SCALE_GNN_TRAIN,
    GnnConfig,
    MessagePassingTypeModel,
    prepare_graph,
    train_gnn,
)
from .gradsuite import TOLERANCE, run_gradient_suite
from .hierarchy import ObjectType, ParseError, iter_preorder, serialize_hierarchy
from .nn import TrainConfig, TrainingDiverged
from .preprocess import preprocess
from .render import render_overlay, save_overlay
from .transformer import (
    DESK_SCALE_BACKBONE_TRAIN,
    DESK_SCALE_TRANSFORMER_TRAIN,
    TransformerConfig,
    TransformerTypeModel,
    prepare_nodes,
    train_transformer,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

DEFAULT_VOCAB_SIZE = 512


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="uiclean", description="Mobile UI layout denoising toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a corpus directory and report what was loaded")
    p.add_argument("--corpus", required=True)
    p.add_argument("--stats-out")

    p = sub.add_parser("stats", help="corpus statistics (class histogram, node counts)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")

    p = sub.add_parser("split", help="package-wise train/validation/test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratios", default="0.75,0.10,0.15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", help="run the rule-based denoiser over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--min-aspect-ratio", type=float, default=0.01)
    p.add_argument("--min-area-fraction", type=float, default=0.0001)
    p.add_argument("--blank-modal-share", type=float, default=0.99)

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--screens", type=int, required=True)
    p.add_argument("--packages", type=int, default=0, help="default: screens // 10")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-detector", help="train the invalid-object detector")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", help="split JSON; defaults to a fresh package-wise split")
    p.add_argument("--out", required=True)
    _train_flags(p, DESK_SCALE_DETECTOR_TRAIN)

    p = sub.add_parser("train-typer", help="train a type-recognition model")
    p.add_argument("--model", choices=("gnn", "transformer"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", help="split JSON; defaults to a fresh package-wise split")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=DEFAULT_VOCAB_SIZE)
    _train_flags(p, DESK_SCALE_GNN_TRAIN)

    p = sub.add_parser("evaluate", help="evaluate a model on a split subset")
    p.add_argument("--model", choices=("heuristic", "gnn", "transformer", "detector"), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split")
    p.add_argument("--subset", default="test", choices=("train", "validation", "test"))
    p.add_argument("--checkpoint")
    p.add_argument("--tokenizer")
    p.add_argument("--rules")
    p.add_argument("--out")

    p = sub.add_parser("clean", help="run the full two-phase pipeline over screens")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ids", nargs="*")
    p.add_argument("--type-model", choices=("heuristic", "gnn", "transformer"),
                   help="override the config's type model")
    p.add_argument("--detector-threshold", type=float,
                   help="override the config's detector threshold")

    p = sub.add_parser("render-overlay", help="draw cleaned boxes over a screenshot")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--show-removed", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference checks for every layer")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _train_flags(p: argparse.ArgumentParser, defaults: TrainConfig) -> None:
    p.add_argument("--steps", type=int, default=defaults.total_steps)
    p.add_argument("--batch", type=int, default=defaults.batch_size)
    p.add_argument("--lr", type=float, default=defaults.initial_lr)
    p.add_argument("--reduced-lr", type=float, default=defaults.reduced_lr)
    p.add_argument("--lr-drop-step", type=int, default=None)
    p.add_argument("--l2", type=float, default=defaults.l2_coefficient)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=200)


def _train_config(args) -> TrainConfig:
    drop = args.lr_drop_step if args.lr_drop_step is not None else max(1, int(args.steps * 0.75))
    return TrainConfig(
        batch_size=args.batch,
        total_steps=args.steps,
        initial_lr=args.lr,
        reduced_lr=args.reduced_lr,
        lr_drop_step=min(drop, args.steps - 1),
        l2_coefficient=args.l2,
        seed=args.seed,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "ingest": _cmd_ingest,
        "stats": _cmd_stats,
        "split": _cmd_split,
        "preprocess": _cmd_preprocess,
        "synth": _cmd_synth,
        "train-detector": _cmd_train_detector,
        "train-typer": _cmd_train_typer,
        "evaluate": _cmd_evaluate,
        "clean": _cmd_clean,
        "render-overlay": _cmd_render,
        "gradcheck": _cmd_gradcheck,
    }[args.command]
    try:
        return handler(args)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ParseError, pl.PipelineConfigError, heuristics.RuleTableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def _load_corpus(args):
    store, stats = pl.ingest(args.corpus)
    if len(store) == 0:
        raise ValueError(f"no usable screens in {args.corpus}")
    return store, stats


def _cmd_ingest(args) -> int:
    store, stats = pl.ingest(args.corpus)
    print(f"screens: {stats.screens} (inadmissible: {stats.inadmissible}, skipped: {len(stats.skipped)})")
    print(f"nodes: {stats.nodes_total}, unique classes: {len(stats.class_histogram)}")
    for warning in stats.skipped:
        print(f"  skipped {warning}")
    if args.stats_out:
        Path(args.stats_out).write_text(stats.to_json(), encoding="utf-8")
    return EXIT_OK


def _cmd_stats(args) -> int:
    _store, stats = pl.ingest(args.corpus)
    print(f"screens: {stats.screens}")
    print(f"nodes: {stats.nodes_total}")
    print(f"unique classes: {len(stats.class_histogram)}")
    for name, count in stats.class_histogram.most_common(20):
        print(f"  {count:>8}  {name}")
    if args.out:
        Path(args.out).write_text(stats.to_json(), encoding="utf-8")
    return EXIT_OK


def _cmd_split(args) -> int:
    store, _ = _load_corpus(args)
    ratios = tuple(float(r) for r in args.ratios.split(","))
    if len(ratios) != 3:
        raise ValueError(f"--ratios needs 3 comma-separated values, got {args.ratios!r}")
    result = pl.split(store, ratios, args.seed)
    Path(args.out).write_text(result.to_json(), encoding="utf-8")
    print(
        f"train {len(result.train)} / validation {len(result.validation)} / test {len(result.test)}"
        f" screens over {len(store.packages())} packages"
    )
    return EXIT_OK


def _cmd_preprocess(args) -> int:
    store, _ = _load_corpus(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = store.ids()[: args.limit] if args.limit else store.ids()
    from .preprocess import PreprocessConfig

    rule_config = PreprocessConfig(
        min_aspect_ratio=args.min_aspect_ratio,
        min_area_fraction=args.min_area_fraction,
        blank_modal_share=args.blank_modal_share,
    )
    removed_total = 0
    for source_id in ids:
        screen = store.load(source_id)
        cleaned_h, report = preprocess(screen, config=rule_config)
        removed_total += len(report.removed)
        (out_dir / f"{source_id}.cleaned.json").write_text(
            json.dumps(serialize_hierarchy(cleaned_h)), encoding="utf-8"
        )
        (out_dir / f"{source_id}.report.json").write_text(report.to_json(), encoding="utf-8")
    print(f"preprocessed {len(ids)} screens, removed {removed_total} nodes")
    return EXIT_OK


def _cmd_synth(args) -> int:
    packages = args.packages or max(3, args.screens // 10)
    ids = synth.generate_corpus(args.out, args.screens, packages, seed=args.seed)
    print(f"wrote {len(ids)} synthetic screens across {packages} packages to {args.out}")
    return EXIT_OK


def _read_split(args, store) -> pl.DatasetSplit:
    if args.split:
        result = pl.DatasetSplit.from_json(Path(args.split).read_text(encoding="utf-8"))
    else:
        result = pl.split(store)
    for subset in ("train", "validation", "test"):
        for source_id in result.of(subset):
            if source_id not in store:
                raise ValueError(f"split references unknown screen {source_id}")
    return result


def _cmd_train_detector(args) -> int:
    store, _ = _load_corpus(args)
    dataset_split = _read_split(args, store)
    examples = pl.detector_dataset(store, dataset_split.train)
    if not examples:
        raise ValueError("no labeled training examples (are .labels.json files present?)")
    cfg = _train_config(args)
    print(f"training detector on {len(examples)} examples for {cfg.total_steps} steps")
    model, _history = train_detector(
        examples, store.load, cfg, DetectorConfig(seed=args.seed), log_every=args.log_every
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "detector.ckpt"
    model.save(path)
    print(f"saved {path}")
    return EXIT_OK


def _text_corpus(store, ids):
    for source_id in ids:
        screen = store.load(source_id)
        for node in iter_preorder(screen.hierarchy.root):
            for value in (node.android_class, node.content_desc, node.resource_id):
                if value:
                    yield value


def _cmd_train_typer(args) -> int:
    store, _ = _load_corpus(args)
    dataset_split = _read_split(args, store)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    tokenizer = train_bpe(_text_corpus(store, dataset_split.train), vocab_size=args.vocab_size)
    tokenizer_path = out_dir / "tokenizer.json"
    tokenizer.save(tokenizer_path)
    cfg = _train_config(args)

    if args.model == "gnn":
        prepared = []
        for source_id in dataset_split.train:
            gold = store.gold_labels(source_id)
            if gold is None:
                continue
            screen = store.load(source_id)
            cleaned_h, _ = preprocess(screen)
            valid_gold = _valid_gold(cleaned_h, gold)
            prepared.append(prepare_graph(screen, cleaned_h, tokenizer, GnnConfig(), valid_gold))
        print(f"training graph typer on {len(prepared)} screens for {cfg.total_steps} steps")
        model, _ = train_gnn(prepared, tokenizer, GnnConfig(seed=args.seed), cfg, log_every=args.log_every)
        path = out_dir / "gnn.ckpt"
    else:
        prepared = []
        config = TransformerConfig(seed=args.seed)
        for source_id in dataset_split.train:
            gold = store.gold_labels(source_id)
            if gold is None:
                continue
            screen = store.load(source_id)
            cleaned_h, _ = preprocess(screen)
            valid_gold = _valid_gold(cleaned_h, gold)
            prepared.append(prepare_nodes(screen, cleaned_h, tokenizer, config, valid_gold))
        print(f"training transformer typer on {len(prepared)} screens for {cfg.total_steps} steps")
        backbone_cfg = TrainConfig(
            batch_size=cfg.batch_size,
            total_steps=cfg.total_steps,
            initial_lr=cfg.initial_lr * 0.6,
            reduced_lr=cfg.reduced_lr * 0.6,
            lr_drop_step=cfg.lr_drop_step,
            l2_coefficient=cfg.l2_coefficient,
            seed=cfg.seed,
        )
        model, _ = train_transformer(
            prepared, tokenizer, config, cfg, backbone_cfg, log_every=args.log_every
        )
        path = out_dir / "transformer.ckpt"
    model.save(path)
    print(f"saved {path} and {tokenizer_path}")
    return EXIT_OK


def _valid_gold(cleaned_h, gold):
    return {
        n.node_id: gold[n.node_id]
        for n in iter_preorder(cleaned_h.root)
        if n.node_id in gold and gold[n.node_id] is not ObjectType.INVALID
    }


def _cmd_evaluate(args) -> int:
    store, _ = _load_corpus(args)
    dataset_split = _read_split(args, store)
    ids = dataset_split.of(args.subset)
    if args.model == "heuristic":
        rules = heuristics.load_rules(args.rules) if args.rules else None
        report = pl.evaluate_heuristic(store, ids, rules)
    elif args.model == "detector":
        if not args.checkpoint:
            raise ValueError("--checkpoint required for --model=detector")
        report = pl.evaluate_detector(InvalidObjectDetector.load(args.checkpoint), store, ids)
    else:
        if not args.checkpoint or not args.tokenizer:
            raise ValueError("--checkpoint and --tokenizer required for learned models")
        tokenizer = TokenizerModel.load(args.tokenizer)
        if args.model == "gnn":
            model = MessagePassingTypeModel.load(args.checkpoint, tokenizer)
        else:
            model = TransformerTypeModel.load(args.checkpoint, tokenizer)
        report = pl.evaluate_typer(model, store, ids)
    print(report.to_text_table())
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{args.model}_{args.subset}_report.json").write_text(report.to_json(), encoding="utf-8")
        (out_dir / f"{args.model}_{args.subset}_report.txt").write_text(report.to_text_table(), encoding="utf-8")
        (out_dir / f"{args.model}_{args.subset}_confusion.csv").write_text(report.confusion_csv(), encoding="utf-8")
        print(f"reports written to {out_dir}")
    return EXIT_OK


def _cmd_clean(args) -> int:
    store, _ = _load_corpus(args)
    config = pl.PipelineConfig.from_file(args.config)
    if args.type_model:
        config.type_model = args.type_model
    if args.detector_threshold is not None:
        config.detector_threshold = args.detector_threshold
    loaded = pl.LoadedPipeline.from_config(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = args.ids or store.ids()
    for source_id in ids:
        if source_id not in store:
            raise ValueError(f"unknown screen id {source_id}")
        screen = store.load(source_id)
        cleaned = pl.clean(screen, loaded)
        (out_dir / f"{source_id}.cleaned.json").write_text(
            json.dumps(cleaned.to_document(screen.hierarchy), indent=2), encoding="utf-8"
        )
    print(f"cleaned {len(ids)} screens into {out_dir}")
    return EXIT_OK


def _cmd_render(args) -> int:
    store, _ = _load_corpus(args)
    config = pl.PipelineConfig.from_file(args.config)
    loaded = pl.LoadedPipeline.from_config(config)
    if args.id not in store:
        raise ValueError(f"unknown screen id {args.id}")
    screen = store.load(args.id)
    cleaned = pl.clean(screen, loaded)
    image = render_overlay(screen, cleaned, show_removed=args.show_removed)
    save_overlay(image, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    results = run_gradient_suite(seed=args.seed, verbose=True)
    worst = max(err for _name, err in results)
    failed = [name for name, err in results if err >= TOLERANCE]
    print(f"worst max-relative-error: {worst:.3e} (tolerance {TOLERANCE:.0e})")
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_DATA
    print("all gradient checks passed")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
