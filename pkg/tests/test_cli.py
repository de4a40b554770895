import json

import numpy as np
import pytest

from uiclean import pipeline as pl, synth
from uiclean.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_corpus")
    synth.generate_corpus(out, 10, 4, seed=55)
    return out


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["split", "--corpus"])  # missing value
    assert exc.value.code == EXIT_USAGE


def test_stats_totals_match_fixture_counts(corpus_dir, capsys, tmp_path):
    out = tmp_path / "stats.json"
    assert main(["stats", "--corpus", str(corpus_dir), "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    payload = json.loads(out.read_text())
    store, stats = pl.ingest(corpus_dir)
    manual_nodes = sum(store.load(sid).hierarchy.node_count() for sid in store.ids())
    assert payload["nodes_total"] == manual_nodes
    assert f"screens: {stats.screens}" in printed
    assert payload["screens"] == 10


def test_ingest_reports_counts(corpus_dir, capsys):
    assert main(["ingest", "--corpus", str(corpus_dir)]) == EXIT_OK
    assert "screens: 10" in capsys.readouterr().out


def test_missing_corpus_is_data_error(tmp_path, capsys):
    empty = tmp_path / "void"
    empty.mkdir()
    assert main(["split", "--corpus", str(empty), "--out", str(tmp_path / "s.json")]) == EXIT_DATA


def test_split_writes_json(corpus_dir, tmp_path, capsys):
    out = tmp_path / "split.json"
    code = main(["split", "--corpus", str(corpus_dir), "--ratios", "0.6,0.2,0.2",
                 "--seed", "4", "--out", str(out)])
    assert code == EXIT_OK
    payload = json.loads(out.read_text())
    assert payload["seed"] == 4
    assert len(payload["train"]) + len(payload["validation"]) + len(payload["test"]) == 10


def test_bad_ratios_is_data_error(corpus_dir, tmp_path, capsys):
    assert main(["split", "--corpus", str(corpus_dir), "--ratios", "0.5,0.5",
                 "--out", str(tmp_path / "s.json")]) == EXIT_DATA


def test_preprocess_writes_reports(corpus_dir, tmp_path, capsys):
    out = tmp_path / "pre"
    assert main(["preprocess", "--corpus", str(corpus_dir), "--out", str(out), "--limit", "3"]) == EXIT_OK
    cleaned = sorted(out.glob("*.cleaned.json"))
    reports = sorted(out.glob("*.report.json"))
    assert len(cleaned) == 3 and len(reports) == 3
    payload = json.loads(reports[0].read_text())
    assert set(payload) == {"kept", "removed", "trimmed"}


def test_synth_subcommand(tmp_path, capsys):
    out = tmp_path / "gen"
    assert main(["synth", "--out", str(out), "--screens", "4", "--packages", "2", "--seed", "1"]) == EXIT_OK
    assert len(list(out.glob("*.json"))) == 8  # 4 layouts + 4 label files
    assert len(list(out.glob("*.png"))) == 4


def test_evaluate_heuristic_rule_matching_fixture(tmp_path, capsys):
    # fixture where every node matches a rule correctly: all F1 = 1.0
    corpus = tmp_path / "exact"
    corpus.mkdir()
    from PIL import Image

    from uiclean.geometry import BoundingBox
    from uiclean.hierarchy import Node, ViewHierarchy, serialize_hierarchy

    rng = np.random.default_rng(0)
    for i in range(3):
        root = Node(android_class="android.widget.LinearLayout", bounds=BoundingBox(0, 0, 200, 200))
        kids = [
            ("android.widget.Button", "BUTTON", (10, 10, 90, 60)),
            ("android.widget.TextView", "TEXT", (10, 70, 90, 120)),
            ("android.widget.ImageView", "IMAGE", (100, 10, 190, 120)),
        ]
        labels = {0: "CONTAINER"}
        for j, (cls, label, box) in enumerate(kids, start=1):
            root.children.append(Node(android_class=cls, bounds=BoundingBox(*box)))
            labels[j] = label
        h = ViewHierarchy(root=root, package_name=f"com.pkg{i}", screen_width=200, screen_height=200)
        for node_id, node in enumerate(h.preorder()):
            node.node_id = node_id
        sid = f"pkg{i}_000{i}"
        (corpus / f"{sid}.json").write_text(json.dumps(serialize_hierarchy(h)))
        Image.fromarray(rng.integers(0, 256, size=(200, 200, 3)).astype(np.uint8)).save(corpus / f"{sid}.png")
        (corpus / f"{sid}.labels.json").write_text(json.dumps({str(k): v for k, v in labels.items()}))

    out = tmp_path / "reports"
    code = main(["evaluate", "--model", "heuristic", "--corpus", str(corpus),
                 "--subset", "train", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "heuristic_train_report.json").read_text())
    for scores in report["per_type"].values():
        assert scores["f1"] == 1.0
    assert (out / "heuristic_train_confusion.csv").exists()


def test_evaluate_learned_model_needs_checkpoint(corpus_dir, capsys):
    assert main(["evaluate", "--model", "gnn", "--corpus", str(corpus_dir)]) == EXIT_DATA


def test_clean_and_reclean_idempotent(corpus_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"type_model": "heuristic"}))
    out1 = tmp_path / "pass1"
    assert main(["clean", "--corpus", str(corpus_dir), "--config", str(cfg), "--out", str(out1)]) == EXIT_OK
    cleaned_files = sorted(out1.glob("*.cleaned.json"))
    assert len(cleaned_files) == 10

    # re-clean the cleaned output: survivors unchanged
    store, _ = pl.ingest(corpus_dir)
    pass2_corpus = tmp_path / "pass2_corpus"
    pass2_corpus.mkdir()
    from PIL import Image

    for f in cleaned_files[:4]:
        sid = f.name.replace(".cleaned.json", "")
        doc = json.loads(f.read_text())
        (pass2_corpus / f"{sid}.json").write_text(json.dumps(doc))
        Image.fromarray(store.load(sid).screenshot).save(pass2_corpus / f"{sid}.png")
    out2 = tmp_path / "pass2"
    assert main(["clean", "--corpus", str(pass2_corpus), "--config", str(cfg), "--out", str(out2)]) == EXIT_OK

    def survivors(doc):
        found = {}

        def walk(n):
            if "clay_type" in n:
                found[n["node_id"]] = (tuple(n["bounds"]), n["clay_type"])
            for c in n.get("children", []):
                walk(c)

        walk(doc["activity"]["root"])
        return found

    for f in sorted(out2.glob("*.cleaned.json")):
        sid = f.name.replace(".cleaned.json", "")
        first = survivors(json.loads((out1 / f.name).read_text()))
        second = survivors(json.loads(f.read_text()))
        assert first == second, sid


def test_clean_unknown_id_is_data_error(corpus_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"type_model": "heuristic"}))
    assert main(["clean", "--corpus", str(corpus_dir), "--config", str(cfg),
                 "--out", str(tmp_path / "x"), "--ids", "nope"]) == EXIT_DATA


def test_render_overlay_subcommand(corpus_dir, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"type_model": "heuristic"}))
    store, _ = pl.ingest(corpus_dir)
    sid = store.ids()[0]
    out = tmp_path / "overlay.png"
    code = main(["render-overlay", "--corpus", str(corpus_dir), "--config", str(cfg),
                 "--id", sid, "--out", str(out), "--show-removed"])
    assert code == EXIT_OK
    assert out.exists()


def test_train_detector_and_evaluate_smoke(corpus_dir, tmp_path, capsys):
    split_path = tmp_path / "split.json"
    main(["split", "--corpus", str(corpus_dir), "--ratios", "0.7,0.0,0.3",
          "--seed", "2", "--out", str(split_path)])
    out = tmp_path / "ckpt"
    code = main([
        "train-detector", "--corpus", str(corpus_dir), "--split", str(split_path),
        "--out", str(out), "--steps", "8", "--batch", "4", "--log-every", "0",
    ])
    assert code == EXIT_OK
    ckpt = out / "detector.ckpt"
    assert ckpt.exists()
    code = main([
        "evaluate", "--model", "detector", "--corpus", str(corpus_dir),
        "--split", str(split_path), "--subset", "train", "--checkpoint", str(ckpt),
    ])
    assert code == EXIT_OK


def test_train_typer_smoke(corpus_dir, tmp_path, capsys):
    out = tmp_path / "typer"
    code = main([
        "train-typer", "--model", "gnn", "--corpus", str(corpus_dir),
        "--out", str(out), "--steps", "4", "--batch", "2", "--vocab-size", "300",
        "--log-every", "0",
    ])
    assert code == EXIT_OK
    assert (out / "gnn.ckpt").exists()
    assert (out / "tokenizer.json").exists()
    code = main([
        "evaluate", "--model", "gnn", "--corpus", str(corpus_dir), "--subset", "train",
        "--checkpoint", str(out / "gnn.ckpt"), "--tokenizer", str(out / "tokenizer.json"),
    ])
    assert code == EXIT_OK


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck", "--seed", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "all gradient checks passed" in out
