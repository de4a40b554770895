"""Synthetic screen generator with known ground truth.

Screens are vertical stacks of drawn widgets (buttons, text blocks,
images, checkboxes, progress bars, pictograms, toolbars, bordered
container panels) over a light background. Invalid nodes are planted as
boxes shifted off their widget's pixels or as grayed-out ghost elements,
mimicking the out-of-sync and background-layer noise seen in captured
layouts. Ground-truth labels (semantic type or INVALID) are emitted per
node, which makes the corpus usable as an oracle for the whole pipeline.

Geometry is chosen so that planted nodes survive the rule-based
preprocessing (each generated screen is verified and regenerated if not):
widgets never overlap their siblings, every leaf's crop is non-uniform,
and every valid leaf's class name maps to a known heuristic type. Class
names are deliberately only partly informative: pictograms are named like
image views and some buttons like text views, so type models must consult
the pixels to separate those classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import BoundingBox
from .hierarchy import Node, ObjectType, Screen, ViewHierarchy, iter_preorder, serialize_hierarchy
from .preprocess import preprocess


@dataclass
class SynthConfig:
    raster_width: int = 160
    raster_height: int = 288
    coordinate_scale: int = 2  # hierarchy frame = raster * scale
    min_widgets: int = 4
    max_widgets: int = 8
    invalid_rate: float = 0.85  # probability that a screen plants >=1 invalid node
    generic_resource_id_rate: float = 0.3
    seed: int = 0

    @property
    def screen_width(self) -> int:
        return self.raster_width * self.coordinate_scale

    @property
    def screen_height(self) -> int:
        return self.raster_height * self.coordinate_scale


# (gold type, class-name pool). Pools overlap across types on purpose.
_LEAF_CLASS_POOLS: dict[ObjectType, list[str]] = {
    ObjectType.BUTTON: [
        "android.widget.Button",
        "androidx.appcompat.widget.AppCompatButton",
        "com.ui.widgets.ActionTextView",  # clickable text: resolves as TEXT
    ],
    ObjectType.TEXT: [
        "android.widget.TextView",
        "androidx.appcompat.widget.AppCompatTextView",
    ],
    ObjectType.IMAGE: [
        "android.widget.ImageView",
        "com.gallery.PhotoImageView",
    ],
    ObjectType.PICTOGRAM: [
        "com.ui.widgets.IconImageView",  # resolves as IMAGE; pixels disambiguate
        "android.widget.ImageView",
    ],
    ObjectType.CHECKBOX: [
        "android.widget.CheckBox",
        "androidx.appcompat.widget.AppCompatCheckBox",
    ],
    ObjectType.PROGRESS_BAR: [
        "android.widget.ProgressBar",
        "com.ui.widgets.LoadingProgressBar",
    ],
}

_CONTAINER_CLASSES = [
    "android.widget.LinearLayout",
    "android.widget.FrameLayout",
    "android.widget.RelativeLayout",
]
_TOOLBAR_CLASSES = ["android.widget.Toolbar", "androidx.appcompat.widget.Toolbar"]
_INVALID_CLASSES = [
    "android.widget.ImageView",
    "android.widget.Button",
    "android.widget.TextView",
]

_RESOURCE_WORDS = {
    ObjectType.BUTTON: ["btn_ok", "btn_submit", "action_confirm"],
    ObjectType.TEXT: ["title_text", "body_text", "label_info"],
    ObjectType.IMAGE: ["img_photo", "img_banner", "picture_main"],
    ObjectType.PICTOGRAM: ["ic_star", "ic_menu", "glyph_home"],
    ObjectType.CHECKBOX: ["chk_remember", "chk_agree"],
    ObjectType.PROGRESS_BAR: ["progress_main", "loading_bar"],
    ObjectType.TOOLBAR: ["toolbar_main", "app_bar"],
    ObjectType.CONTAINER: ["panel_content", "section_row"],
}

_FILL_PALETTE = [
    (66, 133, 244),
    (219, 68, 55),
    (244, 180, 0),
    (15, 157, 88),
    (171, 71, 188),
    (255, 112, 67),
    (0, 172, 193),
]


@dataclass
class SynthScreen:
    screen: Screen
    labels: dict[int, ObjectType]  # node_id -> gold (INVALID included)


def _pick(rng: np.random.Generator, items):
    return items[int(rng.integers(0, len(items)))]


class _Painter:
    def __init__(self, rng: np.random.Generator, config: SynthConfig):
        base = 228 + int(rng.integers(0, 18))
        tint = rng.integers(-6, 7, size=3)
        self.background = tuple(int(np.clip(base + t, 0, 255)) for t in tint)
        self.raster = np.zeros((config.raster_height, config.raster_width, 3), dtype=np.uint8)
        self.raster[:, :] = self.background
        self.rng = rng

    def fill(self, x0, y0, x1, y1, color) -> None:
        self.raster[y0:y1, x0:x1] = color

    def border(self, x0, y0, x1, y1, color, t=2) -> None:
        self.fill(x0, y0, x1, min(y0 + t, y1), color)
        self.fill(x0, max(y1 - t, y0), x1, y1, color)
        self.fill(x0, y0, min(x0 + t, x1), y1, color)
        self.fill(max(x1 - t, x0), y0, x1, y1, color)

    def draw_widget(self, kind: ObjectType, x0, y0, x1, y1) -> None:
        rng = self.rng
        w, h = x1 - x0, y1 - y0
        if kind is ObjectType.BUTTON:
            fill = _pick(rng, _FILL_PALETTE)
            dark = tuple(max(0, c - 70) for c in fill)
            light = tuple(min(255, c + 60) for c in fill)
            self.fill(x0, y0, x1, y1, fill)
            self.border(x0, y0, x1, y1, dark, t=2)
            sy = y0 + h // 2 - max(1, h // 8)
            self.fill(x0 + w // 4, sy, x1 - w // 4, sy + max(2, h // 4), light)
        elif kind is ObjectType.TEXT:
            ink = tuple(int(rng.integers(20, 70)) for _ in range(3))
            line_h = max(2, h // 6)
            y = y0 + line_h
            while y + line_h <= y1 - 1:
                indent = int(rng.integers(0, max(w // 6, 1)))
                self.fill(x0 + 1 + indent, y, x1 - 1 - int(rng.integers(0, max(w // 5, 1))), y + line_h, ink)
                y += 2 * line_h
        elif kind is ObjectType.IMAGE:
            noise = rng.integers(0, 256, size=(h, w, 3), dtype=np.int64).astype(np.uint8)
            self.raster[y0:y1, x0:x1] = noise
        elif kind is ObjectType.PICTOGRAM:
            color = _pick(rng, _FILL_PALETTE)
            yy, xx = np.mgrid[y0:y1, x0:x1]
            cy, cx = (y0 + y1) / 2.0, (x0 + x1) / 2.0
            glyph = (np.abs(yy - cy) / max(h, 1) + np.abs(xx - cx) / max(w, 1)) < 0.4
            region = self.raster[y0:y1, x0:x1]
            region[glyph] = color
        elif kind is ObjectType.CHECKBOX:
            dark = (40, 40, 40)
            self.border(x0, y0, x1, y1, dark, t=2)
            if rng.random() < 0.5:
                fill = _pick(rng, _FILL_PALETTE)
                self.fill(x0 + 3, y0 + 3, x1 - 3, y1 - 3, fill)
        elif kind is ObjectType.PROGRESS_BAR:
            track = (205, 205, 205)
            fill = _pick(rng, _FILL_PALETTE)
            self.fill(x0, y0, x1, y1, track)
            self.border(x0, y0, x1, y1, (120, 120, 120), t=1)
            frac = 0.2 + 0.6 * rng.random()
            self.fill(x0 + 1, y0 + 1, x0 + 1 + int((w - 2) * frac), y1 - 1, fill)
        elif kind is ObjectType.TOOLBAR:
            fill = _pick(rng, _FILL_PALETTE)
            self.fill(x0, y0, x1, y1, fill)
            light = tuple(min(255, c + 70) for c in fill)
            for g in range(3):
                gx = x0 + 4 + g * (w // 8)
                self.fill(gx, y0 + h // 4, gx + max(3, h // 3), y1 - h // 4, light)
        elif kind is ObjectType.CONTAINER:
            self.border(x0, y0, x1, y1, (150, 150, 160), t=2)
        else:
            raise ValueError(f"no drawing routine for {kind}")

    def draw_ghost(self, x0, y0, x1, y1) -> None:
        """Grayed-out background element: visible but washed out."""
        bg = np.array(self.background, dtype=np.int64)
        outline = tuple(int(v) for v in np.clip(bg - 14, 0, 255))
        inner = tuple(int(v) for v in np.clip(bg - 7, 0, 255))
        self.fill(x0 + 2, y0 + 2, x1 - 2, y1 - 2, inner)
        self.border(x0, y0, x1, y1, outline, t=2)


def _make_leaf(
    rng: np.random.Generator,
    config: SynthConfig,
    gold: ObjectType,
    raster_box: tuple[int, int, int, int],
    package: str,
    class_name: str | None = None,
) -> Node:
    x0, y0, x1, y1 = raster_box
    s = config.coordinate_scale
    name = class_name or _pick(rng, _LEAF_CLASS_POOLS[gold])
    resource_id = None
    if rng.random() > config.generic_resource_id_rate:
        words = _RESOURCE_WORDS.get(gold)
        if words:
            resource_id = f"{package}:id/{_pick(rng, words)}"
    return Node(
        android_class=name,
        bounds=BoundingBox(x0 * s, y0 * s, x1 * s, y1 * s),
        resource_id=resource_id,
        clickable=gold is ObjectType.BUTTON,
    )


def generate_screen(
    package: str,
    index: int,
    config: SynthConfig,
    rng: np.random.Generator,
    validate: bool = True,
    max_attempts: int = 8,
) -> SynthScreen:
    """One synthetic screen; regenerated with a fresh sub-seed if the
    planted nodes would not survive rule preprocessing intact."""
    for attempt in range(max_attempts):
        sub = np.random.default_rng(rng.integers(0, 2**63))
        candidate = _generate_screen_once(package, index, config, sub)
        if not validate or _planted_nodes_survive(candidate):
            return candidate
    raise RuntimeError(f"could not generate a valid screen for {package}/{index}")


def _planted_nodes_survive(synth: SynthScreen) -> bool:
    cleaned, report = preprocess(synth.screen)
    if report.removed:
        return False
    kept_boxes = {n.node_id: n.bounds for n in iter_preorder(cleaned.root)}
    for node in iter_preorder(synth.screen.hierarchy.root):
        if kept_boxes.get(node.node_id) != node.bounds:
            return False
    return True


def _generate_screen_once(
    package: str, index: int, config: SynthConfig, rng: np.random.Generator
) -> SynthScreen:
    painter = _Painter(rng, config)
    rw, rh = config.raster_width, config.raster_height
    s = config.coordinate_scale

    root = Node(
        android_class="com.android.internal.policy.DecorView",
        bounds=BoundingBox(0, 0, config.screen_width, config.screen_height),
    )
    gold: list[tuple[Node, ObjectType]] = [(root, ObjectType.CONTAINER)]
    leaf_kinds = list(_LEAF_CLASS_POOLS.keys())
    valid_leaves: list[tuple[Node, ObjectType]] = []

    y = 0
    if rng.random() < 0.7:
        bar_h = int(rng.integers(20, 30))
        bar = _make_leaf(rng, config, ObjectType.TOOLBAR, (0, 0, rw, bar_h), package,
                         class_name=_pick(rng, _TOOLBAR_CLASSES))
        painter.draw_widget(ObjectType.TOOLBAR, 0, 0, rw, bar_h)
        root.children.append(bar)
        gold.append((bar, ObjectType.TOOLBAR))
        y = bar_h + int(rng.integers(3, 8))

    want = int(rng.integers(config.min_widgets, config.max_widgets + 1))
    ghost_rows: list[tuple[int, int, int, int]] = []
    made = 0
    while made < want and y < rh - 40:
        row_h = int(rng.integers(22, 52))
        if y + row_h > rh - 4:
            break
        roll = rng.random()
        if roll < 0.12 and not ghost_rows:
            # reserve this row for a possible ghost element
            gw = int(rng.integers(40, min(90, rw - 20)))
            gx = int(rng.integers(4, rw - gw - 4))
            ghost_rows.append((gx, y + 2, gx + gw, y + row_h - 2))
        elif roll < 0.40:
            # bordered container panel with two children side by side
            pad = 4
            panel = Node(
                android_class=_pick(rng, _CONTAINER_CLASSES),
                bounds=BoundingBox(pad * s, y * s, (rw - pad) * s, (y + row_h) * s),
            )
            painter.draw_widget(ObjectType.CONTAINER, pad, y, rw - pad, y + row_h)
            gold.append((panel, ObjectType.CONTAINER))
            inner_y0, inner_y1 = y + 4, y + row_h - 4
            mid = pad + 4 + int(rng.integers((rw - 2 * pad) // 3, (rw - 2 * pad) // 2))
            for cx0, cx1 in ((pad + 4, mid - 2), (mid + 2, rw - pad - 4)):
                kind = _pick(rng, leaf_kinds)
                child = _make_leaf(rng, config, kind, (cx0, inner_y0, cx1, inner_y1), package)
                painter.draw_widget(kind, cx0, inner_y0, cx1, inner_y1)
                panel.children.append(child)
                gold.append((child, kind))
                valid_leaves.append((child, kind))
                made += 1
            root.children.append(panel)
        else:
            kind = _pick(rng, leaf_kinds)
            if kind is ObjectType.CHECKBOX:
                side = int(rng.integers(12, 19))
                x0 = int(rng.integers(4, rw - side - 4))
                box = (x0, y, x0 + side, y + side)
            elif kind is ObjectType.PROGRESS_BAR:
                w = int(rng.integers(80, 121))
                x0 = int(rng.integers(4, rw - w - 4))
                box = (x0, y, x0 + w, y + max(6, min(10, row_h)))
            elif kind is ObjectType.PICTOGRAM:
                side = int(rng.integers(14, 23))
                x0 = int(rng.integers(4, rw - side - 4))
                box = (x0, y, x0 + side, y + side)
            else:
                w = int(rng.integers(48, min(120, rw - 8)))
                x0 = int(rng.integers(4, rw - w - 4))
                box = (x0, y, x0 + w, y + row_h)
            leaf = _make_leaf(rng, config, kind, box, package)
            painter.draw_widget(kind, *box)
            root.children.append(leaf)
            gold.append((leaf, kind))
            valid_leaves.append((leaf, kind))
            made += 1
        y += row_h + int(rng.integers(4, 10))

    # Plant invalid nodes first in pre-order (so they never occlude the
    # valid widgets painted after them).
    invalid_nodes: list[Node] = []
    if valid_leaves and rng.random() < config.invalid_rate:
        n_invalid = 1 if rng.random() < 0.7 else 2
        existing = {n.bounds.as_tuple() for n, _ in gold}
        for _ in range(n_invalid):
            node = _plant_invalid(rng, config, painter, valid_leaves, ghost_rows, existing, package)
            if node is not None:
                invalid_nodes.append(node)
                existing.add(node.bounds.as_tuple())
    root.children[:0] = invalid_nodes

    hierarchy = ViewHierarchy(
        root=root,
        package_name=package,
        screen_width=config.screen_width,
        screen_height=config.screen_height,
    )
    for node_id, node in enumerate(iter_preorder(root)):
        node.node_id = node_id

    labels = {node.node_id: kind for node, kind in gold}
    for node in invalid_nodes:
        labels[node.node_id] = ObjectType.INVALID

    screen = Screen(hierarchy=hierarchy, screenshot=painter.raster, source_id=f"{package}_{index:04d}")
    return SynthScreen(screen=screen, labels=labels)


def _plant_invalid(
    rng: np.random.Generator,
    config: SynthConfig,
    painter: _Painter,
    valid_leaves: list[tuple[Node, ObjectType]],
    ghost_rows: list[tuple[int, int, int, int]],
    existing: set[tuple[int, int, int, int]],
    package: str,
) -> Node | None:
    s = config.coordinate_scale
    if ghost_rows and rng.random() < 0.45:
        x0, y0, x1, y1 = ghost_rows.pop()
        painter.draw_ghost(x0, y0, x1, y1)
        box = BoundingBox(x0 * s, y0 * s, x1 * s, y1 * s)
        if box.as_tuple() in existing:
            return None
        return Node(android_class=_pick(rng, _INVALID_CLASSES), bounds=box)

    # Shifted stale box: diagonal offset so the leftover overlap with its
    # source widget is an L-shape corner (never a trimmable slab).
    source, _ = valid_leaves[int(rng.integers(0, len(valid_leaves)))]
    b = source.bounds
    w, h = b.width, b.height
    dx = max(1, int(w * (0.45 + 0.3 * rng.random()))) * (1 if rng.random() < 0.5 else -1)
    dy = max(1, int(h * (0.45 + 0.3 * rng.random()))) * (1 if rng.random() < 0.5 else -1)
    left = int(np.clip(b.left + dx, 0, config.screen_width - w))
    top = int(np.clip(b.top + dy, 0, config.screen_height - h))
    box = BoundingBox(left, top, left + w, top + h)
    if box.as_tuple() in existing or box == b:
        return None
    return Node(android_class=source.android_class, bounds=box)


# --------------------------------------------------------------------------
# Corpus emission


def generate_corpus(
    out_dir: str | Path,
    n_screens: int,
    n_packages: int,
    config: SynthConfig | None = None,
    seed: int | None = None,
) -> list[str]:
    """Write (json, png, labels.json) triples; returns the source ids."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(n_screens):
        package = f"com.synth.app{i % n_packages:03d}"
        synth = generate_screen(package, i, cfg, rng)
        write_synth_screen(out, synth)
        ids.append(synth.screen.source_id)
    return ids


def write_synth_screen(out_dir: Path, synth: SynthScreen) -> None:
    sid = synth.screen.source_id
    doc = serialize_hierarchy(synth.screen.hierarchy)
    (out_dir / f"{sid}.json").write_text(json.dumps(doc), encoding="utf-8")
    Image.fromarray(synth.screen.screenshot, mode="RGB").save(out_dir / f"{sid}.png")
    labels = {str(node_id): gold.value for node_id, gold in synth.labels.items()}
    (out_dir / f"{sid}.labels.json").write_text(json.dumps(labels), encoding="utf-8")
