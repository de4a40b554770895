"""Overlay rendering: cleaned boxes drawn over the screenshot, color-coded
by semantic type, with a legend strip. Rendering is deterministic: the
palette is keyed by type name through the fixed taxonomy order, so the
same inputs produce byte-identical PNGs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .hierarchy import ObjectType, Screen
from .pipeline import CleanedScreen

_PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
    (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
    (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
    (233, 30, 99), (0, 150, 136), (121, 85, 72), (63, 81, 181), (96, 125, 139),
]

_TYPE_ORDER = [t.value for t in ObjectType]
UNKNOWN_COLOR = (40, 40, 40)
REMOVED_COLOR = (200, 0, 0)
LEGEND_ROW = 14


def type_color(type_name: str | None) -> tuple[int, int, int]:
    if type_name is None:
        return UNKNOWN_COLOR
    return _PALETTE[_TYPE_ORDER.index(type_name) % len(_PALETTE)]


def render_overlay(
    screen: Screen,
    cleaned: CleanedScreen,
    show_removed: bool = False,
) -> Image.Image:
    """Surviving boxes solid, removed boxes (optionally) dashed, legend at
    the bottom listing the types present."""
    raster = Image.fromarray(screen.screenshot, mode="RGB").copy()
    draw = ImageDraw.Draw(raster)
    sx = screen.raster_width / screen.hierarchy.screen_width
    sy = screen.raster_height / screen.hierarchy.screen_height

    present: list[str] = []
    for node in cleaned.nodes:
        name = node.clay_type
        color = type_color(name)
        label = name if name is not None else "unknown"
        if label not in present:
            present.append(label)
        box = _scaled(node.bounds.as_tuple(), sx, sy, raster.size)
        draw.rectangle(box, outline=color, width=2)

    if show_removed:
        removed = [(nid, r.value) for nid, r in cleaned.rule_removed]
        removed += [(nid, "model_invalid") for nid in cleaned.model_removed]
        original_boxes = _original_boxes(screen)
        for node_id, _reason in removed:
            if node_id in original_boxes:
                _dashed_rectangle(
                    draw, _scaled(original_boxes[node_id], sx, sy, raster.size), REMOVED_COLOR
                )

    legend_height = LEGEND_ROW * (len(present) + (1 if show_removed else 0)) + 4
    out = Image.new("RGB", (raster.width, raster.height + legend_height), (255, 255, 255))
    out.paste(raster, (0, 0))
    legend = ImageDraw.Draw(out)
    y = raster.height + 2
    for label in present:
        legend.rectangle([2, y + 2, 12, y + 12], fill=type_color(None if label == "unknown" else label))
        legend.text((16, y + 1), label, fill=(0, 0, 0))
        y += LEGEND_ROW
    if show_removed:
        legend.rectangle([2, y + 2, 12, y + 12], fill=REMOVED_COLOR)
        legend.text((16, y + 1), "removed", fill=(0, 0, 0))
    return out


def save_overlay(image: Image.Image, path: str | Path) -> None:
    image.save(Path(path), format="PNG")


def _scaled(box: tuple[int, int, int, int], sx: float, sy: float, size: tuple[int, int]):
    left, top, right, bottom = box
    x0 = int(np.floor(left * sx))
    y0 = int(np.floor(top * sy))
    x1 = max(x0, int(np.ceil(right * sx)) - 1)
    y1 = max(y0, int(np.ceil(bottom * sy)) - 1)
    return [
        min(x0, size[0] - 1),
        min(y0, size[1] - 1),
        min(x1, size[0] - 1),
        min(y1, size[1] - 1),
    ]


def _dashed_rectangle(draw: ImageDraw.ImageDraw, box, color, dash: int = 4) -> None:
    x0, y0, x1, y1 = box
    for x in range(x0, x1 + 1, dash * 2):
        draw.line([x, y0, min(x + dash, x1), y0], fill=color, width=1)
        draw.line([x, y1, min(x + dash, x1), y1], fill=color, width=1)
    for y in range(y0, y1 + 1, dash * 2):
        draw.line([x0, y, x0, min(y + dash, y1)], fill=color, width=1)
        draw.line([x1, y, x1, min(y + dash, y1)], fill=color, width=1)


def _original_boxes(screen: Screen) -> dict[int, tuple[int, int, int, int]]:
    from .hierarchy import iter_preorder

    return {n.node_id: n.bounds.as_tuple() for n in iter_preorder(screen.hierarchy.root)}
