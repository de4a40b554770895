"""Deterministic rule-based denoising of a view hierarchy.

Rules, in fixed order: clip boxes to the screen, drop degenerate boxes
(too narrow / too small / too large), drop attribute-invisible nodes,
deduplicate identical boxes, remove or trim occluded boxes, remove blank
leaves and empty containers. Paint order is global pre-order: later nodes
paint on top, ancestors never occlude their descendants.

The rule sequence runs to an outer fixpoint: trimming can create boxes
that violate earlier rules (hairline slivers, newly identical boxes), so
passes repeat until nothing changes. This is what makes the whole
operation idempotent. A removed node's reason is the first rule that
fired for it, and removal never enlarges any box.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
import numpy as np

from .geometry import BoundingBox, scale_box_to_grid, subtract_union
from .heuristics import Labeler, make_labeler
from .hierarchy import Node, ObjectType, Screen, ViewHierarchy, Visibility

SYNTHETIC_ROOT_ID = -1


class DropReason(enum.Enum):
    TOO_NARROW = "too_narrow"
    TOO_SMALL = "too_small"
    TOO_LARGE = "too_large"
    INVISIBLE_ATTR = "invisible_attr"
    DUPLICATE_BOX = "duplicate_box"
    FULLY_OCCLUDED = "fully_occluded"
    BLANK_UNIFORM = "blank_uniform"
    EMPTY_CONTAINER = "empty_container"


@dataclass
class PreprocessConfig:
    min_aspect_ratio: float = 0.01
    min_area_fraction: float = 0.0001  # 0.01% of the screen
    blank_modal_share: float = 0.99
    max_passes: int = 64


@dataclass
class PreprocessReport:
    """Audit record: kept/removed partition all nodes; trimmed is a subset
    of kept."""

    kept: list[int] = field(default_factory=list)
    removed: list[tuple[int, DropReason]] = field(default_factory=list)
    trimmed: list[tuple[int, BoundingBox, BoundingBox]] = field(default_factory=list)

    def removed_ids(self) -> list[int]:
        return [node_id for node_id, _ in self.removed]

    def reason_of(self, node_id: int) -> DropReason | None:
        for nid, reason in self.removed:
            if nid == node_id:
                return reason
        return None

    def to_json(self) -> str:
        return json.dumps(
            {
                "kept": self.kept,
                "removed": [
                    {"node_id": nid, "reason": reason.value} for nid, reason in self.removed
                ],
                "trimmed": [
                    {"node_id": nid, "old": list(old.as_tuple()), "new": list(new.as_tuple())}
                    for nid, old, new in self.trimmed
                ],
            },
            indent=2,
        )


# --------------------------------------------------------------------------
# Per-node rules (public operations)


def filter_degenerate(node: Node, screen_width: int, screen_height: int) -> DropReason | None:
    """Geometric sanity of a single box: clipped aspect ratio and area
    thresholds, plus an unclipped larger-than-screen check."""
    cfg = PreprocessConfig()
    clipped = node.bounds.clip(screen_width, screen_height)
    return _degenerate_reason(clipped, node.bounds, screen_width * screen_height, cfg)


def filter_invisible(node: Node) -> DropReason | None:
    if not node.visible_to_user or node.visibility is not Visibility.VISIBLE:
        return DropReason.INVISIBLE_ATTR
    return None


def _degenerate_reason(
    clipped: BoundingBox,
    declared: BoundingBox,
    screen_area: int,
    cfg: PreprocessConfig,
) -> DropReason | None:
    w, h = clipped.width, clipped.height
    if w == 0 or h == 0:
        return DropReason.TOO_NARROW
    if min(w / h, h / w) < cfg.min_aspect_ratio:
        return DropReason.TOO_NARROW
    if w * h < cfg.min_area_fraction * screen_area:
        return DropReason.TOO_SMALL
    if declared.area > screen_area:
        return DropReason.TOO_LARGE
    return None


# --------------------------------------------------------------------------
# Tree-wide state


class _TreeState:
    def __init__(self, hierarchy: ViewHierarchy):
        self.screen_w = hierarchy.screen_width
        self.screen_h = hierarchy.screen_height
        self.nodes: list[Node] = []
        self.parent: list[int] = []
        stack: list[tuple[Node, int]] = [(hierarchy.root, -1)]
        while stack:
            node, parent_pos = stack.pop()
            pos = len(self.nodes)
            self.nodes.append(node)
            self.parent.append(parent_pos)
            for child in reversed(node.children):
                stack.append((child, pos))
        n = len(self.nodes)
        self.subtree = [1] * n
        for i in range(n - 1, 0, -1):
            self.subtree[self.parent[i]] += self.subtree[i]
        self.declared = [node.bounds for node in self.nodes]
        self.boxes = [b.clip(self.screen_w, self.screen_h) for b in self.declared]
        self.kept = [True] * n
        # A synthetic root introduced by an earlier preprocessing run is
        # bookkeeping, not corpus data; the rules never remove it (which
        # also keeps re-preprocessing idempotent).
        self.exempt = [node.node_id == SYNTHETIC_ROOT_ID for node in self.nodes]
        self.reasons: dict[int, DropReason] = {}

    def removable(self, pos: int) -> bool:
        return self.kept[pos] and not self.exempt[pos]

    def remove(self, pos: int, reason: DropReason) -> None:
        self.kept[pos] = False
        self.reasons[pos] = reason

    def is_descendant(self, pos: int, of: int) -> bool:
        return of < pos < of + self.subtree[of]

    def has_surviving_descendant(self, pos: int) -> bool:
        end = pos + self.subtree[pos]
        return any(self.kept[j] for j in range(pos + 1, end))


# --------------------------------------------------------------------------
# Stage passes


def _pass_degenerate(state: _TreeState, cfg: PreprocessConfig) -> bool:
    changed = False
    screen_area = state.screen_w * state.screen_h
    for i, node in enumerate(state.nodes):
        if not state.removable(i):
            continue
        reason = _degenerate_reason(state.boxes[i], state.declared[i], screen_area, cfg)
        if reason is not None:
            state.remove(i, reason)
            changed = True
    return changed


def _pass_invisible(state: _TreeState) -> bool:
    changed = False
    for i, node in enumerate(state.nodes):
        if not state.removable(i):
            continue
        if filter_invisible(node) is not None:
            state.remove(i, DropReason.INVISIBLE_ATTR)
            changed = True
    return changed


def _pass_dedup(state: _TreeState, label_of) -> bool:
    groups: dict[tuple[int, int, int, int], list[int]] = {}
    for i in range(len(state.nodes)):
        if state.removable(i):
            groups.setdefault(state.boxes[i].as_tuple(), []).append(i)
    changed = False
    for positions in groups.values():
        if len(positions) < 2:
            continue
        specific = [
            p for p in positions if label_of(p) not in (ObjectType.CONTAINER, None)
        ]
        keeper = max(specific) if specific else max(positions)
        for p in positions:
            if p != keeper:
                state.remove(p, DropReason.DUPLICATE_BOX)
                changed = True
    return changed


def _pass_occlusion(state: _TreeState) -> bool:
    """Occluders of a node are kept nodes later in pre-order that are not
    its descendants. Decisions are taken against a snapshot so removal
    order inside the pass cannot matter."""
    kept_snapshot = list(state.kept)
    box_snapshot = list(state.boxes)
    positions = [i for i, k in enumerate(kept_snapshot) if k]
    changed = False
    for i in positions:
        if state.exempt[i]:
            continue
        occluders = [
            box_snapshot[j]
            for j in positions
            if j > i and not state.is_descendant(j, of=i) and box_snapshot[j].overlaps(box_snapshot[i])
        ]
        if not occluders:
            continue
        area, extent, exact = subtract_union(box_snapshot[i], occluders)
        if area == 0:
            state.remove(i, DropReason.FULLY_OCCLUDED)
            changed = True
        elif exact and extent is not None and extent != box_snapshot[i]:
            state.boxes[i] = extent
            changed = True
    return changed


def _pass_blank(state: _TreeState, screen: Screen, label_of, cfg: PreprocessConfig) -> bool:
    raster = screen.screenshot
    rh, rw = raster.shape[0], raster.shape[1]
    changed_any = False
    while True:
        changed = False
        for i in range(len(state.nodes)):
            if not state.removable(i) or state.has_surviving_descendant(i):
                continue
            if _is_blank_crop(state.boxes[i], state.screen_w, state.screen_h, raster, rw, rh, cfg):
                state.remove(i, DropReason.BLANK_UNIFORM)
                changed = True
            elif label_of(i) in (ObjectType.CONTAINER, None):
                state.remove(i, DropReason.EMPTY_CONTAINER)
                changed = True
        changed_any = changed_any or changed
        if not changed:
            return changed_any


def _is_blank_crop(
    box: BoundingBox,
    screen_w: int,
    screen_h: int,
    raster: np.ndarray,
    raster_w: int,
    raster_h: int,
    cfg: PreprocessConfig,
) -> bool:
    c0, r0, c1, r1 = scale_box_to_grid(box, screen_w, screen_h, raster_w, raster_h)
    crop = raster[r0:r1, c0:c1]
    if crop.size == 0:
        return True
    return modal_color_share(crop) >= cfg.blank_modal_share


def modal_color_share(crop: np.ndarray) -> float:
    """Fraction of crop pixels exactly equal to the most frequent color."""
    flat = crop.reshape(-1, crop.shape[-1]).astype(np.uint32)
    packed = (flat[:, 0] << 16) | (flat[:, 1] << 8) | flat[:, 2]
    _, counts = np.unique(packed, return_counts=True)
    return float(counts.max()) / float(packed.size)


# --------------------------------------------------------------------------
# Whole-hierarchy operations


def dedup_boxes(hierarchy: ViewHierarchy, labeler: Labeler | None = None) -> PreprocessReport:
    """Deduplication pass alone; assumes degenerate/invisible filtering was
    already applied upstream."""
    state = _TreeState(hierarchy)
    label_of = _label_cache(state, labeler)
    _pass_dedup(state, label_of)
    return _assemble_report(state)


def trim_occlusions(hierarchy: ViewHierarchy) -> PreprocessReport:
    """Occlusion pass alone over clipped boxes."""
    state = _TreeState(hierarchy)
    _pass_occlusion(state)
    return _assemble_report(state)


def remove_blank(
    hierarchy: ViewHierarchy, screen: Screen, labeler: Labeler | None = None
) -> PreprocessReport:
    """Blank-leaf and empty-container removal alone, run to fixpoint."""
    state = _TreeState(hierarchy)
    label_of = _label_cache(state, labeler)
    _pass_blank(state, screen, label_of, PreprocessConfig())
    return _assemble_report(state)


def preprocess(
    screen: Screen,
    labeler: Labeler | None = None,
    config: PreprocessConfig | None = None,
) -> tuple[ViewHierarchy, PreprocessReport]:
    """Apply every rule in order, repeating the whole sequence until a pass
    changes nothing. Children of removed nodes are re-attached to the
    nearest surviving ancestor, preserving pre-order; if the root itself is
    removed a synthetic full-screen container root is introduced."""
    cfg = config or PreprocessConfig()
    hierarchy = screen.hierarchy
    state = _TreeState(hierarchy)
    label_of = _label_cache(state, labeler)

    for _ in range(cfg.max_passes):
        changed = False
        changed |= _pass_degenerate(state, cfg)
        changed |= _pass_invisible(state)
        changed |= _pass_dedup(state, label_of)
        changed |= _pass_occlusion(state)
        changed |= _pass_blank(state, screen, label_of, cfg)
        if not changed:
            break
    else:
        raise RuntimeError("preprocess failed to reach a fixpoint")

    report = _assemble_report(state)
    cleaned = _rebuild(state, hierarchy)
    return cleaned, report


def _label_cache(state: _TreeState, labeler: Labeler | None):
    table = labeler if labeler is not None else make_labeler()
    cache: dict[int, ObjectType | None] = {}

    def label_of(pos: int) -> ObjectType | None:
        if pos not in cache:
            cache[pos] = table(state.nodes[pos])
        return cache[pos]

    return label_of


def _assemble_report(state: _TreeState) -> PreprocessReport:
    report = PreprocessReport()
    for i, node in enumerate(state.nodes):
        if state.kept[i]:
            report.kept.append(node.node_id)
            if state.boxes[i] != state.declared[i]:
                report.trimmed.append((node.node_id, state.declared[i], state.boxes[i]))
        else:
            report.removed.append((node.node_id, state.reasons[i]))
    return report


def drop_nodes(hierarchy: ViewHierarchy, node_ids: set[int]) -> ViewHierarchy:
    """Remove the given nodes, re-attaching children to the nearest
    surviving ancestor (synthetic root if the root itself goes)."""
    state = _TreeState(hierarchy)
    for i, node in enumerate(state.nodes):
        if node.node_id in node_ids:
            state.kept[i] = False
    return _rebuild(state, hierarchy)


def _rebuild(state: _TreeState, hierarchy: ViewHierarchy) -> ViewHierarchy:
    survivors: dict[int, Node] = {}
    top_level: list[Node] = []
    for i, node in enumerate(state.nodes):
        if not state.kept[i]:
            continue
        clone = Node(
            android_class=node.android_class,
            bounds=state.boxes[i],
            node_id=node.node_id,
            content_desc=node.content_desc,
            resource_id=node.resource_id,
            visible_to_user=node.visible_to_user,
            visibility=node.visibility,
            clickable=node.clickable,
        )
        survivors[i] = clone
        parent_pos = state.parent[i]
        while parent_pos != -1 and parent_pos not in survivors:
            parent_pos = state.parent[parent_pos]
        if parent_pos == -1:
            top_level.append(clone)
        else:
            survivors[parent_pos].children.append(clone)

    root_kept = state.kept[0] if state.nodes else False
    if root_kept and len(top_level) == 1:
        root = top_level[0]
    else:
        root = Node(
            android_class="android.view.View",
            bounds=BoundingBox(0, 0, state.screen_w, state.screen_h),
            node_id=SYNTHETIC_ROOT_ID,
            children=top_level,
        )
    return ViewHierarchy(
        root=root,
        package_name=hierarchy.package_name,
        screen_width=state.screen_w,
        screen_height=state.screen_h,
    )
