"""Domain types for screens and layout trees, plus parsing of Rico-style
view-hierarchy JSON documents.

A view hierarchy is an ordered tree of UI nodes. Parsing is lossless with
respect to geometry: boxes are kept exactly as declared (normalized only
for coordinate ordering) and clipping to the screen happens later in the
preprocessing rules, not here.

Parsed hierarchies are treated as immutable: pipeline stages that change a
tree clone nodes instead of mutating, so hierarchies are safe to share
across concurrent workers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from .geometry import BoundingBox

# Declared hierarchy frame of the public Rico corpus; used as a fallback
# when a document carries no screen dimensions and no usable root box.
DEFAULT_SCREEN_WIDTH = 1440
DEFAULT_SCREEN_HEIGHT = 2560


class ObjectType(enum.Enum):
    """Semantic type taxonomy for UI objects, plus the INVALID flag for
    nodes with no valid visual representation."""

    ADVERTISEMENT = "ADVERTISEMENT"
    BUTTON = "BUTTON"
    CARD_VIEW = "CARD_VIEW"
    CHECKBOX = "CHECKBOX"
    CONTAINER = "CONTAINER"
    DATE_PICKER = "DATE_PICKER"
    DRAWER = "DRAWER"
    IMAGE = "IMAGE"
    LABEL = "LABEL"
    LIST_ITEM = "LIST_ITEM"
    MAP = "MAP"
    NAVIGATION_BAR = "NAVIGATION_BAR"
    NUMBER_STEPPER = "NUMBER_STEPPER"
    PAGER_INDICATOR = "PAGER_INDICATOR"
    PICTOGRAM = "PICTOGRAM"
    PROGRESS_BAR = "PROGRESS_BAR"
    RADIO_BUTTON = "RADIO_BUTTON"
    SLIDER = "SLIDER"
    SPINNER = "SPINNER"
    SWITCH = "SWITCH"
    TEXT = "TEXT"
    TEXT_INPUT = "TEXT_INPUT"
    TOOLBAR = "TOOLBAR"
    KEYBOARD = "KEYBOARD"
    INVALID = "INVALID"

    @classmethod
    def from_name(cls, name: str) -> "ObjectType":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown object type name: {name!r}") from None


#: The 24 semantic classes, in taxonomy order (INVALID excluded).
SEMANTIC_TYPES: tuple[ObjectType, ...] = tuple(
    t for t in ObjectType if t is not ObjectType.INVALID
)


class Visibility(enum.Enum):
    VISIBLE = "visible"
    INVISIBLE = "invisible"
    GONE = "gone"

    @classmethod
    def parse(cls, value: Any) -> "Visibility":
        if isinstance(value, str):
            try:
                return cls(value.lower())
            except ValueError:
                pass
        return cls.VISIBLE


@dataclass
class Node:
    """One UI object in a view hierarchy."""

    android_class: str
    bounds: BoundingBox
    node_id: int = 0
    content_desc: str | None = None
    resource_id: str | None = None
    visible_to_user: bool = True
    visibility: Visibility = Visibility.VISIBLE
    clickable: bool = False
    children: list["Node"] = field(default_factory=list)

    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ViewHierarchy:
    """A parsed layout tree with its coordinate frame.

    ``screen_width``/``screen_height`` describe the frame the node bounds
    live in; the screenshot raster may use a different resolution, related
    by a single scale factor per axis.
    """

    root: Node
    package_name: str = ""
    screen_width: int = DEFAULT_SCREEN_WIDTH
    screen_height: int = DEFAULT_SCREEN_HEIGHT
    dropped_at_parse: int = 0

    def preorder(self) -> list[Node]:
        return list(iter_preorder(self.root))

    def node_count(self) -> int:
        return sum(1 for _ in iter_preorder(self.root))


@dataclass
class Screen:
    """A screenshot raster paired with its view hierarchy."""

    hierarchy: ViewHierarchy
    screenshot: np.ndarray  # [H, W, 3] uint8 RGB
    source_id: str = ""

    def __post_init__(self) -> None:
        shot = self.screenshot
        if shot.ndim != 3 or shot.shape[2] != 3:
            raise ValueError(f"screenshot must be HxWx3, got shape {shot.shape}")
        if shot.shape[0] <= 0 or shot.shape[1] <= 0:
            raise ValueError("screenshot dimensions must be positive")

    @property
    def raster_height(self) -> int:
        return int(self.screenshot.shape[0])

    @property
    def raster_width(self) -> int:
        return int(self.screenshot.shape[1])


class ParseError(ValueError):
    """Raised for malformed hierarchy documents; carries the node path."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{message} (at {path})")
        self.path = path


def iter_preorder(root: Node) -> Iterator[Node]:
    """Depth-first, parent before children, children in document order."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def preorder(hierarchy: ViewHierarchy) -> list[Node]:
    return hierarchy.preorder()


def screen_admissible(hierarchy: ViewHierarchy) -> bool:
    """Screens with no more than two objects carry almost no layout
    information and are excluded from the pipeline."""
    return hierarchy.node_count() > 2


def parse_hierarchy(document: str | bytes | dict) -> ViewHierarchy:
    """Parse a Rico-style JSON layout document into a ViewHierarchy.

    Accepts the raw JSON text or an already-decoded dict. The root node is
    looked up under ``activity.root``, then ``root``, then the document
    itself. Non-root nodes without bounds are dropped (their children are
    re-attached in place); a root without bounds gets a full-screen box.
    Both cases increment ``dropped_at_parse`` as a warning count.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path=f"offset {exc.pos}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ParseError("document must be a JSON object", path="$")

    root_doc, root_path = _locate_root(doc)
    package = _package_name(doc, root_doc)
    warnings = _WarningCounter()

    screen_w = doc.get("screen_width")
    screen_h = doc.get("screen_height")

    if "bounds" not in root_doc:
        fallback_w = int(screen_w) if screen_w else DEFAULT_SCREEN_WIDTH
        fallback_h = int(screen_h) if screen_h else DEFAULT_SCREEN_HEIGHT
        root_doc = dict(root_doc)
        root_doc["bounds"] = [0, 0, fallback_w, fallback_h]
        warnings.count += 1

    counter = _IdCounter()
    root = _parse_node(root_doc, root_path, counter, warnings)
    if root is None:
        raise ParseError("root node could not be parsed", path=root_path)

    if not screen_w or not screen_h:
        if root.bounds.width > 0 and root.bounds.height > 0:
            screen_w, screen_h = root.bounds.right, root.bounds.bottom
        else:
            screen_w, screen_h = DEFAULT_SCREEN_WIDTH, DEFAULT_SCREEN_HEIGHT

    return ViewHierarchy(
        root=root,
        package_name=package,
        screen_width=int(screen_w),
        screen_height=int(screen_h),
        dropped_at_parse=warnings.count,
    )


def serialize_hierarchy(hierarchy: ViewHierarchy) -> dict:
    """Emit a Rico-shaped document; ``parse_hierarchy`` round-trips it."""
    return {
        "activity_name": f"{hierarchy.package_name}/",
        "screen_width": hierarchy.screen_width,
        "screen_height": hierarchy.screen_height,
        "activity": {"root": serialize_node(hierarchy.root)},
    }


def serialize_node(node: Node, extra: dict[int, dict] | None = None) -> dict:
    """Serialize one node (recursively). ``extra`` maps node_id to
    additional fields merged into that node's JSON object."""
    out: dict[str, Any] = {
        "bounds": list(node.bounds.as_tuple()),
        "class": node.android_class,
        "visibility": node.visibility.value,
        "visible-to-user": node.visible_to_user,
        "clickable": node.clickable,
    }
    if node.content_desc is not None:
        out["content-desc"] = node.content_desc
    if node.resource_id is not None:
        out["resource-id"] = node.resource_id
    if extra and node.node_id in extra:
        out.update(extra[node.node_id])
    out["node_id"] = node.node_id
    if node.children:
        out["children"] = [serialize_node(c, extra) for c in node.children]
    return out


class _IdCounter:
    def __init__(self) -> None:
        self.next_id = 0

    def take(self) -> int:
        value = self.next_id
        self.next_id += 1
        return value


class _WarningCounter:
    def __init__(self) -> None:
        self.count = 0


def _locate_root(doc: dict) -> tuple[dict, str]:
    activity = doc.get("activity")
    if isinstance(activity, dict) and isinstance(activity.get("root"), dict):
        return activity["root"], "activity.root"
    if isinstance(doc.get("root"), dict):
        return doc["root"], "root"
    if "bounds" in doc or "children" in doc or "class" in doc:
        return doc, "$"
    raise ParseError("no root node found", path="$")


def _package_name(doc: dict, root_doc: dict) -> str:
    activity_name = doc.get("activity_name")
    if isinstance(activity_name, str) and activity_name:
        return activity_name.split("/")[0]
    package = root_doc.get("package")
    if isinstance(package, str):
        return package
    return ""


def _parse_node(
    node_doc: Any, path: str, counter: _IdCounter, warnings: _WarningCounter
) -> Node | None:
    if not isinstance(node_doc, dict):
        raise ParseError("node must be a JSON object", path=path)
    if "bounds" not in node_doc:
        raise ParseError("node has no bounds", path=path)

    bounds = _parse_bounds(node_doc["bounds"], path)
    node = Node(
        android_class=str(node_doc.get("class", "")),
        bounds=bounds,
        node_id=counter.take(),
        content_desc=_parse_text(node_doc.get("content-desc")),
        resource_id=_parse_text(node_doc.get("resource-id")),
        visible_to_user=bool(node_doc.get("visible-to-user", True)),
        visibility=Visibility.parse(node_doc.get("visibility", "visible")),
        clickable=bool(node_doc.get("clickable", False)),
    )
    node.children = _parse_children(node_doc, path, counter, warnings)
    return node


def _parse_children(
    node_doc: dict, path: str, counter: _IdCounter, warnings: _WarningCounter
) -> list[Node]:
    children_doc = node_doc.get("children")
    if children_doc is None:
        return []
    if not isinstance(children_doc, list):
        raise ParseError("children must be a list", path=f"{path}.children")
    children: list[Node] = []
    for i, child_doc in enumerate(children_doc):
        if child_doc is None:  # real corpora contain null children
            continue
        child_path = f"{path}.children[{i}]"
        if not isinstance(child_doc, dict):
            raise ParseError("child must be an object or null", path=child_path)
        if "bounds" not in child_doc:
            warnings.count += 1
            children.extend(_parse_children(child_doc, child_path, counter, warnings))
            continue
        child = _parse_node(child_doc, child_path, counter, warnings)
        if child is not None:
            children.append(child)
    return children


def _parse_bounds(raw: Any, path: str) -> BoundingBox:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ParseError(f"bounds must be a 4-element array, got {raw!r}", path=path)
    try:
        left, top, right, bottom = (int(v) for v in raw)
    except (TypeError, ValueError):
        raise ParseError(f"bounds must be integers, got {raw!r}", path=path) from None
    # Some captured documents carry inverted edges; normalize the ordering.
    if left > right:
        left, right = right, left
    if top > bottom:
        top, bottom = bottom, top
    return BoundingBox(left, top, right, bottom)


def _parse_text(raw: Any) -> str | None:
    """Text attributes appear as strings or singleton lists in the corpus."""
    if raw is None:
        return None
    if isinstance(raw, str):
        return raw
    if isinstance(raw, list):
        for item in raw:
            if isinstance(item, str):
                return item
        return None
    return str(raw)
