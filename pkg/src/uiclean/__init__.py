"""uiclean: denoising for mobile UI layout trees.

Rule-based geometric/visibility preprocessing, a learned detector for
layout nodes with no valid visual representation, and semantic type
recognition via a message-passing graph network or a screenshot
transformer, plus a heuristic baseline and an evaluation harness.
"""

from .geometry import BoundingBox
from .hierarchy import (
    Node,
    ObjectType,
    SEMANTIC_TYPES,
    Screen,
    ViewHierarchy,
    Visibility,
    parse_hierarchy,
    preorder,
    screen_admissible,
    serialize_hierarchy,
)
from .preprocess import DropReason, PreprocessReport, preprocess

__all__ = [
    "BoundingBox",
    "DropReason",
    "Node",
    "ObjectType",
    "PreprocessReport",
    "SEMANTIC_TYPES",
    "Screen",
    "ViewHierarchy",
    "Visibility",
    "parse_hierarchy",
    "preorder",
    "preprocess",
    "screen_admissible",
    "serialize_hierarchy",
]

__version__ = "0.1.0"
