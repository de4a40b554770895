"""Reference results and corpus statistics from the original large-scale
study of this pipeline (59,555 human-labeled screens, deep residual
backbones, hundreds of thousands of training steps).

These numbers are NOT reproducible at desk scale and nothing in this
package asserts them against trained models; they are recorded so reports
and documentation can cite the target quality, and so the consistency of
the published precision/recall/F1 triples can be checked analytically.
All values are percentages unless noted.
"""

from __future__ import annotations

from .detector import PAPER_SCALE_DETECTOR_TRAIN  # noqa: F401  (re-exported)
from .gnn import PAPER_SCALE_GNN_TRAIN  # noqa: F401
from .transformer import (  # noqa: F401
    PAPER_SCALE_BACKBONE_TRAIN,
    PAPER_SCALE_TRANSFORMER,
    PAPER_SCALE_TRANSFORMER_TRAIN,
)

#: Invalid-object detection on the held-out test set: (precision, recall, F1).
DETECTOR_TEST_PRF = (83.3, 82.0, 82.7)

#: Type recognition, support-weighted averages: (precision, recall, F1).
TYPE_WEIGHTED_PRF = {
    "heuristic": (70.6, 45.8, 41.4),
    "gnn": (86.1, 85.9, 85.9),
    "transformer": (85.1, 84.6, 84.7),
}

#: Type recognition, macro averages: (precision, recall, F1).
TYPE_MACRO_PRF = {
    "heuristic": (72.1, 67.1, 62.8),
    "gnn": (83.6, 74.8, 78.3),
    "transformer": (84.2, 79.5, 81.4),
}

#: Corpus statistics: split -> (apps, screens, ui_objects).
CORPUS_COUNTS = {
    "train": (5_821, 44_629, 1_042_471),
    "validation": (989, 6_207, 139_411),
    "test": (1_698, 8_719, 186_501),
    "total": (8_508, 59_555, 1_368_383),
}

#: Assorted corpus facts.
UNIQUE_ANDROID_CLASSES = 9_331
SCREENS_WITH_INVALID_SHARE = 0.374
INVALID_TO_VALID_RATIO = (1, 8)
SUBWORD_VOCAB_SIZE = 28_536
RESAMPLED_VALID_TO_INVALID = (4, 1)
