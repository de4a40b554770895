"""Axis-aligned box arithmetic for layout trees.

Boxes use integer pixel coordinates with exclusive right/bottom edges:
a box covers pixel columns ``left..right-1`` and rows ``top..bottom-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Pixel-space rectangle in screenshot coordinates.

    Invariant: ``left <= right`` and ``top <= bottom``. Zero-area boxes are
    legal (they arise from clipping) and are handled by the degenerate
    filters downstream.
    """

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self) -> None:
        for name in ("left", "top", "right", "bottom"):
            value = getattr(self, name)
            if not isinstance(value, int):
                raise TypeError(f"{name} must be int, got {type(value).__name__}")
        if self.left > self.right or self.top > self.bottom:
            raise ValueError(
                f"degenerate box ordering: ({self.left},{self.top},{self.right},{self.bottom})"
            )

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def height(self) -> int:
        return self.bottom - self.top

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.left, self.top, self.right, self.bottom)

    def clip(self, width: int, height: int) -> "BoundingBox":
        """Intersect with the screen rectangle [0,0,width,height].

        A box entirely outside the screen collapses to a zero-area box on
        the nearest screen edge.
        """
        left = min(max(self.left, 0), width)
        right = min(max(self.right, 0), width)
        top = min(max(self.top, 0), height)
        bottom = min(max(self.bottom, 0), height)
        return BoundingBox(left, top, right, bottom)

    def intersect(self, other: "BoundingBox") -> "BoundingBox | None":
        left = max(self.left, other.left)
        top = max(self.top, other.top)
        right = min(self.right, other.right)
        bottom = min(self.bottom, other.bottom)
        if left >= right or top >= bottom:
            return None
        return BoundingBox(left, top, right, bottom)

    def overlaps(self, other: "BoundingBox") -> bool:
        return self.intersect(other) is not None

    def contains(self, other: "BoundingBox") -> bool:
        return (
            self.left <= other.left
            and self.top <= other.top
            and self.right >= other.right
            and self.bottom >= other.bottom
        )


def axis_gap(a0: int, a1: int, b0: int, b1: int) -> int:
    """Separation between intervals [a0,a1) and [b0,b1); 0 when they touch
    or overlap."""
    return max(0, max(a0, b0) - min(a1, b1))


def projection_overlap(a0: int, a1: int, b0: int, b1: int) -> int:
    """Length of the overlap of intervals [a0,a1) and [b0,b1)."""
    return max(0, min(a1, b1) - max(a0, b0))


def union_area(boxes: Iterable[BoundingBox]) -> int:
    """Exact area of the union of boxes via coordinate compression."""
    boxes = [b for b in boxes if b.area > 0]
    if not boxes:
        return 0
    covered, widths, heights = _cell_cover(boxes)
    return int((covered * np.outer(heights, widths)).sum())


def subtract_union(
    box: BoundingBox, occluders: Sequence[BoundingBox]
) -> tuple[int, "BoundingBox | None", bool]:
    """Remove the union of ``occluders`` from ``box``.

    Returns ``(visible_area, visible_extent, extent_is_exact)`` where
    ``visible_extent`` is the bounding rectangle of the remaining region
    (None when nothing remains) and ``extent_is_exact`` is True iff the
    remaining region is exactly that rectangle. Exact on integer
    coordinates, so it agrees with any pixel rasterization of the same
    boxes.
    """
    if box.area == 0:
        return 0, None, False
    clipped = [o for o in (box.intersect(occ) for occ in occluders) if o is not None]
    if not clipped:
        return box.area, box, True

    covered, widths, heights = _cell_cover(clipped, frame=box)
    visible = ~covered
    cell_areas = np.outer(heights, widths)
    visible_area = int((visible * cell_areas).sum())
    if visible_area == 0:
        return 0, None, False

    xs, ys = _compressed_coords(clipped, frame=box)
    rows = np.where(visible.any(axis=1))[0]
    cols = np.where(visible.any(axis=0))[0]
    extent = BoundingBox(
        int(xs[cols[0]]), int(ys[rows[0]]), int(xs[cols[-1] + 1]), int(ys[rows[-1] + 1])
    )
    return visible_area, extent, visible_area == extent.area


def _compressed_coords(
    boxes: Sequence[BoundingBox], frame: BoundingBox | None = None
) -> tuple[np.ndarray, np.ndarray]:
    xs = set()
    ys = set()
    if frame is not None:
        xs.update((frame.left, frame.right))
        ys.update((frame.top, frame.bottom))
    for b in boxes:
        xs.update((b.left, b.right))
        ys.update((b.top, b.bottom))
    return np.array(sorted(xs)), np.array(sorted(ys))


def _cell_cover(
    boxes: Sequence[BoundingBox], frame: BoundingBox | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Boolean cover matrix over the compressed grid plus cell dims."""
    xs, ys = _compressed_coords(boxes, frame=frame)
    covered = np.zeros((len(ys) - 1, len(xs) - 1), dtype=bool)
    for b in boxes:
        if b.area == 0:
            continue
        j0 = int(np.searchsorted(xs, b.left))
        j1 = int(np.searchsorted(xs, b.right))
        i0 = int(np.searchsorted(ys, b.top))
        i1 = int(np.searchsorted(ys, b.bottom))
        covered[i0:i1, j0:j1] = True
    return covered, np.diff(xs), np.diff(ys)


def scale_box_to_grid(
    box: BoundingBox,
    from_width: int,
    from_height: int,
    to_width: int,
    to_height: int,
    min_one_pixel: bool = False,
) -> tuple[int, int, int, int]:
    """Map a box between coordinate frames, rounding edges half-up.

    Returns pixel index ranges ``(col0, row0, col1, row1)`` into a
    ``to_height x to_width`` grid. With ``min_one_pixel`` the result is
    clamped to cover at least one pixel inside the grid.
    """
    sx = to_width / from_width
    sy = to_height / from_height
    c0 = int(np.floor(box.left * sx + 0.5))
    c1 = int(np.floor(box.right * sx + 0.5))
    r0 = int(np.floor(box.top * sy + 0.5))
    r1 = int(np.floor(box.bottom * sy + 0.5))
    c0, c1 = max(0, min(c0, to_width)), max(0, min(c1, to_width))
    r0, r1 = max(0, min(r0, to_height)), max(0, min(r1, to_height))
    if min_one_pixel:
        if c1 <= c0:
            c0 = min(c0, to_width - 1)
            c1 = c0 + 1
        if r1 <= r0:
            r0 = min(r0, to_height - 1)
            r1 = r0 + 1
    return c0, r0, c1, r1
