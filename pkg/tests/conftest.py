from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uiclean.geometry import BoundingBox
from uiclean.hierarchy import Node, Screen, ViewHierarchy, Visibility

settings.register_profile(
    "ci",
    deadline=None,
    derandomize=True,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def make_node(
    box: tuple[int, int, int, int],
    android_class: str = "android.widget.Button",
    children: list[Node] | None = None,
    **kwargs,
) -> Node:
    return Node(
        android_class=android_class,
        bounds=BoundingBox(*box),
        children=children or [],
        **kwargs,
    )


def make_hierarchy(root: Node, width: int = 200, height: int = 200, package: str = "com.test.app") -> ViewHierarchy:
    h = ViewHierarchy(root=root, package_name=package, screen_width=width, screen_height=height)
    for i, node in enumerate(h.preorder()):
        node.node_id = i
    return h


def noise_raster(rng: np.random.Generator, height: int = 200, width: int = 200) -> np.ndarray:
    return rng.integers(0, 256, size=(height, width, 3)).astype(np.uint8)


def make_screen(
    hierarchy: ViewHierarchy,
    raster: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    source_id: str = "test",
) -> Screen:
    if raster is None:
        rng = rng or np.random.default_rng(0)
        raster = noise_raster(rng, hierarchy.screen_height, hierarchy.screen_width)
    return Screen(hierarchy=hierarchy, screenshot=raster, source_id=source_id)


def random_tree_hierarchy(
    rng: np.random.Generator,
    max_nodes: int = 20,
    width: int = 200,
    height: int = 200,
    visible_only: bool = True,
) -> ViewHierarchy:
    """Random tree of in-screen boxes; node ids are pre-order ranks."""
    n = int(rng.integers(2, max_nodes + 1))
    nodes = []
    for _ in range(n):
        x0 = int(rng.integers(0, width))
        y0 = int(rng.integers(0, height))
        x1 = int(rng.integers(x0 + 1, width + 1))
        y1 = int(rng.integers(y0 + 1, height + 1))
        node = make_node((x0, y0, x1, y1), android_class="android.view.View")
        if not visible_only and rng.random() < 0.15:
            node.visibility = Visibility.GONE
        nodes.append(node)
    for i in range(1, n):
        nodes[int(rng.integers(0, i))].children.append(nodes[i])
    return make_hierarchy(nodes[0], width, height)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
