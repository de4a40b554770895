import itertools
import math

import numpy as np
import pytest

from uiclean.detector import (
    DESK_SCALE_DETECTOR_TRAIN,
    DetectorConfig,
    DetectorExample,
    InvalidObjectDetector,
    MaskedInput,
    PAPER_SCALE_DETECTOR_TRAIN,
    build_input,
    detector_accuracy,
    rasterize_mask,
    resample_indices,
    train_detector,
)
from uiclean.geometry import BoundingBox
from uiclean.nn import Tensor, TrainConfig

from conftest import make_hierarchy, make_node, make_screen, noise_raster


def _screen(rng, screen_w=200, screen_h=360, raster_w=100, raster_h=180):
    h = make_hierarchy(make_node((0, 0, screen_w, screen_h)), screen_w, screen_h)
    return make_screen(h, noise_raster(rng, raster_h, raster_w))


# --------------------------------------------------------------------------
# build_input


def test_full_screen_box_masks_everything(rng):
    screen = _screen(rng)
    masked = build_input(screen, BoundingBox(0, 0, 200, 360), dims=(36, 20))
    assert masked.pixels.shape == (36, 20, 4)
    assert np.all(masked.mask == 1.0)
    assert masked.pixels[:, :, :3].min() >= 0.0 and masked.pixels[:, :, :3].max() <= 1.0


def test_left_half_box_masks_left_columns(rng):
    screen = _screen(rng)
    masked = build_input(screen, BoundingBox(0, 0, 100, 360), dims=(36, 20))
    expected = np.zeros((36, 20))
    expected[:, :10] = 1.0
    assert np.array_equal(masked.mask, expected)


def test_mask_matches_per_pixel_point_in_box_test(rng):
    dims = (36, 20)
    screen = _screen(rng)
    sw, sh = 200, 360
    for _ in range(50):
        x0 = int(rng.integers(0, sw - 1))
        y0 = int(rng.integers(0, sh - 1))
        x1 = int(rng.integers(x0 + 1, sw + 1))
        y1 = int(rng.integers(y0 + 1, sh + 1))
        box = BoundingBox(x0, y0, x1, y1)
        mask = rasterize_mask(box, sw, sh, dims)
        # independent per-pixel membership against the documented contract:
        # round-half-up edges, then each collapsed axis widened to 1 pixel
        c0 = math.floor(box.left * dims[1] / sw + 0.5)
        c1 = math.floor(box.right * dims[1] / sw + 0.5)
        r0 = math.floor(box.top * dims[0] / sh + 0.5)
        r1 = math.floor(box.bottom * dims[0] / sh + 0.5)
        if c1 <= c0:
            c0 = min(c0, dims[1] - 1); c1 = c0 + 1
        if r1 <= r0:
            r0 = min(r0, dims[0] - 1); r1 = r0 + 1
        expected = np.zeros(dims)
        for r in range(dims[0]):
            for c in range(dims[1]):
                if r0 <= r < r1 and c0 <= c < c1:
                    expected[r, c] = 1.0
        assert expected.sum() >= 1
        assert np.array_equal(mask, expected)


def test_masked_input_validation():
    bad = np.zeros((4, 4, 4))
    with pytest.raises(ValueError):
        MaskedInput(bad)  # empty mask
    bad2 = np.zeros((4, 4, 4))
    bad2[:, :, 3] = 0.5
    with pytest.raises(ValueError):
        MaskedInput(bad2)  # non-binary mask


def test_mask_scale_consistency(rng):
    # mask at (H, W) equals the 2x downsample of the mask at (2H, 2W),
    # up to one boundary row/column
    sw, sh = 200, 360
    for _ in range(20):
        x0 = int(rng.integers(0, sw - 10))
        y0 = int(rng.integers(0, sh - 10))
        box = BoundingBox(x0, y0, int(rng.integers(x0 + 5, sw + 1)), int(rng.integers(y0 + 5, sh + 1)))
        coarse = rasterize_mask(box, sw, sh, (36, 20))
        fine = rasterize_mask(box, sw, sh, (72, 40))
        down = fine.reshape(36, 2, 20, 2).max(axis=(1, 3))
        diff = np.argwhere(coarse != down)
        if diff.size:
            # every differing cell must touch the coarse box's boundary
            # rows/columns (rounding tolerance is one edge cell)
            c0 = math.floor(box.left * 20 / sw + 0.5)
            c1 = math.floor(box.right * 20 / sw + 0.5)
            r0 = math.floor(box.top * 36 / sh + 0.5)
            r1 = math.floor(box.bottom * 36 / sh + 0.5)
            edge_rows = {r0 - 1, r0, r1 - 1, r1}
            edge_cols = {c0 - 1, c0, c1 - 1, c1}
            for r, c in diff:
                assert r in edge_rows or c in edge_cols


# --------------------------------------------------------------------------
# predict


def test_prediction_in_open_interval_and_deterministic(rng):
    model = InvalidObjectDetector(DetectorConfig(input_height=36, input_width=20, channels=(4, 8)))
    screen = _screen(rng)
    masked = build_input(screen, BoundingBox(10, 10, 100, 100), dims=(36, 20))
    p1 = model.predict_invalid(masked)
    p2 = model.predict_invalid(masked)
    assert 0.0 < p1 < 1.0
    assert p1 == p2


def test_model_dims_validated(rng):
    model = InvalidObjectDetector(DetectorConfig(input_height=36, input_width=20, channels=(4, 8)))
    from uiclean.nn import ShapeError

    with pytest.raises(ShapeError):
        model.logits(Tensor(np.zeros((1, 20, 36, 4))))


def test_checkpoint_roundtrip(tmp_path, rng):
    model = InvalidObjectDetector(DetectorConfig(input_height=36, input_width=20, channels=(4, 8)))
    screen = _screen(rng)
    masked = build_input(screen, BoundingBox(10, 10, 100, 100), dims=(36, 20))
    before = model.predict_invalid(masked)
    path = tmp_path / "det.ckpt"
    model.save(path)
    loaded = InvalidObjectDetector.load(path)
    after = loaded.predict_invalid(masked)
    assert before == pytest.approx(after, abs=1e-6)  # float32 storage


# --------------------------------------------------------------------------
# resample


def test_resample_requires_both_classes(rng):
    with pytest.raises(ValueError):
        next(resample_indices([False, False], 4.0, rng))


def test_resample_minority_repeats_twice_for_8_to_1(rng):
    labels = [False] * 800 + [True] * 100  # 8:1 valid:invalid
    stream = resample_indices(labels, 4.0, rng)
    epoch = [next(stream) for _ in range(1000)]  # one epoch is 800 + 200
    counts = np.bincount(epoch, minlength=900)
    invalid_counts = counts[800:]
    assert invalid_counts.mean() == pytest.approx(2.0, abs=0.25)


def test_resample_identity_ratio_is_plain_shuffle(rng):
    labels = [False] * 40 + [True] * 10  # 4:1 already
    stream = resample_indices(labels, 4.0, rng)
    epoch = [next(stream) for _ in range(50)]
    assert sorted(epoch) == list(range(50))  # every example exactly once
    assert epoch != list(range(50))  # but shuffled


def test_resample_empirical_ratio_within_two_percent(rng):
    labels = [False] * 900 + [True] * 100
    stream = resample_indices(labels, 4.0, rng)
    draws = np.fromiter(itertools.islice(stream, 100_000), dtype=np.int64)
    invalid = (draws >= 900).sum()
    valid = (draws < 900).sum()
    ratio = valid / invalid
    assert abs(ratio - 4.0) <= 0.08  # +/- 2% of 4:1


# --------------------------------------------------------------------------
# train


def test_paper_scale_config_recorded():
    cfg = PAPER_SCALE_DETECTOR_TRAIN
    assert cfg.batch_size == 1024
    assert cfg.total_steps == 15_000
    assert cfg.initial_lr == 6e-4
    assert cfg.reduced_lr == 6e-5
    assert cfg.lr_drop_step == 5_500


def _tiny_screens_with_labels(rng, n_screens=6, invalid_per=1):
    """Tiny screens where invalid boxes sit over flat background and valid
    boxes over saturated squares."""
    screens = {}
    examples = []
    for s in range(n_screens):
        raster = np.full((36, 20, 3), 230, dtype=np.uint8)
        h = make_hierarchy(make_node((0, 0, 40, 72)), 40, 72)
        sid = f"s{s}"
        screens[sid] = make_screen(h, raster, source_id=sid)
        for i in range(3):
            x0 = 2 + 6 * i
            y0 = 4 + 8 * i
            raster[y0 : y0 + 6, x0 : x0 + 4] = (200, 30, 40)
            examples.append(DetectorExample(sid, BoundingBox(2 * x0, 2 * y0, 2 * (x0 + 4), 2 * (y0 + 6)), False))
        for i in range(invalid_per):
            examples.append(DetectorExample(sid, BoundingBox(4, 50, 16, 62), True))
    return screens, examples


def test_overfit_small_set_to_99_percent(rng):
    screens, examples = _tiny_screens_with_labels(rng, n_screens=8)
    assert len(examples) == 32
    cfg = TrainConfig(batch_size=16, total_steps=600, initial_lr=5e-3, reduced_lr=5e-4,
                      lr_drop_step=480, l2_coefficient=0.0, seed=0)
    det_cfg = DetectorConfig(input_height=36, input_width=20, channels=(4, 8), seed=0)
    model, history = train_detector(examples, lambda sid: screens[sid], cfg, det_cfg)
    assert detector_accuracy(model, examples, lambda sid: screens[sid]) >= 0.99


def test_noise_labels_yield_majority_rate_accuracy(rng):
    screens, examples = _tiny_screens_with_labels(rng, n_screens=10)
    shuffled = [DetectorExample(e.screen_id, e.box, bool(rng.random() < 0.5)) for e in examples]
    train, held = shuffled[:28], shuffled[28:]
    cfg = TrainConfig(batch_size=8, total_steps=120, initial_lr=1e-3, reduced_lr=1e-4,
                      lr_drop_step=100, l2_coefficient=0.0, seed=0)
    det_cfg = DetectorConfig(input_height=36, input_width=20, channels=(4, 8), seed=0)
    model, _ = train_detector(train, lambda sid: screens[sid], cfg, det_cfg)
    acc = detector_accuracy(model, held, lambda sid: screens[sid])
    majority = max(np.mean([e.invalid for e in held]), 1 - np.mean([e.invalid for e in held]))
    assert abs(acc - majority) <= 0.35  # no signal: near chance either way


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # overflow is the point
def test_divergence_aborts_with_rollback(rng):
    from uiclean.nn import TrainingDiverged

    screens, examples = _tiny_screens_with_labels(rng, n_screens=4)
    cfg = TrainConfig(batch_size=8, total_steps=200, initial_lr=1e300, reduced_lr=1.0,
                      lr_drop_step=100, l2_coefficient=0.0, seed=0)
    det_cfg = DetectorConfig(input_height=36, input_width=20, channels=(4, 8), seed=0)
    with pytest.raises(TrainingDiverged) as exc:
        train_detector(examples, lambda sid: screens[sid], cfg, det_cfg)
    rolled_back = exc.value.model
    assert all(np.isfinite(p.data).all() for p in rolled_back.parameters())


def test_mask_channel_sensitivity_after_training(rng):
    # for a fixed screenshot, the gradient of the logit w.r.t. the mask
    # channel must not be identically zero: the model must use channel 4
    screens, examples = _tiny_screens_with_labels(rng, n_screens=6)
    cfg = TrainConfig(batch_size=16, total_steps=150, initial_lr=2e-3, reduced_lr=2e-4,
                      lr_drop_step=120, l2_coefficient=0.0, seed=0)
    det_cfg = DetectorConfig(input_height=36, input_width=20, channels=(4, 8), seed=0)
    model, _ = train_detector(examples, lambda sid: screens[sid], cfg, det_cfg)
    masked = build_input(screens["s0"], examples[0].box, (36, 20))
    x = Tensor(masked.pixels[None], requires_grad=True)
    logit = model.logits(x)
    from uiclean import nn as unn

    unn.sum_(logit).backward()
    mask_grad = x.grad[0, :, :, 3]
    assert np.abs(mask_grad).max() > 0.0


def test_threshold_sweep_utility():
    from uiclean.detector import threshold_sweep

    probs = np.array([0.1, 0.4, 0.6, 0.9, 0.95])
    gold = [False, False, True, True, True]
    sweep = threshold_sweep(probs, gold, thresholds=(0.3, 0.5, 0.92))
    by_thr = {t: (p, r, f1) for t, p, r, f1 in sweep}
    assert by_thr[0.5] == (1.0, 1.0, 1.0)
    assert by_thr[0.3][1] == 1.0 and by_thr[0.3][0] == pytest.approx(0.75)
    assert by_thr[0.92][1] == pytest.approx(1 / 3)
