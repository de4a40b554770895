"""Binary classifier that flags layout nodes with no valid visual
representation.

The model sees the whole (downsampled) screenshot plus a fourth mask
channel that is 1 inside the inspected node's box and 0 elsewhere, so one
forward pass judges one node with full screen context.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from . import nn
from .features import bilinear_resize
from .geometry import BoundingBox, scale_box_to_grid
from .hierarchy import Screen
from .nn import Tensor, TrainConfig, TrainingDiverged


@dataclass
class DetectorConfig:
    """Desk-scale defaults: 144x80 input (roughly the 9:5 portrait aspect
    of phone screens) and a four-block strided CNN in place of a deep
    residual backbone."""

    input_height: int = 144
    input_width: int = 80
    channels: tuple[int, ...] = (8, 16, 32, 32)
    threshold: float = 0.5
    seed: int = 0

    def to_meta(self) -> dict:
        return {
            "kind": "invalid_detector",
            "input_height": self.input_height,
            "input_width": self.input_width,
            "channels": list(self.channels),
            "threshold": self.threshold,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "DetectorConfig":
        return cls(
            input_height=int(meta["input_height"]),
            input_width=int(meta["input_width"]),
            channels=tuple(meta["channels"]),
            threshold=float(meta.get("threshold", 0.5)),
        )


@dataclass(frozen=True)
class MaskedInput:
    """[H, W, 4] float input: RGB scaled to [0,1] plus a binary box mask
    with at least one pixel set."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 4:
            raise ValueError(f"masked input must be [H,W,4], got {px.shape}")
        mask = px[:, :, 3]
        if not np.isin(mask, (0.0, 1.0)).all():
            raise ValueError("mask channel must be binary")
        if mask.sum() < 1:
            raise ValueError("mask must cover at least one pixel")

    @property
    def mask(self) -> np.ndarray:
        return self.pixels[:, :, 3]


def build_input(
    screen: Screen,
    box: BoundingBox,
    dims: tuple[int, int],
    resized_rgb: np.ndarray | None = None,
) -> MaskedInput:
    """Resize the screenshot to ``dims`` = (height, width) and rasterize
    the box into the mask channel with round-half-up edges, clamped to at
    least one pixel. ``resized_rgb`` lets callers cache the screenshot
    resize across the nodes of one screen."""
    height, width = dims
    if screen.screenshot.size == 0:
        raise ValueError("empty screen raster")
    if resized_rgb is None:
        resized_rgb = resize_screen(screen, dims)
    mask = rasterize_mask(box, screen.hierarchy.screen_width, screen.hierarchy.screen_height, dims)
    return MaskedInput(np.concatenate([resized_rgb, mask[:, :, None]], axis=2))


def resize_screen(screen: Screen, dims: tuple[int, int]) -> np.ndarray:
    height, width = dims
    return bilinear_resize(screen.screenshot, height, width) / 255.0


def rasterize_mask(
    box: BoundingBox, screen_width: int, screen_height: int, dims: tuple[int, int]
) -> np.ndarray:
    height, width = dims
    c0, r0, c1, r1 = scale_box_to_grid(
        box, screen_width, screen_height, width, height, min_one_pixel=True
    )
    mask = np.zeros((height, width))
    mask[r0:r1, c0:c1] = 1.0
    return mask


class InvalidObjectDetector:
    """Strided CNN over the 4-channel masked input, global average pooling,
    and a single-logit head."""

    def __init__(self, config: DetectorConfig | None = None):
        self.config = config or DetectorConfig()
        self.store = nn.ParameterStore(np.random.default_rng(self.config.seed))
        self.blocks = []
        c_in = 4
        for i, c_out in enumerate(self.config.channels):
            self.blocks.append(nn.Conv2d(self.store, f"conv{i}", c_in, c_out, kernel=3, stride=2))
            c_in = c_out
        self.head = nn.Dense(self.store, "head", c_in, 1, zero_init=True)

    def parameters(self) -> list[nn.Parameter]:
        return self.store.parameters()

    def logits(self, batch: Tensor) -> Tensor:
        expected = (self.config.input_height, self.config.input_width, 4)
        if tuple(batch.shape[1:]) != expected:
            raise nn.ShapeError(f"detector expects [B,{expected}], got {batch.shape}")
        x = batch
        for block in self.blocks:
            x = nn.relu(block(x))
        pooled = nn.global_average_pool(x)
        return nn.reshape(self.head(pooled), (batch.shape[0],))

    def predict_batch(self, inputs: Sequence[MaskedInput]) -> np.ndarray:
        batch = Tensor(np.stack([m.pixels for m in inputs]))
        return nn.sigmoid(self.logits(batch)).data

    def predict_invalid(self, masked: MaskedInput) -> float:
        return float(self.predict_batch([masked])[0])

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.store.state(), meta=self.config.to_meta())

    @classmethod
    def load(cls, path) -> "InvalidObjectDetector":
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "invalid_detector":
            raise nn.CheckpointError(f"{path}: not an invalid-detector checkpoint")
        model = cls(DetectorConfig.from_meta(meta))
        model.store.load_state(arrays)
        return model


# --------------------------------------------------------------------------
# Class-ratio resampling


def resample_indices(
    labels: Sequence[bool],
    target_valid_to_invalid: float,
    rng: np.random.Generator,
) -> Iterator[int]:
    """Infinite index stream whose expected valid:invalid ratio per batch
    equals the target, by oversampling the under-represented class with
    replacement.

    Each epoch is a shuffled copy of the dataset with the minority side
    replicated (fractional replication handled stochastically), so when the
    target matches the source ratio the stream is a plain shuffle. Never
    apply this to validation or test data.
    """
    labels_arr = np.asarray(labels, dtype=bool)
    invalid_idx = np.where(labels_arr)[0]
    valid_idx = np.where(~labels_arr)[0]
    if len(invalid_idx) == 0 or len(valid_idx) == 0:
        raise ValueError("resampling needs both valid and invalid examples")
    # Replication factor for the invalid side so that
    # n_valid / (r * n_invalid) == target ratio; r < 1 flips to the valid side.
    r_invalid = len(valid_idx) / (target_valid_to_invalid * len(invalid_idx))
    while True:
        if r_invalid >= 1.0:
            repeated = _replicate(invalid_idx, r_invalid, rng)
            epoch = np.concatenate([valid_idx, repeated])
        else:
            repeated = _replicate(valid_idx, 1.0 / r_invalid, rng)
            epoch = np.concatenate([invalid_idx, repeated])
        rng.shuffle(epoch)
        yield from epoch.tolist()


def _replicate(indices: np.ndarray, factor: float, rng: np.random.Generator) -> np.ndarray:
    whole = int(np.floor(factor))
    frac = factor - whole
    parts = [np.repeat(indices, whole)]
    if frac > 0:
        parts.append(indices[rng.random(len(indices)) < frac])
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# Training


@dataclass
class DetectorExample:
    screen_id: str
    box: BoundingBox
    invalid: bool


#: Training setup of the original large-scale run, recorded for reference.
PAPER_SCALE_DETECTOR_TRAIN = TrainConfig(
    batch_size=1024,
    total_steps=15_000,
    initial_lr=6e-4,
    reduced_lr=6e-5,
    lr_drop_step=5_500,
    l2_coefficient=1e-5,
    seed=0,
)

DESK_SCALE_DETECTOR_TRAIN = TrainConfig(
    batch_size=32,
    total_steps=1_500,
    initial_lr=1e-3,
    reduced_lr=1e-4,
    lr_drop_step=1_000,
    l2_coefficient=1e-6,
    seed=0,
)


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    snapshots_kept: int = 0


def train_detector(
    examples: Sequence[DetectorExample],
    get_screen: Callable[[str], Screen],
    train_config: TrainConfig | None = None,
    detector_config: DetectorConfig | None = None,
    valid_to_invalid_ratio: float = 4.0,
    snapshot_every: int = 100,
    log_every: int | None = None,
    stop_at_accuracy: float | None = None,
) -> tuple[InvalidObjectDetector, TrainHistory]:
    """Train with resampled batches, binary cross-entropy and L2.

    On divergence (non-finite loss) the model is rolled back to the last
    good snapshot and TrainingDiverged is raised with the model attached.
    """
    cfg = train_config or DESK_SCALE_DETECTOR_TRAIN
    model = InvalidObjectDetector(detector_config)
    dims = (model.config.input_height, model.config.input_width)
    rng = np.random.default_rng(cfg.seed)
    optimizer = nn.Adam.single(model.parameters(), cfg)
    history = TrainHistory()

    # Cache the resized RGB and hierarchy frame per screen so each raster
    # is decoded and resampled exactly once.
    resized_cache: dict[str, tuple[np.ndarray, int, int]] = {}

    def masked_pixels(example: DetectorExample) -> np.ndarray:
        if example.screen_id not in resized_cache:
            screen = get_screen(example.screen_id)
            resized_cache[example.screen_id] = (
                resize_screen(screen, dims).astype(np.float32),  # cache at half size
                screen.hierarchy.screen_width,
                screen.hierarchy.screen_height,
            )
        resized, sw, sh = resized_cache[example.screen_id]
        mask = rasterize_mask(example.box, sw, sh, dims).astype(np.float32)
        return np.concatenate([resized, mask[:, :, None]], axis=2)

    stream = resample_indices([e.invalid for e in examples], valid_to_invalid_ratio, rng)
    last_good = {name: arr.copy() for name, arr in model.store.state().items()}

    for step in range(cfg.total_steps):
        batch_idx = [next(stream) for _ in range(cfg.batch_size)]
        batch = Tensor(np.stack([masked_pixels(examples[i]) for i in batch_idx]))
        targets = np.array([float(examples[i].invalid) for i in batch_idx])

        optimizer.zero_grad()
        loss = nn.bce_with_logits(model.logits(batch), targets)
        if cfg.l2_coefficient > 0:
            loss = loss + nn.l2_penalty(model.parameters(), cfg.l2_coefficient)
        loss_value = loss.item()
        history.losses.append(loss_value)
        if not np.isfinite(loss_value):
            model.store.load_state(last_good)
            error = TrainingDiverged(
                f"loss became non-finite at step {step}; model rolled back "
                f"to the snapshot from step {history.snapshots_kept * snapshot_every}"
            )
            error.model = model
            raise error
        loss.backward()
        optimizer.step(step)
        if (step + 1) % snapshot_every == 0:
            last_good = {name: arr.copy() for name, arr in model.store.state().items()}
            history.snapshots_kept += 1
        if log_every and (step + 1) % log_every == 0:
            print(f"  detector step {step + 1}/{cfg.total_steps} loss {loss_value:.4f}")
        if stop_at_accuracy is not None and (step + 1) % 100 == 0:
            if detector_accuracy(model, examples, get_screen) >= stop_at_accuracy:
                break

    return model, history


def threshold_sweep(
    probabilities: np.ndarray,
    gold_invalid: Sequence[bool],
    thresholds: Sequence[float] = tuple(t / 20 for t in range(1, 20)),
) -> list[tuple[float, float, float, float]]:
    """Precision/recall/F1 of the invalid class at each decision threshold.

    A tuning aid: the reported metrics elsewhere always use the fixed 0.5
    threshold.
    """
    gold = np.asarray(gold_invalid, dtype=bool)
    out = []
    for threshold in thresholds:
        pred = probabilities > threshold
        tp = int((pred & gold).sum())
        fp = int((pred & ~gold).sum())
        fn = int((~pred & gold).sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out.append((float(threshold), precision, recall, f1))
    return out


def detector_accuracy(
    model: InvalidObjectDetector,
    examples: Sequence[DetectorExample],
    get_screen: Callable[[str], Screen],
) -> float:
    preds = predict_examples(model, examples, get_screen) > model.config.threshold
    gold = np.array([e.invalid for e in examples])
    return float((preds == gold).mean())


def predict_examples(
    model: InvalidObjectDetector,
    examples: Sequence[DetectorExample],
    get_screen: Callable[[str], Screen],
    batch_size: int = 64,
) -> np.ndarray:
    dims = (model.config.input_height, model.config.input_width)
    resized_cache: dict[str, tuple[np.ndarray, int, int]] = {}
    probs = np.zeros(len(examples))
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        inputs = []
        for example in chunk:
            if example.screen_id not in resized_cache:
                screen = get_screen(example.screen_id)
                resized_cache[example.screen_id] = (
                    resize_screen(screen, dims).astype(np.float32),
                    screen.hierarchy.screen_width,
                    screen.hierarchy.screen_height,
                )
            resized, sw, sh = resized_cache[example.screen_id]
            mask = rasterize_mask(example.box, sw, sh, dims)
            inputs.append(MaskedInput(np.concatenate([resized, mask[:, :, None]], axis=2)))
        probs[start : start + len(chunk)] = model.predict_batch(inputs)
    return probs
