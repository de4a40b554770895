"""Per-node input encodings: text fields, box position, and pixel crop.

Every node contributes three vectors: a text embedding built by pooling
subword embeddings of its class name / content description / resource id,
a positional encoding built from sinusoidal features of its normalized box
coordinates, and (for the graph model) an encoding of its cropped pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .bpe import TokenizerModel
from .geometry import BoundingBox, scale_box_to_grid
from .hierarchy import Node, Screen
from .nn import Tensor

TEXT_FIELDS = ("android_class", "content_desc", "resource_id")


@dataclass(frozen=True)
class FeatureConfig:
    d_text: int = 16  # per-field pooled text vector
    d_pos: int = 8  # per-coordinate positional vector
    d_image: int = 32  # pixel-crop encoding
    max_words_per_field: int = 10
    sinusoid_frequencies: int = 8  # octaves per coordinate
    crop_size: int = 64

    def __post_init__(self) -> None:
        for name in ("d_text", "d_pos", "d_image", "max_words_per_field", "sinusoid_frequencies", "crop_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def text_dim(self) -> int:
        return 3 * self.d_text

    @property
    def pos_dim(self) -> int:
        return 4 * self.d_pos

    def node_dim(self) -> int:
        """Concatenated [image, text, position] width for the graph model."""
        return self.d_image + self.text_dim + self.pos_dim

    def require_summable(self, model_dim: int) -> None:
        """The transformer initializes node states as text + position, so
        both concatenations must equal the model width."""
        if self.text_dim != model_dim or self.pos_dim != model_dim:
            raise ValueError(
                f"text dim 3*{self.d_text}={self.text_dim} and position dim "
                f"4*{self.d_pos}={self.pos_dim} must both equal model_dim={model_dim}"
            )


@dataclass
class NodeEmbedding:
    """The (image, text, position) triple for one node. ``image`` is None
    for models that consume the whole screenshot instead of crops."""

    text: Tensor
    position: Tensor
    image: Tensor | None = None


class TextEmbedder:
    """Per-field subword embedding with element-wise max pooling.

    Each of the three text fields contributes the max over the embeddings
    of its first ``max_words_per_field`` words' tokens; an empty field
    contributes a zero vector. The three pooled vectors are concatenated in
    fixed field order.
    """

    def __init__(self, store: nn.ParameterStore, tokenizer: TokenizerModel, config: FeatureConfig):
        self.tokenizer = tokenizer
        self.config = config
        self.table = nn.Embedding(store, "text_embed", tokenizer.vocab_size, config.d_text)

    def embed(self, node: Node) -> Tensor:
        pooled = []
        for field in TEXT_FIELDS:
            value = getattr(node, field) or ""
            ids = self.tokenizer.encode_text(value, max_words=self.config.max_words_per_field)
            if ids:
                pooled.append(nn.max_pool_over_sequence(self.table.lookup(np.array(ids))))
            else:
                pooled.append(Tensor(np.zeros(self.config.d_text)))
        return nn.concat(pooled, axis=0)


def sinusoid_features(x: float, frequencies: int) -> np.ndarray:
    """[sin(2pi*2^k*x), cos(2pi*2^k*x)] for k = 0..frequencies-1."""
    ks = 2.0 ** np.arange(frequencies)
    angles = 2.0 * np.pi * ks * x
    out = np.empty(2 * frequencies)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


class PositionEmbedder:
    """Sinusoidal features of each normalized coordinate followed by a
    trainable dense layer; one layer per coordinate slot, concatenated in
    (left, right, top, bottom) order."""

    SLOTS = ("left", "right", "top", "bottom")

    def __init__(self, store: nn.ParameterStore, config: FeatureConfig):
        self.config = config
        d_in = 2 * config.sinusoid_frequencies
        self.dense = {
            slot: nn.Dense(store, f"pos_embed.{slot}", d_in, config.d_pos) for slot in self.SLOTS
        }

    def embed(self, box: BoundingBox, screen_width: int, screen_height: int) -> Tensor:
        coords = {
            "left": box.left / screen_width,
            "right": box.right / screen_width,
            "top": box.top / screen_height,
            "bottom": box.bottom / screen_height,
        }
        parts = []
        for slot in self.SLOTS:
            x = coords[slot]
            if not -0.5 <= x <= 1.5:
                raise ValueError(
                    f"normalized coordinate {slot}={x:.3f} outside [-0.5, 1.5]; "
                    "boxes must be clipped upstream"
                )
            feats = Tensor(sinusoid_features(x, self.config.sinusoid_frequencies).reshape(1, -1))
            parts.append(nn.reshape(self.dense[slot](feats), (self.config.d_pos,)))
        return nn.concat(parts, axis=0)


class CropEncoder:
    """Small CNN over the resized pixel crop of a node, standing in for a
    large-scale image backbone: three stride-2 conv blocks, flatten, dense."""

    CHANNELS = (8, 16, 32)

    def __init__(self, store: nn.ParameterStore, config: FeatureConfig):
        self.config = config
        self.blocks = []
        c_in = 3
        for i, c_out in enumerate(self.CHANNELS):
            self.blocks.append(nn.Conv2d(store, f"crop_enc.conv{i}", c_in, c_out, kernel=3, stride=2))
            c_in = c_out
        side = config.crop_size
        for _ in self.CHANNELS:
            side = -(-side // 2)
        self.flat_dim = side * side * self.CHANNELS[-1]
        self.head = nn.Dense(store, "crop_enc.head", self.flat_dim, config.d_image)

    def encode(self, crops: np.ndarray) -> Tensor:
        """crops: [n, S, S, 3] floats in [0, 1] -> [n, d_image]."""
        expected = (self.config.crop_size, self.config.crop_size, 3)
        if crops.ndim != 4 or crops.shape[1:] != expected:
            raise nn.ShapeError(f"crops must be [n, {expected}], got {crops.shape}")
        x = Tensor(crops)
        for block in self.blocks:
            x = nn.relu(block(x))
        flat = nn.reshape(x, (crops.shape[0], self.flat_dim))
        return self.head(flat)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with edge-aligned pixel centers."""
    img = image.astype(np.float64)
    in_h, in_w = img.shape[0], img.shape[1]
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys), 0, in_h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, in_w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bottom * wy


def crop_raster(screen: Screen, box: BoundingBox) -> np.ndarray:
    """Cut the raster region under a hierarchy-frame box (at least one
    pixel; raises on boxes that map to nothing)."""
    h = screen.hierarchy
    if box.area == 0:
        raise ValueError(f"empty crop for box {box.as_tuple()}")
    c0, r0, c1, r1 = scale_box_to_grid(
        box, h.screen_width, h.screen_height, screen.raster_width, screen.raster_height,
        min_one_pixel=True,
    )
    return screen.screenshot[r0:r1, c0:c1]


def encode_crops_for_nodes(
    screen: Screen, boxes: list[BoundingBox], encoder: CropEncoder
) -> Tensor:
    """Resize each node's crop to the configured square and run the CNN."""
    size = encoder.config.crop_size
    batch = np.stack(
        [bilinear_resize(crop_raster(screen, box), size, size) / 255.0 for box in boxes]
    )
    return encoder.encode(batch)


def embed_node(
    screen: Screen,
    node: Node,
    text_embedder: TextEmbedder,
    position_embedder: PositionEmbedder,
    crop_encoder: CropEncoder | None = None,
) -> NodeEmbedding:
    """The full per-node encoding triple; ``image`` is omitted when no crop
    encoder is supplied (the transformer path consumes whole screenshots)."""
    h = screen.hierarchy
    image = None
    if crop_encoder is not None:
        image = nn.reshape(
            encode_crops_for_nodes(screen, [node.bounds], crop_encoder),
            (crop_encoder.config.d_image,),
        )
    return NodeEmbedding(
        text=text_embedder.embed(node),
        position=position_embedder.embed(node.bounds, h.screen_width, h.screen_height),
        image=image,
    )
