"""Type recognition with a screenshot transformer encoder and a parallel
decoder over the hierarchy nodes.

The whole screenshot runs through a small CNN whose feature map becomes a
patch sequence for the encoder. Node states start as text embedding plus
positional encoding and pass through decoder layers of self-attention over
the screen's nodes (no causal mask: all nodes decode in parallel) followed
by cross-attention into the patch encoding, with pre-layer-norm residual
blocks throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .bpe import TokenizerModel
from .features import FeatureConfig, PositionEmbedder, TextEmbedder, bilinear_resize
from .gnn import INDEX_TO_TYPE, TYPE_TO_INDEX, _node_sinusoids
from .hierarchy import Node, ObjectType, SEMANTIC_TYPES, Screen, ViewHierarchy
from .nn import Tensor, TrainConfig, TrainingDiverged


@dataclass
class TransformerConfig:
    """Desk-scale defaults. The node state is the sum of the text and
    position encodings, so model_dim must be divisible by both 3 (text
    fields) and 4 (coordinates); 48 is the smallest comfortable width that
    also splits across 4 heads."""

    model_dim: int = 48
    heads: int = 4
    mlp_dim: int = 96
    encoder_layers: int = 2
    decoder_layers: int = 2
    input_height: int = 144
    input_width: int = 80
    backbone_channels: tuple[int, ...] = (8, 16, 32, 48)
    seed: int = 0
    feature: FeatureConfig = field(
        default_factory=lambda: FeatureConfig(d_text=16, d_pos=12)
    )

    def __post_init__(self) -> None:
        self.feature.require_summable(self.model_dim)
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.backbone_channels[-1] != self.model_dim:
            raise ValueError("last backbone channel count must equal model_dim")

    @property
    def grid(self) -> tuple[int, int]:
        rows, cols = self.input_height, self.input_width
        for _ in self.backbone_channels:
            rows, cols = -(-rows // 2), -(-cols // 2)
        return rows, cols

    @property
    def num_patches(self) -> int:
        rows, cols = self.grid
        return rows * cols

    def to_meta(self) -> dict:
        return {
            "kind": "transformer_typer",
            "model_dim": self.model_dim,
            "heads": self.heads,
            "mlp_dim": self.mlp_dim,
            "encoder_layers": self.encoder_layers,
            "decoder_layers": self.decoder_layers,
            "input_height": self.input_height,
            "input_width": self.input_width,
            "backbone_channels": list(self.backbone_channels),
            "d_text": self.feature.d_text,
            "d_pos": self.feature.d_pos,
            "max_words_per_field": self.feature.max_words_per_field,
            "sinusoid_frequencies": self.feature.sinusoid_frequencies,
            "vocab_size": None,  # filled by save()
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "TransformerConfig":
        return cls(
            model_dim=int(meta["model_dim"]),
            heads=int(meta["heads"]),
            mlp_dim=int(meta["mlp_dim"]),
            encoder_layers=int(meta["encoder_layers"]),
            decoder_layers=int(meta["decoder_layers"]),
            input_height=int(meta["input_height"]),
            input_width=int(meta["input_width"]),
            backbone_channels=tuple(meta["backbone_channels"]),
            feature=FeatureConfig(
                d_text=int(meta["d_text"]),
                d_pos=int(meta["d_pos"]),
                max_words_per_field=int(meta["max_words_per_field"]),
                sinusoid_frequencies=int(meta["sinusoid_frequencies"]),
            ),
        )


#: Configuration of the original large-scale run, recorded for reference:
#: ResNet-50 backbone, 6 encoder and 6 parallel-decoder layers, 8 heads,
#: query/key/value width 256, MLP width 2048, subword vocabulary 28,536.
PAPER_SCALE_TRANSFORMER = {
    "encoder_layers": 6,
    "decoder_layers": 6,
    "heads": 8,
    "model_dim": 256,
    "mlp_dim": 2048,
    "vocab_size": 28_536,
    "backbone": "resnet50",
}

#: Large-scale training schedule: separate backbone and transformer rates,
#: both reduced tenfold after 5k of the 15k steps.
PAPER_SCALE_TRANSFORMER_TRAIN = TrainConfig(
    batch_size=128,
    total_steps=15_000,
    initial_lr=1e-4,
    reduced_lr=1e-5,
    lr_drop_step=5_000,
    l2_coefficient=1e-5,
    seed=0,
)
PAPER_SCALE_BACKBONE_TRAIN = TrainConfig(
    batch_size=128,
    total_steps=15_000,
    initial_lr=6e-5,
    reduced_lr=6e-6,
    lr_drop_step=5_000,
    l2_coefficient=1e-5,
    seed=0,
)

DESK_SCALE_TRANSFORMER_TRAIN = TrainConfig(
    batch_size=8,
    total_steps=2_000,
    initial_lr=1e-3,
    reduced_lr=1e-4,
    lr_drop_step=1_500,
    l2_coefficient=1e-6,
    seed=0,
)
DESK_SCALE_BACKBONE_TRAIN = TrainConfig(
    batch_size=8,
    total_steps=2_000,
    initial_lr=6e-4,
    reduced_lr=6e-5,
    lr_drop_step=1_500,
    l2_coefficient=1e-6,
    seed=0,
)


@dataclass
class ScreenEncoding:
    """One vector per image patch, [num_patches, model_dim]."""

    patches: Tensor
    grid: tuple[int, int]


@dataclass
class PreparedNodes:
    """Static per-screen inputs for the decoder."""

    screen_id: str
    node_ids: list[int]
    token_ids: list[list[list[int]]]
    sinusoids: np.ndarray  # [n, 4, 2K]
    labels: np.ndarray  # [n], -1 where unlabeled
    resized: np.ndarray  # [H, W, 3] float in [0,1]


def prepare_nodes(
    screen: Screen,
    hierarchy: ViewHierarchy,
    tokenizer: TokenizerModel,
    config: TransformerConfig,
    gold_labels: dict[int, ObjectType] | None = None,
) -> PreparedNodes:
    nodes = hierarchy.preorder()
    token_ids = [
        [
            tokenizer.encode_text(getattr(node, field_name) or "", max_words=config.feature.max_words_per_field)
            for field_name in ("android_class", "content_desc", "resource_id")
        ]
        for node in nodes
    ]
    sinusoids = np.stack([_node_sinusoids(node, hierarchy, config.feature) for node in nodes])
    labels = np.full(len(nodes), -1, dtype=np.int64)
    if gold_labels is not None:
        for i, node in enumerate(nodes):
            gold = gold_labels.get(node.node_id)
            if gold is None:
                continue
            if gold is ObjectType.INVALID:
                raise ValueError(
                    f"node {node.node_id} labeled INVALID in type-recognition data"
                )
            labels[i] = TYPE_TO_INDEX[gold]
    resized = bilinear_resize(screen.screenshot, config.input_height, config.input_width) / 255.0
    return PreparedNodes(
        screen_id=screen.source_id,
        node_ids=[node.node_id for node in nodes],
        token_ids=token_ids,
        sinusoids=sinusoids,
        labels=labels,
        resized=resized,
    )


class _AttentionBlock:
    def __init__(self, store: nn.ParameterStore, name: str, dim: int, heads: int):
        self.heads = heads
        self.norm = nn.LayerNorm(store, f"{name}.norm", dim)
        self.wq = nn.Dense(store, f"{name}.wq", dim, dim)
        self.wk = nn.Dense(store, f"{name}.wk", dim, dim)
        self.wv = nn.Dense(store, f"{name}.wv", dim, dim)
        self.wo = nn.Dense(store, f"{name}.wo", dim, dim)

    def __call__(self, x: Tensor, context: Tensor | None = None, probe: list | None = None) -> Tensor:
        normed = self.norm(x)
        source = normed if context is None else context
        attended = nn.multi_head_attention(
            self.wq(normed), self.wk(source), self.wv(source), self.heads, probe=probe
        )
        return x + self.wo(attended)


class _MlpResidual:
    def __init__(self, store: nn.ParameterStore, name: str, dim: int, hidden: int):
        self.norm = nn.LayerNorm(store, f"{name}.norm", dim)
        self.mlp = nn.mlp_block(store, name, dim, hidden)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.mlp(self.norm(x))


class TransformerTypeModel:
    def __init__(self, tokenizer: TokenizerModel, config: TransformerConfig | None = None):
        self.config = config or TransformerConfig()
        self.tokenizer = tokenizer
        cfg = self.config
        self.store = nn.ParameterStore(np.random.default_rng(cfg.seed))

        # Image backbone (its parameters train at their own learning rate).
        self.backbone_blocks = []
        c_in = 3
        for i, c_out in enumerate(cfg.backbone_channels):
            self.backbone_blocks.append(
                nn.Conv2d(self.store, f"backbone.conv{i}", c_in, c_out, kernel=3, stride=2)
            )
            c_in = c_out
        self._backbone_names = {p.name for p in self.store.parameters()}

        self.patch_pos = self.store.trunc_normal(
            "patch_pos", (cfg.num_patches, cfg.model_dim), fan_in=cfg.model_dim
        )
        self.encoder_attn = []
        self.encoder_mlp = []
        for i in range(cfg.encoder_layers):
            self.encoder_attn.append(_AttentionBlock(self.store, f"enc{i}.attn", cfg.model_dim, cfg.heads))
            self.encoder_mlp.append(_MlpResidual(self.store, f"enc{i}.mlp", cfg.model_dim, cfg.mlp_dim))
        self.encoder_norm = nn.LayerNorm(self.store, "enc.final_norm", cfg.model_dim)

        self.text = TextEmbedder(self.store, tokenizer, cfg.feature)
        self.pos = PositionEmbedder(self.store, cfg.feature)
        self.decoder_self = []
        self.decoder_cross = []
        self.decoder_mlp = []
        for i in range(cfg.decoder_layers):
            self.decoder_self.append(_AttentionBlock(self.store, f"dec{i}.self", cfg.model_dim, cfg.heads))
            self.decoder_cross.append(_AttentionBlock(self.store, f"dec{i}.cross", cfg.model_dim, cfg.heads))
            self.decoder_mlp.append(_MlpResidual(self.store, f"dec{i}.mlp", cfg.model_dim, cfg.mlp_dim))
        self.decoder_norm = nn.LayerNorm(self.store, "dec.final_norm", cfg.model_dim)
        self.readout = nn.Dense(self.store, "readout", cfg.model_dim, len(SEMANTIC_TYPES), zero_init=True)

    def parameters(self) -> list[nn.Parameter]:
        return self.store.parameters()

    def backbone_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.store.parameters() if p.name in self._backbone_names]

    def other_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.store.parameters() if p.name not in self._backbone_names]

    # -- encoder ---------------------------------------------------------

    def encode_screen(self, resized: np.ndarray, probe: list | None = None) -> ScreenEncoding:
        """CNN feature map split into patches, plus learned per-patch
        positions, through the encoder stack."""
        x = Tensor(resized[None, :, :, :])
        for block in self.backbone_blocks:
            x = nn.relu(block(x))
        rows, cols = self.config.grid
        patches = nn.reshape(x, (rows * cols, self.config.model_dim))
        patches = patches + self.patch_pos.tensor
        for attn, mlp in zip(self.encoder_attn, self.encoder_mlp):
            patches = attn(patches, probe=probe)
            patches = mlp(patches)
        return ScreenEncoding(patches=self.encoder_norm(patches), grid=(rows, cols))

    # -- decoder ---------------------------------------------------------

    def node_states(self, prepared: PreparedNodes) -> Tensor:
        """h0 = text embedding + positional encoding (element-wise sum)."""
        rows = []
        for fields in prepared.token_ids:
            pooled = []
            for ids in fields:
                if ids:
                    pooled.append(nn.max_pool_over_sequence(self.text.table.lookup(np.array(ids))))
                else:
                    pooled.append(Tensor(np.zeros(self.config.feature.d_text)))
            rows.append(nn.reshape(nn.concat(pooled, axis=0), (1, -1)))
        text = nn.concat(rows, axis=0)
        parts = []
        for s, slot in enumerate(PositionEmbedder.SLOTS):
            parts.append(self.pos.dense[slot](Tensor(prepared.sinusoids[:, s, :])))
        pos = nn.concat(parts, axis=1)
        return text + pos

    def decode_types(
        self,
        prepared: PreparedNodes,
        encoding: ScreenEncoding,
        probe: list | None = None,
    ) -> Tensor:
        """Parallel decoding: self-attention across the screen's nodes (no
        causal mask), cross-attention into the screen encoding at every
        layer, then the classification head."""
        if not prepared.node_ids:
            return Tensor(np.zeros((0, len(SEMANTIC_TYPES))))
        h = self.node_states(prepared)
        for self_attn, cross_attn, mlp in zip(self.decoder_self, self.decoder_cross, self.decoder_mlp):
            h = self_attn(h, probe=probe)
            h = cross_attn(h, context=encoding.patches, probe=probe)
            h = mlp(h)
        return self.readout(self.decoder_norm(h))

    def forward(self, prepared: PreparedNodes, probe: list | None = None) -> Tensor:
        encoding = self.encode_screen(prepared.resized, probe=probe)
        return self.decode_types(prepared, encoding, probe=probe)

    def predict(self, prepared: PreparedNodes) -> list[tuple[int, ObjectType, float]]:
        """Per node: (node_id, predicted type, probability)."""
        logits = self.forward(prepared)
        if logits.shape[0] == 0:
            return []
        probs = nn.softmax(logits, axis=-1).data
        picks = probs.argmax(axis=1)
        return [
            (prepared.node_ids[i], INDEX_TO_TYPE[int(picks[i])], float(probs[i, picks[i]]))
            for i in range(len(prepared.node_ids))
        ]

    def save(self, path) -> None:
        meta = self.config.to_meta()
        meta["vocab_size"] = self.tokenizer.vocab_size
        nn.save_checkpoint(path, self.store.state(), meta=meta)

    @classmethod
    def load(cls, path, tokenizer: TokenizerModel) -> "TransformerTypeModel":
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "transformer_typer":
            raise nn.CheckpointError(f"{path}: not a transformer-typer checkpoint")
        if meta.get("vocab_size") != tokenizer.vocab_size:
            raise nn.CheckpointError(
                f"{path}: tokenizer vocab {tokenizer.vocab_size} does not match "
                f"checkpoint vocab {meta.get('vocab_size')}"
            )
        model = cls(tokenizer, TransformerConfig.from_meta(meta))
        model.store.load_state(arrays)
        return model


def train_transformer(
    prepared: Sequence[PreparedNodes],
    tokenizer: TokenizerModel,
    config: TransformerConfig | None = None,
    train_config: TrainConfig | None = None,
    backbone_config: TrainConfig | None = None,
    log_every: int | None = None,
    stop_at_accuracy: float | None = None,
) -> tuple[TransformerTypeModel, list[float]]:
    """Two parameter groups (backbone vs encoder/decoder) at their own
    learning rates, both following the same drop schedule."""
    cfg = train_config or DESK_SCALE_TRANSFORMER_TRAIN
    bb_cfg = backbone_config or DESK_SCALE_BACKBONE_TRAIN
    if (cfg.batch_size, cfg.total_steps) != (bb_cfg.batch_size, bb_cfg.total_steps):
        raise ValueError("backbone and main schedules must share batch size and step count")
    model = TransformerTypeModel(tokenizer, config)
    optimizer = nn.Adam([(model.backbone_parameters(), bb_cfg), (model.other_parameters(), cfg)])
    rng = np.random.default_rng(cfg.seed)
    losses: list[float] = []
    labeled = [p for p in prepared if (p.labels >= 0).any()]
    if not labeled:
        raise ValueError("no labeled screens to train on")

    for step in range(cfg.total_steps):
        batch = [labeled[i] for i in rng.integers(0, len(labeled), size=min(cfg.batch_size, len(labeled)))]
        optimizer.zero_grad()
        logits = nn.concat([model.forward(p) for p in batch], axis=0)
        labels = np.concatenate([p.labels for p in batch])
        mask = labels >= 0
        loss = nn.cross_entropy(logits, np.where(mask, labels, 0), mask=mask)
        if cfg.l2_coefficient > 0:
            loss = loss + nn.l2_penalty(model.parameters(), cfg.l2_coefficient)
        value = loss.item()
        losses.append(value)
        if not np.isfinite(value):
            raise TrainingDiverged(f"transformer loss non-finite at step {step}")
        loss.backward()
        optimizer.step(step)
        if log_every and (step + 1) % log_every == 0:
            print(f"  transformer step {step + 1}/{cfg.total_steps} loss {value:.4f}")
        if stop_at_accuracy is not None and (step + 1) % 50 == 0:
            if transformer_training_accuracy(model, labeled) >= stop_at_accuracy:
                break
    return model, losses


def transformer_training_accuracy(
    model: TransformerTypeModel, prepared: Sequence[PreparedNodes]
) -> float:
    correct = 0
    total = 0
    for p in prepared:
        logits = model.forward(p)
        picks = logits.data.argmax(axis=1)
        mask = p.labels >= 0
        correct += int((picks[mask] == p.labels[mask]).sum())
        total += int(mask.sum())
    return correct / max(total, 1)
