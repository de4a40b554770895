"""Type recognition over the layout graph with message passing.

Nodes are the surviving hierarchy objects; edges mirror the tree in both
directions plus symmetric links between spatial neighbors. Each round, a
shared message kernel runs over every directed edge, incoming messages are
fused by attention pooling, and a shared update kernel advances the node
state. A readout maps final states to the 24 semantic classes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .bpe import TokenizerModel
from .features import (
    CropEncoder,
    FeatureConfig,
    PositionEmbedder,
    TextEmbedder,
    bilinear_resize,
    crop_raster,
    sinusoid_features,
)
from .geometry import BoundingBox, axis_gap, projection_overlap
from .hierarchy import Node, ObjectType, SEMANTIC_TYPES, Screen, ViewHierarchy
from .nn import Tensor, TrainConfig, TrainingDiverged


class EdgeKind(enum.IntEnum):
    PARENT_CHILD = 0
    CHILD_PARENT = 1
    SPATIAL = 2


@dataclass
class LayoutGraph:
    """Directed edges over node positions (indices into the node list)."""

    num_nodes: int
    src: np.ndarray  # [E] int
    dst: np.ndarray  # [E] int
    kind: np.ndarray  # [E] int (EdgeKind values)

    def edge_set(self) -> set[tuple[int, int, int]]:
        return set(zip(self.src.tolist(), self.dst.tolist(), self.kind.tolist()))

    def incidence(self) -> np.ndarray:
        """[N, E] matrix with 1 where edge e enters node n."""
        matrix = np.zeros((self.num_nodes, len(self.src)))
        matrix[self.dst, np.arange(len(self.src))] = 1.0
        return matrix


def build_graph(hierarchy: ViewHierarchy, spatial_threshold: float = 0.01) -> LayoutGraph:
    """Tree edges in both directions; a spatial edge joins two nodes that
    are not tree-adjacent when the gap between their boxes along one axis
    is at most ``spatial_threshold * screen_height`` and their projections
    on the other axis overlap."""
    nodes = hierarchy.preorder()
    position = {id(node): i for i, node in enumerate(nodes)}
    edges: list[tuple[int, int, int]] = []
    tree_adjacent: set[tuple[int, int]] = set()
    for node in nodes:
        p = position[id(node)]
        for child in node.children:
            c = position[id(child)]
            edges.append((p, c, EdgeKind.PARENT_CHILD))
            edges.append((c, p, EdgeKind.CHILD_PARENT))
            tree_adjacent.add((min(p, c), max(p, c)))

    max_gap = spatial_threshold * hierarchy.screen_height
    boxes = [node.bounds for node in nodes]
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if (i, j) in tree_adjacent:
                continue
            if spatially_adjacent(boxes[i], boxes[j], max_gap):
                edges.append((i, j, EdgeKind.SPATIAL))
                edges.append((j, i, EdgeKind.SPATIAL))

    edges = sorted(set(edges))
    if edges:
        src, dst, kind = (np.array(v, dtype=np.int64) for v in zip(*edges))
    else:
        src = dst = kind = np.zeros(0, dtype=np.int64)
    return LayoutGraph(num_nodes=len(nodes), src=src, dst=dst, kind=kind)


def spatially_adjacent(a: BoundingBox, b: BoundingBox, max_gap: float) -> bool:
    gap_x = axis_gap(a.left, a.right, b.left, b.right)
    gap_y = axis_gap(a.top, a.bottom, b.top, b.bottom)
    overlap_x = projection_overlap(a.left, a.right, b.left, b.right)
    overlap_y = projection_overlap(a.top, a.bottom, b.top, b.bottom)
    return (gap_x <= max_gap and overlap_y > 0) or (gap_y <= max_gap and overlap_x > 0)


@dataclass
class GnnConfig:
    hidden_dim: int = 64
    message_dim: int = 32
    rounds: int = 5
    edge_kind_dim: int = 8
    spatial_threshold: float = 0.01
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    seed: int = 0

    def to_meta(self) -> dict:
        return {
            "kind": "gnn_typer",
            "hidden_dim": self.hidden_dim,
            "message_dim": self.message_dim,
            "rounds": self.rounds,
            "edge_kind_dim": self.edge_kind_dim,
            "spatial_threshold": self.spatial_threshold,
            "d_text": self.feature.d_text,
            "d_pos": self.feature.d_pos,
            "d_image": self.feature.d_image,
            "max_words_per_field": self.feature.max_words_per_field,
            "sinusoid_frequencies": self.feature.sinusoid_frequencies,
            "crop_size": self.feature.crop_size,
            "vocab_size": None,  # filled by save()
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "GnnConfig":
        return cls(
            hidden_dim=int(meta["hidden_dim"]),
            message_dim=int(meta["message_dim"]),
            rounds=int(meta["rounds"]),
            edge_kind_dim=int(meta["edge_kind_dim"]),
            spatial_threshold=float(meta["spatial_threshold"]),
            feature=FeatureConfig(
                d_text=int(meta["d_text"]),
                d_pos=int(meta["d_pos"]),
                d_image=int(meta["d_image"]),
                max_words_per_field=int(meta["max_words_per_field"]),
                sinusoid_frequencies=int(meta["sinusoid_frequencies"]),
                crop_size=int(meta["crop_size"]),
            ),
        )


#: Training setup of the original large-scale run, recorded for reference.
PAPER_SCALE_GNN_TRAIN = TrainConfig(
    batch_size=32,
    total_steps=500_000,
    initial_lr=2e-3,
    reduced_lr=1e-4,
    lr_drop_step=200_000,
    l2_coefficient=1e-5,
    seed=0,
)

DESK_SCALE_GNN_TRAIN = TrainConfig(
    batch_size=8,
    total_steps=2_000,
    initial_lr=2e-3,
    reduced_lr=2e-4,
    lr_drop_step=1_500,
    l2_coefficient=1e-6,
    seed=0,
)


@dataclass
class PreparedGraph:
    """Static per-screen inputs cached once so training steps only run the
    differentiable parts."""

    screen_id: str
    node_ids: list[int]
    graph: LayoutGraph
    crops: np.ndarray  # [n, S, S, 3] uint8
    token_ids: list[list[list[int]]]  # per node, per text field
    sinusoids: np.ndarray  # [n, 4, 2K]
    labels: np.ndarray  # [n] class index, -1 where unlabeled
    incidence: np.ndarray  # [n, E]


TYPE_TO_INDEX = {t: i for i, t in enumerate(SEMANTIC_TYPES)}
INDEX_TO_TYPE = {i: t for t, i in TYPE_TO_INDEX.items()}


def prepare_graph(
    screen: Screen,
    hierarchy: ViewHierarchy,
    tokenizer: TokenizerModel,
    config: GnnConfig,
    gold_labels: dict[int, ObjectType] | None = None,
) -> PreparedGraph:
    """Build the cached inputs for one (already preprocessed) screen.

    ``gold_labels`` maps node_id to a semantic type; INVALID is rejected
    here because phase one removes those nodes before type training.
    """
    nodes = hierarchy.preorder()
    graph = build_graph(hierarchy, config.spatial_threshold)
    size = config.feature.crop_size
    crops = np.stack(
        [
            np.clip(bilinear_resize(crop_raster(screen, node.bounds), size, size), 0, 255)
            for node in nodes
        ]
    ).astype(np.uint8)
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
                    f"node {node.node_id} labeled INVALID in type-recognition data; "
                    "invalid nodes must be removed by phase one"
                )
            labels[i] = TYPE_TO_INDEX[gold]
    return PreparedGraph(
        screen_id=screen.source_id,
        node_ids=[node.node_id for node in nodes],
        graph=graph,
        crops=crops,
        token_ids=token_ids,
        sinusoids=sinusoids,
        labels=labels,
        incidence=graph.incidence(),
    )


def _node_sinusoids(node: Node, hierarchy: ViewHierarchy, feature: FeatureConfig) -> np.ndarray:
    box = node.bounds
    coords = (
        box.left / hierarchy.screen_width,
        box.right / hierarchy.screen_width,
        box.top / hierarchy.screen_height,
        box.bottom / hierarchy.screen_height,
    )
    for x in coords:
        if not -0.5 <= x <= 1.5:
            raise ValueError(f"normalized coordinate {x:.3f} outside [-0.5, 1.5]")
    return np.stack([sinusoid_features(x, feature.sinusoid_frequencies) for x in coords])


class MessagePassingTypeModel:
    def __init__(self, tokenizer: TokenizerModel, config: GnnConfig | None = None):
        self.config = config or GnnConfig()
        self.tokenizer = tokenizer
        feature = self.config.feature
        self.store = nn.ParameterStore(np.random.default_rng(self.config.seed))
        self.text = TextEmbedder(self.store, tokenizer, feature)
        self.pos = PositionEmbedder(self.store, feature)
        self.crop = CropEncoder(self.store, feature)
        hidden, msg, ek = self.config.hidden_dim, self.config.message_dim, self.config.edge_kind_dim
        self.edge_kind_table = self.store.trunc_normal("edge_kind.table", (3, ek), fan_in=ek)
        self.init_proj = nn.Dense(self.store, "init_proj", feature.node_dim(), hidden)
        self.message_kernel = nn.Dense(self.store, "message", 2 * hidden + ek, msg)
        self.score_head = nn.Dense(self.store, "attn_score", hidden + msg, 1)
        self.update_kernel = nn.Dense(self.store, "update", hidden + msg, hidden)
        self.readout = nn.Dense(self.store, "readout", hidden, len(SEMANTIC_TYPES), zero_init=True)

    def parameters(self) -> list[nn.Parameter]:
        return self.store.parameters()

    # -- forward pieces ------------------------------------------------------

    def initial_states(self, prepared: PreparedGraph) -> Tensor:
        """h0 per node: [image, text, position] concatenation projected to
        the hidden width."""
        image = self.crop.encode(prepared.crops.astype(np.float64) / 255.0)
        text = self._text_batch(prepared.token_ids)
        pos = self._pos_batch(prepared.sinusoids)
        h0 = nn.concat([image, text, pos], axis=1)
        return self.init_proj(h0)

    def _text_batch(self, token_ids: list[list[list[int]]]) -> Tensor:
        rows = []
        for fields in token_ids:
            pooled = []
            for ids in fields:
                if ids:
                    pooled.append(nn.max_pool_over_sequence(self.text.table.lookup(np.array(ids))))
                else:
                    pooled.append(Tensor(np.zeros(self.config.feature.d_text)))
            rows.append(nn.reshape(nn.concat(pooled, axis=0), (1, -1)))
        return nn.concat(rows, axis=0)

    def _pos_batch(self, sinusoids: np.ndarray) -> Tensor:
        parts = []
        for s, slot in enumerate(PositionEmbedder.SLOTS):
            parts.append(self.pos.dense[slot](Tensor(sinusoids[:, s, :])))
        return nn.concat(parts, axis=1)

    def message_round(
        self,
        states: Tensor,
        prepared: PreparedGraph,
        probe: list | None = None,
    ) -> Tensor:
        """One synchronous round: messages over every directed edge,
        attention pooling per receiving node, shared state update. Nodes
        with no incoming edges pool a zero vector."""
        n = prepared.graph.num_nodes
        n_edges = len(prepared.graph.src)
        if n_edges == 0:
            pooled = Tensor(np.zeros((n, self.config.message_dim)))
            return self._update(states, pooled)
        h_src = nn.gather_rows(states, prepared.graph.src)
        h_dst = nn.gather_rows(states, prepared.graph.dst)
        kinds = nn.gather_rows(self.edge_kind_table.tensor, prepared.graph.kind)
        messages = nn.relu(self.message_kernel(nn.concat([h_src, h_dst, kinds], axis=1)))
        scores = self.score_head(nn.concat([h_dst, messages], axis=1))  # [E, 1]
        # Segment softmax over each node's incoming edges; the global max
        # shift is a constant so it does not disturb gradients.
        shifted = scores - float(scores.data.max())
        exp_scores = nn.exp(shifted)
        incidence = Tensor(prepared.incidence)
        denom = nn.matmul(incidence, exp_scores)  # [N, 1]
        inv = nn.power(nn.gather_rows(denom, prepared.graph.dst), -1.0)
        alpha = exp_scores * inv  # [E, 1]
        if probe is not None:
            probe.append((alpha.data.copy(), prepared.graph.dst.copy(), n))
        pooled = nn.matmul(incidence, messages * alpha)  # [N, msg]
        return self._update(states, pooled)

    def _update(self, states: Tensor, pooled: Tensor) -> Tensor:
        return nn.relu(self.update_kernel(nn.concat([states, pooled], axis=1)))

    def forward(self, prepared: PreparedGraph, probe: list | None = None) -> Tensor:
        states = self.initial_states(prepared)
        for _ in range(self.config.rounds):
            states = self.message_round(states, prepared, probe=probe)
        return self.readout(states)

    # -- inference -----------------------------------------------------------

    def predict(self, prepared: PreparedGraph) -> list[tuple[int, ObjectType, float]]:
        """Per node: (node_id, predicted type, probability)."""
        logits = self.forward(prepared)
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
    def load(cls, path, tokenizer: TokenizerModel) -> "MessagePassingTypeModel":
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "gnn_typer":
            raise nn.CheckpointError(f"{path}: not a graph-typer checkpoint")
        if meta.get("vocab_size") != tokenizer.vocab_size:
            raise nn.CheckpointError(
                f"{path}: tokenizer vocab {tokenizer.vocab_size} does not match "
                f"checkpoint vocab {meta.get('vocab_size')}"
            )
        model = cls(tokenizer, GnnConfig.from_meta(meta))
        model.store.load_state(arrays)
        return model


def train_gnn(
    prepared: Sequence[PreparedGraph],
    tokenizer: TokenizerModel,
    config: GnnConfig | None = None,
    train_config: TrainConfig | None = None,
    log_every: int | None = None,
    stop_at_accuracy: float | None = None,
) -> tuple[MessagePassingTypeModel, list[float]]:
    """Cross-entropy + L2 training over batches of screens; unlabeled nodes
    are masked out of the loss."""
    cfg = train_config or DESK_SCALE_GNN_TRAIN
    model = MessagePassingTypeModel(tokenizer, config)
    optimizer = nn.Adam.single(model.parameters(), cfg)
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
            raise TrainingDiverged(f"graph-typer loss non-finite at step {step}")
        loss.backward()
        optimizer.step(step)
        if log_every and (step + 1) % log_every == 0:
            print(f"  graph typer step {step + 1}/{cfg.total_steps} loss {value:.4f}")
        if stop_at_accuracy is not None and (step + 1) % 50 == 0:
            if training_accuracy(model, labeled) >= stop_at_accuracy:
                break
    return model, losses


def training_accuracy(model: MessagePassingTypeModel, prepared: Sequence[PreparedGraph]) -> float:
    correct = 0
    total = 0
    for p in prepared:
        logits = model.forward(p)
        picks = logits.data.argmax(axis=1)
        mask = p.labels >= 0
        correct += int((picks[mask] == p.labels[mask]).sum())
        total += int(mask.sum())
    return correct / max(total, 1)
