"""Finite-difference gradient checks over every trainable module, at toy
shapes. Used by the ``gradcheck`` CLI subcommand and the acceptance suite.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import nn
from .bpe import train_bpe
from .detector import DetectorConfig, InvalidObjectDetector
from .features import CropEncoder, FeatureConfig, PositionEmbedder
from .geometry import BoundingBox
from .gnn import GnnConfig, LayoutGraph, MessagePassingTypeModel, PreparedGraph
from .nn import Tensor
from .nn.gradcheck import finite_difference_check
from .transformer import PreparedNodes, TransformerConfig, TransformerTypeModel

TOLERANCE = 1e-4


def _toy_tokenizer():
    return train_bpe(["android widget Button text input view image"], vocab_size=260)


def _random_probe(rng: np.random.Generator, shape) -> np.ndarray:
    return np.asarray(rng.standard_normal(shape))


def run_gradient_suite(seed: int = 0, verbose: bool = False) -> list[tuple[str, float]]:
    """Each entry: (check name, max relative error vs central differences)."""
    rng = np.random.default_rng(seed)
    results: list[tuple[str, float]] = []

    def run(name: str, fn: Callable[[], float]) -> None:
        start = time.time()
        err = fn()
        if verbose:
            status = "ok" if err < TOLERANCE else "FAIL"
            print(f"  {name:<28} max rel err {err:.3e}  [{status}] ({time.time() - start:.1f}s)")
        results.append((name, err))

    run("dense", lambda: _check_dense(rng))
    run("conv2d", lambda: _check_conv(rng))
    run("max_pool2d", lambda: _check_maxpool(rng))
    run("layer_norm", lambda: _check_layernorm(rng))
    run("softmax_cross_entropy", lambda: _check_ce(rng))
    run("bce_with_logits", lambda: _check_bce(rng))
    run("multi_head_attention", lambda: _check_attention(rng))
    run("embedding_max_pool", lambda: _check_embedding(rng))
    run("position_embedder", lambda: _check_position(rng))
    run("crop_encoder", lambda: _check_crop_encoder(rng))
    run("detector_cnn", lambda: _check_detector(rng))
    run("gnn_full_step", lambda: _check_gnn(rng))
    run("transformer_enc_dec", lambda: _check_transformer(rng))
    return results


def _check_dense(rng) -> float:
    store = nn.ParameterStore(rng)
    layer = nn.Dense(store, "fc", 5, 4)
    x = _random_probe(rng, (3, 5))
    probe = _random_probe(rng, (3, 4))
    return finite_difference_check(
        lambda: nn.sum_(layer(Tensor(x)) * Tensor(probe)), store.parameters()
    )


def _check_conv(rng) -> float:
    store = nn.ParameterStore(rng)
    conv = nn.Conv2d(store, "conv", 2, 3, kernel=3, stride=2)
    x = store.trunc_normal("x", (2, 5, 6, 2), fan_in=1)
    return finite_difference_check(
        lambda: nn.sum_(nn.mul(conv(x.tensor), conv(x.tensor))), store.parameters()
    )


def _check_maxpool(rng) -> float:
    store = nn.ParameterStore(rng)
    x = store.trunc_normal("x", (1, 4, 6, 2), fan_in=1)
    probe = _random_probe(rng, (1, 2, 3, 2))
    return finite_difference_check(
        lambda: nn.sum_(nn.max_pool2d(x.tensor, 2) * Tensor(probe)), store.parameters()
    )


def _check_layernorm(rng) -> float:
    store = nn.ParameterStore(rng)
    ln = nn.LayerNorm(store, "ln", 6)
    x = store.trunc_normal("x", (4, 6), fan_in=1)
    probe = _random_probe(rng, (4, 6))
    return finite_difference_check(
        lambda: nn.sum_(nn.relu(ln(x.tensor)) * Tensor(probe)), store.parameters()
    )


def _check_ce(rng) -> float:
    store = nn.ParameterStore(rng)
    layer = nn.Dense(store, "fc", 4, 5)
    x = _random_probe(rng, (6, 4))
    labels = np.array([0, 1, 2, 3, 4, 0])
    mask = np.array([1, 1, 1, 1, 0, 1], dtype=bool)
    return finite_difference_check(
        lambda: nn.cross_entropy(layer(Tensor(x)), labels, mask=mask), store.parameters()
    )


def _check_bce(rng) -> float:
    store = nn.ParameterStore(rng)
    layer = nn.Dense(store, "fc", 4, 1)
    x = _random_probe(rng, (6, 4))
    targets = np.array([0.0, 1, 1, 0, 1, 0])
    return finite_difference_check(
        lambda: nn.bce_with_logits(nn.reshape(layer(Tensor(x)), (6,)), targets),
        store.parameters(),
    )


def _check_attention(rng) -> float:
    store = nn.ParameterStore(rng)
    wq = nn.Dense(store, "wq", 6, 6)
    wk = nn.Dense(store, "wk", 6, 6)
    wv = nn.Dense(store, "wv", 6, 6)
    x = _random_probe(rng, (3, 6))
    ctx = _random_probe(rng, (4, 6))
    probe = _random_probe(rng, (3, 6))

    def loss():
        out = nn.multi_head_attention(wq(Tensor(x)), wk(Tensor(ctx)), wv(Tensor(ctx)), heads=2)
        return nn.sum_(out * Tensor(probe))

    return finite_difference_check(loss, store.parameters())


def _check_embedding(rng) -> float:
    store = nn.ParameterStore(rng)
    table = nn.Embedding(store, "emb", 11, 5)
    ids = np.array([1, 4, 4, 9])
    probe = _random_probe(rng, (5,))

    def loss():
        pooled = nn.max_pool_over_sequence(table.lookup(ids))
        return nn.sum_(pooled * Tensor(probe))

    return finite_difference_check(loss, store.parameters())


def _check_position(rng) -> float:
    store = nn.ParameterStore(rng)
    embedder = PositionEmbedder(store, FeatureConfig(d_pos=4, sinusoid_frequencies=3))
    box = BoundingBox(10, 20, 90, 160)
    probe = _random_probe(rng, (16,))

    def loss():
        return nn.sum_(embedder.embed(box, 100, 200) * Tensor(probe))

    return finite_difference_check(loss, store.parameters())


def _check_crop_encoder(rng) -> float:
    store = nn.ParameterStore(rng)
    encoder = CropEncoder(store, FeatureConfig(crop_size=8, d_image=6))
    crops = rng.random((2, 8, 8, 3))
    probe = _random_probe(rng, (2, 6))

    def loss():
        return nn.sum_(encoder.encode(crops) * Tensor(probe))

    return finite_difference_check(loss, store.parameters())


def _randomize_head(dense, rng) -> None:
    # Classifier heads are zero-initialized; give them weight so gradients
    # reach the layers underneath and the check is not vacuous.
    dense.w.data = 0.3 * rng.standard_normal(dense.w.shape)


def _check_detector(rng) -> float:
    model = InvalidObjectDetector(DetectorConfig(input_height=16, input_width=12, channels=(4, 8), seed=3))
    _randomize_head(model.head, rng)
    batch = rng.random((2, 16, 12, 4))
    targets = np.array([1.0, 0.0])

    def loss():
        return nn.bce_with_logits(model.logits(Tensor(batch)), targets)

    return finite_difference_check(loss, model.parameters(), max_elements_per_param=48, rng=rng)


def _toy_prepared_graph(rng, config: GnnConfig) -> PreparedGraph:
    tok = _toy_tokenizer()
    n = 3
    graph = LayoutGraph(
        num_nodes=n,
        src=np.array([0, 1, 1, 2, 0, 2]),
        dst=np.array([1, 0, 2, 1, 2, 0]),
        kind=np.array([0, 1, 0, 1, 2, 2]),
    )
    size = config.feature.crop_size
    crops = rng.integers(0, 256, size=(n, size, size, 3)).astype(np.uint8)
    token_ids = [[tok.encode_text("android widget Button"), [], tok.encode_text("view")] for _ in range(n)]
    sin = rng.random((n, 4, 2 * config.feature.sinusoid_frequencies))
    return PreparedGraph(
        screen_id="toy",
        node_ids=list(range(n)),
        graph=graph,
        crops=crops,
        token_ids=token_ids,
        sinusoids=sin,
        labels=np.array([0, 1, 2]),
        incidence=graph.incidence(),
    )


def _check_gnn(rng) -> float:
    config = GnnConfig(
        hidden_dim=6,
        message_dim=4,
        rounds=2,
        edge_kind_dim=3,
        feature=FeatureConfig(d_text=4, d_pos=3, d_image=5, sinusoid_frequencies=2, crop_size=8),
        seed=5,
    )
    tok = _toy_tokenizer()
    model = MessagePassingTypeModel(tok, config)
    _randomize_head(model.readout, rng)
    prepared = _toy_prepared_graph(rng, config)

    def loss():
        logits = model.forward(prepared)
        return nn.cross_entropy(logits, prepared.labels)

    return finite_difference_check(loss, model.parameters(), max_elements_per_param=24, rng=rng)


def _check_transformer(rng) -> float:
    config = TransformerConfig(
        model_dim=12,
        heads=2,
        mlp_dim=20,
        encoder_layers=1,
        decoder_layers=1,
        input_height=8,
        input_width=8,
        backbone_channels=(6, 12),  # 8x8 -> 2x2 patch grid
        feature=FeatureConfig(d_text=4, d_pos=3, sinusoid_frequencies=2),
        seed=7,
    )
    tok = _toy_tokenizer()
    model = TransformerTypeModel(tok, config)
    _randomize_head(model.readout, rng)
    prepared = PreparedNodes(
        screen_id="toy",
        node_ids=[0, 1],
        token_ids=[
            [tok.encode_text("android widget Button"), [], []],
            [tok.encode_text("text input"), tok.encode_text("ok"), []],
        ],
        sinusoids=rng.random((2, 4, 4)),
        labels=np.array([3, 5]),
        resized=rng.random((8, 8, 3)),
    )

    def loss():
        logits = model.forward(prepared)
        return nn.cross_entropy(logits, prepared.labels)

    return finite_difference_check(loss, model.parameters(), max_elements_per_param=16, rng=rng)
