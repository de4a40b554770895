import math

import numpy as np
import pytest

from uiclean import nn
from uiclean.bpe import train_bpe
from uiclean.features import FeatureConfig
from uiclean.hierarchy import ObjectType, SEMANTIC_TYPES
from uiclean.transformer import (
    PAPER_SCALE_BACKBONE_TRAIN,
    PAPER_SCALE_TRANSFORMER,
    PAPER_SCALE_TRANSFORMER_TRAIN,
    PreparedNodes,
    TransformerConfig,
    TransformerTypeModel,
    prepare_nodes,
    train_transformer,
)

from conftest import make_hierarchy, make_node, make_screen, noise_raster


@pytest.fixture(scope="module")
def tokenizer():
    return train_bpe(["android widget Button TextView ok panel"], vocab_size=300)


def _toy_config(**kwargs):
    defaults = dict(
        model_dim=12,
        heads=2,
        mlp_dim=20,
        encoder_layers=1,
        decoder_layers=1,
        input_height=8,
        input_width=8,
        backbone_channels=(6, 12),
        feature=FeatureConfig(d_text=4, d_pos=3, sinusoid_frequencies=2),
        seed=3,
    )
    defaults.update(kwargs)
    return TransformerConfig(**defaults)


def _prepared(rng, tokenizer, config, n=2, labels=None):
    return PreparedNodes(
        screen_id="toy",
        node_ids=list(range(n)),
        token_ids=[[tokenizer.encode_text("android widget Button"), [], []] for _ in range(n)],
        sinusoids=rng.random((n, 4, 4)),
        labels=np.arange(n) if labels is None else np.asarray(labels),
        resized=rng.random((config.input_height, config.input_width, 3)),
    )


def test_config_validation():
    with pytest.raises(ValueError):  # text/pos dims must both equal model_dim
        TransformerConfig(model_dim=12, feature=FeatureConfig(d_text=4, d_pos=4))
    with pytest.raises(ValueError):  # heads must divide model_dim
        _toy_config(heads=5)
    with pytest.raises(ValueError):  # last backbone channels = model_dim
        _toy_config(backbone_channels=(6, 10))
    cfg = TransformerConfig()
    assert cfg.model_dim == 48 and 3 * cfg.feature.d_text == 48 and 4 * cfg.feature.d_pos == 48


def test_encoding_shape_is_patches_by_model_dim(rng, tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    enc = model.encode_screen(rng.random((8, 8, 3)))
    assert config.grid == (2, 2)
    assert enc.patches.shape == (4, 12)


def test_identical_screens_identical_encodings(rng, tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    image = rng.random((8, 8, 3))
    a = model.encode_screen(image)
    b = model.encode_screen(image)
    assert np.array_equal(a.patches.data, b.patches.data)


def test_single_node_decodes(rng, tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    prepared = _prepared(rng, tokenizer, config, n=1)
    logits = model.forward(prepared)
    assert logits.shape == (1, len(SEMANTIC_TYPES))


def test_zero_nodes_valid_empty_output(rng, tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    prepared = PreparedNodes(
        screen_id="empty", node_ids=[], token_ids=[], sinusoids=np.zeros((0, 4, 4)),
        labels=np.zeros(0, dtype=np.int64), resized=rng.random((8, 8, 3)),
    )
    logits = model.forward(prepared)
    assert logits.shape == (0, len(SEMANTIC_TYPES))
    assert model.predict(prepared) == []


def test_node_order_permutation_equivariance(rng, tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    model.readout.w.data = 0.3 * rng.standard_normal(model.readout.w.shape)
    n = 5
    prepared = _prepared(rng, tokenizer, config, n=n, labels=np.zeros(n, dtype=int))
    for i in range(n):  # distinct text per node
        prepared.token_ids[i] = [tokenizer.encode_text(f"w{i} Button"), [], []]
    logits = model.forward(prepared).data
    perm = np.array([3, 1, 4, 0, 2])
    permuted = PreparedNodes(
        screen_id="perm",
        node_ids=[prepared.node_ids[i] for i in perm],
        token_ids=[prepared.token_ids[i] for i in perm],
        sinusoids=prepared.sinusoids[perm],
        labels=prepared.labels[perm],
        resized=prepared.resized,
    )
    permuted_logits = model.forward(permuted).data
    assert np.abs(permuted_logits - logits[perm]).max() < 1e-5


def test_attention_rows_sum_to_one_everywhere(rng, tokenizer):
    config = _toy_config(encoder_layers=2, decoder_layers=2)
    model = TransformerTypeModel(tokenizer, config)
    prepared = _prepared(rng, tokenizer, config, n=3)
    probe = []
    model.forward(prepared, probe=probe)
    # 2 encoder self + 2 x (decoder self + cross) = 6 attention calls
    assert len(probe) == 6
    for weights in probe:
        assert np.abs(weights.sum(axis=-1) - 1.0).max() < 1e-6


def test_cross_attention_consumes_screen(rng, tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    model.readout.w.data = 0.3 * rng.standard_normal(model.readout.w.shape)
    prepared = _prepared(rng, tokenizer, config, n=2)
    enc = model.encode_screen(prepared.resized)
    logits = model.decode_types(prepared, enc).data
    zeroed = type(enc)(patches=nn.Tensor(np.zeros_like(enc.patches.data)), grid=enc.grid)
    logits_blank = model.decode_types(prepared, zeroed).data
    assert not np.allclose(logits, logits_blank)


def test_init_loss_near_log_24(rng, tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    prepared = _prepared(rng, tokenizer, config, n=4, labels=np.array([0, 5, 11, 23]))
    loss = nn.cross_entropy(model.forward(prepared), prepared.labels)
    assert loss.item() == pytest.approx(math.log(24), abs=0.2)


def test_invalid_label_rejected(rng, tokenizer):
    config = _toy_config()
    h = make_hierarchy(
        make_node((0, 0, 100, 100), children=[make_node((10, 10, 60, 60))], android_class="root"),
        100, 100,
    )
    screen = make_screen(h, noise_raster(rng, 100, 100))
    with pytest.raises(ValueError):
        prepare_nodes(screen, h, tokenizer, config, {1: ObjectType.INVALID})


def test_train_schedules_must_align(rng, tokenizer):
    from uiclean.nn import TrainConfig

    config = _toy_config()
    prepared = _prepared(rng, tokenizer, config, n=2)
    main = TrainConfig(batch_size=2, total_steps=10, initial_lr=1e-3, reduced_lr=1e-4, lr_drop_step=5)
    backbone = TrainConfig(batch_size=4, total_steps=10, initial_lr=1e-3, reduced_lr=1e-4, lr_drop_step=5)
    with pytest.raises(ValueError):
        train_transformer([prepared], tokenizer, config, main, backbone)


def test_backbone_parameters_partition(tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    backbone = {p.name for p in model.backbone_parameters()}
    other = {p.name for p in model.other_parameters()}
    assert backbone.isdisjoint(other)
    assert backbone | other == {p.name for p in model.parameters()}
    assert all(name.startswith("backbone.") for name in backbone)


def test_paper_scale_reference_recorded():
    assert PAPER_SCALE_TRANSFORMER["model_dim"] == 256
    assert PAPER_SCALE_TRANSFORMER["mlp_dim"] == 2048
    assert PAPER_SCALE_TRANSFORMER["heads"] == 8
    assert PAPER_SCALE_TRANSFORMER["encoder_layers"] == 6
    assert PAPER_SCALE_TRANSFORMER["decoder_layers"] == 6
    assert PAPER_SCALE_TRANSFORMER_TRAIN.batch_size == 128
    assert PAPER_SCALE_TRANSFORMER_TRAIN.total_steps == 15_000
    assert PAPER_SCALE_TRANSFORMER_TRAIN.initial_lr == 1e-4
    assert PAPER_SCALE_BACKBONE_TRAIN.initial_lr == 6e-5
    # both rates drop tenfold after 5k steps
    assert PAPER_SCALE_TRANSFORMER_TRAIN.reduced_lr == pytest.approx(1e-5)
    assert PAPER_SCALE_BACKBONE_TRAIN.reduced_lr == pytest.approx(6e-6)
    assert PAPER_SCALE_TRANSFORMER_TRAIN.lr_drop_step == 5_000


def test_save_load_roundtrip(tmp_path, rng, tokenizer):
    config = _toy_config()
    model = TransformerTypeModel(tokenizer, config)
    prepared = _prepared(rng, tokenizer, config, n=2)
    before = model.forward(prepared).data
    path = tmp_path / "tf.ckpt"
    model.save(path)
    loaded = TransformerTypeModel.load(path, tokenizer)
    after = loaded.forward(prepared).data
    assert np.abs(before - after).max() < 1e-5
