import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

import numpy as np
import pytest

import src.vit as vit
from src.errors import ConfigError, EmptyDatasetError, LabelError, NonFiniteError, ShapeMismatchError, TrainingDivergedError
from src.tensor import cross_entropy, gradient_check
from src.vit import ViTConfig, ViTModel, accuracy, classify, forward, patchify, train, unpatchify


def _separable(n_per_class, k=3, size=8, noise=0.05, seed=0):
    rng = np.random.default_rng(seed)
    x, y = [], []
    for c in range(k):
        for _ in range(n_per_class):
            sample = rng.uniform(0.0, noise, size=(k, size, size))
            sample[c] += 1.0
            x.append(sample)
            y.append(c)
    return np.stack(x), np.array(y)


def test_patchify_layout():
    x = np.arange(16.0).reshape(1, 4, 4)
    tokens = patchify(x, 2)
    assert tokens.shape == (4, 4)
    assert tokens[0].tolist() == [0.0, 1.0, 4.0, 5.0]
    assert tokens[1].tolist() == [2.0, 3.0, 6.0, 7.0]
    assert tokens[2].tolist() == [8.0, 9.0, 12.0, 13.0]


def test_unpatchify_inverts_patchify(rng):
    x = rng.normal(size=(3, 20, 20))
    assert np.array_equal(unpatchify(patchify(x, 4), 3, 20, 20, 4), x)
    with pytest.raises(ShapeMismatchError):
        patchify(rng.normal(size=(3, 10, 10)), 4)


def test_config_validation():
    with pytest.raises(ConfigError):
        ViTConfig(embed_dim=10, num_heads=4).validate()
    with pytest.raises(ConfigError):
        ViTConfig(activation="swish").validate()
    with pytest.raises(ConfigError):
        ViTModel(ViTConfig(patch_size=3), 3, 20, 20)
    with pytest.raises(ConfigError):
        ViTConfig(learning_rate=0.0).validate()
    ViTConfig().validate(20, 20)


def test_model_shapes_and_token_count(tiny_vit_config, rng):
    model = ViTModel(tiny_vit_config, 3, 20, 20)
    assert model.num_tokens == 26
    assert model.params["pos_embed"].data.shape == (1, 26, 8)
    logits, probs = forward(model, rng.uniform(size=(3, 20, 20)))
    assert logits.shape == (3,) and probs.shape == (3,)
    assert probs.sum() == pytest.approx(1.0)
    assert model.predict_proba(rng.uniform(size=(5, 3, 20, 20)), batch_size=2).shape == (5, 3)
    assert model.predict_proba(np.zeros((0, 3, 20, 20))).shape == (0, 3)
    with pytest.raises(ShapeMismatchError):
        model.logits(rng.uniform(size=(2, 3, 16, 16)))


def test_classify_is_argmax_against_target(tiny_vit_config, rng):
    model = ViTModel(tiny_vit_config, 3, 20, 20)
    fused = rng.uniform(size=(3, 20, 20))
    positive, probs = classify(model, fused, int(np.argmax(forward(model, fused)[1])))
    assert positive
    other = (int(np.argmax(probs)) + 1) % 3
    assert not classify(model, fused, other)[0]


def test_model_init_is_seeded(tiny_vit_config):
    a = ViTModel(tiny_vit_config, 3, 20, 20).state_dict()
    b = ViTModel(tiny_vit_config, 3, 20, 20).state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[name], b[name]) for name in a)


def test_state_dict_round_trip(tiny_vit_config, rng):
    model = ViTModel(tiny_vit_config, 3, 20, 20)
    state = {name: value + 1.0 for name, value in model.state_dict().items()}
    model.load_state_dict(state)
    assert np.array_equal(model.params["head.w"].data, state["head.w"])
    state.pop("head.b")
    with pytest.raises(KeyError):
        model.load_state_dict(state)


def test_full_model_gradient_check():
    cfg = ViTConfig(patch_size=4, num_heads=2, embed_dim=8, depth=1, init_std=0.5, seed=3)
    model = ViTModel(cfg, 3, 8, 8)
    x, y = _separable(1, size=8, noise=1.0, seed=2)

    def loss():
        return cross_entropy(model.logits(x), y)

    assert gradient_check(loss, model.parameters(), max_entries=12) < 1e-3


def test_training_separates_classes():
    x, y = _separable(16)
    cfg = ViTConfig(patch_size=4, num_heads=2, embed_dim=16, depth=1, learning_rate=1e-2, max_epochs=100, patience=100, batch_size=16, seed=1)
    model, report = train(ViTModel(cfg, 3, 8, 8), x, y)
    assert max(report.train_acc) >= 0.95
    assert accuracy(model, x, y) >= 0.9
    assert report.train_loss[-1] < report.train_loss[0]


def test_early_stopping_restores_best_epoch():
    x, y = _separable(4)
    cfg = ViTConfig(patch_size=4, num_heads=2, embed_dim=8, depth=1, learning_rate=1e-9, max_epochs=50, patience=2, batch_size=4)
    model, report = train(ViTModel(cfg, 3, 8, 8), x, y, x, y)
    assert report.best_epoch == 1
    assert report.stopping_epoch == 3
    frame = report.to_frame()
    assert list(frame.columns) == ["epoch", "train_acc", "val_acc", "loss", "val_loss"]
    assert frame["epoch"].tolist() == [1, 2, 3]


def test_training_is_deterministic(tiny_vit_config):
    x, y = _separable(4, size=20)
    _, first = train(ViTModel(tiny_vit_config, 3, 20, 20), x, y)
    _, second = train(ViTModel(tiny_vit_config, 3, 20, 20), x, y)
    assert first == second


def test_training_errors(tiny_vit_config):
    model = ViTModel(tiny_vit_config, 3, 20, 20)
    with pytest.raises(EmptyDatasetError):
        train(model, np.zeros((0, 3, 20, 20)), [])
    with pytest.raises(LabelError):
        train(model, np.zeros((2, 3, 20, 20)), [0, 3])


def test_non_finite_loss_reports_divergence(tiny_vit_config, monkeypatch):
    def exploding(logits, labels):
        raise NonFiniteError("loss overflowed")

    monkeypatch.setattr(vit, "cross_entropy", exploding)
    with pytest.raises(TrainingDivergedError):
        train(ViTModel(tiny_vit_config, 3, 20, 20), np.zeros((2, 3, 20, 20)), [0, 1])


def test_patchify_shapes_for_layer_presets(rng):
    assert patchify(rng.uniform(size=(3, 20, 20)), 4).shape == (25, 48)
    tokens = patchify(np.full((3, 20, 20), 0.5), 4)
    assert (tokens == tokens[0]).all()
    assert ViTModel(ViTConfig(embed_dim=8, num_heads=2, depth=1), 3, 40, 40).num_tokens == 101


def test_forward_is_sensitive_to_class_slices(tiny_vit_config, rng):
    model = ViTModel(tiny_vit_config, 3, 20, 20)
    fused = rng.uniform(size=(3, 20, 20))
    swapped = fused[[1, 0, 2]]
    logits, probs = forward(model, fused)
    assert np.all(np.isfinite(logits))
    assert abs(probs.sum() - 1.0) < 1e-9
    assert not np.allclose(logits, forward(model, swapped)[0])
