"""Toy Vision Transformer over fused (K, H, W) class feature tensors.

Pre-norm encoder: patch embedding, learned class token and positional table,
`depth` blocks of multi-head self-attention + MLP, a final layer norm and a
linear head on the class token. Built on `src.tensor`, trained with Adam on
cross-entropy, double precision throughout.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyDatasetError, LabelError, NonFiniteError, ShapeMismatchError, TrainingDivergedError
from .tensor import (
    AdamState,
    Tensor,
    adam_step,
    backward,
    concat,
    cross_entropy,
    gelu,
    layer_norm,
    parameter,
    relu,
    softmax,
)

logger = logging.getLogger(__name__)

ACTIVATIONS = {"gelu": gelu, "relu": relu}


@dataclass
class ViTConfig:
    patch_size: int = 4
    num_heads: int = 4
    embed_dim: int = 64
    depth: int = 4
    mlp_ratio: int = 2
    learning_rate: float = 1e-6
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    activation: str = "gelu"
    init_std: float = 0.02
    seed: int = 0

    def validate(self, height: Optional[int] = None, width: Optional[int] = None) -> None:
        if self.patch_size < 1 or self.num_heads < 1 or self.depth < 0 or self.mlp_ratio < 1:
            raise ConfigError(f"invalid ViT configuration {self}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("learning_rate, max_epochs, batch_size and patience must be positive")
        if height is not None and (height % self.patch_size or width % self.patch_size):
            raise ConfigError(f"a {height}x{width} map is not divisible into {self.patch_size}-wide patches")


def patchify(x: np.ndarray, patch_size: int) -> np.ndarray:
    """(K, H, W) -> (H/p * W/p, K*p*p); patches row-major, each flattened channel-major."""
    return patchify_batch(np.asarray(x)[None], patch_size)[0]


def patchify_batch(x: np.ndarray, patch_size: int) -> np.ndarray:
    b, k, h, w = x.shape
    p = patch_size
    if h % p or w % p:
        raise ShapeMismatchError(f"a {h}x{w} map is not divisible into {p}-wide patches")
    grid = x.reshape(b, k, h // p, p, w // p, p).transpose(0, 2, 4, 1, 3, 5)
    return grid.reshape(b, (h // p) * (w // p), k * p * p)


def unpatchify(tokens: np.ndarray, num_classes: int, height: int, width: int, patch_size: int) -> np.ndarray:
    p = patch_size
    grid = tokens.reshape(height // p, width // p, num_classes, p, p)
    return grid.transpose(2, 0, 3, 1, 4).reshape(num_classes, height, width)


class ViTModel:
    """Parameters and forward pass of the classifier."""

    def __init__(self, config: ViTConfig, num_classes: int, height: int, width: int):
        config.validate(height, width)
        self.config = config
        self.num_classes = num_classes
        self.height, self.width = height, width
        self.num_patches = (height // config.patch_size) * (width // config.patch_size)
        self.params: Dict[str, Tensor] = {}
        rng = np.random.default_rng(config.seed)
        d = config.embed_dim
        hidden = d * config.mlp_ratio
        patch_dim = num_classes * config.patch_size**2

        def weight(name: str, *shape: int) -> None:
            self.params[name] = parameter(rng.normal(0.0, config.init_std, size=shape))

        def const(name: str, value: float, *shape: int) -> None:
            self.params[name] = parameter(np.full(shape, value))

        weight("patch.w", patch_dim, d)
        const("patch.b", 0.0, d)
        weight("cls_token", 1, 1, d)
        weight("pos_embed", 1, self.num_tokens, d)
        for i in range(config.depth):
            const(f"block{i}.ln1.g", 1.0, d)
            const(f"block{i}.ln1.b", 0.0, d)
            weight(f"block{i}.qkv.w", d, 3 * d)
            const(f"block{i}.qkv.b", 0.0, 3 * d)
            weight(f"block{i}.proj.w", d, d)
            const(f"block{i}.proj.b", 0.0, d)
            const(f"block{i}.ln2.g", 1.0, d)
            const(f"block{i}.ln2.b", 0.0, d)
            weight(f"block{i}.fc1.w", d, hidden)
            const(f"block{i}.fc1.b", 0.0, hidden)
            weight(f"block{i}.fc2.w", hidden, d)
            const(f"block{i}.fc2.b", 0.0, d)
        const("norm.g", 1.0, d)
        const("norm.b", 0.0, d)
        weight("head.w", d, num_classes)
        const("head.b", 0.0, num_classes)

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name!r}")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ShapeMismatchError(f"{name}: checkpoint {value.shape} vs model {p.data.shape}")
            p.data[...] = value

    def _attention(self, x: Tensor, i: int) -> Tensor:
        b, t, d = x.shape
        heads = self.config.num_heads
        dh = d // heads
        P = self.params
        qkv = x @ P[f"block{i}.qkv.w"] + P[f"block{i}.qkv.b"]
        qkv = qkv.reshape(b, t, 3, heads, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv.select(0, 0), qkv.select(0, 1), qkv.select(0, 2)
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        out = softmax(scores, axis=-1) @ v
        out = out.transpose(0, 2, 1, 3).reshape(b, t, d)
        return out @ P[f"block{i}.proj.w"] + P[f"block{i}.proj.b"]

    def logits(self, batch: np.ndarray) -> Tensor:
        """Logits (B, K) for a batch of fused tensors (B, K, H, W)."""
        batch = np.asarray(batch, dtype=np.float64)
        expected = (self.num_classes, self.height, self.width)
        if batch.ndim != 4 or batch.shape[1:] != expected:
            raise ShapeMismatchError(f"expected a batch of {expected} tensors, got {batch.shape}")
        P = self.params
        act = ACTIVATIONS[self.config.activation]
        b = batch.shape[0]
        tokens = Tensor(patchify_batch(batch, self.config.patch_size))
        x = tokens @ P["patch.w"] + P["patch.b"]
        cls = P["cls_token"].broadcast_to((b, 1, self.config.embed_dim))
        x = concat([cls, x], axis=1) + P["pos_embed"]
        for i in range(self.config.depth):
            x = x + self._attention(layer_norm(x, P[f"block{i}.ln1.g"], P[f"block{i}.ln1.b"]), i)
            y = layer_norm(x, P[f"block{i}.ln2.g"], P[f"block{i}.ln2.b"])
            y = act(y @ P[f"block{i}.fc1.w"] + P[f"block{i}.fc1.b"])
            x = x + y @ P[f"block{i}.fc2.w"] + P[f"block{i}.fc2.b"]
        x = layer_norm(x, P["norm.g"], P["norm.b"]).select(1, 0)
        return x @ P["head.w"] + P["head.b"]

    def predict_proba(self, batch: np.ndarray, batch_size: int = 256) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        out = []
        for start in range(0, batch.shape[0], batch_size):
            out.append(softmax(self.logits(batch[start : start + batch_size]), axis=-1).data)
        if not out:
            return np.zeros((0, self.num_classes))
        return np.concatenate(out, axis=0)

    def predict(self, batch: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return self.predict_proba(batch, batch_size).argmax(axis=1)


def forward(model: ViTModel, fused: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Logits and class probabilities for one (K, H, W) tensor."""
    logits = model.logits(np.asarray(fused)[None])
    return logits.data[0].copy(), softmax(logits, axis=-1).data[0].copy()


def classify(model: ViTModel, fused: np.ndarray, target_class: int) -> Tuple[bool, np.ndarray]:
    """One-against-all reading: positive iff the argmax class is `target_class`."""
    _, probs = forward(model, fused)
    return int(np.argmax(probs)) == target_class, probs


@dataclass
class TrainReport:
    train_acc: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "epoch": np.arange(1, self.stopping_epoch + 1),
                "train_acc": self.train_acc,
                "val_acc": self.val_acc,
                "loss": self.train_loss,
                "val_loss": self.val_loss,
            }
        )


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    return labels


def _evaluate(model: ViTModel, x: np.ndarray, y: np.ndarray, batch_size: int) -> Tuple[float, float]:
    total_loss, correct = 0.0, 0
    for start in range(0, len(y), batch_size):
        logits = model.logits(x[start : start + batch_size])
        yb = y[start : start + batch_size]
        total_loss += cross_entropy(logits, yb).item() * len(yb)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return correct / len(y), total_loss / len(y)


def train(
    model: ViTModel,
    train_x: np.ndarray,
    train_y: Sequence[int],
    val_x: Optional[np.ndarray] = None,
    val_y: Optional[Sequence[int]] = None,
    config: Optional[ViTConfig] = None,
) -> Tuple[ViTModel, TrainReport]:
    """Mini-batch Adam on cross-entropy with early stopping on validation accuracy.

    The parameters of the best validation epoch are restored at the end.
    Without a validation set the running training accuracy drives stopping.
    """
    config = config or model.config
    config.validate()
    train_x = np.asarray(train_x, dtype=np.float64)
    train_y = _check_labels(train_y, model.num_classes)
    if len(train_y) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    has_val = val_x is not None and val_y is not None and len(val_y) > 0
    if has_val:
        val_x = np.asarray(val_x, dtype=np.float64)
        val_y = _check_labels(val_y, model.num_classes)

    params = model.parameters()
    state = AdamState.for_parameters(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])
    report = TrainReport()
    best_acc, best_state, wait = -1.0, model.state_dict(), 0
    n = len(train_y)

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss, correct = 0.0, 0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                logits = model.logits(train_x[idx])
                loss = cross_entropy(logits, train_y[idx])
                grads = backward(loss, params)
                adam_step(params, grads, state)
                epoch_loss += loss.item() * len(idx)
                correct += int((logits.data.argmax(axis=1) == train_y[idx]).sum())
            val_acc, val_loss = _evaluate(model, val_x, val_y, 256) if has_val else (correct / n, epoch_loss / n)
        except NonFiniteError as exc:
            raise TrainingDivergedError(f"training diverged in epoch {epoch}: {exc}") from exc

        report.train_acc.append(correct / n)
        report.train_loss.append(epoch_loss / n)
        report.val_acc.append(val_acc)
        report.val_loss.append(val_loss)
        report.stopping_epoch = epoch
        logger.debug("epoch %d: loss %.4f train_acc %.4f val_acc %.4f", epoch, epoch_loss / n, correct / n, val_acc)

        if val_acc > best_acc:
            best_acc, best_state, wait = val_acc, model.state_dict(), 0
            report.best_epoch = epoch
        else:
            wait += 1
            if wait >= config.patience:
                logger.info("early stop at epoch %d (best %d, val_acc %.4f)", epoch, report.best_epoch, best_acc)
                break

    model.load_state_dict(best_state)
    return model, report


def accuracy(model: ViTModel, x: np.ndarray, y: Sequence[int]) -> float:
    y = np.asarray(y)
    return float((model.predict(x) == y).mean()) if len(y) else 0.0
