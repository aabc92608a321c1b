"""Upstream image/audio fusion.

    F  = repeat_K(normalize01(channel_mean(F0)))
    V  = audio rows: every row hit by an event window holds G * P_k on class slice k
    M  = 1 on the feature cells of the detected box, 0 elsewhere
    mF = F * (1 + V) * M

All class feature tensors are numpy arrays of shape (K, H, W): class slice,
then row (time axis), then column.
"""
from __future__ import annotations

import math
from typing import List, Optional, Sequence

import numpy as np

from .audio_synth import AudioEvent
from .errors import InvalidBoxError, InvalidWindowError, ShapeMismatchError
from .scene import BoundingBox, Scene, box_cells

# (K, H, W) float array
ClassFeatureTensor = np.ndarray

# slack for t / dT landing a rounding error below a row boundary
_QUANT_EPS = 1e-9


def squeeze_features(raw: np.ndarray) -> np.ndarray:
    """Channel mean of a (C, H, W) feature tensor."""
    if raw.ndim != 3 or raw.shape[0] < 1:
        raise ShapeMismatchError(f"expected a (C, H, W) tensor with C >= 1, got {raw.shape}")
    return raw.astype(np.float64).mean(axis=0)


def normalize01(fmap: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant map carries no signal and becomes zeros."""
    fmap = np.asarray(fmap, dtype=np.float64)
    lo, hi = fmap.min(), fmap.max()
    if hi == lo:
        return np.zeros_like(fmap)
    return (fmap - lo) / (hi - lo)


def repeat_k(fmap: np.ndarray, k: int) -> ClassFeatureTensor:
    if k < 1:
        raise ValueError(f"K must be at least 1, got {k}")
    return np.repeat(np.asarray(fmap, dtype=np.float64)[None, :, :], k, axis=0)


def image_features(raw: np.ndarray, k: int) -> ClassFeatureTensor:
    return repeat_k(normalize01(squeeze_features(raw)), k)


def quantize_window(t_start: float, t_end: float, duration: float, height: int) -> List[int]:
    """1-based feature rows { floor(t / dT) + 1 : t in [t_start, t_end] }, clamped to [1, H]."""
    if not (0.0 <= t_start < t_end <= duration):
        raise InvalidWindowError(f"window [{t_start}, {t_end}] not inside [0, {duration}]")
    dt = duration / height
    first = int(math.floor(t_start / dt + _QUANT_EPS)) + 1
    last = int(math.floor(t_end / dt + _QUANT_EPS)) + 1
    first, last = min(max(first, 1), height), min(max(last, 1), height)
    return list(range(first, last + 1))


def weighted_peak(peak: float, probabilities: Sequence[float]) -> np.ndarray:
    return peak * np.asarray(probabilities, dtype=np.float64)


def build_audio_tensor(events: Sequence[AudioEvent], k: int, width: int, height: int, duration: float) -> ClassFeatureTensor:
    """Audio tensor V; overlapping events combine by cellwise maximum."""
    v = np.zeros((k, height, width))
    for event in events:
        if len(event.probabilities) != k:
            raise ShapeMismatchError(f"event has {len(event.probabilities)} class probabilities, expected {k}")
        rows = np.asarray(quantize_window(event.t_start, event.t_end, duration, height)) - 1
        gp = weighted_peak(event.peak, event.probabilities)
        band = np.broadcast_to(gp[:, None, None], (k, len(rows), width))
        v[:, rows, :] = np.maximum(v[:, rows, :], band)
    return v


def build_mask(box: BoundingBox, image_width: float, image_height: float, width: int, height: int, k: int = 1) -> ClassFeatureTensor:
    """Binary mask M of the cells whose centre falls inside the box scaled to the grid."""
    if box.area <= 0:
        raise InvalidBoxError(f"degenerate box {box.to_list()}")
    if not box.within(image_width, image_height):
        raise InvalidBoxError(f"box {box.to_list()} leaves the {image_width}x{image_height} image")
    cells = box_cells(box, image_width, image_height, width, height).astype(np.float64)
    return np.repeat(cells[None, :, :], k, axis=0)


def fuse(f: ClassFeatureTensor, v: ClassFeatureTensor, m: ClassFeatureTensor) -> ClassFeatureTensor:
    if not (f.shape == v.shape == m.shape):
        raise ShapeMismatchError(f"fuse: shapes F {f.shape}, V {v.shape}, M {m.shape} differ")
    return f * (1.0 + v) * m


def fuse_box(scene: Scene, box: BoundingBox, k: int, features: Optional[ClassFeatureTensor] = None, audio: Optional[ClassFeatureTensor] = None) -> ClassFeatureTensor:
    """mF for one detected box of a scene; F and V may be passed in when reused across boxes."""
    layer = scene.layer
    f = image_features(scene.features, k) if features is None else features
    v = build_audio_tensor(scene.events, k, layer.width, layer.height, scene.duration) if audio is None else audio
    m = build_mask(box, scene.image_width, scene.image_height, layer.width, layer.height, k)
    return fuse(f, v, m)
