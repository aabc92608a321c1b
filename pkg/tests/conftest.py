import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

import numpy as np
import pytest

from src.config import RunConfig
from src.scene import DEFAULT_TAXONOMY, SceneGenConfig
from src.vit import ViTConfig


class StubRng:
    """Stand-in generator: `uniform(lo, hi)` returns lo + u * (hi - lo) for scripted u values."""

    def __init__(self, fractions):
        self.fractions = list(fractions)

    def uniform(self, lo=0.0, hi=1.0):
        u = self.fractions.pop(0)
        return lo + u * (hi - lo)


@pytest.fixture
def taxonomy():
    return DEFAULT_TAXONOMY


@pytest.fixture
def stub_rng():
    return StubRng


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_scene_config():
    return SceneGenConfig(num_scenes=12, boxes_per_scene=(1, 2))


@pytest.fixture
def tiny_vit_config():
    return ViTConfig(patch_size=4, num_heads=2, embed_dim=8, depth=1, mlp_ratio=2, learning_rate=1e-3, max_epochs=3, patience=3, batch_size=8, seed=5)


@pytest.fixture
def tiny_run_config(tmp_path):
    cfg = RunConfig(seed=11, dataset_dir=str(tmp_path / 'data'), output_dir=str(tmp_path / 'reports'))
    cfg.scene.num_scenes = 16
    cfg.scene.boxes_per_scene = (1, 2)
    cfg.scene.ambiguity = 0.6
    cfg.vit = ViTConfig(patch_size=4, num_heads=2, embed_dim=8, depth=1, learning_rate=1e-3, max_epochs=2, patience=2, batch_size=16)
    return cfg
