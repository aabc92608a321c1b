"""Synthetic dataset collector.

Generates scenes with their analyser events, runs the mock detector over
them and persists / reloads whole datasets. Scene and detector outputs are
kept in a simple in-memory cache keyed by scene id, so repeated evaluation
passes never regenerate anything.
"""
from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

from .audio_synth import synth_scene_events
from .config import RunConfig
from .dataset_io import load_dataset, save_dataset
from .errors import SceneGenerationError
from .scene import STREAM_AUDIO, Detection, Scene, generate_scene, mock_detect, scene_rng

logger = logging.getLogger(__name__)


class SceneDataCollector:
    def __init__(self, config: Optional[RunConfig] = None, enable_cache: bool = True):
        self.config = config or RunConfig()
        self.taxonomy = self.config.taxonomy
        self.enable_cache = enable_cache
        self._cache: Dict[str, object] = {}

    def _cached(self, key: str, func: Callable[[], object]):
        if key in self._cache:
            return self._cache[key]
        result = func()
        if self.enable_cache:
            self._cache[key] = result
        return result

    def generate_scene(self, scene_id: int) -> Scene:
        """One scene with its analyser events; (seed, scene_id) determine it completely."""
        cfg = self.config

        def _build() -> Scene:
            scene = generate_scene(cfg.scene, cfg.seed, scene_id, self.taxonomy)
            rng = scene_rng(cfg.seed, scene_id, STREAM_AUDIO)
            scene.events = synth_scene_events(scene, cfg.audio, rng, self.taxonomy)
            return scene

        return self._cached(f"scene_{scene_id}", _build)

    def generate(self, num_scenes: Optional[int] = None) -> List[Scene]:
        n = self.config.scene.num_scenes if num_scenes is None else num_scenes
        try:
            if self.config.workers > 1:
                with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                    scenes = list(pool.map(self.generate_scene, range(n)))
            else:
                scenes = [self.generate_scene(i) for i in range(n)]
        except SceneGenerationError:
            logger.error("scene placement failed; widen the image or shrink box_size / boxes_per_scene")
            raise
        logger.info("generated %d scenes: %s", n, dict(self.class_counts(scenes)))
        return scenes

    def detect(self, scene: Scene) -> List[Detection]:
        noise = self.config.detector_noise()
        return self._cached(f"detections_{scene.scene_id}", lambda: mock_detect(scene, noise, self.config.seed, self.taxonomy))

    def detections(self, scenes: Sequence[Scene]) -> List[List[Detection]]:
        return [self.detect(scene) for scene in scenes]

    def class_counts(self, scenes: Sequence[Scene]) -> Counter:
        counts = Counter({name: 0 for name in self.taxonomy.names})
        for scene in scenes:
            counts.update(self.taxonomy.name(gt.class_index) for gt in scene.ground_truth)
        return counts

    def provenance(self) -> dict:
        return {"seed": self.config.seed, "config": self.config.to_dict()}

    def save(self, scenes: Sequence[Scene], path: Union[str, Path, None] = None) -> Path:
        path = Path(path or self.config.dataset_dir)
        return save_dataset(scenes, path, self.taxonomy, self.provenance(), self.detections(scenes))

    def load(self, path: Union[str, Path, None] = None) -> List[Scene]:
        """Load a dataset directory and prime the cache with its stored detections."""
        path = Path(path or self.config.dataset_dir)
        scenes, taxonomy, detections = load_dataset(path, with_detections=True)
        self.taxonomy = taxonomy
        for scene, dets in zip(scenes, detections):
            self._cache[f"scene_{scene.scene_id}"] = scene
            self._cache[f"detections_{scene.scene_id}"] = dets
        return scenes
