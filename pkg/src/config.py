"""Run configuration: one JSON-serializable object for a whole experiment."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Tuple, Union

from .audio_synth import AudioJitter, AudioSynthConfig, PeakIntervalTable
from .errors import ConfigError
from .evaluation import DEFAULT_PROB_THRESHOLD, IOU_GRID
from .scene import DEFAULT_TAXONOMY, ClassTaxonomy, DetectorNoise, SceneGenConfig
from .vit import ViTConfig


def _freeze(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


def _build(cls, data: Dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{k: _freeze(v) for k, v in data.items()})


@dataclass
class RunConfig:
    """Master seed, paths and every stage's knobs; all randomness derives from `seed`."""

    seed: int = 0
    dataset_dir: str = "data/synthetic"
    output_dir: str = "reports"
    class_names: Tuple[str, ...] = DEFAULT_TAXONOMY.names
    iou_thresholds: Tuple[float, ...] = IOU_GRID
    prob_threshold: float = DEFAULT_PROB_THRESHOLD
    # IoU at which training samples take the class of their matched GT box
    train_iou_threshold: float = 0.3
    val_fraction: float = 0.2
    folds: int = 0
    fold_test_size: float = 0.2
    confusion_from_ambiguity: bool = True
    workers: int = 1
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    detector: DetectorNoise = field(default_factory=DetectorNoise)
    audio: AudioSynthConfig = field(default_factory=AudioSynthConfig)
    vit: ViTConfig = field(default_factory=ViTConfig)

    @property
    def taxonomy(self) -> ClassTaxonomy:
        return ClassTaxonomy(tuple(self.class_names))

    def detector_noise(self) -> DetectorNoise:
        """Detector noise with the ambiguity-driven confusion filled in when none is given."""
        if self.detector.confusion is not None or not self.confusion_from_ambiguity or self.scene.ambiguity == 0:
            return self.detector
        params = {k: v for k, v in asdict(self.detector).items() if k != "confusion"}
        return DetectorNoise.from_ambiguity(self.scene.ambiguity, self.taxonomy.K, **{k: _freeze(v) for k, v in params.items()})

    def validate(self) -> None:
        taxonomy = self.taxonomy
        self.scene.validate(taxonomy)
        self.detector.validate()
        self.detector_noise().confusion_matrix(taxonomy.K)
        self.audio.validate()
        if abs(self.scene.duration - self.audio.window_seconds) > 1e-9:
            raise ConfigError(
                f"scene duration {self.scene.duration} s does not match the analyser window "
                f"of {self.audio.samples_per_window} samples at {self.audio.sampling_rate} Hz"
            )
        self.vit.validate()
        if not self.iou_thresholds or any(not 0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ConfigError(f"IoU thresholds must be non-empty and lie in (0, 1]: {self.iou_thresholds}")
        if not 0.0 <= self.prob_threshold <= 1.0:
            raise ConfigError(f"prob_threshold must lie in [0, 1], got {self.prob_threshold}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.folds == 1 or self.folds < 0:
            raise ConfigError(f"folds must be 0 (single split) or at least 2, got {self.folds}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(data)
        nested = {}
        if "scene" in data:
            nested["scene"] = _build(SceneGenConfig, data.pop("scene"))
        if "detector" in data:
            nested["detector"] = _build(DetectorNoise, data.pop("detector"))
        if "audio" in data:
            audio = dict(data.pop("audio"))
            if "peak_table" in audio:
                audio["peak_table"] = PeakIntervalTable(_freeze(audio["peak_table"]["intervals"]))
            if "jitter" in audio:
                audio["jitter"] = _build(AudioJitter, audio["jitter"])
            known = {f.name for f in fields(AudioSynthConfig)}
            if set(audio) - known:
                raise ConfigError(f"unknown AudioSynthConfig keys: {sorted(set(audio) - known)}")
            nested["audio"] = AudioSynthConfig(**audio)
        if "vit" in data:
            nested["vit"] = _build(ViTConfig, data.pop("vit"))
        config = _build(cls, data)
        for name, value in nested.items():
            setattr(config, name, value)
        return config

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
