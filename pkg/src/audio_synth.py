"""Synthetic audio-analyser outputs.

Raw waveforms are never produced: an analyser event is a time window, a
class-probability vector, a normalized peak measure G and the predicted class.
Peaks are drawn uniformly inside per-class intervals; probabilities give the
chosen class U(0.7, 1) and split the remaining mass sequentially over the
other classes in cyclic order, the last one taking the exact remainder.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InvalidWindowError, TaxonomyError
from .scene import DEFAULT_TAXONOMY, BoundingBox, ClassTaxonomy, LayerConfig, Scene, box_rows

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class AudioEvent:
    t_start: float
    t_end: float
    probabilities: Tuple[float, ...]
    peak: float
    predicted_class: int

    def __post_init__(self):
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if not 0.0 <= self.t_start < self.t_end:
            raise InvalidWindowError(f"invalid event window [{self.t_start}, {self.t_end}]")
        probs = np.asarray(self.probabilities)
        if (probs < 0).any() or abs(probs.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"event probabilities are not on the simplex: {self.probabilities}")
        if not 0.0 <= self.peak <= 1.0:
            raise ValueError(f"peak measure must lie in [0, 1], got {self.peak}")
        if int(np.argmax(probs)) != self.predicted_class:
            raise ValueError(f"predicted class {self.predicted_class} is not the argmax of {self.probabilities}")

    def check_duration(self, duration: float) -> None:
        if self.t_end > duration:
            raise InvalidWindowError(f"event window ends at {self.t_end} beyond the frame duration {duration}")

    def to_dict(self) -> dict:
        return {
            "t_start": self.t_start,
            "t_end": self.t_end,
            "probabilities": list(self.probabilities),
            "peak": self.peak,
            "predicted_class": self.predicted_class,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AudioEvent":
        return cls(
            t_start=float(data["t_start"]),
            t_end=float(data["t_end"]),
            probabilities=tuple(data["probabilities"]),
            peak=float(data["peak"]),
            predicted_class=int(data["predicted_class"]),
        )


DEFAULT_PEAK_INTERVALS: Dict[str, Tuple[float, float]] = {
    "Nothing": (0.0, 0.2),
    "Surface defect": (0.3, 0.6),
    "Rupture": (0.8, 1.0),
}


@dataclass(frozen=True)
class PeakIntervalTable:
    """Per-class (a, b) bounds of the analyser's normalized peak measure."""

    intervals: Tuple[Tuple[str, float, float], ...] = tuple((n, a, b) for n, (a, b) in DEFAULT_PEAK_INTERVALS.items())

    def __post_init__(self):
        for name, a, b in self.intervals:
            if not 0.0 <= a < b <= 1.0:
                raise ConfigError(f"peak interval for {name!r} must satisfy 0 <= a < b <= 1, got ({a}, {b})")

    def interval(self, name: str) -> Tuple[float, float]:
        for n, a, b in self.intervals:
            if n == name:
                return a, b
        raise TaxonomyError(f"no peak interval for class {name!r}")

    def as_dict(self) -> Dict[str, List[float]]:
        return {n: [a, b] for n, a, b in self.intervals}

    @classmethod
    def from_dict(cls, data: Dict[str, Sequence[float]]) -> "PeakIntervalTable":
        return cls(tuple((n, float(v[0]), float(v[1])) for n, v in data.items()))


@dataclass
class AudioJitter:
    """Placement noise of the event window relative to the object's rows, in seconds."""

    shift_sigma: float = 0.0
    dilation: float = 0.0


@dataclass
class AudioSynthConfig:
    peak_table: PeakIntervalTable = field(default_factory=PeakIntervalTable)
    jitter: AudioJitter = field(default_factory=AudioJitter)
    ambient_nothing_events: bool = False
    label_noise: float = 0.0
    sampling_rate: int = 100_000
    # audio samples handed to the analyser per frame window
    samples_per_window: int = 100_000
    # number of analyser detections drawn by synth_detection_batch
    num_detections: int = 10_000

    @property
    def window_seconds(self) -> float:
        """Frame duration T covered by one analyser window."""
        return self.samples_per_window / self.sampling_rate

    def validate(self) -> None:
        if self.sampling_rate <= 0 or self.samples_per_window <= 0:
            raise ConfigError("sampling_rate and samples_per_window must be positive")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError(f"label_noise must lie in [0, 1], got {self.label_noise}")
        if self.jitter.shift_sigma < 0:
            raise ConfigError("jitter shift_sigma must be non-negative")


def sample_peak(class_name: str, table: PeakIntervalTable, rng) -> float:
    """G = a + (b - a) * u with u ~ U(0, 1)."""
    a, b = table.interval(class_name)
    u = rng.uniform(0.0, 1.0)
    return a + (b - a) * u


def sample_probs(chosen_class: int, num_classes: int, rng) -> np.ndarray:
    if num_classes < 2:
        raise ConfigError("probability vectors need at least two classes")
    probs = np.zeros(num_classes)
    probs[chosen_class] = rng.uniform(0.7, 1.0)
    remaining = 1.0 - probs[chosen_class]
    for step in range(1, num_classes - 1):
        idx = (chosen_class + step) % num_classes
        probs[idx] = rng.uniform(0.0, remaining)
        remaining -= probs[idx]
    probs[(chosen_class + num_classes - 1) % num_classes] = remaining
    return probs


def _analyser_class(true_class: int, taxonomy: ClassTaxonomy, config: AudioSynthConfig, rng) -> int:
    if config.label_noise > 0 and rng.random() < config.label_noise:
        others = [k for k in range(taxonomy.K) if k != true_class]
        return int(others[int(rng.integers(len(others)))])
    return true_class


def synth_event_for_box(
    box: BoundingBox,
    class_index: int,
    image_width: float,
    image_height: float,
    layer: LayerConfig,
    duration: float,
    jitter: AudioJitter,
    table: PeakIntervalTable,
    rng,
    taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY,
    analyser_class: Optional[int] = None,
    sampling_rate: Optional[int] = None,
) -> AudioEvent:
    """Analyser event aligned with the time span of the box's feature rows.

    Rows r0..r1 (1-based) map to [(r0 - 1) * dT, r1 * dT] with dT = T / H;
    the window is then dilated, shifted, clamped to [0, T] and, given a
    sampling rate, snapped to whole samples.
    """
    taxonomy.check_index(class_index)
    if not box.within(image_width, image_height):
        raise ValueError(f"box {box.to_list()} leaves the {image_width}x{image_height} image")
    rows = box_rows(box, image_width, image_height, layer)
    dt = duration / layer.height
    t0 = (rows[0] - 1) * dt - jitter.dilation
    t1 = rows[-1] * dt + jitter.dilation
    if jitter.shift_sigma > 0:
        shift = rng.normal(0.0, jitter.shift_sigma)
        t0, t1 = t0 + shift, t1 + shift
    t0, t1 = min(max(t0, 0.0), duration), min(max(t1, 0.0), duration)
    if sampling_rate:
        t0, t1 = round(t0 * sampling_rate) / sampling_rate, round(t1 * sampling_rate) / sampling_rate
    if not t1 > t0:
        raise InvalidWindowError(f"event window collapsed to [{t0}, {t1}] after clamping")

    chosen = class_index if analyser_class is None else analyser_class
    peak = sample_peak(taxonomy.name(class_index), table, rng)
    probs = sample_probs(chosen, taxonomy.K, rng)
    return AudioEvent(t0, t1, tuple(probs), float(peak), int(chosen))


def synth_scene_events(
    scene: Scene,
    config: AudioSynthConfig,
    rng,
    taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY,
) -> List[AudioEvent]:
    """One event per audible GT box; rejection-class boxes only when ambient events are on."""
    config.validate()
    events: List[AudioEvent] = []
    for gt in scene.ground_truth:
        if not taxonomy.is_audible(gt.class_index) and not config.ambient_nothing_events:
            continue
        events.append(
            synth_event_for_box(
                gt.box,
                gt.class_index,
                scene.image_width,
                scene.image_height,
                scene.layer,
                scene.duration,
                config.jitter,
                config.peak_table,
                rng,
                taxonomy,
                analyser_class=_analyser_class(gt.class_index, taxonomy, config, rng),
                sampling_rate=config.sampling_rate,
            )
        )
    return events


def synth_detection_batch(
    class_index: int,
    config: AudioSynthConfig,
    rng,
    taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY,
    duration: Optional[float] = None,
) -> List[AudioEvent]:
    """`config.num_detections` full-frame events for one class, for distribution checks."""
    duration = config.window_seconds if duration is None else duration
    name = taxonomy.name(class_index)
    events = []
    for _ in range(config.num_detections):
        peak = sample_peak(name, config.peak_table, rng)
        probs = sample_probs(class_index, taxonomy.K, rng)
        events.append(AudioEvent(0.0, duration, tuple(probs), float(peak), class_index))
    return events

