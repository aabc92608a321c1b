"""Class taxonomy, scene geometry, synthetic scene generation and the mock detector.

Synthetic scenes stand in for real rail imagery: each scene is one T-second
frame with a raw detector feature tensor F0 stored as (C, H, W), ground-truth
boxes in image pixels and, once the audio stage has run, analyser events.

Axis convention used across the package: i = row = height = time within the
frame, j = column = width. Feature rows are 1-based when reported as row sets.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigError,
    ConfusionMatrixError,
    InvalidBoxError,
    SceneGenerationError,
    TaxonomyError,
)

if TYPE_CHECKING:
    from .audio_synth import AudioEvent

logger = logging.getLogger(__name__)

DEFAULT_CLASSES = ("Rupture", "Surface defect", "Nothing")

# annotated objects per class in the source corpus (train + val)
CORPUS_COUNTS = {"Rupture": 8156, "Surface defect": 3026, "Nothing": 10990}


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class names; the rejection class must come last."""

    names: Tuple[str, ...] = DEFAULT_CLASSES
    rejection: str = "Nothing"

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise TaxonomyError("a taxonomy needs at least two classes")
        if len(set(names)) != len(names):
            raise TaxonomyError(f"duplicate class names in {names}")
        if names[-1] != self.rejection:
            raise TaxonomyError(f"rejection class {self.rejection!r} must be last, got {names}")

    @property
    def K(self) -> int:
        return len(self.names)

    @property
    def rejection_index(self) -> int:
        return self.K - 1

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise TaxonomyError(f"unknown class {name!r}; taxonomy is {list(self.names)}") from None

    def name(self, index: int) -> str:
        if not 0 <= index < self.K:
            raise TaxonomyError(f"class index {index} outside taxonomy of size {self.K}")
        return self.names[index]

    def check_index(self, index: int) -> int:
        self.name(index)
        return index

    def is_audible(self, index: int) -> bool:
        return index != self.rejection_index


DEFAULT_TAXONOMY = ClassTaxonomy()


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image pixels."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite box coordinates {coords}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBoxError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def within(self, image_width: float, image_height: float) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= image_width and self.y_max <= image_height

    def intersects(self, other: "BoundingBox") -> bool:
        return (
            min(self.x_max, other.x_max) > max(self.x_min, other.x_min)
            and min(self.y_max, other.y_max) > max(self.y_min, other.y_min)
        )

    def to_list(self) -> List[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise InvalidBoxError(f"a box needs four coordinates, got {list(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class LayerConfig:
    """Spatial size and channel count of one detector feature layer."""

    layer_id: int
    width: int
    height: int
    channels: int

    def __post_init__(self):
        if min(self.width, self.height, self.channels) < 1:
            raise ConfigError(f"layer extents must be positive: {self}")

    def to_dict(self) -> Dict[str, int]:
        return {"layer_id": self.layer_id, "width": self.width, "height": self.height, "channels": self.channels}


LAYER_PRESETS: Dict[int, LayerConfig] = {
    7: LayerConfig(7, 20, 20, 128),
    16: LayerConfig(16, 40, 40, 64),
    19: LayerConfig(19, 20, 20, 128),
}


def layer_preset(layer_id: int) -> LayerConfig:
    try:
        return LAYER_PRESETS[layer_id]
    except KeyError:
        raise ConfigError(f"no preset for layer {layer_id}; known: {sorted(LAYER_PRESETS)}") from None


@dataclass(frozen=True)
class GroundTruth:
    box: BoundingBox
    class_index: int


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    class_index: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.class_index < 0:
            raise TaxonomyError(f"negative class index {self.class_index}")


@dataclass(eq=False)
class Scene:
    scene_id: int
    image_width: int
    image_height: int
    layer: LayerConfig
    features: np.ndarray
    ground_truth: List[GroundTruth] = field(default_factory=list)
    events: List["AudioEvent"] = field(default_factory=list)
    duration: float = 1.0

    def __post_init__(self):
        expected = (self.layer.channels, self.layer.height, self.layer.width)
        if tuple(self.features.shape) != expected:
            raise ConfigError(f"scene {self.scene_id}: features {self.features.shape}, layer expects {expected}")
        if not self.duration > 0:
            raise ConfigError(f"scene {self.scene_id}: duration must be positive")
        for gt in self.ground_truth:
            if not gt.box.within(self.image_width, self.image_height):
                raise InvalidBoxError(f"scene {self.scene_id}: box {gt.box.to_list()} leaves the image")

    def validate(self, taxonomy: ClassTaxonomy) -> None:
        for gt in self.ground_truth:
            taxonomy.check_index(gt.class_index)
        for event in self.events:
            taxonomy.check_index(event.predicted_class)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.image_width == other.image_width
            and self.image_height == other.image_height
            and self.layer == other.layer
            and self.duration == other.duration
            and self.ground_truth == other.ground_truth
            and self.events == other.events
            and self.features.dtype == other.features.dtype
            and np.array_equal(self.features, other.features)
        )


def scene_rng(seed: int, scene_id: int, stream: int = 0) -> np.random.Generator:
    """Independent random stream for one (master seed, scene, purpose) triple."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(scene_id), int(stream)]))


# stream ids
STREAM_SCENE, STREAM_AUDIO, STREAM_DETECTOR = 0, 1, 2


def box_cells(box: BoundingBox, image_width: float, image_height: float, grid_width: int, grid_height: int) -> np.ndarray:
    """Boolean (H, W) grid of feature cells whose centre lies inside the scaled box.

    Boxes too small to contain any centre fall back to the cell under the box
    centre, so the result always has at least one cell set.
    """
    sx, sy = grid_width / image_width, grid_height / image_height
    x0, x1 = box.x_min * sx, box.x_max * sx
    y0, y1 = box.y_min * sy, box.y_max * sy
    cx = np.arange(grid_width) + 0.5
    cy = np.arange(grid_height) + 0.5
    cols = (cx >= x0) & (cx <= x1)
    rows = (cy >= y0) & (cy <= y1)
    cells = rows[:, None] & cols[None, :]
    if not cells.any():
        i = min(max(int(math.floor((y0 + y1) / 2.0)), 0), grid_height - 1)
        j = min(max(int(math.floor((x0 + x1) / 2.0)), 0), grid_width - 1)
        cells[i, j] = True
    return cells


def box_rows(box: BoundingBox, image_width: float, image_height: float, layer: LayerConfig) -> List[int]:
    """1-based feature rows covered by `box`."""
    cells = box_cells(box, image_width, image_height, layer.width, layer.height)
    return [int(i) + 1 for i in np.nonzero(cells.any(axis=1))[0]]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass
class SceneGenConfig:
    """Knobs of the synthetic scene generator."""

    num_scenes: int = 550
    class_mixture: Tuple[float, ...] = tuple(CORPUS_COUNTS[n] / sum(CORPUS_COUNTS.values()) for n in DEFAULT_CLASSES)
    boxes_per_scene: Tuple[int, int] = (1, 3)
    box_size: Tuple[int, int] = (30, 70)
    image_width: int = 200
    image_height: int = 200
    layer_id: int = 7
    ambiguity: float = 0.0
    background_level: float = 0.15
    duration: float = 1.0
    exclusive_rows: bool = True
    max_placement_retries: int = 200
    max_scene_restarts: int = 50

    def validate(self, taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY) -> None:
        if len(self.class_mixture) != taxonomy.K:
            raise ConfigError(f"class_mixture has {len(self.class_mixture)} entries for {taxonomy.K} classes")
        if min(self.class_mixture) < 0 or abs(sum(self.class_mixture) - 1.0) > 1e-9:
            raise ConfigError(f"class_mixture must be a probability vector: {self.class_mixture}")
        lo, hi = self.boxes_per_scene
        if lo < 0 or hi < lo:
            raise ConfigError(f"invalid boxes_per_scene range {self.boxes_per_scene}")
        if self.box_size[0] < 1 or self.box_size[1] < self.box_size[0]:
            raise ConfigError(f"invalid box_size range {self.box_size}")
        if not 0.0 <= self.ambiguity <= 1.0:
            raise ConfigError(f"ambiguity must lie in [0, 1], got {self.ambiguity}")
        if self.duration <= 0 or self.num_scenes < 0:
            raise ConfigError("duration must be positive and num_scenes non-negative")
        if self.max_placement_retries < 1 or self.max_scene_restarts < 1:
            raise ConfigError("max_placement_retries and max_scene_restarts must be at least 1")
        layer_preset(self.layer_id)


def _try_placement(config: SceneGenConfig, layer: LayerConfig, classes: Sequence[int], rng: np.random.Generator) -> Optional[List[GroundTruth]]:
    placed: List[GroundTruth] = []
    taken_rows: set = set()
    lo, hi = config.box_size
    for cls in classes:
        for _ in range(config.max_placement_retries):
            w = int(rng.integers(lo, hi + 1))
            h = int(rng.integers(lo, hi + 1))
            if w > config.image_width or h > config.image_height:
                continue
            x0 = int(rng.integers(0, config.image_width - w + 1))
            y0 = int(rng.integers(0, config.image_height - h + 1))
            box = BoundingBox(float(x0), float(y0), float(x0 + w), float(y0 + h))
            if any(box.intersects(gt.box) for gt in placed):
                continue
            rows = set(box_rows(box, config.image_width, config.image_height, layer))
            if config.exclusive_rows and rows & taken_rows:
                continue
            taken_rows |= rows
            placed.append(GroundTruth(box, int(cls)))
            break
        else:
            return None
    return placed


def _place_boxes(config: SceneGenConfig, layer: LayerConfig, classes: Sequence[int], rng: np.random.Generator) -> List[GroundTruth]:
    # earlier boxes can use up the free rows, so a failed box restarts the whole layout
    for attempt in range(config.max_scene_restarts):
        placed = _try_placement(config, layer, classes, rng)
        if placed is not None:
            if attempt:
                logger.debug("placed %d boxes after %d restarts", len(classes), attempt)
            return placed
    raise SceneGenerationError(
        f"could not place {len(classes)} boxes within {config.max_placement_retries} attempts per box "
        f"after {config.max_scene_restarts} layout restarts"
    )


def _signature(class_index: int, taxonomy: ClassTaxonomy, cells: np.ndarray, ambiguity: float, rng: np.random.Generator) -> np.ndarray:
    # the first class is a sharp high blob and the rejection class a weak broad one;
    # ambiguity pulls the two towards their average. Other classes get a diffuse texture
    rows, cols = np.nonzero(cells)
    cy = (rows.min() + rows.max() + 1) / 2.0
    cx = (cols.min() + cols.max() + 1) / 2.0
    half_h = (rows.max() - rows.min() + 1) / 2.0
    half_w = (cols.max() - cols.min() + 1) / 2.0
    yy, xx = np.mgrid[0 : cells.shape[0], 0 : cells.shape[1]] + 0.5

    def blob(spread: float) -> np.ndarray:
        sy, sx = max(half_h * spread, 0.5), max(half_w * spread, 0.5)
        return np.exp(-(((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2) / 2.0)

    if class_index == 0 or class_index == taxonomy.rejection_index:
        sharp = 1.0 * blob(0.35)
        broad = 0.45 * blob(0.8)
        mid = 0.5 * (sharp + broad)
        own = sharp if class_index == 0 else broad
        pattern = (1.0 - ambiguity) * own + ambiguity * mid
    else:
        pattern = 0.55 * (0.6 + 0.4 * rng.random(cells.shape))
    return pattern * cells


def generate_scene(
    config: SceneGenConfig,
    seed: int,
    scene_id: int = 0,
    taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY,
) -> Scene:
    """Render one synthetic scene; (config, seed, scene_id) fully determine it. Events stay empty."""
    config.validate(taxonomy)
    layer = layer_preset(config.layer_id)
    rng = scene_rng(seed, scene_id, STREAM_SCENE)

    lo, hi = config.boxes_per_scene
    n_boxes = int(rng.integers(lo, hi + 1))
    classes = rng.choice(taxonomy.K, size=n_boxes, p=np.asarray(config.class_mixture))
    ground_truth = _place_boxes(config, layer, classes, rng)

    features = rng.random((layer.channels, layer.height, layer.width)) * config.background_level
    gains = rng.uniform(0.5, 1.5, size=layer.channels)
    for gt in ground_truth:
        cells = box_cells(gt.box, config.image_width, config.image_height, layer.width, layer.height)
        pattern = _signature(gt.class_index, taxonomy, cells, config.ambiguity, rng)
        features += gains[:, None, None] * pattern[None, :, :]

    return Scene(
        scene_id=scene_id,
        image_width=config.image_width,
        image_height=config.image_height,
        layer=layer,
        features=features.astype(np.float32),
        ground_truth=ground_truth,
        events=[],
        duration=config.duration,
    )


@dataclass
class DetectorNoise:
    """Error model of the stand-in detector.

    `false_positive_rate` is the expected number of spurious boxes per scene.
    `confusion` rows give P(predicted class | true class); None means identity.
    """

    miss_rate: float = 0.05
    false_positive_rate: float = 0.3
    localization_jitter: float = 6.0
    confusion: Optional[Tuple[Tuple[float, ...], ...]] = None
    confidence: Tuple[float, float] = (0.3, 1.0)
    spurious_confidence: Tuple[float, float] = (0.05, 0.6)
    spurious_size: Tuple[int, int] = (20, 60)

    @classmethod
    def from_ambiguity(cls, ambiguity: float, num_classes: int = 3, **kwargs) -> "DetectorNoise":
        """Confusion that grows with visual ambiguity between the first and rejection classes."""
        k = num_classes
        matrix = np.full((k, k), 0.05 / (k - 1))
        np.fill_diagonal(matrix, 0.95)
        matrix[0, 0] -= 0.4 * ambiguity
        matrix[0, k - 1] += 0.4 * ambiguity
        matrix[k - 1, k - 1] -= 0.25 * ambiguity
        matrix[k - 1, 0] += 0.25 * ambiguity
        return cls(confusion=tuple(tuple(float(v) for v in row) for row in matrix), **kwargs)

    def confusion_matrix(self, num_classes: int) -> np.ndarray:
        if self.confusion is None:
            return np.eye(num_classes)
        matrix = np.asarray(self.confusion, dtype=np.float64)
        if matrix.shape != (num_classes, num_classes):
            raise ConfusionMatrixError(f"confusion matrix {matrix.shape} for {num_classes} classes")
        if (matrix < 0).any() or np.abs(matrix.sum(axis=1) - 1.0).max() > 1e-9:
            raise ConfusionMatrixError("confusion matrix rows must lie on the probability simplex")
        return matrix

    def validate(self) -> None:
        if not (0.0 <= self.miss_rate <= 1.0) or self.false_positive_rate < 0 or self.localization_jitter < 0:
            raise ConfigError(f"invalid detector noise {self}")
        for lo, hi in (self.confidence, self.spurious_confidence):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"confidence ranges must lie in [0, 1]: {self}")


def _clamped_box(x0: float, y0: float, x1: float, y1: float, width: float, height: float) -> BoundingBox:
    x0, x1 = sorted((min(max(x0, 0.0), width), min(max(x1, 0.0), width)))
    y0, y1 = sorted((min(max(y0, 0.0), height), min(max(y1, 0.0), height)))
    if x1 - x0 < 1.0:
        x1 = min(width, x0 + 1.0)
        x0 = x1 - 1.0
    if y1 - y0 < 1.0:
        y1 = min(height, y0 + 1.0)
        y0 = y1 - 1.0
    return BoundingBox(x0, y0, x1, y1)


def mock_detect(
    scene: Scene,
    noise: DetectorNoise,
    seed: int,
    taxonomy: ClassTaxonomy = DEFAULT_TAXONOMY,
) -> List[Detection]:
    """Noisy detections for a scene: misses, jittered corners, confused classes, spurious boxes."""
    noise.validate()
    confusion = noise.confusion_matrix(taxonomy.K)
    rng = scene_rng(seed, scene.scene_id, STREAM_DETECTOR)
    w, h = scene.image_width, scene.image_height
    detections: List[Detection] = []

    for gt in scene.ground_truth:
        if rng.random() < noise.miss_rate:
            continue
        jitter = rng.normal(0.0, noise.localization_jitter, size=4) if noise.localization_jitter > 0 else np.zeros(4)
        b = gt.box
        box = _clamped_box(b.x_min + jitter[0], b.y_min + jitter[1], b.x_max + jitter[2], b.y_max + jitter[3], w, h)
        cls = int(rng.choice(taxonomy.K, p=confusion[gt.class_index]))
        detections.append(Detection(box, cls, float(rng.uniform(*noise.confidence))))

    n_spurious = int(rng.poisson(noise.false_positive_rate)) if noise.false_positive_rate > 0 else 0
    lo, hi = noise.spurious_size
    for _ in range(n_spurious):
        bw = min(int(rng.integers(lo, hi + 1)), w)
        bh = min(int(rng.integers(lo, hi + 1)), h)
        x0 = float(rng.integers(0, w - bw + 1))
        y0 = float(rng.integers(0, h - bh + 1))
        box = BoundingBox(x0, y0, x0 + bw, y0 + bh)
        cls = int(rng.integers(taxonomy.K))
        detections.append(Detection(box, cls, float(rng.uniform(*noise.spurious_confidence))))

    logger.debug("scene %d: %d GT boxes -> %d detections", scene.scene_id, len(scene.ground_truth), len(detections))
    return detections
