"""
Experiment pipeline for fused rail-defect classification.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from .config import RunConfig
from .errors import EmptyDatasetError, ZeroVarianceError
from .evaluation import (
    ConfusionCounts,
    classify_yolo_outcomes,
    compute_metrics,
    greedy_match,
    sum_counts,
    tally,
    vit_states,
)
from .fusion import build_audio_tensor, build_mask, fuse, image_features
from .scene import Detection, Scene
from .stats import TTestResult, mean_std, unpaired_ttest, zfold_split
from .vit import TrainReport, ViTModel, train

logger = logging.getLogger(__name__)

IMAGE_ONLY, FUSED = "image_only", "fused"
VARIANTS = (IMAGE_ONLY, FUSED)

# (scene position, detection index) -> predicted class
PredictionCache = Dict[Tuple[int, int], int]


@dataclass
class SampleSet:
    tensors: np.ndarray
    labels: np.ndarray
    keys: List[Tuple[int, int]]

    def subset(self, scene_positions: Sequence[int]) -> "SampleSet":
        wanted = set(int(i) for i in scene_positions)
        idx = [n for n, (s, _) in enumerate(self.keys) if s in wanted]
        return SampleSet(self.tensors[idx], self.labels[idx], [self.keys[n] for n in idx])

    def __len__(self) -> int:
        return len(self.keys)


@dataclass
class EvaluationResult:
    class_names: Tuple[str, ...]
    thresholds: Tuple[float, ...]
    # variant -> threshold -> per-class counts
    counts: Dict[str, Dict[float, List[ConfusionCounts]]] = field(default_factory=dict)

    def overall(self, variant: str, threshold: float) -> ConfusionCounts:
        return sum_counts(self.counts[variant][threshold])

    def accuracy(self, variant: str, threshold: float) -> float:
        return compute_metrics(self.overall(variant, threshold), "overall").accuracy

    def per_class_table(self, variant: str) -> pd.DataFrame:
        rows = []
        for k, name in enumerate(self.class_names):
            for t in self.thresholds:
                c = self.counts[variant][t][k]
                rows.append({"class": name, "iou": t, **c.to_dict(), **compute_metrics(c, "per_class").to_dict()})
        return pd.DataFrame(rows)

    def overall_table(self) -> pd.DataFrame:
        rows = []
        for variant in VARIANTS:
            for t in self.thresholds:
                c = self.overall(variant, t)
                rows.append({"variant": variant, "iou": t, **c.to_dict(), **compute_metrics(c, "overall").to_dict()})
        return pd.DataFrame(rows)

    def sweep_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "iou": list(self.thresholds),
                IMAGE_ONLY: [self.accuracy(IMAGE_ONLY, t) for t in self.thresholds],
                FUSED: [self.accuracy(FUSED, t) for t in self.thresholds],
            }
        )


@dataclass
class ExperimentResult:
    evaluation: EvaluationResult
    train_report: TrainReport
    model: ViTModel
    train_scenes: List[int]
    eval_scenes: List[int]
    # early-stopping slice carved off the training scenes
    stop_scenes: List[int]


@dataclass
class FoldResult:
    thresholds: Tuple[float, ...]
    # variant -> threshold -> one accuracy per fold
    accuracies: Dict[str, Dict[float, List[float]]]
    ttests: Dict[float, Optional[TTestResult]]
    train_reports: List[TrainReport]

    def table(self) -> pd.DataFrame:
        """Per-fold overall accuracies, one column per (variant, IoU), then Mean and StD rows."""
        columns = {f"{v}@{t}": self.accuracies[v][t] for v in VARIANTS for t in self.thresholds}
        frame = pd.DataFrame(columns)
        z = len(frame)
        frame.insert(0, "fold", [str(i + 1) for i in range(z)])
        stats_rows = {name: mean_std(values) for name, values in columns.items()}
        frame.loc[z] = ["Mean"] + [stats_rows[c][0] for c in columns]
        frame.loc[z + 1] = ["StD"] + [stats_rows[c][1] for c in columns]
        return frame

    def ttest_dict(self) -> Dict[str, Optional[dict]]:
        return {str(t): (r.to_dict() if r is not None else None) for t, r in self.ttests.items()}


class FusionAnalyzer:
    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or RunConfig()
        self.taxonomy = self.config.taxonomy
        self._samples: Optional[SampleSet] = None
        self._samples_key: Optional[tuple] = None

    def _kept(self, detections: Sequence[Detection]) -> List[int]:
        return [i for i, d in enumerate(detections) if d.confidence >= self.config.prob_threshold]

    def fused_tensors(self, scene: Scene, detections: Sequence[Detection], indices: Sequence[int]) -> np.ndarray:
        """Fused tensors for the given detections of a scene, shape (n, K, H, W)."""
        k = self.taxonomy.K
        layer = scene.layer
        f = image_features(scene.features, k)
        v = build_audio_tensor(scene.events, k, layer.width, layer.height, scene.duration)
        out = np.zeros((len(indices), k, layer.height, layer.width))
        for n, i in enumerate(indices):
            m = build_mask(detections[i].box, scene.image_width, scene.image_height, layer.width, layer.height, k)
            out[n] = fuse(f, v, m)
        return out

    def build_samples(self, scenes: Sequence[Scene], detections: Sequence[Sequence[Detection]]) -> SampleSet:
        """One sample per kept detection, labeled with its matched GT class or the rejection class."""
        tensors, labels, keys = [], [], []
        for pos, (scene, dets) in enumerate(zip(scenes, detections)):
            kept = self._kept(dets)
            if not kept:
                continue
            matches = greedy_match(
                [dets[i].box for i in kept], [g.box for g in scene.ground_truth], self.config.train_iou_threshold
            )
            tensors.append(self.fused_tensors(scene, dets, kept))
            for n, i in enumerate(kept):
                j = matches.get(n)
                labels.append(scene.ground_truth[j].class_index if j is not None else self.taxonomy.rejection_index)
                keys.append((pos, i))
        if not tensors:
            raise EmptyDatasetError("no detection passes the probability threshold; nothing to train on")
        samples = SampleSet(np.concatenate(tensors, axis=0), np.asarray(labels, dtype=np.int64), keys)
        logger.info("built %d samples from %d scenes", len(samples), len(scenes))
        return samples

    def samples(self, scenes: Sequence[Scene], detections: Sequence[Sequence[Detection]]) -> SampleSet:
        key = tuple(s.scene_id for s in scenes)
        if self._samples is None or key != self._samples_key:
            self._samples = self.build_samples(scenes, detections)
            self._samples_key = key
        return self._samples

    def _vit_config(self, fold: int):
        seed = int(np.random.SeedSequence([self.config.seed, 3, fold]).generate_state(1)[0])
        return replace(self.config.vit, seed=seed)

    def train_classifier(self, train_set: SampleSet, val_set: SampleSet, fold: int = 0) -> Tuple[ViTModel, TrainReport]:
        vit_config = self._vit_config(fold)
        k, h, w = train_set.tensors.shape[1:]
        model = ViTModel(vit_config, k, h, w)
        return train(model, train_set.tensors, train_set.labels, val_set.tensors, val_set.labels, vit_config)

    def predict_cache(self, model, sample_set: SampleSet) -> PredictionCache:
        """Predicted class for every sample, computed once and shared by all thresholds and targets."""
        predicted = model.predict(sample_set.tensors) if len(sample_set) else np.zeros(0, dtype=int)
        return {key: int(p) for key, p in zip(sample_set.keys, predicted)}

    def evaluate(
        self,
        scenes: Sequence[Scene],
        detections: Sequence[Sequence[Detection]],
        predictions: PredictionCache,
        scene_positions: Optional[Sequence[int]] = None,
        thresholds: Optional[Sequence[float]] = None,
    ) -> EvaluationResult:
        thresholds = tuple(thresholds or self.config.iou_thresholds)
        positions = range(len(scenes)) if scene_positions is None else scene_positions
        result = EvaluationResult(self.taxonomy.names, thresholds, {v: {} for v in VARIANTS})
        for t in thresholds:
            image_counts, fused_counts = [], []
            for target in range(self.taxonomy.K):
                image_c, fused_c = ConfusionCounts(), ConfusionCounts()
                for pos in positions:
                    states = classify_yolo_outcomes(
                        detections[pos], scenes[pos].ground_truth, target, t, self.config.prob_threshold
                    )
                    image_c = image_c + tally(states)
                    fused_c = fused_c + tally(
                        vit_states(states, lambda s, p=pos: predictions[(p, s.detection_index)] == target)
                    )
                image_counts.append(image_c)
                fused_counts.append(fused_c)
            result.counts[IMAGE_ONLY][t] = image_counts
            result.counts[FUSED][t] = fused_counts
        return result

    def sweep_iou(
        self,
        scenes: Sequence[Scene],
        detections: Sequence[Sequence[Detection]],
        predictions: PredictionCache,
        thresholds: Sequence[float],
        scene_positions: Optional[Sequence[int]] = None,
    ) -> pd.DataFrame:
        """Overall accuracy of both variants at every threshold."""
        if not thresholds or any(not 0.0 < t <= 1.0 for t in thresholds):
            raise ValueError(f"thresholds must be non-empty and lie in (0, 1]: {thresholds}")
        return self.evaluate(scenes, detections, predictions, scene_positions, thresholds).sweep_table()

    def run(self, scenes: Sequence[Scene], detections: Sequence[Sequence[Detection]]) -> ExperimentResult:
        """Held-out split; early stopping watches a slice of the training scenes, never the evaluated ones."""
        if len(scenes) < 3:
            raise EmptyDatasetError("a run needs at least three scenes")
        samples = self.samples(scenes, detections)
        split = dict(test_size=self.config.val_fraction, random_state=self.config.seed)
        train_pos, eval_pos = train_test_split(np.arange(len(scenes)), **split)
        fit_pos, stop_pos = train_test_split(train_pos, **split)
        fit_pos, stop_pos, eval_pos = (sorted(int(i) for i in p) for p in (fit_pos, stop_pos, eval_pos))
        eval_set = samples.subset(eval_pos)
        model, report = self.train_classifier(samples.subset(fit_pos), samples.subset(stop_pos))
        evaluation = self.evaluate(scenes, detections, self.predict_cache(model, eval_set), eval_pos)
        for t in evaluation.thresholds:
            logger.info(
                "IoU %.2f: image-only ACC %.4f, fused ACC %.4f",
                t,
                evaluation.accuracy(IMAGE_ONLY, t),
                evaluation.accuracy(FUSED, t),
            )
        return ExperimentResult(evaluation, report, model, fit_pos, eval_pos, stop_pos)

    def run_folds(self, scenes: Sequence[Scene], detections: Sequence[Sequence[Detection]], z: Optional[int] = None) -> FoldResult:
        """Z random re-splits; per-fold overall accuracies and a t-test per threshold."""
        z = z or self.config.folds
        samples = self.samples(scenes, detections)
        thresholds = tuple(self.config.iou_thresholds)
        accuracies = {v: {t: [] for t in thresholds} for v in VARIANTS}
        reports = []
        for fold, (train_pos, val_pos) in enumerate(zfold_split(len(scenes), z, self.config.seed, self.config.fold_test_size)):
            val_set = samples.subset(val_pos)
            model, report = self.train_classifier(samples.subset(train_pos), val_set, fold + 1)
            reports.append(report)
            evaluation = self.evaluate(scenes, detections, self.predict_cache(model, val_set), val_pos)
            for v in VARIANTS:
                for t in thresholds:
                    accuracies[v][t].append(evaluation.accuracy(v, t))
            logger.info("fold %d/%d done (stopped at epoch %d)", fold + 1, z, report.stopping_epoch)

        ttests: Dict[float, Optional[TTestResult]] = {}
        for t in thresholds:
            try:
                ttests[t] = unpaired_ttest(accuracies[FUSED][t], accuracies[IMAGE_ONLY][t])
            except ZeroVarianceError:
                logger.warning("IoU %.2f: zero pooled variance across folds, no t-test", t)
                ttests[t] = None
        return FoldResult(thresholds, accuracies, ttests, reports)
