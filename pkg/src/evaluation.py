"""One-against-all confusion accounting for the detector and the fused classifier.

For a target class, every kept detection and every target ground-truth box
ends up in exactly one detector state (TP/FP/FN/TN). The classifier's decision
on the detection's fused tensor then moves each state to its second-stage state
through `vit_transition`.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .scene import BoundingBox, Detection, GroundTruth, iou

logger = logging.getLogger(__name__)

DEFAULT_PROB_THRESHOLD = 0.25
IOU_GRID = (0.3, 0.5, 0.7)


class State(str, Enum):
    TP = "TP"
    FP = "FP"
    FN = "FN"
    TN = "TN"


# (state, classifier positive) -> state
TRANSITIONS: Dict[Tuple[State, bool], State] = {
    (State.TP, True): State.TP,
    (State.FN, True): State.TP,
    (State.FP, True): State.FP,
    (State.TN, True): State.FP,
    (State.TP, False): State.FN,
    (State.FN, False): State.FN,
    (State.FP, False): State.TN,
    (State.TN, False): State.TN,
}


@dataclass(frozen=True)
class YoloState:
    """A detector-level state; `detection_index` points into the scene's detection list."""

    state: State
    box: Optional[BoundingBox] = None
    detection_index: Optional[int] = None

    def __post_init__(self):
        if self.state in (State.TP, State.FP) and self.box is None:
            raise ValueError(f"{self.state.value} states always carry a detection box")

    @property
    def has_box(self) -> bool:
        return self.box is not None


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError(f"confusion counts must be non-negative: {self}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def add(self, state: State) -> None:
        attr = state.value.lower()
        setattr(self, attr, getattr(self, attr) + 1)

    def to_dict(self) -> Dict[str, int]:
        return {"TP": self.tp, "FP": self.fp, "FN": self.fn, "TN": self.tn}


@dataclass(frozen=True)
class MetricSet:
    precision: float
    recall: float
    f1: float
    accuracy: float
    tnr: float
    degenerate: bool = False

    def to_dict(self) -> Dict[str, float]:
        out = asdict(self)
        return {
            "P": out["precision"],
            "R": out["recall"],
            "F1": out["f1"],
            "ACC": out["accuracy"],
            "TNR": out["tnr"],
            "degenerate": out["degenerate"],
        }


def _ratio(num: float, den: float) -> Tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def compute_metrics(counts: ConfusionCounts, mode: str = "per_class") -> MetricSet:
    """P, R, F1, ACC and TNR from counts.

    `per_class` accuracy is (TP + TN) / total; `overall` accuracy leaves TN out:
    TP / (TP + FP + FN). Any 0/0 evaluates to 0 and marks the set degenerate.
    """
    if mode not in ("per_class", "overall"):
        raise ValueError(f"mode must be 'per_class' or 'overall', got {mode!r}")
    c = counts
    p, d_p = _ratio(c.tp, c.tp + c.fp)
    r, d_r = _ratio(c.tp, c.tp + c.fn)
    f1, d_f = _ratio(2 * p * r, p + r)
    if mode == "per_class":
        acc, d_a = _ratio(c.tp + c.tn, c.total)
    else:
        acc, d_a = _ratio(c.tp, c.tp + c.fp + c.fn)
    tnr, d_t = _ratio(c.tn, c.tn + c.fp)
    degenerate = d_p or d_r or d_f or d_a or d_t
    if degenerate:
        logger.debug("degenerate metric denominator for %s", c.to_dict())
    return MetricSet(p, r, f1, acc, tnr, degenerate)


def greedy_match(detections: Sequence[BoundingBox], truths: Sequence[BoundingBox], iou_threshold: float) -> Dict[int, int]:
    # one-to-one, by descending IoU; ties go to the lower detection then GT index
    if not detections or not truths:
        return {}
    overlaps = np.array([[iou(d, g) for g in truths] for d in detections])
    det_idx, gt_idx = np.nonzero((overlaps >= iou_threshold) & (overlaps > 0))
    order = np.lexsort((gt_idx, det_idx, -overlaps[det_idx, gt_idx]))
    matches: Dict[int, int] = {}
    used_gt = set()
    for o in order:
        d, g = int(det_idx[o]), int(gt_idx[o])
        if d in matches or g in used_gt:
            continue
        matches[d] = g
        used_gt.add(g)
    return matches


def classify_yolo_outcomes(
    detections: Sequence[Detection],
    gt_boxes: Sequence[GroundTruth],
    target_class: int,
    iou_threshold: float,
    prob_threshold: float = DEFAULT_PROB_THRESHOLD,
) -> List[YoloState]:
    """Detector states of one scene for one target class.

    - target prediction matched to a target GT: TP; any other target prediction: FP
    - non-target prediction not matched to a target GT: TN (correct rejection)
    - target GT without a TP: FN, carrying the box of the detection that covers
      it best (its matched detection, else the highest positive IoU), or none
    - no target GT and no target prediction: one extra boxless TN
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    kept = [(i, d) for i, d in enumerate(detections) if d.confidence >= prob_threshold]
    boxes = [d.box for _, d in kept]
    matches = greedy_match(boxes, [g.box for g in gt_boxes], iou_threshold)

    states: List[YoloState] = []
    confirmed_gt = set()
    for k, (i, det) in enumerate(kept):
        j = matches.get(k)
        gt_is_target = j is not None and gt_boxes[j].class_index == target_class
        if det.class_index == target_class:
            if gt_is_target:
                states.append(YoloState(State.TP, det.box, i))
                confirmed_gt.add(j)
            else:
                states.append(YoloState(State.FP, det.box, i))
        elif not gt_is_target:
            states.append(YoloState(State.TN, det.box, i))

    matched_by_gt = {g: k for k, g in matches.items()}
    for j, gt in enumerate(gt_boxes):
        if gt.class_index != target_class or j in confirmed_gt:
            continue
        k = matched_by_gt.get(j)
        if k is None and kept:
            overlaps = [iou(b, gt.box) for b in boxes]
            best = int(np.argmax(overlaps))
            k = best if overlaps[best] > 0 else None
        if k is None:
            states.append(YoloState(State.FN))
        else:
            states.append(YoloState(State.FN, kept[k][1].box, kept[k][0]))

    has_target_gt = any(g.class_index == target_class for g in gt_boxes)
    has_target_pred = any(d.class_index == target_class for _, d in kept)
    if not has_target_gt and not has_target_pred:
        states.append(YoloState(State.TN))
    return states


def vit_transition(yolo_state, vit_positive: bool) -> State:
    state = yolo_state.state if isinstance(yolo_state, YoloState) else State(yolo_state)
    return TRANSITIONS[(state, bool(vit_positive))]


def vit_states(states: Iterable[YoloState], decide: Callable[[YoloState], bool]) -> List[State]:
    """Second-stage states; boxless states cannot be re-examined and count as negative."""
    return [vit_transition(s, decide(s) if s.has_box else False) for s in states]


def tally(states: Iterable) -> ConfusionCounts:
    counts = ConfusionCounts()
    for s in states:
        counts.add(s.state if isinstance(s, YoloState) else State(s))
    return counts


def sum_counts(counts: Iterable[ConfusionCounts]) -> ConfusionCounts:
    total = ConfusionCounts()
    for c in counts:
        total = total + c
    return total
