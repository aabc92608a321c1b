"""Fold splitting and significance testing for repeated-split trials."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import stats
from sklearn.model_selection import ShuffleSplit

from .errors import SplitError, ZeroVarianceError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    mean_a: float
    mean_b: float
    std_a: float
    std_b: float

    def to_dict(self) -> dict:
        return asdict(self)


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Arithmetic mean and population (divide by n) standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_std of an empty sequence")
    return float(arr.mean()), float(arr.std(ddof=0))


def unpaired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Student's equal-variance two-sample t-test, two-sided."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise SplitError(f"each sample needs at least two values, got {a.size} and {b.size}")
    df = a.size + b.size - 2
    # pooled variance is zero exactly when both samples are constant
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        raise ZeroVarianceError("pooled variance is zero; the t statistic is undefined")
    t_stat, p_val = stats.ttest_ind(a, b, equal_var=True)
    ma, sa = mean_std(a)
    mb, sb = mean_std(b)
    return TTestResult(float(t_stat), float(p_val), int(df), ma, mb, sa, sb)


def zfold_split(size: int, z: int = 10, seed: int = 0, test_size: float = 0.2) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Z independent random (train, val) index partitions of range(size)."""
    if z < 2:
        raise SplitError(f"a z-fold trial needs Z >= 2, got {z}")
    if size < z:
        raise SplitError(f"cannot draw {z} folds from {size} items")
    if not 0.0 < test_size < 1.0:
        raise SplitError(f"test_size must lie in (0, 1), got {test_size}")
    splitter = ShuffleSplit(n_splits=z, test_size=test_size, random_state=seed)
    folds = [(np.sort(tr), np.sort(va)) for tr, va in splitter.split(np.arange(size))]
    logger.info("drew %d folds of %d/%d items", z, len(folds[0][0]), len(folds[0][1]))
    return folds
