"""Evaluation math

Available Functions:
    - softmax_prob / decide: logits -> P(AFIB) -> label at tau
    - confusion_matrix / classification_metrics: accuracy, precision, sensitivity, specificity, f1, mcc
    - auroc / roc_curve / pr_curve / mean_curve_with_band
    - brier / ece / ece_conf: calibration
    - ensemble_logits / pooled_confusion: fold aggregation

AFIB (label 1) is the positive class everywhere.
"""

from dataclasses import dataclass, field
from pathlib import Path
import logging

import pandas as pd
import numpy as np
from scipy.special import expit
from scipy.stats import rankdata
from sklearn import metrics as skm

from .errors import (
    DegenerateCurve, EmptyInput, EmptyMatrix, FoldCountMismatch, MisalignedRecords,
    NonFiniteLogit, OverlapDetected, SingleClass,
)
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ['record_id', 'context', 'z0', 'z1', 'p1', 'label']
METRIC_NAMES = ['accuracy', 'precision', 'sensitivity', 'specificity', 'f1', 'mcc']


def softmax_prob(z0, z1):
    """P(AFIB) = exp(z1) / (exp(z0) + exp(z1)), evaluated as expit(z1 - z0).

    Examples:
        ```python
        softmax_prob(0, 0)          # 0.5
        softmax_prob(2, 1)          # 0.2689...
        softmax_prob(-1000, 1000)   # 1.0
        ```
    """
    z0, z1 = np.asarray(z0, dtype=np.float64), np.asarray(z1, dtype=np.float64)
    if not (np.isfinite(z0).all() and np.isfinite(z1).all()):
        raise NonFiniteLogit('logits must be finite')
    p1 = expit(z1 - z0)
    return float(p1) if p1.ndim == 0 else p1


def decide(p1, tau: float = 0.5):
    """1 iff p1 >= tau."""
    out = (np.asarray(p1) >= tau).astype(int)
    return int(out) if out.ndim == 0 else out


@dataclass
class PredictionSet:
    """Per-record logits, P(AFIB) and labels of one context (`cnn1d/62hz/fold0`, `.../ensemble`)."""
    record_ids: list[str]
    z: np.ndarray
    y: np.ndarray
    context: str = ''
    p1: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.record_ids = [str(r) for r in self.record_ids]
        self.z = np.asarray(self.z, dtype=np.float64).reshape(-1, 2)
        self.y = np.asarray(self.y, dtype=int).reshape(-1)
        if not len(self.record_ids) == len(self.z) == len(self.y):
            raise MisalignedRecords(f'{self.context}: {len(self.record_ids)} ids, {len(self.z)} logits, {len(self.y)} labels')
        self.p1 = np.atleast_1d(softmax_prob(self.z[:, 0], self.z[:, 1])) if len(self.z) else np.zeros(0)

    @classmethod
    def from_logits(cls, record_ids, z, y, context: str = '') -> 'PredictionSet':
        return cls(list(record_ids), z, y, context)

    def __len__(self) -> int:
        return len(self.record_ids)

    def decisions(self, tau: float = 0.5) -> np.ndarray:
        return np.atleast_1d(decide(self.p1, tau))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'record_id': self.record_ids,
            'context': self.context,
            'z0': self.z[:, 0],
            'z1': self.z[:, 1],
            'p1': self.p1,
            'label': self.y,
        }, columns=PREDICTION_COLUMNS)

    def to_csv(self, path: str | Path, config_hash: str = None) -> Path:
        return write_csv(self.to_frame(), path, config_hash=config_hash)

    @classmethod
    def from_csv(cls, path: str | Path) -> 'PredictionSet':
        df = read_csv(path, dtype={'record_id': str, 'context': str})
        missing = [c for c in PREDICTION_COLUMNS if c not in df.columns]
        if missing:
            raise MisalignedRecords(f'{path}: missing column(s) {missing}')
        context = df['context'].iloc[0] if len(df) else ''
        return cls(df['record_id'].tolist(), df[['z0', 'z1']].to_numpy(), df['label'].to_numpy(), context)


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int = 0
    fp: int = 0
    fn: int = 0
    tp: int = 0

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def __add__(self, other: 'ConfusionMatrix') -> 'ConfusionMatrix':
        return ConfusionMatrix(self.tn + other.tn, self.fp + other.fp, self.fn + other.fn, self.tp + other.tp)

    def as_array(self) -> np.ndarray:
        """[[tn, fp], [fn, tp]], rows = true label."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]])


def confusion_matrix(y_true, y_pred) -> ConfusionMatrix:
    y_true, y_pred = np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)
    if len(y_true) == 0:
        return ConfusionMatrix()
    tn, fp, fn, tp = skm.confusion_matrix(y_true, y_pred, labels=[0, 1]).ravel()
    return ConfusionMatrix(int(tn), int(fp), int(fn), int(tp))


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    mcc: float
    degenerate: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _ratio(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return float(num / den)


def classification_metrics(cm: ConfusionMatrix) -> ClassificationMetrics:
    """由混淆矩陣計算分類指標

    Args:
        cm (ConfusionMatrix): 以 AFIB 為陽性的混淆矩陣

    Returns:
        ClassificationMetrics: accuracy, precision, sensitivity, specificity, f1, mcc；
            分母為 0 的指標記為 0 並列在 `degenerate`

    Examples:
        ```python
        m = classification_metrics(ConfusionMatrix(tn=9, fp=1, fn=2, tp=8))
        m.sensitivity, m.specificity, round(m.mcc, 4)   # 0.8, 0.9, 0.7035
        ```
    """
    if cm.total == 0:
        raise EmptyMatrix('confusion matrix has no records')
    flags = []
    tp, tn, fp, fn = cm.tp, cm.tn, cm.fp, cm.fn

    accuracy = (tp + tn) / cm.total
    precision = _ratio(tp, tp + fp, 'precision', flags)
    sensitivity = _ratio(tp, tp + fn, 'sensitivity', flags)
    specificity = _ratio(tn, tn + fp, 'specificity', flags)
    f1 = _ratio(2 * precision * sensitivity, precision + sensitivity, 'f1', flags)
    mcc = _ratio(tp * tn - fp * fn, np.sqrt(float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)), 'mcc', flags)

    if flags:
        logger.warning(f'0/0 metric ratios set to 0: {flags} ({cm})')
    return ClassificationMetrics(accuracy, precision, sensitivity, specificity, f1, mcc, tuple(flags))


def _binary_inputs(p1, y) -> tuple[np.ndarray, np.ndarray]:
    p1, y = np.asarray(p1, dtype=np.float64).reshape(-1), np.asarray(y, dtype=int).reshape(-1)
    if len(p1) != len(y):
        raise MisalignedRecords(f'{len(p1)} scores vs {len(y)} labels')
    return p1, y


def _require_both_classes(y: np.ndarray) -> None:
    if not (y == 1).any() or not (y == 0).any():
        raise SingleClass('both classes must be present')


def auroc(p1, y) -> float:
    """Mann-Whitney AUROC from average ranks; ties count one half."""
    p1, y = _binary_inputs(p1, y)
    _require_both_classes(y)
    ranks = rankdata(p1)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


@dataclass
class Curve:
    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray

    def area(self) -> float:
        return float(skm.auc(self.x, self.y))

    def to_frame(self, x_name: str = 'x', y_name: str = 'y') -> pd.DataFrame:
        return pd.DataFrame({x_name: self.x, y_name: self.y, 'threshold': self.thresholds})


def roc_curve(p1, y) -> Curve:
    """(fpr, tpr) over every unique score, thresholds descending."""
    p1, y = _binary_inputs(p1, y)
    _require_both_classes(y)
    fpr, tpr, thr = skm.roc_curve(y, p1, drop_intermediate=False)
    return Curve(fpr, tpr, thr)


def pr_curve(p1, y) -> Curve:
    """(recall, precision), thresholds descending; no-skill level = prevalence."""
    p1, y = _binary_inputs(p1, y)
    _require_both_classes(y)
    precision, recall, thr = skm.precision_recall_curve(y, p1)
    return Curve(recall[::-1], precision[::-1], np.r_[np.inf, thr[::-1]])


def mean_curve_with_band(curves: list[Curve], grid=None) -> pd.DataFrame:
    """各 fold 曲線內插至共同網格後取平均與母體標準差

    Args:
        curves (list[Curve]): k >= 2 條曲線
        grid (array-like, optional): 內插網格，預設 [0,1] 上 101 點

    Returns:
        pd.DataFrame: 欄位 `x, y_mean, y_std`

    Note:
        - 同一 x 有多個 y (ROC 的垂直段) 時取最大值
    """
    if len(curves) < 2:
        raise DegenerateCurve(f'need at least 2 curves, got {len(curves)}')
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    ys = np.vstack([interpolate_curve(c, grid) for c in curves])
    return pd.DataFrame({'x': grid, 'y_mean': ys.mean(axis=0), 'y_std': ys.std(axis=0)})


def default_grid(size: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, size)


def interpolate_curve(curve: Curve, grid) -> np.ndarray:
    """Linear interpolation onto `grid`; duplicate x keep the largest y."""
    x, y = np.asarray(curve.x, dtype=np.float64), np.asarray(curve.y, dtype=np.float64)
    if len(x) == 0 or not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DegenerateCurve('curve is empty or non-finite')
    top = pd.Series(y).groupby(x).max()
    if len(top) < 2:
        raise DegenerateCurve('curve has a single x value')
    return np.interp(np.asarray(grid, dtype=np.float64), top.index.to_numpy(), top.to_numpy())


def brier(p1, y) -> float:
    p1, y = _binary_inputs(p1, y)
    if len(p1) == 0:
        raise EmptyInput('brier needs at least one record')
    return float(np.mean((p1 - y) ** 2))


def _calibration_bins(score: np.ndarray, target: np.ndarray, n_bins: int) -> pd.DataFrame:
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # [lo, hi) except the last bin, closed at 1.0
    idx = np.searchsorted(edges[1:-1], score, side='right')
    count = np.bincount(idx, minlength=n_bins)
    sum_p = np.bincount(idx, weights=score, minlength=n_bins)
    sum_y = np.bincount(idx, weights=target, minlength=n_bins)
    nonempty = count > 0
    with np.errstate(invalid='ignore', divide='ignore'):
        mean_p = np.where(nonempty, sum_p / count, np.nan)
        pos_rate = np.where(nonempty, sum_y / count, np.nan)
    return pd.DataFrame({'lo': edges[:-1], 'hi': edges[1:], 'count': count, 'mean_p': mean_p, 'pos_rate': pos_rate})


def _weighted_gap(bins: pd.DataFrame) -> float:
    filled = bins[bins['count'] > 0]
    n = filled['count'].sum()
    return float(((filled['count'] / n) * (filled['pos_rate'] - filled['mean_p']).abs()).sum())


def ece(p1, y, n_bins: int = 10) -> tuple[float, pd.DataFrame]:
    """Expected calibration error on P(AFIB) with equal-width bins.

    Returns:
        tuple: (ECE, bins frame `lo, hi, count, mean_p, pos_rate`)

    Examples:
        ```python
        value, bins = ece([0.2, 0.2, 0.9, 0.9], [0, 1, 1, 1], n_bins=2)   # 0.2
        ```
    """
    p1, y = _binary_inputs(p1, y)
    if len(p1) == 0:
        raise EmptyInput('ece needs at least one record')
    if n_bins < 1:
        raise EmptyInput(f'n_bins must be >= 1, got {n_bins}')
    bins = _calibration_bins(p1, y.astype(np.float64), n_bins)
    return _weighted_gap(bins), bins


def ece_conf(p1, y, n_bins: int = 10, tau: float = 0.5) -> float:
    """Confidence-vs-accuracy form: confidence = max(p1, 1 - p1)."""
    p1, y = _binary_inputs(p1, y)
    if len(p1) == 0:
        raise EmptyInput('ece_conf needs at least one record')
    confidence = np.maximum(p1, 1.0 - p1)
    correct = (np.atleast_1d(decide(p1, tau)) == y).astype(np.float64)
    return _weighted_gap(_calibration_bins(confidence, correct, n_bins))


def ensemble_logits(per_fold: list[PredictionSet], k: int = None, context: str = 'ensemble') -> PredictionSet:
    """Mean of fold logits, then softmax. Not the mean of fold probabilities."""
    if not per_fold or (k is not None and len(per_fold) != k):
        raise FoldCountMismatch(f'expected {k} fold prediction sets, got {len(per_fold)}')
    first = per_fold[0]
    for ps in per_fold[1:]:
        if ps.record_ids != first.record_ids:
            raise MisalignedRecords(f'{ps.context}: record ids differ from {first.context}')
        if not np.array_equal(ps.y, first.y):
            raise MisalignedRecords(f'{ps.context}: labels differ from {first.context}')
    z = np.mean(np.stack([ps.z for ps in per_fold]), axis=0)
    return PredictionSet(list(first.record_ids), z, first.y.copy(), context)


def pooled_confusion(per_fold: list[PredictionSet], tau: float = 0.5) -> ConfusionMatrix:
    seen = set()
    pooled = ConfusionMatrix()
    for ps in per_fold:
        ids = set(ps.record_ids)
        overlap = seen & ids
        if overlap or len(ids) != len(ps.record_ids):
            raise OverlapDetected(f'{ps.context}: record(s) evaluated twice, e.g. {sorted(overlap)[:3]}')
        seen |= ids
        pooled = pooled + confusion_matrix(ps.y, ps.decisions(tau))
    return pooled
