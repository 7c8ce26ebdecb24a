"""Cohort construction

Available Functions:
    - filter_labels: keep AFIB / NORM
    - holdout_split: patient-level stratified test holdout
    - undersample_balance: drop majority-class records down to the minority count
    - stratified_patient_kfold: round-robin patient folds per stratum
    - merge_splits / make_splits: the full split, as written to `splits.csv`

Examples:
    ```python
    manifest = filter_labels(read_manifest('manifest.csv'))
    split, balanced = make_splits(manifest, SplitParams(test_frac=0.3, folds=5, seed=42))
    split.to_csv('out/splits.csv')
    ```
"""

from dataclasses import dataclass, field
from pathlib import Path
import logging

import pandas as pd
import numpy as np

from .config import SplitParams
from .errors import ConfigError, DataError, EmptyManifest, SingleClassInput, TooFewPatients
from .store import DatasetManifest, Label
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
TEST = 'test'
TRAIN = 'train'
EXCLUDED = 'excluded'
STRATA = (Label.AFIB.value, Label.NORM.value)


def fold_name(i: int) -> str:
    return f'fold{i}'


class SplitMix64:
    """64-bit SplitMix stream; the shuffle order of every split depends on it."""

    GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next(self) -> int:
        self.state = (self.state + self.GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def shuffle(self, items: list) -> list:
        """Fisher-Yates from the back: j = next() mod (remaining length)."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.next() % (i + 1)
            out[i], out[j] = out[j], out[i]
        return out


@dataclass
class SplitAssignment:
    seed: int
    k: int
    assignment: dict[str, str] = field(default_factory=dict)

    def partition_of(self, patient_id: str) -> str:
        return self.assignment[patient_id]

    def patients_in(self, partition: str) -> list[str]:
        return [p for p, a in self.assignment.items() if a == partition]

    def records_in(self, manifest: DatasetManifest, partition: str) -> DatasetManifest:
        patients = set(self.patients_in(partition))
        return manifest.subset(manifest.frame['patient_id'].isin(patients))

    def record_partitions(self, manifest: DatasetManifest) -> pd.Series:
        """Partition of every record, inherited from its patient."""
        return manifest.frame.set_index('record_id')['patient_id'].map(self.assignment)

    def counts(self) -> dict[str, int]:
        return pd.Series(self.assignment, dtype=object).value_counts().to_dict()

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(sorted(self.assignment.items()), columns=['patient_id', 'assignment'])
        return df

    def to_csv(self, path: str | Path, config_hash: str = None) -> Path:
        if TRAIN in self.assignment.values():
            raise DataError('split still has patients pending fold assignment')
        return write_csv(self.to_frame(), path, config_hash=config_hash)

    @classmethod
    def from_csv(cls, path: str | Path, seed: int = 0) -> 'SplitAssignment':
        df = read_csv(path, dtype=str, keep_default_na=False)
        if list(df.columns) != ['patient_id', 'assignment']:
            raise DataError(f'{path}: expected header patient_id,assignment')
        folds = {a for a in df['assignment'] if a.startswith('fold')}
        return cls(seed=seed, k=len(folds), assignment=dict(zip(df['patient_id'], df['assignment'])))


def filter_labels(manifest: DatasetManifest) -> DatasetManifest:
    keep = manifest.frame['label'].isin(STRATA)
    if (~keep).any():
        logger.info(f'filter_labels: dropped {int((~keep).sum())} records outside {STRATA}')
    return manifest.subset(keep)


def patient_labels(manifest: DatasetManifest) -> pd.Series:
    """患者層級標籤：任一筆紀錄為 AFIB 即為 AFIB，否則 NORM

    Returns:
        pd.Series: index 為 patient_id (依首次出現順序)，值為 'AFIB' / 'NORM'
    """
    is_afib = manifest.frame['label'].eq(Label.AFIB.value)
    any_afib = is_afib.groupby(manifest.frame['patient_id'], sort=False).any()
    return any_afib.map({True: Label.AFIB.value, False: Label.NORM.value})


def _shuffled_strata(labels: pd.Series, rng: SplitMix64) -> dict[str, list[str]]:
    # AFIB stratum consumes the stream first
    return {s: rng.shuffle(labels.index[labels == s].tolist()) for s in STRATA}


def holdout_split(manifest: DatasetManifest, test_frac: float = 0.3, seed: int = 42) -> SplitAssignment:
    """切出獨立測試集 (以患者為單位)

    Args:
        manifest (DatasetManifest): 已過濾標籤的索引
        test_frac (float): 各層測試患者比例，每層取 floor(test_frac * 層大小)
        seed (int): SplitMix64 種子

    Returns:
        SplitAssignment: 測試患者為 'test'，其餘為 'train' (待分 fold)

    Examples:
        ```python
        holdout = holdout_split(manifest, test_frac=0.3, seed=42)
        holdout.counts()    # {'train': 7053, 'test': 3023}
        ```
    """
    if len(manifest) == 0:
        raise EmptyManifest('cannot split an empty manifest')
    if not 0 < test_frac < 1:
        raise ConfigError(f'test_frac must be in (0, 1), got {test_frac}')

    labels = patient_labels(manifest)
    rng = SplitMix64(seed)
    assignment = {}
    for stratum, patients in _shuffled_strata(labels, rng).items():
        n_test = int(np.floor(test_frac * len(patients)))
        for i, p in enumerate(patients):
            assignment[p] = TEST if i < n_test else TRAIN

    split = SplitAssignment(seed=seed, k=0, assignment={p: assignment[p] for p in labels.index})
    logger.info(f'holdout_split: {split.counts()}')
    return split


def undersample_balance(manifest: DatasetManifest, seed: int = 42) -> DatasetManifest:
    """Keep every minority record plus an equal-size seeded sample of the majority."""
    counts = manifest.frame['label'].value_counts()
    if any(counts.get(s, 0) == 0 for s in STRATA):
        raise SingleClassInput(f'undersampling needs both classes, got {counts.to_dict()}')

    n_min = int(min(counts[s] for s in STRATA))
    majority = max(STRATA, key=lambda s: (counts[s], s == Label.NORM.value))
    majority_ids = manifest.frame.loc[manifest.frame['label'] == majority, 'record_id'].tolist()
    kept = set(SplitMix64(seed).shuffle(majority_ids)[:n_min])

    keep = (manifest.frame['label'] != majority) | manifest.frame['record_id'].isin(kept)
    balanced = manifest.subset(keep)
    logger.info(f'undersample_balance: {len(manifest)} -> {len(balanced)} records ({n_min} per class)')
    return balanced


def stratified_patient_kfold(manifest: DatasetManifest, k: int = 5, seed: int = 42) -> SplitAssignment:
    if k < 2:
        raise ConfigError(f'k must be >= 2, got {k}')
    labels = patient_labels(manifest)
    per_class = labels.value_counts()
    short = {s: int(per_class.get(s, 0)) for s in STRATA if per_class.get(s, 0) < k}
    if short:
        raise TooFewPatients(f'{k} folds need >= {k} patients per class, got {short}')

    rng = SplitMix64(seed)
    assignment = {}
    for stratum, patients in _shuffled_strata(labels, rng).items():
        for i, p in enumerate(patients):
            assignment[p] = fold_name(i % k)

    return SplitAssignment(seed=seed, k=k, assignment={p: assignment[p] for p in labels.index})


def merge_splits(holdout: SplitAssignment, kfold: SplitAssignment) -> SplitAssignment:
    """Test patients stay test; pool patients take their fold or become excluded."""
    leak = set(kfold.assignment) & set(holdout.patients_in(TEST))
    if leak:
        raise DataError(f'{len(leak)} test patient(s) found in the fold assignment')
    merged = {
        p: (TEST if a == TEST else kfold.assignment.get(p, EXCLUDED))
        for p, a in holdout.assignment.items()
    }
    return SplitAssignment(seed=holdout.seed, k=kfold.k, assignment=merged)


def make_splits(manifest: DatasetManifest, params: SplitParams) -> tuple[SplitAssignment, DatasetManifest]:
    """Holdout -> undersample the training pool -> k-fold on the balanced pool.

    Returns:
        tuple: (merged split, balanced training-pool manifest)
    """
    holdout = holdout_split(manifest, params.test_frac, params.seed)
    pool = holdout.records_in(manifest, TRAIN)
    balanced = undersample_balance(pool, params.seed)
    kfold = stratified_patient_kfold(balanced, params.folds, params.seed)
    split = merge_splits(holdout, kfold)
    logger.info(f'make_splits: {split.counts()}')
    return split, balanced
