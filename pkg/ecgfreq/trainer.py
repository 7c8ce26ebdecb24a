"""Fold training

Available Functions:
    - EarlyStopping: strict-improvement patience rule
    - class_weights: inverse-frequency CE weights n_total / (2 * n_class)
    - train_fold: one fold, best checkpoint + epoch log + validation predictions
    - cross_validate: every fold of a split, optionally in parallel workers
    - write_epoch_log / read_epoch_log: `epochs.csv`
"""

from dataclasses import dataclass, asdict
from pathlib import Path
import logging
import copy

from joblib import Parallel, delayed
from tqdm import tqdm
import pandas as pd
import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader, TensorDataset

from .cohort import SplitAssignment, fold_name
from .config import ARCHS, TrainConfig
from .errors import DivergedLoss, EmptyInput, FoldCountMismatch, PatientLeak, SingleClassInput
from .metrics import PredictionSet, auroc, classification_metrics, confusion_matrix
from .models import ModelCheckpoint, build_model, forward
from .store import EcgRecord
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

EPOCH_COLUMNS = ['epoch', 'train_loss', 'val_loss', 'val_auroc', 'val_f1']


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_auroc: float
    val_f1: float


class EarlyStopping:
    """Stop after `patience` epochs without a strict improvement beyond `min_delta`.

    Examples:
        ```python
        stopper = EarlyStopping('max', patience=2)
        [stopper.step(v, e) for e, v in enumerate([0.8, 0.9, 0.9, 0.9], start=1)]
        stopper.should_stop, stopper.best_epoch   # True, 2
        ```
    """

    def __init__(self, mode: str = 'max', patience: int = 10, min_delta: float = 1e-6):
        if mode not in ('max', 'min'):
            raise ValueError(f'mode must be max or min, got {mode!r}')
        self.mode = mode
        self.patience = patience
        self.min_delta = min_delta
        self.best = None
        self.best_epoch = None
        self.wait = 0

    def improves(self, value: float) -> bool:
        if not np.isfinite(value):
            return False
        if self.best is None:
            return True
        if self.mode == 'max':
            return value > self.best + self.min_delta
        return value < self.best - self.min_delta

    def step(self, value: float, epoch: int) -> bool:
        """Record one epoch; True if it is the new best."""
        if self.improves(value):
            self.best, self.best_epoch, self.wait = value, epoch, 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


def class_weights(y) -> tuple[float, float]:
    y = np.asarray(y, dtype=int)
    counts = np.bincount(y, minlength=2)
    if (counts == 0).any():
        raise SingleClassInput(f'class weights need both classes, got counts {counts.tolist()}')
    return tuple(float(len(y) / (2 * c)) for c in counts)


def derive_seed(seed: int, arch_id: str, fs_hz: int, fold_index: int) -> int:
    """Independent stream per (arch, fs, fold)."""
    ss = np.random.SeedSequence([seed, ARCHS.index(arch_id), fs_hz, fold_index])
    return int(ss.generate_state(1)[0])


def stack_records(records: list[EcgRecord]) -> tuple[np.ndarray, np.ndarray]:
    if not records:
        raise EmptyInput('no records to stack')
    X = np.stack([r.leads for r in records]).astype(np.float32)
    y = np.array([r.y for r in records], dtype=np.int64)
    return X, y


def check_disjoint(train_records: list[EcgRecord], val_records: list[EcgRecord]) -> None:
    train_patients = {r.patient_id for r in train_records}
    shared = train_patients & {r.patient_id for r in val_records}
    if shared:
        raise PatientLeak(f'{len(shared)} patient(s) in both train and val, e.g. {sorted(shared)[:3]}')
    shared = {r.record_id for r in train_records} & {r.record_id for r in val_records}
    if shared:
        raise PatientLeak(f'{len(shared)} record(s) in both train and val, e.g. {sorted(shared)[:3]}')


def train_one_epoch(model: nn.Module, loader: DataLoader, criterion, optimizer, device: str = 'cpu') -> float:
    model.train()
    total, n = 0.0, 0
    for xb, yb in loader:
        xb, yb = xb.to(device), yb.to(device)
        optimizer.zero_grad()
        loss = criterion(forward(model, xb), yb)
        if not torch.isfinite(loss):
            raise DivergedLoss(f'non-finite training loss {loss.item()}')
        loss.backward()
        optimizer.step()
        total += loss.item() * len(yb)
        n += len(yb)
    return total / max(n, 1)


@torch.no_grad()
def predict_logits(model: nn.Module, X: np.ndarray, batch_size: int = 256, device: str = 'cpu') -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, len(X), batch_size):
        xb = torch.from_numpy(np.ascontiguousarray(X[start:start + batch_size])).to(device)
        out.append(forward(model, xb).cpu().numpy())
    return np.concatenate(out).astype(np.float64) if out else np.zeros((0, 2))


def _evaluate(model, X, y, criterion, batch_size, device) -> tuple[np.ndarray, float, float, float]:
    z = predict_logits(model, X, batch_size, device)
    val_loss = float(criterion(torch.from_numpy(z).float(), torch.from_numpy(y)).item())
    ps = PredictionSet(list(range(len(y))), z, y)
    val_auroc = auroc(ps.p1, y) if len(np.unique(y)) == 2 else float('nan')
    val_f1 = classification_metrics(confusion_matrix(y, ps.decisions())).f1
    return z, val_loss, val_auroc, val_f1


def train_fold(
    config: TrainConfig,
    train_records: list[EcgRecord],
    val_records: list[EcgRecord],
    fold_index: int = 0,
    progress: bool = True,
) -> tuple[ModelCheckpoint, list[EpochLog], PredictionSet]:
    """訓練單一 fold

    Args:
        config (TrainConfig): 已綁定 fs_hz 的訓練設定
        train_records (list[EcgRecord]): 訓練紀錄 (同一取樣率)
        val_records (list[EcgRecord]): 驗證紀錄，患者不可與訓練集重疊
        fold_index (int): fold 編號，決定亂數流
        progress (bool): 是否顯示 tqdm 進度條

    Returns:
        tuple: (最佳 epoch 的 ModelCheckpoint, 每個 epoch 的 EpochLog, 最佳模型的驗證集 PredictionSet)

    Examples:
        ```python
        cfg = TrainConfig(arch_id='cnn1d', max_epochs=3).for_fs(62)
        ckpt, logs, val = train_fold(cfg, train_records, val_records, fold_index=0)
        ckpt.best_epoch, logs[-1].val_f1
        ```

    Note:
        - 最佳 epoch 依 `early_stop_metric` 判斷，需嚴格改善超過 1e-6
        - 回傳最佳而非最後一個 epoch 的權重
    """
    check_disjoint(train_records, val_records)
    fs_hz = config.fs_hz if config.fs_hz is not None else train_records[0].fs_hz
    seed = derive_seed(config.seed, config.arch_id, fs_hz, fold_index)
    device = config.device
    context = f'{config.arch_id}/{fs_hz}hz/{fold_name(fold_index)}'

    X_train, y_train = stack_records(train_records)
    X_val, y_val = stack_records(val_records)
    weights = config.class_weights or class_weights(y_train)
    logger.info(f'{context}: {len(y_train)} train / {len(y_val)} val records, class weights {weights}')

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = build_model(config.arch_id, config.dropout_p, seed=seed).to(device)
        criterion = nn.CrossEntropyLoss(weight=torch.tensor(weights, dtype=torch.float32, device=device))
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999), eps=1e-8)
        # constant learning rate
        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda epoch: 1.0)

        loader = DataLoader(
            TensorDataset(torch.from_numpy(X_train), torch.from_numpy(y_train)),
            batch_size=config.batch_size,
            shuffle=True,
            drop_last=len(y_train) % config.batch_size == 1,
            generator=torch.Generator().manual_seed(seed),
        )
        val_criterion = nn.CrossEntropyLoss(weight=torch.tensor(weights, dtype=torch.float32))

        mode = 'max' if config.early_stop_metric == 'val_f1' else 'min'
        stopper = EarlyStopping(mode, config.patience)
        logs, best_state, best_f1 = [], None, float('nan')

        epochs = tqdm(range(1, config.max_epochs + 1), desc=context, disable=not progress, leave=False)
        for epoch in epochs:
            train_loss = train_one_epoch(model, loader, criterion, optimizer, device)
            scheduler.step()
            _, val_loss, val_auroc, val_f1 = _evaluate(model, X_val, y_val, val_criterion, config.batch_size, device)
            if not np.isfinite(val_loss):
                raise DivergedLoss(f'{context}: non-finite validation loss at epoch {epoch}')

            log = EpochLog(epoch, train_loss, val_loss, val_auroc, val_f1)
            logs.append(log)
            logger.info(f'{context} epoch {epoch}: train_loss={train_loss:.4f} val_loss={val_loss:.4f} '
                        f'val_auroc={val_auroc:.4f} val_f1={val_f1:.4f}')

            if stopper.step(val_f1 if mode == 'max' else val_loss, epoch):
                best_state = copy.deepcopy(model.state_dict())
                best_f1 = val_f1
            if stopper.should_stop:
                logger.info(f'{context}: early stop after epoch {epoch}, best epoch {stopper.best_epoch}')
                break

    if best_state is None:
        best_state = copy.deepcopy(model.state_dict())
        stopper.best_epoch = logs[-1].epoch
        best_f1 = logs[-1].val_f1
    model.load_state_dict(best_state)

    z_val = predict_logits(model, X_val, config.batch_size, device)
    val_predictions = PredictionSet([r.record_id for r in val_records], z_val, y_val, context)
    ckpt = ModelCheckpoint(
        arch_id=config.arch_id,
        fs_hz=fs_hz,
        fold_index=fold_index,
        dropout_p=config.dropout_p,
        best_epoch=stopper.best_epoch,
        best_val_f1=best_f1,
        state_dict={k: v.detach().cpu() for k, v in best_state.items()},
    )
    return ckpt, logs, val_predictions


def fold_records(records: list[EcgRecord], split: SplitAssignment, fold_index: int) -> tuple[list[EcgRecord], list[EcgRecord]]:
    """(train, val) for one fold: val = fold i, train = every other fold."""
    val_name = fold_name(fold_index)
    train, val = [], []
    for r in records:
        part = split.assignment.get(r.patient_id)
        if part == val_name:
            val.append(r)
        elif part is not None and part.startswith('fold'):
            train.append(r)
    return train, val


def cross_validate(
    config: TrainConfig,
    pool: list[EcgRecord],
    split: SplitAssignment,
    n_jobs: int = 1,
) -> tuple[list[ModelCheckpoint], list[list[EpochLog]], list[PredictionSet]]:
    """k-fold training on the balanced pool; outputs are ordered by fold index.

    Examples:
        ```python
        ckpts, logs, val_sets = cross_validate(cfg.train_config('cnn1d', 62), pool, split)
        len(ckpts) == split.k
        ```
    """
    if split.k < 2:
        raise FoldCountMismatch(f'split has {split.k} folds')
    if config.early_stop_metric == 'val_f1':
        logger.warning('early stopping monitors val F1, not val loss; set early_stop_metric="val_loss" to monitor the loss')

    jobs = [fold_records(pool, split, i) for i in range(split.k)]
    if n_jobs == 1:
        results = [train_fold(config, tr, va, i) for i, (tr, va) in enumerate(tqdm(jobs, desc=f'{config.arch_id}/{config.fs_hz}hz folds'))]
    else:
        results = Parallel(n_jobs=n_jobs)(delayed(train_fold)(config, tr, va, i, False) for i, (tr, va) in enumerate(jobs))

    ckpts, logs, val_sets = (list(x) for x in zip(*results))
    return ckpts, logs, val_sets


def write_epoch_log(logs: list[EpochLog], path: str | Path, config_hash: str = None) -> Path:
    return write_csv(pd.DataFrame([asdict(l) for l in logs], columns=EPOCH_COLUMNS), path, config_hash=config_hash)


def read_epoch_log(path: str | Path) -> list[EpochLog]:
    df = read_csv(path)
    return [EpochLog(int(r.epoch), r.train_loss, r.val_loss, r.val_auroc, r.val_f1) for r in df.itertuples(index=False)]
