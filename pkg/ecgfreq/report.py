"""Per-cell reports and the cross-frequency comparison table

A cell is one (arch, fs) pair. Its report holds:
    - validation: mean and population std of every metric across folds
    - test: the fold ensemble on the naturally imbalanced test split
    - test_balanced: the same ensemble on a class-balanced test subset
plus pooled confusion matrices, mean ROC / PR curves with +-1 std bands and
calibration bins.
"""

from typing import Literal
from pathlib import Path
import logging

import pandas as pd
import numpy as np

from .config import ARCHS, ARCH_NAMES, MetricsParams
from .errors import SingleClass
from .metrics import (
    PredictionSet, auroc, brier, classification_metrics, confusion_matrix, default_grid, ece, ece_conf,
    interpolate_curve, mean_curve_with_band, pooled_confusion, pr_curve, roc_curve,
)
from .utils import mean_dfs, std_dfs, write_csv, write_json

logger = logging.getLogger(__name__)

SPLITS = ('validation', 'test', 'test_balanced')
SCALAR_METRICS = ['accuracy', 'f1', 'precision', 'sensitivity', 'specificity', 'mcc', 'auroc', 'ece', 'ece_conf', 'brier']
MONITOR_NOTE = 'best epoch chosen by val_f1 or val_loss; early_stop_metric per arch: {monitors}'


def calc_metrics(ps: PredictionSet, tau: float = 0.5, n_bins: int = 10) -> pd.Series:
    """單一預測集的全部純量指標

    Args:
        ps (PredictionSet): 預測結果
        tau (float): 決策門檻 (p1 >= tau 判為 AFIB)
        n_bins (int): ECE 分箱數

    Returns:
        pd.Series: accuracy, f1, precision, sensitivity, specificity, mcc, auroc, ece, ece_conf, brier, n

    Note:
        - 只有單一類別時 auroc 為 NaN
    """
    cm = confusion_matrix(ps.y, ps.decisions(tau))
    cls = classification_metrics(cm).as_dict()
    try:
        area = auroc(ps.p1, ps.y)
    except SingleClass:
        logger.warning(f'{ps.context}: single class, AUROC undefined')
        area = np.nan
    return pd.Series({
        **cls,
        'auroc': area,
        'ece': ece(ps.p1, ps.y, n_bins)[0],
        'ece_conf': ece_conf(ps.p1, ps.y, n_bins, tau),
        'brier': brier(ps.p1, ps.y),
        'n': len(ps),
    })[SCALAR_METRICS + ['n']]


def concat_predictions(sets: list[PredictionSet], context: str = '') -> PredictionSet:
    return PredictionSet(
        [r for ps in sets for r in ps.record_ids],
        np.concatenate([ps.z for ps in sets]),
        np.concatenate([ps.y for ps in sets]),
        context,
    )


class MetricsReport:
    """One (arch, fs) cell.

    Examples:
        ```python
        report = MetricsReport('cnn1d', 62, val_sets, test, test_balanced)
        report.table        # validation / test / test_balanced rows
        report.write('out/report', config_hash)
        ```
    """

    def __init__(
        self,
        arch_id: str,
        fs_hz: int,
        val_sets: list[PredictionSet],
        test: PredictionSet,
        test_balanced: PredictionSet = None,
        params: MetricsParams = None,
    ):
        self.arch_id = arch_id
        self.fs_hz = int(fs_hz)
        self.val_sets = val_sets
        self.test = test
        self.test_balanced = test_balanced
        self.params = params or MetricsParams()
        self.grid = default_grid(self.params.grid_size)

        # metrics
        self.fold_metrics = pd.DataFrame([calc_metrics(ps, self.params.tau, self.params.n_bins) for ps in val_sets])
        fold_rows = [row for _, row in self.fold_metrics.iterrows()]
        self.validation_mean = mean_dfs(fold_rows)
        self.validation_std = std_dfs(fold_rows, ddof=0)
        self.test_metrics = calc_metrics(test, self.params.tau, self.params.n_bins)
        self.test_balanced_metrics = calc_metrics(test_balanced, self.params.tau, self.params.n_bins) if test_balanced is not None else None

        # confusion
        self.confusion = {
            'validation': pooled_confusion(val_sets, self.params.tau),
            'test': confusion_matrix(test.y, test.decisions(self.params.tau)),
        }
        if test_balanced is not None:
            self.confusion['test_balanced'] = confusion_matrix(test_balanced.y, test_balanced.decisions(self.params.tau))

        # curves
        self.prevalence = float(np.mean(np.concatenate([ps.y for ps in val_sets])))
        self.curves = self.calc_curves()
        pooled = concat_predictions(val_sets)
        self.calibration = {
            'validation': ece(pooled.p1, pooled.y, self.params.n_bins)[1],
            'test': ece(test.p1, test.y, self.params.n_bins)[1],
        }

    @property
    def name(self) -> str:
        return f'{ARCH_NAMES.get(self.arch_id, self.arch_id)} @ {self.fs_hz} Hz'

    def calc_curves(self) -> dict[str, pd.DataFrame]:
        def single(curve):
            return pd.DataFrame({'x': self.grid, 'y_mean': interpolate_curve(curve, self.grid), 'y_std': 0.0})

        curves = {
            'roc_validation': mean_curve_with_band([roc_curve(ps.p1, ps.y) for ps in self.val_sets], self.grid),
            'pr_validation': mean_curve_with_band([pr_curve(ps.p1, ps.y) for ps in self.val_sets], self.grid),
        }
        if len(np.unique(self.test.y)) == 2:
            curves['roc_test'] = single(roc_curve(self.test.p1, self.test.y))
            curves['pr_test'] = single(pr_curve(self.test.p1, self.test.y))
        return curves

    @property
    def table(self) -> pd.DataFrame:
        rows = [
            {'split': 'validation', **self.validation_mean.to_dict(),
             **{f'{k}_std': v for k, v in self.validation_std.to_dict().items() if k != 'n'}},
            {'split': 'test', **self.test_metrics.to_dict()},
        ]
        if self.test_balanced_metrics is not None:
            rows.append({'split': 'test_balanced', **self.test_balanced_metrics.to_dict()})
        df = pd.DataFrame(rows)
        df.insert(0, 'fs_hz', self.fs_hz)
        df.insert(0, 'arch', self.arch_id)
        return df

    def confusion_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{'split': k, 'tn': cm.tn, 'fp': cm.fp, 'fn': cm.fn, 'tp': cm.tp} for k, cm in self.confusion.items()])

    def to_dict(self) -> dict:
        out = {
            'validation': {'mean': self.validation_mean.to_dict(), 'std': self.validation_std.to_dict()},
            'test': self.test_metrics.to_dict(),
            'prevalence_validation': self.prevalence,
            'confusion': {k: vars(cm) for k, cm in self.confusion.items()},
        }
        if self.test_balanced_metrics is not None:
            out['test_balanced'] = self.test_balanced_metrics.to_dict()
        return out

    def write(self, root: str | Path, config_hash: str = None) -> Path:
        out = Path(root) / self.arch_id / f'{self.fs_hz}hz'
        for name, df in self.curves.items():
            write_csv(df, out / f'{name}.csv', config_hash)
        for split, bins in self.calibration.items():
            write_csv(bins, out / f'calibration_{split}.csv', config_hash)
        write_csv(self.confusion_frame(), out / 'confusion.csv', config_hash)
        write_csv(self.fold_metrics.rename_axis('fold').reset_index(), out / 'fold_metrics.csv', config_hash)
        logger.info(f'{self.name}: report artifacts written to {out}')
        return out


def comparison_table(reports: list[MetricsReport]) -> pd.DataFrame:
    """All cells in one table: split, then arch in canonical order, then fs ascending."""
    df = pd.concat([r.table for r in reports], ignore_index=True)
    df['_split'] = df['split'].map({s: i for i, s in enumerate(SPLITS)})
    df['_arch'] = df['arch'].map({a: i for i, a in enumerate(ARCHS)})
    return df.sort_values(['_split', '_arch', 'fs_hz']).drop(columns=['_split', '_arch']).reset_index(drop=True)


def _cell(table: pd.DataFrame, arch: str, fs: int, metric: str, split: str = 'test') -> float:
    row = table[(table['arch'] == arch) & (table['fs_hz'] == fs) & (table['split'] == split)]
    return float(row[metric].iloc[0]) if len(row) else np.nan


def frequency_orderings(table: pd.DataFrame) -> pd.DataFrame:
    """檢查跨取樣率的定性趨勢 (僅記錄，不中止流程)

    Args:
        table (pd.DataFrame): comparison_table 的輸出

    Returns:
        pd.DataFrame: 欄位 check, value, threshold, passed；缺少所需的 cell 時 passed 為 None

    Note:
        - CNN1D test AUROC(100 Hz) - AUROC(500 Hz) >= 0.003
        - CNN1D test sensitivity(100 Hz) - sensitivity(500 Hz) >= 0.02
        - CNN-LSTM test accuracy 全頻率最大最小差 <= 0.01
        - 250 與 500 Hz 下 CNN-LSTM test ECE <= CNN1D test ECE
    """
    lstm_acc = table[(table['arch'] == 'cnnlstm') & (table['split'] == 'test')]['accuracy']

    def check(name, value, threshold, op: Literal['ge', 'le']):
        if not np.isfinite(value):
            return {'check': name, 'value': value, 'threshold': threshold, 'passed': None}
        passed = value >= threshold if op == 'ge' else value <= threshold
        return {'check': name, 'value': value, 'threshold': threshold, 'passed': bool(passed)}

    rows = [
        check('cnn1d_auroc_drop_100_to_500',
              _cell(table, 'cnn1d', 100, 'auroc') - _cell(table, 'cnn1d', 500, 'auroc'), 0.003, 'ge'),
        check('cnn1d_sensitivity_drop_100_to_500',
              _cell(table, 'cnn1d', 100, 'sensitivity') - _cell(table, 'cnn1d', 500, 'sensitivity'), 0.02, 'ge'),
        check('cnnlstm_accuracy_spread',
              float(lstm_acc.max() - lstm_acc.min()) if len(lstm_acc) >= 2 else np.nan, 0.01, 'le'),
        *[check(f'cnnlstm_ece_minus_cnn1d_ece_{fs}hz',
                _cell(table, 'cnnlstm', fs, 'ece') - _cell(table, 'cnn1d', fs, 'ece'), 0.0, 'le') for fs in (250, 500)],
    ]
    df = pd.DataFrame(rows)
    for r in rows:
        status = 'skipped' if r['passed'] is None else ('pass' if r['passed'] else 'fail')
        logger.info(f"frequency ordering {r['check']}: {status} (value={r['value']:.4f}, threshold={r['threshold']})")
    return df


def write_report(
    reports: list[MetricsReport],
    root: str | Path,
    config_hash: str = None,
    monitors: dict[str, str] = None,
) -> pd.DataFrame:
    """Write every cell plus `metrics_table.csv`, `orderings.csv` and `metrics.json`."""
    root = Path(root)
    for r in reports:
        r.write(root, config_hash)

    table = comparison_table(reports)
    orderings = frequency_orderings(table)
    write_csv(table, root / 'metrics_table.csv', config_hash)
    write_csv(orderings, root / 'orderings.csv', config_hash)

    cells = {}
    for r in reports:
        cells.setdefault(r.arch_id, {})[str(r.fs_hz)] = r.to_dict()
    write_json({
        'cells': cells,
        'early_stop_metric': monitors or {},
        'monitor_note': MONITOR_NOTE.format(monitors=monitors or {}),
        'orderings': orderings.to_dict(orient='records'),
    }, root / 'metrics.json', config_hash)
    logger.info(f'Report written to {root}: {len(reports)} cells, {len(table)} rows')
    return table
