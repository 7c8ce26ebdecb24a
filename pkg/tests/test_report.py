import json

import numpy as np
import pandas as pd
import pytest

from ecgfreq.metrics import PredictionSet
from ecgfreq.report import MetricsReport, calc_metrics, comparison_table, frequency_orderings, write_report
from ecgfreq.utils import read_config_hash, read_csv


def _predictions(rng, prefix, n=40, sep=2.0, context=''):
    y = np.arange(n) % 2
    z = np.zeros((n, 2))
    z[:, 1] = sep * (2 * y - 1) + rng.normal(0, 1.5, n)
    return PredictionSet([f'{prefix}{i}' for i in range(n)], z, y, context)


def _report(rng, arch='cnn1d', fs=62, sep=2.0):
    val_sets = [_predictions(rng, f'f{i}_', sep=sep, context=f'{arch}/{fs}hz/fold{i}') for i in range(3)]
    test = _predictions(rng, 't', n=60, sep=sep)
    balanced = PredictionSet(test.record_ids[:20], test.z[:20], test.y[:20])
    return MetricsReport(arch, fs, val_sets, test, balanced)


def test_calc_metrics_single_class_auroc_is_nan():
    ps = PredictionSet(['a', 'b'], [[0, 1], [0, 2]], [1, 1])
    row = calc_metrics(ps)
    assert np.isnan(row['auroc'])
    assert row['n'] == 2
    assert row['sensitivity'] == 1.0


def test_metrics_report_cell(rng):
    report = _report(rng)
    assert len(report.fold_metrics) == 3
    assert report.validation_mean['accuracy'] == pytest.approx(report.fold_metrics['accuracy'].mean())
    assert report.validation_std['f1'] == pytest.approx(np.std(report.fold_metrics['f1']))
    assert report.confusion['validation'].total == 120
    assert report.confusion['test'].total == 60
    assert report.prevalence == pytest.approx(0.5)
    assert report.name == 'CNN1D @ 62 Hz'

    table = report.table
    assert table['split'].tolist() == ['validation', 'test', 'test_balanced']
    assert 'auroc_std' in table.columns and 'n_std' not in table.columns
    assert set(table['fs_hz']) == {62}


def test_metrics_report_curves(rng):
    report = _report(rng)
    assert set(report.curves) == {'roc_validation', 'pr_validation', 'roc_test', 'pr_test'}
    for df in report.curves.values():
        assert list(df.columns) == ['x', 'y_mean', 'y_std']
        assert len(df) == 101
    assert (report.curves['roc_test']['y_std'] == 0).all()
    assert report.curves['roc_validation']['y_mean'].iloc[-1] == pytest.approx(1.0)


def test_metrics_report_write(tmp_path, rng):
    out = _report(rng).write(tmp_path, 'cafe')
    assert out == tmp_path / 'cnn1d' / '62hz'
    for name in ('roc_validation', 'pr_test', 'calibration_validation', 'calibration_test', 'confusion', 'fold_metrics'):
        assert read_config_hash(out / f'{name}.csv') == 'cafe'
    confusion = read_csv(out / 'confusion.csv')
    assert confusion['split'].tolist() == ['validation', 'test', 'test_balanced']
    assert read_csv(out / 'fold_metrics.csv')['fold'].tolist() == [0, 1, 2]


def test_comparison_table_layout(rng):
    reports = [_report(rng, arch, fs) for fs in (500, 62, 250, 100) for arch in ('cnnlstm', 'cnn1d')]
    table = comparison_table(reports)
    test = table[table['split'] == 'test']
    assert len(test) == 8
    assert test['arch'].tolist() == ['cnn1d'] * 4 + ['cnnlstm'] * 4
    assert test['fs_hz'].tolist() == [62, 100, 250, 500] * 2
    assert table['split'].iloc[0] == 'validation'


def _hand_table():
    rows = []
    values = {
        ('cnn1d', 100): dict(auroc=0.995, sensitivity=0.93, accuracy=0.98, ece=0.03),
        ('cnn1d', 500): dict(auroc=0.990, sensitivity=0.90, accuracy=0.97, ece=0.04),
        ('cnn1d', 250): dict(auroc=0.992, sensitivity=0.91, accuracy=0.97, ece=0.03),
        ('cnnlstm', 62): dict(auroc=0.998, sensitivity=0.95, accuracy=0.985, ece=0.02),
        ('cnnlstm', 100): dict(auroc=0.998, sensitivity=0.96, accuracy=0.990, ece=0.01),
        ('cnnlstm', 250): dict(auroc=0.997, sensitivity=0.95, accuracy=0.988, ece=0.02),
        ('cnnlstm', 500): dict(auroc=0.997, sensitivity=0.95, accuracy=0.987, ece=0.02),
    }
    for (arch, fs), v in values.items():
        rows.append({'arch': arch, 'fs_hz': fs, 'split': 'test', **v})
    return pd.DataFrame(rows)


def test_frequency_orderings_pass():
    checks = frequency_orderings(_hand_table()).set_index('check')
    assert checks.loc['cnn1d_auroc_drop_100_to_500', 'value'] == pytest.approx(0.005)
    assert checks['passed'].tolist() == [True] * 5


def test_frequency_orderings_fail_and_missing():
    table = _hand_table()
    table.loc[(table['arch'] == 'cnnlstm') & (table['fs_hz'] == 62), 'accuracy'] = 0.95
    table = table[~((table['arch'] == 'cnn1d') & (table['fs_hz'] == 250))]
    checks = frequency_orderings(table).set_index('check')
    assert checks.loc['cnnlstm_accuracy_spread', 'passed'] is False
    assert checks.loc['cnnlstm_ece_minus_cnn1d_ece_250hz', 'passed'] is None
    assert checks.loc['cnnlstm_ece_minus_cnn1d_ece_500hz', 'passed'] is True


def test_write_report(tmp_path, rng):
    reports = [_report(rng, 'cnn1d', fs) for fs in (62, 100)]
    table = write_report(reports, tmp_path, 'beef', monitors={'cnn1d': 'val_f1'})
    assert len(table) == 6
    assert read_config_hash(tmp_path / 'metrics_table.csv') == 'beef'
    assert (tmp_path / 'orderings.csv').exists()

    doc = json.loads((tmp_path / 'metrics.json').read_text())
    assert doc['config_hash'] == 'beef'
    assert set(doc['cells']['cnn1d']) == {'62', '100'}
    assert doc['early_stop_metric'] == {'cnn1d': 'val_f1'}
    assert 'val_f1' in doc['monitor_note']
    # orderings need cells that are not in this report
    assert all(o['passed'] is None for o in doc['orderings'])
