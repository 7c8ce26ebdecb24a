"""Batch front-end: prepare -> split -> train -> eval -> report (-> plot)

Layout under `output_root`:
    config.json                          materialized config
    proc/qc.csv                          QC verdict per record
    proc/<fs>hz/{manifest.csv, *.ecgb}   processed records
    splits.csv, balanced_manifest.csv    patient split, balanced training pool
    runs/<arch>/<fs>hz/fold<i>/          best.ckpt, epochs.csv, val_predictions.csv
    runs/<arch>/<fs>hz/                  test_predictions.csv, test_balanced_predictions.csv, test_fold<i>_predictions.csv
    report/                              metrics.json, metrics_table.csv, per-cell CSVs, figures/

Usage:
    ecgfreq prepare --config config/experiment.json
    ecgfreq train --config config/experiment.json --arch cnnlstm --fs 100 --seed 7
"""

from pathlib import Path
import argparse
import logging
import sys

from joblib import Parallel, delayed
from tqdm import tqdm
import pandas as pd

from .cohort import TEST, SplitAssignment, filter_labels, fold_name, make_splits, undersample_balance
from .config import ARCHS, ExperimentConfig, ensure_uniform, load_experiment_config, write_materialized
from .errors import ConfigError, EcgFreqError, EmptyManifest, FsMismatch, IoFailure, MissingStage, SingleClassInput
from .metrics import PredictionSet, ensemble_logits
from .models import load_checkpoint, save_checkpoint
from .preprocess import QcReport, clean_nonfinite, preprocess_record, quality_check, write_qc_csv
from .report import MetricsReport, write_report
from .store import DatasetManifest, ManifestEntry, RecordStore, load_record, read_manifest, write_manifest
from .synthetic import make_synthetic_cohort
from .trainer import cross_validate, predict_logits, stack_records, write_epoch_log

logger = logging.getLogger(__name__)


# layout
def proc_dir(cfg: ExperimentConfig, fs: int) -> Path:
    return cfg.output_root / 'proc' / f'{fs}hz'


def run_dir(cfg: ExperimentConfig, arch: str, fs: int) -> Path:
    return cfg.output_root / 'runs' / arch / f'{fs}hz'


def fold_dir(cfg: ExperimentConfig, arch: str, fs: int, i: int) -> Path:
    return run_dir(cfg, arch, fs) / fold_name(i)


def report_dir(cfg: ExperimentConfig) -> Path:
    return cfg.output_root / 'report'


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingStage(path, stage)
    return path


def _start(cfg: ExperimentConfig, stage: str) -> str:
    digest = write_materialized(cfg, cfg.output_root / 'config.json')
    logger.info(f'{stage}: config_hash {digest}, output_root {cfg.output_root}')
    return digest


def _select(cfg: ExperimentConfig, arch: str = None, fs: int = None) -> tuple[list[str], list[int]]:
    if arch is not None and arch not in cfg.archs:
        raise ConfigError(f'arch {arch!r} has no train config')
    if fs is not None and fs not in cfg.target_fs:
        raise ConfigError(f'fs {fs} is not one of the target rates {cfg.target_fs}')
    return ([arch] if arch else cfg.archs), ([fs] if fs else list(cfg.target_fs))


def _store(cfg: ExperimentConfig, fs: int) -> RecordStore:
    store = RecordStore(proc_dir(cfg, fs))
    _require(store.manifest_path, 'prepare')
    return store


# prepare
def _prepare_one(entry: ManifestEntry, path: Path, cfg: ExperimentConfig) -> tuple[QcReport, dict[int, ManifestEntry]]:
    record = load_record(path, entry.record_id, entry.patient_id, entry.label)
    if record.fs_hz != cfg.source_fs:
        raise FsMismatch(f'{entry.record_id}: {record.fs_hz} Hz, expected source_fs {cfg.source_fs}')
    qc = quality_check(clean_nonfinite(record), cfg.qc)
    if not qc.accepted:
        return qc, {}
    written = {}
    for fs in cfg.target_fs:
        out = preprocess_record(record, fs, cfg.duration_s, cfg.clip_limit_mv)
        written[fs] = RecordStore(proc_dir(cfg, fs)).write(out)
    return qc, written


def cmd_prepare(cfg: ExperimentConfig) -> list[QcReport]:
    digest = _start(cfg, 'prepare')
    if not cfg.manifest_path.exists():
        raise IoFailure(f'manifest not found: {cfg.manifest_path}')
    manifest = filter_labels(read_manifest(cfg.manifest_path))
    entries = manifest.entries

    results = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_prepare_one)(e, manifest.resolve(e), cfg) for e in tqdm(entries, desc='prepare')
    )

    reports = [qc for qc, _ in results]
    for qc in reports:
        if not qc.accepted:
            logger.info(f'QC rejected {qc.record_id}: {qc.reasons}')
    for fs in cfg.target_fs:
        RecordStore(proc_dir(cfg, fs)).write_manifest([w[fs] for _, w in results if fs in w], digest)
    write_qc_csv(reports, cfg.output_root / 'proc' / 'qc.csv', digest)

    accepted = sum(qc.accepted for qc in reports)
    logger.info(f'prepare: {accepted}/{len(reports)} records accepted, {len(cfg.target_fs)} target rates')
    return reports


# split
def cmd_split(cfg: ExperimentConfig) -> tuple[SplitAssignment, DatasetManifest]:
    digest = _start(cfg, 'split')
    manifest = _store(cfg, cfg.target_fs[0]).manifest()
    split, balanced = make_splits(manifest, cfg.split)
    split.to_csv(cfg.output_root / 'splits.csv', digest)
    write_manifest(balanced, cfg.output_root / 'balanced_manifest.csv', digest)
    logger.info(f'split: {split.counts()}, balanced pool {balanced.label_counts()}')
    return split, balanced


def _load_split(cfg: ExperimentConfig) -> tuple[SplitAssignment, list[str]]:
    split = SplitAssignment.from_csv(_require(cfg.output_root / 'splits.csv', 'split'), seed=cfg.split.seed)
    pool = read_manifest(_require(cfg.output_root / 'balanced_manifest.csv', 'split')).record_ids
    return split, pool


# train
def cmd_train(cfg: ExperimentConfig, arch: str = None, fs: int = None) -> None:
    digest = _start(cfg, 'train')
    archs, fs_list = _select(cfg, arch, fs)
    split, pool_ids = _load_split(cfg)

    for a in archs:
        ensure_uniform([cfg.train_config(a, f) for f in cfg.target_fs])
        for f in fs_list:
            pool = _store(cfg, f).load(pool_ids)
            ckpts, logs, val_sets = cross_validate(cfg.train_config(a, f), pool, split, cfg.n_jobs)
            for ckpt, log, val in zip(ckpts, logs, val_sets):
                out = fold_dir(cfg, a, f, ckpt.fold_index)
                save_checkpoint(ckpt, out / 'best.ckpt', digest)
                write_epoch_log(log, out / 'epochs.csv', digest)
                val.to_csv(out / 'val_predictions.csv', digest)
                logger.info(f'{a}/{f}hz/{fold_name(ckpt.fold_index)}: best epoch {ckpt.best_epoch}, '
                            f'val F1 {ckpt.best_val_f1:.4f}, saved to {out}')


# eval
def cmd_eval(cfg: ExperimentConfig, arch: str = None, fs: int = None) -> dict[tuple[str, int], PredictionSet]:
    digest = _start(cfg, 'eval')
    archs, fs_list = _select(cfg, arch, fs)
    split, _ = _load_split(cfg)
    ensembles = {}

    for f in fs_list:
        test_manifest = split.records_in(_store(cfg, f).manifest(), TEST)
        if not len(test_manifest):
            raise EmptyManifest(f'{f}hz: the test split holds no records; raise split.test_frac or add patients')
        test_records = test_manifest.load_all()
        X, y = stack_records(test_records)
        ids = [r.record_id for r in test_records]
        try:
            balanced_ids = set(undersample_balance(test_manifest, cfg.split.seed).record_ids)
        except SingleClassInput as e:
            logger.warning(f'{f}hz: no balanced test subset ({e})')
            balanced_ids = None

        for a in archs:
            out = run_dir(cfg, a, f)
            per_fold = []
            for i in range(split.k):
                ckpt = load_checkpoint(_require(fold_dir(cfg, a, f, i) / 'best.ckpt', 'train'))
                z = predict_logits(ckpt.build(), X, cfg.train[a].batch_size)
                ps = PredictionSet(ids, z, y, f'{a}/{f}hz/{fold_name(i)}/test')
                ps.to_csv(out / f'test_fold{i}_predictions.csv', digest)
                per_fold.append(ps)

            ensemble = ensemble_logits(per_fold, k=split.k, context=f'{a}/{f}hz/ensemble/test')
            ensemble.to_csv(out / 'test_predictions.csv', digest)
            if balanced_ids is not None:
                keep = [i for i, r in enumerate(ensemble.record_ids) if r in balanced_ids]
                PredictionSet([ids[i] for i in keep], ensemble.z[keep], ensemble.y[keep],
                              f'{a}/{f}hz/ensemble/test_balanced').to_csv(out / 'test_balanced_predictions.csv', digest)
            logger.info(f'eval {a}/{f}hz: {len(ensemble)} test records, predictions in {out}')
            ensembles[(a, f)] = ensemble
    return ensembles


# report
def _cell_report(cfg: ExperimentConfig, split: SplitAssignment, arch: str, fs: int) -> MetricsReport:
    val_sets = [PredictionSet.from_csv(_require(fold_dir(cfg, arch, fs, i) / 'val_predictions.csv', 'train'))
                for i in range(split.k)]
    test = PredictionSet.from_csv(_require(run_dir(cfg, arch, fs) / 'test_predictions.csv', 'eval'))
    balanced_path = run_dir(cfg, arch, fs) / 'test_balanced_predictions.csv'
    test_balanced = PredictionSet.from_csv(balanced_path) if balanced_path.exists() else None
    return MetricsReport(arch, fs, val_sets, test, test_balanced, cfg.metrics)


def cmd_report(cfg: ExperimentConfig) -> pd.DataFrame:
    digest = _start(cfg, 'report')
    split, _ = _load_split(cfg)
    reports = [_cell_report(cfg, split, a, f) for a in cfg.archs for f in cfg.target_fs]
    monitors = {a: cfg.train[a].early_stop_metric for a in cfg.archs}
    return write_report(reports, report_dir(cfg), digest, monitors)


# plot
def cmd_plot(cfg: ExperimentConfig) -> list[Path]:
    from .plot import plot_report, write_figures

    _require(report_dir(cfg) / 'metrics_table.csv', 'report')
    figs = plot_report(report_dir(cfg), cfg.archs, list(cfg.target_fs))
    return write_figures(figs, report_dir(cfg) / 'figures')


# synth
def cmd_synth(out: str | Path, patients: int = 20, records_per_patient: int = 2, seed: int = 0) -> DatasetManifest:
    return make_synthetic_cohort(out, patients, records_per_patient, seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ecgfreq', description='ECG sampling-frequency benchmark for AFIB detection')
    sub = parser.add_subparsers(dest='command', required=True)

    for name in ('prepare', 'split', 'train', 'eval', 'report', 'plot'):
        p = sub.add_parser(name)
        p.add_argument('--config', default=None, help='experiment JSON (default: experiment.json in the config dir)')
        p.add_argument('--seed', type=int, default=None, help='override split and train seeds')
        if name in ('train', 'eval'):
            p.add_argument('--arch', choices=ARCHS, default=None)
            p.add_argument('--fs', type=int, default=None, help='one of the configured target rates')

    p = sub.add_parser('synth')
    p.add_argument('--out', required=True)
    p.add_argument('--patients', type=int, default=20)
    p.add_argument('--records-per-patient', type=int, default=2)
    p.add_argument('--seed', type=int, default=0)
    return parser


def main(argv: list[str] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == 'synth':
            cmd_synth(args.out, args.patients, args.records_per_patient, args.seed)
            return 0

        cfg = load_experiment_config(args.config, seed=args.seed)
        if args.command == 'prepare':
            cmd_prepare(cfg)
        elif args.command == 'split':
            cmd_split(cfg)
        elif args.command == 'train':
            cmd_train(cfg, args.arch, args.fs)
        elif args.command == 'eval':
            cmd_eval(cfg, args.arch, args.fs)
        elif args.command == 'report':
            cmd_report(cfg)
        elif args.command == 'plot':
            cmd_plot(cfg)
    except EcgFreqError as e:
        logger.error(f'{args.command} failed: {e}')
        print(f'ecgfreq {args.command}: {e}', file=sys.stderr)
        return e.exit_code
    except Exception:
        logger.exception(f'{args.command} failed')
        raise
    return 0
