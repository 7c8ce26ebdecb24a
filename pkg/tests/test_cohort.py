import numpy as np
import pytest

from ecgfreq.cohort import (
    EXCLUDED, TEST, TRAIN, SplitAssignment, SplitMix64, filter_labels, holdout_split, make_splits, merge_splits,
    patient_labels, stratified_patient_kfold, undersample_balance,
)
from ecgfreq.config import SplitParams
from ecgfreq.errors import EmptyManifest, SingleClassInput, TooFewPatients

from conftest import make_manifest, random_manifest


def test_splitmix64_reference_values():
    assert SplitMix64(0).next() == 0xE220A8397B1DCDAF
    assert SplitMix64(1234567).next() == 6457827717110365317


def test_splitmix64_shuffle_is_a_permutation_and_deterministic():
    items = list(range(50))
    a = SplitMix64(9).shuffle(items)
    b = SplitMix64(9).shuffle(items)
    assert a == b
    assert sorted(a) == items
    assert a != items
    assert items == list(range(50))


def test_filter_labels():
    manifest = make_manifest({'p1': ['AFIB'], 'p2': ['NORM'], 'p3': ['PACE']})
    assert filter_labels(manifest).record_ids == ['p1_0', 'p2_0']
    assert len(filter_labels(make_manifest({}))) == 0


def test_patient_label_any_afib():
    labels = patient_labels(make_manifest({'p1': ['NORM', 'AFIB', 'NORM'], 'p2': ['NORM', 'NORM']}))
    assert labels.to_dict() == {'p1': 'AFIB', 'p2': 'NORM'}


def test_holdout_floor_per_stratum(balanced_manifest):
    split = holdout_split(balanced_manifest, test_frac=0.3, seed=42)
    test = split.patients_in(TEST)
    labels = patient_labels(balanced_manifest)
    assert len(test) == 2
    assert sorted(labels[test]) == ['AFIB', 'NORM']
    assert set(split.assignment.values()) == {TEST, TRAIN}


def test_holdout_deterministic(balanced_manifest):
    assert holdout_split(balanced_manifest, 0.3, 7).assignment == holdout_split(balanced_manifest, 0.3, 7).assignment


def test_holdout_empty_manifest():
    with pytest.raises(EmptyManifest):
        holdout_split(make_manifest({}), 0.3, 42)


def test_undersample_balance():
    manifest = make_manifest({f'N{i}': ['NORM'] for i in range(100)} | {f'A{i}': ['AFIB'] for i in range(30)})
    balanced = undersample_balance(manifest, seed=1)
    assert balanced.label_counts() == {'NORM': 30, 'AFIB': 30}
    assert set(balanced.frame.loc[balanced.frame['label'] == 'AFIB', 'record_id']) == {f'A{i}_0' for i in range(30)}
    assert undersample_balance(manifest, seed=1).record_ids == balanced.record_ids


def test_undersample_already_balanced(balanced_manifest):
    assert undersample_balance(balanced_manifest, 3).record_ids == balanced_manifest.record_ids


def test_undersample_single_class():
    with pytest.raises(SingleClassInput):
        undersample_balance(make_manifest({'p': ['NORM', 'NORM']}), 0)


def test_kfold_round_robin(balanced_manifest):
    split = stratified_patient_kfold(balanced_manifest, k=5, seed=42)
    labels = patient_labels(balanced_manifest)
    for i in range(5):
        patients = split.patients_in(f'fold{i}')
        assert sorted(labels[patients]) == ['AFIB', 'NORM']


def test_kfold_records_inherit_patient_fold():
    manifest = make_manifest({f'P{i}': ['AFIB' if i < 5 else 'NORM'] * (3 if i == 0 else 1) for i in range(10)})
    split = stratified_patient_kfold(manifest, k=5, seed=1)
    parts = split.record_partitions(manifest)
    assert parts[['P0_0', 'P0_1', 'P0_2']].nunique() == 1


def test_kfold_too_few_patients():
    manifest = make_manifest({f'P{i}': ['AFIB' if i < 3 else 'NORM'] for i in range(10)})
    with pytest.raises(TooFewPatients):
        stratified_patient_kfold(manifest, k=5, seed=0)


def _check_split(manifest, split, k):
    # one partition per patient, and every record follows its patient
    parts = split.record_partitions(manifest)
    by_patient = parts.groupby(manifest.frame.set_index('record_id')['patient_id']).nunique()
    assert (by_patient == 1).all()
    assert set(split.assignment) == set(manifest.frame['patient_id'])
    assert set(split.assignment.values()) <= {TEST, EXCLUDED} | {f'fold{i}' for i in range(k)}


def test_patient_safety_property(tmp_path):
    rng = np.random.default_rng(123)
    for trial in range(1000):
        manifest = random_manifest(rng, int(rng.integers(10, 501)), afib_frac=float(rng.uniform(0.2, 0.5)))
        params = SplitParams(test_frac=0.3, folds=5, seed=trial)
        try:
            split, balanced = make_splits(manifest, params)
        except (TooFewPatients, SingleClassInput):
            continue
        _check_split(manifest, split, 5)
        counts = balanced.label_counts()
        assert counts['AFIB'] == counts['NORM']
        assert not set(balanced.frame['patient_id']) & set(split.patients_in(TEST))

        if trial % 100 == 0:
            a = split.to_csv(tmp_path / 'a.csv', 'h').read_bytes()
            b = make_splits(manifest, params)[0].to_csv(tmp_path / 'b.csv', 'h').read_bytes()
            assert a == b


def test_stratification_within_one(rng):
    manifest = random_manifest(rng, 200, afib_frac=0.4, max_records=1)
    split = stratified_patient_kfold(manifest, k=5, seed=5)
    labels = patient_labels(manifest)
    for stratum in ('AFIB', 'NORM'):
        sizes = [int((labels[split.patients_in(f'fold{i}')] == stratum).sum()) for i in range(5)]
        assert max(sizes) - min(sizes) <= 1


def test_merge_marks_undersampled_patients_excluded():
    manifest = make_manifest({f'N{i}': ['NORM'] for i in range(20)} | {f'A{i}': ['AFIB'] for i in range(10)})
    holdout = holdout_split(manifest, 0.3, 0)
    pool = holdout.records_in(manifest, TRAIN)
    balanced = undersample_balance(pool, 0)
    merged = merge_splits(holdout, stratified_patient_kfold(balanced, 3, 0))
    assert len(merged.patients_in(EXCLUDED)) == 14 - 7
    assert TRAIN not in merged.assignment.values()


def test_split_csv_sorted_and_roundtrip(tmp_path, balanced_manifest):
    split, _ = make_splits(balanced_manifest, SplitParams(test_frac=0.3, folds=2, seed=3))
    path = split.to_csv(tmp_path / 'splits.csv', 'hash')
    lines = path.read_text().splitlines()
    assert lines[0] == '# config_hash: hash'
    assert lines[1] == 'patient_id,assignment'
    assert [l.split(',')[0] for l in lines[2:]] == sorted(split.assignment)
    back = SplitAssignment.from_csv(path)
    assert back.assignment == split.assignment
    assert back.k == 2


def test_holdout_split_cannot_be_written(tmp_path, balanced_manifest):
    with pytest.raises(ValueError):
        holdout_split(balanced_manifest, 0.3, 0).to_csv(tmp_path / 's.csv')
