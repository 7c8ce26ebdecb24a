from pathlib import Path

import pandas as pd
import numpy as np
import pytest

import ecgfreq
from ecgfreq.store import DatasetManifest, EcgRecord, ManifestEntry
from ecgfreq.synthetic import make_synthetic_record


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def config_dir(tmp_path):
    """Point the package config dir at a temp dir for one test."""
    previous = ecgfreq._custom_config_dir
    path = tmp_path / 'config'
    path.mkdir()
    ecgfreq.set_config_dir(path)
    yield path
    ecgfreq._custom_config_dir = previous


def make_record(record_id='r1', patient_id='p1', label='NORM', fs_hz=500, n_samples=5000, n_leads=12, seed=0) -> EcgRecord:
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / fs_hz
    leads = np.stack([np.sin(2 * np.pi * (1 + i) * t) + 0.01 * rng.standard_normal(n_samples) for i in range(n_leads)])
    return EcgRecord(record_id, patient_id, label, fs_hz, leads.astype(np.float32))


@pytest.fixture
def record():
    return make_record()


@pytest.fixture
def ecg_record(rng):
    return make_synthetic_record('s1', 'p1', 'AFIB', rng)


def make_manifest(patient_labels: dict[str, list[str]]) -> DatasetManifest:
    """patient_id -> list of record labels; no files behind the paths."""
    entries = []
    for p, labels in patient_labels.items():
        for k, label in enumerate(labels):
            rid = f'{p}_{k}'
            entries.append(ManifestEntry(rid, p, label, 500, f'{rid}.ecgb'))
    return DatasetManifest.from_entries(entries)


def random_manifest(rng: np.random.Generator, n_patients: int, afib_frac: float = 0.3, max_records: int = 4) -> DatasetManifest:
    patients = {}
    for i in range(n_patients):
        n = int(rng.integers(1, max_records + 1))
        afib = rng.random() < afib_frac
        labels = ['NORM'] * n
        if afib:
            labels[int(rng.integers(0, n))] = 'AFIB'
        patients[f'P{i:04d}'] = labels
    return make_manifest(patients)


@pytest.fixture
def balanced_manifest():
    # 10 patients, 5 AFIB / 5 NORM, 2 records each
    return make_manifest({f'P{i}': ['AFIB' if i < 5 else 'NORM'] * 2 for i in range(10)})
