"""Record and manifest formats

Available Functions:
    - read_manifest / write_manifest: cohort index CSV `record_id,patient_id,label,fs_hz,path`
    - load_record / write_record: ECGB binary recordings
    - RecordStore: a directory of ECGB files with its own manifest

ECGB layout (little-endian):
    bytes 0-3 magic `ECGB`, byte 4 version (1), byte 5 n_leads, bytes 6-7 reserved (0),
    bytes 8-11 n_samples (u32), bytes 12-15 fs_hz (u32), then n_leads*n_samples float32,
    lead-major.
"""

from dataclasses import dataclass, field, replace
from typing import Iterator
from pathlib import Path
from enum import Enum
import logging
import re

import pandas as pd
import numpy as np

from .errors import (
    BadMagic, DuplicateRecordId, InvariantViolation, IoFailure, MissingColumn,
    TruncatedPayload, UnparsableRow, UnsupportedVersion,
)
from .utils import write_csv

logger = logging.getLogger(__name__)

MAGIC = b'ECGB'
VERSION = 1
HEADER_DTYPE = np.dtype([
    ('magic', 'S4'),
    ('version', 'u1'),
    ('n_leads', 'u1'),
    ('reserved', '<u2'),
    ('n_samples', '<u4'),
    ('fs_hz', '<u4'),
])
HEADER_SIZE = HEADER_DTYPE.itemsize
SAMPLE_DTYPE = np.dtype('<f4')

N_LEADS = 12
LEAD_NAMES = ('I', 'II', 'III', 'aVR', 'aVL', 'aVF', 'V1', 'V2', 'V3', 'V4', 'V5', 'V6')
MANIFEST_COLUMNS = ['record_id', 'patient_id', 'label', 'fs_hz', 'path']


class Label(str, Enum):
    AFIB = 'AFIB'
    NORM = 'NORM'


@dataclass(frozen=True, eq=False)
class EcgRecord:
    """One multi-lead recording, amplitudes in millivolts, shape [n_leads, n_samples]."""
    record_id: str
    patient_id: str
    label: str
    fs_hz: int
    leads: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.leads.ndim != 2:
            raise InvariantViolation(f'{self.record_id}: leads must be 2-D, got shape {self.leads.shape}')
        if int(self.fs_hz) <= 0:
            raise InvariantViolation(f'{self.record_id}: fs_hz must be positive, got {self.fs_hz}')

    @property
    def n_leads(self) -> int:
        return self.leads.shape[0]

    @property
    def n_samples(self) -> int:
        return self.leads.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs_hz

    @property
    def y(self) -> int:
        return int(self.label == Label.AFIB.value)

    def with_leads(self, leads: np.ndarray, fs_hz: int = None) -> 'EcgRecord':
        return replace(self, leads=leads, fs_hz=self.fs_hz if fs_hz is None else int(fs_hz))


@dataclass(frozen=True)
class ManifestEntry:
    record_id: str
    patient_id: str
    label: str
    fs_hz: int
    path: str


class DatasetManifest:
    """Cohort index: one entry per record, record ids unique, file order kept.

    Relative `path` values resolve against `base_dir` (the manifest's directory).
    """

    def __init__(self, frame: pd.DataFrame, base_dir: str | Path = None):
        frame = frame[MANIFEST_COLUMNS].reset_index(drop=True)
        dup = frame['record_id'][frame['record_id'].duplicated()]
        if not dup.empty:
            raise DuplicateRecordId(f'duplicate record_id {dup.iloc[0]!r}')
        self.frame = frame.astype({'record_id': str, 'patient_id': str, 'label': str, 'fs_hz': int, 'path': str})
        self.base_dir = Path(base_dir) if base_dir is not None else Path('.')

    @classmethod
    def from_entries(cls, entries: list[ManifestEntry], base_dir: str | Path = None) -> 'DatasetManifest':
        frame = pd.DataFrame([vars(e) for e in entries], columns=MANIFEST_COLUMNS)
        return cls(frame, base_dir)

    def __len__(self) -> int:
        return len(self.frame)

    def __iter__(self) -> Iterator[ManifestEntry]:
        for row in self.frame.itertuples(index=False):
            yield ManifestEntry(row.record_id, row.patient_id, row.label, int(row.fs_hz), row.path)

    @property
    def entries(self) -> list[ManifestEntry]:
        return list(self)

    @property
    def record_ids(self) -> list[str]:
        return self.frame['record_id'].tolist()

    @property
    def patient_ids(self) -> list[str]:
        return self.frame['patient_id'].unique().tolist()

    def label_counts(self) -> dict[str, int]:
        return self.frame['label'].value_counts().to_dict()

    def subset(self, mask) -> 'DatasetManifest':
        return DatasetManifest(self.frame[np.asarray(mask, dtype=bool)], self.base_dir)

    def select(self, record_ids) -> 'DatasetManifest':
        """Entries with the given ids, in manifest order."""
        return self.subset(self.frame['record_id'].isin(set(record_ids)))

    def resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.path)
        return path if path.is_absolute() else self.base_dir / path

    def load(self, entry: ManifestEntry) -> EcgRecord:
        return load_record(self.resolve(entry), record_id=entry.record_id, patient_id=entry.patient_id, label=entry.label)

    def load_all(self) -> list[EcgRecord]:
        return [self.load(e) for e in self]


def _error_line(path: Path, error: Exception) -> int | None:
    """1-based file line of a CSV parse or decode failure, None when unknown."""
    if isinstance(error, UnicodeDecodeError):
        try:
            path.read_bytes().decode('utf-8')
        except UnicodeDecodeError as e:
            return path.read_bytes()[:e.start].count(b'\n') + 1
        return None
    found = re.search(r'line (\d+)', str(error))
    return int(found.group(1)) if found else None


def read_manifest(path: str | Path) -> DatasetManifest:
    """讀取資料集索引 CSV

    Args:
        path (str | Path): CSV 路徑，標頭須包含 `record_id,patient_id,label,fs_hz,path`

    Returns:
        DatasetManifest: 依檔案順序排列的索引，相對路徑以 CSV 所在目錄為基準

    Examples:
        ```python
        manifest = read_manifest('data/manifest.csv')
        len(manifest), manifest.label_counts()
        ```

    Note:
        - 標籤在此不做過濾 (如 PACE)，由 cohort.filter_labels 處理
        - 錯誤的資料列以 0 起算的資料列序號回報；無法解析的檔案則以 1 起算的行號回報 (UnparsableRow.line)
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, comment='#', encoding='utf-8')
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise UnparsableRow(None, str(e), line=_error_line(path, e)) from e

    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise MissingColumn(f'{path}: missing column(s) {missing}')

    for i, row in enumerate(frame[MANIFEST_COLUMNS].itertuples(index=False)):
        if not row.record_id or not row.patient_id or not row.path:
            raise UnparsableRow(i, 'empty record_id, patient_id or path')
        if not row.fs_hz.isdigit() or int(row.fs_hz) <= 0:
            raise UnparsableRow(i, f'fs_hz must be a positive integer, got {row.fs_hz!r}')

    manifest = DatasetManifest(frame, base_dir=path.parent)
    logger.info(f'Read manifest {path}: {len(manifest)} records')
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path, config_hash: str = None) -> Path:
    return write_csv(manifest.frame, path, config_hash=config_hash)


def load_record(path: str | Path, record_id: str = None, patient_id: str = '', label: str = '') -> EcgRecord:
    """Read an ECGB file. Identity fields come from the manifest, not the binary."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f'{path}: {e}') from e

    if len(raw) < HEADER_SIZE or raw[:4] != MAGIC:
        raise BadMagic(f'{path}: not an ECGB file')
    header = np.frombuffer(raw, dtype=HEADER_DTYPE, count=1)[0]
    if int(header['version']) != VERSION:
        raise UnsupportedVersion(f'{path}: ECGB version {int(header["version"])}')

    n_leads, n_samples = int(header['n_leads']), int(header['n_samples'])
    expected = n_leads * n_samples * SAMPLE_DTYPE.itemsize
    actual = len(raw) - HEADER_SIZE
    if actual != expected:
        raise TruncatedPayload(expected, actual, path)

    leads = np.frombuffer(raw, dtype=SAMPLE_DTYPE, offset=HEADER_SIZE).reshape(n_leads, n_samples).copy()
    return EcgRecord(
        record_id=record_id if record_id is not None else path.stem,
        patient_id=patient_id,
        label=label,
        fs_hz=int(header['fs_hz']),
        leads=leads,
    )


def write_record(record: EcgRecord, path: str | Path) -> Path:
    """Write an ECGB file of exactly 16 + 4*n_leads*n_samples bytes."""
    leads = np.asarray(record.leads)
    if not np.isfinite(leads).all():
        raise InvariantViolation(f'{record.record_id}: non-finite samples cannot be written')
    if not 0 < record.n_leads <= 255:
        raise InvariantViolation(f'{record.record_id}: n_leads {record.n_leads} does not fit the header')

    header = np.zeros(1, dtype=HEADER_DTYPE)
    header['magic'] = MAGIC
    header['version'] = VERSION
    header['n_leads'] = record.n_leads
    header['n_samples'] = record.n_samples
    header['fs_hz'] = record.fs_hz

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(header.tobytes())
            f.write(np.ascontiguousarray(leads, dtype=SAMPLE_DTYPE).tobytes())
    except OSError as e:
        raise IoFailure(f'{path}: {e}') from e
    return path


class RecordStore:
    """A directory of ECGB files, e.g. `<root>/proc/62hz/`, indexed by `manifest.csv`."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest_path = self.root / 'manifest.csv'

    def path_for(self, record_id: str) -> Path:
        return self.root / f'{record_id}.ecgb'

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def write(self, record: EcgRecord) -> ManifestEntry:
        write_record(record, self.path_for(record.record_id))
        return ManifestEntry(record.record_id, record.patient_id, record.label, record.fs_hz, f'{record.record_id}.ecgb')

    def write_manifest(self, entries: list[ManifestEntry], config_hash: str = None) -> Path:
        path = write_manifest(DatasetManifest.from_entries(entries, self.root), self.manifest_path, config_hash)
        logger.info(f'Saved {len(entries)} records to {self.root}')
        return path

    def manifest(self) -> DatasetManifest:
        return read_manifest(self.manifest_path)

    def list_records(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob('*.ecgb'))

    def load(self, record_ids=None) -> list[EcgRecord]:
        manifest = self.manifest()
        if record_ids is not None:
            manifest = manifest.select(record_ids)
        return manifest.load_all()
