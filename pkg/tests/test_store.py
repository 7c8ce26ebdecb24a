from pathlib import Path
import logging

import numpy as np
import pytest

from ecgfreq.errors import (
    BadMagic, DuplicateRecordId, InvariantViolation, MissingColumn, TruncatedPayload, UnparsableRow, UnsupportedVersion,
)
from ecgfreq.store import (
    HEADER_SIZE, DatasetManifest, EcgRecord, RecordStore, load_record, read_manifest, write_manifest, write_record,
)
from ecgfreq.utils import read_config_hash

from conftest import make_record


def _write_csv(path: Path, text: str) -> Path:
    path.write_text(text, encoding='utf-8')
    return path


def test_ecgb_file_size_and_values(tmp_path, record):
    path = write_record(record, tmp_path / 'r1.ecgb')
    assert path.stat().st_size == HEADER_SIZE + 4 * 12 * 5000

    loaded = load_record(path, 'r1', 'p1', 'NORM')
    assert loaded.fs_hz == 500
    assert loaded.leads.shape == (12, 5000)
    assert loaded.leads.dtype == np.float32
    np.testing.assert_array_equal(loaded.leads, record.leads)


def test_ecgb_header_layout(tmp_path, record):
    raw = write_record(record, tmp_path / 'r1.ecgb').read_bytes()
    assert raw[:4] == b'ECGB'
    assert raw[4] == 1
    assert raw[5] == 12
    assert raw[6:8] == b'\x00\x00'
    assert int.from_bytes(raw[8:12], 'little') == 5000
    assert int.from_bytes(raw[12:16], 'little') == 500


def test_bad_magic(tmp_path, record):
    path = write_record(record, tmp_path / 'r1.ecgb')
    raw = bytearray(path.read_bytes())
    raw[:4] = b'XXXX'
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        load_record(path)


def test_unsupported_version(tmp_path, record):
    path = write_record(record, tmp_path / 'r1.ecgb')
    raw = bytearray(path.read_bytes())
    raw[4] = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedVersion):
        load_record(path)


def test_truncated_payload(tmp_path, record):
    path = write_record(record, tmp_path / 'r1.ecgb')
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(TruncatedPayload) as e:
        load_record(path)
    assert e.value.expected == 4 * 12 * 5000
    assert e.value.actual == 4 * 12 * 5000 - 3


def test_write_rejects_nonfinite(tmp_path):
    rec = make_record()
    rec.leads[0, 0] = np.nan
    with pytest.raises(InvariantViolation):
        write_record(rec, tmp_path / 'bad.ecgb')


def test_record_requires_2d_leads():
    with pytest.raises(InvariantViolation):
        EcgRecord('r', 'p', 'NORM', 500, np.zeros(10, dtype=np.float32))


def test_read_manifest_keeps_order_and_resolves_paths(tmp_path):
    path = _write_csv(tmp_path / 'manifest.csv',
                      'record_id,patient_id,label,fs_hz,path\n'
                      'b,p2,NORM,500,rec/b.ecgb\n'
                      'a,p1,AFIB,500,rec/a.ecgb\n'
                      'c,p1,PACE,500,rec/c.ecgb\n')
    manifest = read_manifest(path)
    assert manifest.record_ids == ['b', 'a', 'c']
    assert manifest.label_counts() == {'NORM': 1, 'AFIB': 1, 'PACE': 1}
    assert manifest.resolve(manifest.entries[0]) == tmp_path / 'rec' / 'b.ecgb'


def test_read_manifest_missing_column(tmp_path):
    path = _write_csv(tmp_path / 'm.csv', 'record_id,patient_id,label,path\na,p,NORM,a.ecgb\n')
    with pytest.raises(MissingColumn):
        read_manifest(path)


def test_read_manifest_duplicate_id(tmp_path):
    path = _write_csv(tmp_path / 'm.csv', 'record_id,patient_id,label,fs_hz,path\na,p,NORM,500,a\na,q,AFIB,500,b\n')
    with pytest.raises(DuplicateRecordId):
        read_manifest(path)


def test_read_manifest_unparsable_row_index(tmp_path):
    path = _write_csv(tmp_path / 'm.csv', 'record_id,patient_id,label,fs_hz,path\na,p,NORM,500,a\nb,q,AFIB,abc,b\n')
    with pytest.raises(UnparsableRow) as e:
        read_manifest(path)
    assert e.value.row_index == 1


def test_read_manifest_skips_hash_comment(tmp_path):
    path = _write_csv(tmp_path / 'm.csv', '# config_hash: abc\nrecord_id,patient_id,label,fs_hz,path\na,p,NORM,500,a\n')
    assert len(read_manifest(path)) == 1


def test_manifest_ids_stay_strings(tmp_path):
    path = _write_csv(tmp_path / 'm.csv', 'record_id,patient_id,label,fs_hz,path\n00012,007,NORM,500,a\n')
    entry = read_manifest(path).entries[0]
    assert entry.record_id == '00012'
    assert entry.patient_id == '007'


def test_record_store_roundtrip(tmp_path):
    store = RecordStore(tmp_path / 'proc' / '62hz')
    records = [make_record(f'r{i}', f'p{i}', 'AFIB' if i % 2 else 'NORM', fs_hz=62, n_samples=620, seed=i) for i in range(3)]
    entries = [store.write(r) for r in records]
    store.write_manifest(entries, config_hash='deadbeef')

    assert read_config_hash(store.manifest_path) == 'deadbeef'
    assert store.list_records() == ['r0', 'r1', 'r2']
    loaded = store.load(['r2', 'r0'])
    assert [r.record_id for r in loaded] == ['r0', 'r2']
    assert loaded[1].label == 'NORM' and loaded[1].n_samples == 620
    np.testing.assert_array_equal(loaded[1].leads, records[2].leads)


def test_write_manifest_roundtrip(tmp_path):
    manifest = DatasetManifest.from_entries([])
    path = write_manifest(manifest, tmp_path / 'empty.csv', 'h')
    assert len(read_manifest(path)) == 0


def test_read_manifest_undecodable_line_number(tmp_path):
    path = tmp_path / 'm.csv'
    path.write_bytes(b'record_id,patient_id,label,fs_hz,path\na,p,NORM,500,a\nb,q,AF\xffIB,500,b\n')
    with pytest.raises(UnparsableRow) as e:
        read_manifest(path)
    assert e.value.row_index is None
    assert e.value.line == 3
    assert str(e.value).startswith('line 3:')


def test_read_manifest_extra_field_line_number(tmp_path):
    path = _write_csv(tmp_path / 'm.csv', 'record_id,patient_id,label,fs_hz,path\na,p,NORM,500,a\nb,q,AFIB,500,b,extra\n')
    with pytest.raises(UnparsableRow) as e:
        read_manifest(path)
    assert e.value.line == 3
    assert 'None' not in str(e.value)


def test_record_store_logs_on_module_logger(tmp_path, caplog):
    store = RecordStore(tmp_path / 'proc')
    with caplog.at_level(logging.INFO, logger='ecgfreq.store'):
        store.write_manifest([store.write(make_record())])
    assert any(r.name == 'ecgfreq.store' and r.getMessage().startswith('Saved 1 records') for r in caplog.records)
