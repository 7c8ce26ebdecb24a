"""Signal preparation

Available Functions:
    - clean_nonfinite: NaN/Inf -> 0.0
    - clip_amplitude: clamp to +-limit_mv
    - fft_resample / resample_record: frequency-domain rate conversion
    - zscore_normalize: per-lead standardization
    - segment: leading fixed-length window
    - quality_check: flatline / dead / noisy lead detection
    - preprocess_record: clean -> clip -> resample -> z-score -> segment

Examples:
    ```python
    record = load_record('r1.ecgb')
    qc = quality_check(clean_nonfinite(record))
    if qc.accepted:
        out = preprocess_record(record, target_fs=62)   # 12 x 620
    ```
"""

from dataclasses import dataclass, field
from pathlib import Path
import logging

import pandas as pd
import numpy as np
import scipy.fft

from .config import QcThresholds
from .errors import FsMismatch, InvariantViolation, NonPositiveLimit, NonPositiveTarget, TooShort
from .store import EcgRecord, N_LEADS
from .utils import read_csv, write_csv

logger = logging.getLogger(__name__)

QC_COLUMNS = ['record_id', 'accepted', 'n_leads', 'flatline_leads', 'dead_leads', 'noisy_leads']


@dataclass(frozen=True)
class ResampleSpec:
    source_fs: int
    target_fs: int
    target_len: int

    @classmethod
    def standard(cls, source_fs: int, target_fs: int, duration_s: int = 10) -> 'ResampleSpec':
        return cls(int(source_fs), int(target_fs), int(duration_s * target_fs))

    @classmethod
    def for_record(cls, record: EcgRecord, target_fs: int) -> 'ResampleSpec':
        """Keep the record's duration: 5000 samples @ 500 Hz -> 620 @ 62 Hz."""
        return cls(record.fs_hz, int(target_fs), int(round(record.n_samples * target_fs / record.fs_hz)))


@dataclass(frozen=True)
class QcReport:
    record_id: str
    flatline_leads: list[int] = field(default_factory=list)
    dead_leads: list[int] = field(default_factory=list)
    noisy_leads: list[int] = field(default_factory=list)
    n_leads: int = N_LEADS

    @property
    def accepted(self) -> bool:
        return self.n_leads == N_LEADS and not (self.flatline_leads or self.dead_leads or self.noisy_leads)

    @property
    def reasons(self) -> str:
        parts = [f'{name} leads {leads}' for name, leads in
                 (('flatline', self.flatline_leads), ('dead', self.dead_leads), ('noisy', self.noisy_leads)) if leads]
        if self.n_leads != N_LEADS:
            parts.insert(0, f'n_leads {self.n_leads} != {N_LEADS}')
        return '; '.join(parts)


def clean_nonfinite(record: EcgRecord) -> EcgRecord:
    leads = record.leads
    if np.isfinite(leads).all():
        return record
    return record.with_leads(np.where(np.isfinite(leads), leads, 0.0).astype(leads.dtype))


def clip_amplitude(record: EcgRecord, limit_mv: float = 32.0) -> EcgRecord:
    if not limit_mv > 0:
        raise NonPositiveLimit(f'clip limit must be positive, got {limit_mv}')
    return record.with_leads(np.clip(record.leads, -limit_mv, limit_mv))


def fft_resample(signal: np.ndarray, target_len: int) -> np.ndarray:
    """以頻域截斷 / 補零進行重新取樣

    Args:
        signal (np.ndarray): 實數訊號，沿最後一軸重新取樣 (可一次處理多導程)
        target_len (int): 輸出長度 m

    Returns:
        np.ndarray: 長度 m 的實數訊號，振幅已乘上 m/n

    Examples:
        ```python
        fft_resample(np.ones(4), 2)          # array([1., 1.])
        fft_resample(lead_500hz, 620)        # 5000 -> 620 點 (62 Hz)
        ```

    Note:
        - 降採樣到偶數長度 m 時，新的 Nyquist 頻點為原 +-m/2 兩頻點之和
        - 由偶數長度 n 升採樣時，原 Nyquist 頻點能量平均分給 +-n/2
        - 與 scipy.signal.resample 的慣例相同，訊號視為週期訊號
    """
    x = np.asarray(signal, dtype=np.float64)
    n, m = x.shape[-1], int(target_len)
    if n < 2:
        raise TooShort(f'need at least 2 samples to resample, got {n}')
    if m <= 0:
        raise NonPositiveTarget(f'target length must be positive, got {m}')
    if m == n:
        return x.copy()

    X = scipy.fft.fft(x, axis=-1)
    Y = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)

    # shared bins: 0..N//2 on the positive side, the rest mirrored
    N = min(n, m)
    nyq = N // 2 + 1
    Y[..., :nyq] = X[..., :nyq]
    if N - nyq > 0:
        Y[..., -(N - nyq):] = X[..., -(N - nyq):]

    if N % 2 == 0:
        half = N // 2
        if m < n:
            Y[..., half] = X[..., half] + X[..., n - half]
        else:
            Y[..., half] = 0.5 * X[..., half]
            Y[..., m - half] = 0.5 * X[..., half]

    return scipy.fft.ifft(Y, axis=-1).real * (m / n)


def resample_record(record: EcgRecord, spec: ResampleSpec) -> EcgRecord:
    if record.fs_hz != spec.source_fs:
        raise FsMismatch(f'{record.record_id}: record is {record.fs_hz} Hz, resampler expects {spec.source_fs} Hz')
    if spec.target_len == record.n_samples and spec.target_fs == record.fs_hz:
        return record.with_leads(np.asarray(record.leads, dtype=np.float64))
    return record.with_leads(fft_resample(record.leads, spec.target_len), fs_hz=spec.target_fs)


def zscore_normalize(record: EcgRecord, eps: float = 1e-8) -> EcgRecord:
    leads = np.asarray(record.leads, dtype=np.float64)
    mean = leads.mean(axis=1, keepdims=True)
    std = leads.std(axis=1, keepdims=True)
    degenerate = std < eps
    out = (leads - mean) / np.where(degenerate, 1.0, std)
    out[degenerate[:, 0]] = 0.0
    return record.with_leads(out)


def segment(record: EcgRecord, duration_s: int = 10) -> EcgRecord:
    need = int(duration_s * record.fs_hz)
    if record.n_samples < need:
        raise TooShort(f'{record.record_id}: {record.n_samples} samples < {need} needed for {duration_s} s @ {record.fs_hz} Hz')
    if record.n_samples == need:
        return record
    return record.with_leads(record.leads[:, :need])


def high_freq_power_ratio(leads: np.ndarray, fs_hz: int, band_frac: float = 0.4) -> np.ndarray:
    """Share of non-DC spectral power above `band_frac` of Nyquist, per lead."""
    leads = np.atleast_2d(np.asarray(leads, dtype=np.float64))
    n = leads.shape[-1]
    power = np.abs(scipy.fft.fft(leads, axis=-1)) ** 2
    freqs = np.abs(scipy.fft.fftfreq(n, d=1.0 / fs_hz))
    power[:, 0] = 0.0
    total = power.sum(axis=1)
    high = power[:, freqs > band_frac * fs_hz / 2].sum(axis=1)
    return np.divide(high, total, out=np.zeros_like(total), where=total > 0)


def quality_check(record: EcgRecord, thresholds: QcThresholds = None) -> QcReport:
    """Flag a wrong lead count and flatline, dead and noisy leads. Expects a cleaned (finite) record."""
    thresholds = thresholds or QcThresholds()
    leads = np.atleast_2d(np.asarray(record.leads, dtype=np.float64))

    flatline = leads.std(axis=1) < thresholds.flatline_std_mv
    dead = (leads.max(axis=1) == leads.min(axis=1))
    noisy = high_freq_power_ratio(leads, record.fs_hz, thresholds.noise_band_frac) > thresholds.noise_power_ratio

    return QcReport(
        record_id=record.record_id,
        flatline_leads=np.flatnonzero(flatline).tolist(),
        dead_leads=np.flatnonzero(dead).tolist(),
        noisy_leads=np.flatnonzero(noisy).tolist(),
        n_leads=int(leads.shape[0]),
    )


def preprocess_record(record: EcgRecord, target_fs: int, duration_s: int = 10, clip_limit_mv: float = 32.0) -> EcgRecord:
    """Fixed order: clean -> clip -> resample -> z-score -> segment."""
    if record.n_leads != N_LEADS:
        raise InvariantViolation(f'{record.record_id}: expected {N_LEADS} leads, got {record.n_leads}')
    record = clip_amplitude(clean_nonfinite(record), clip_limit_mv)
    record = resample_record(record, ResampleSpec.for_record(record, target_fs))
    record = zscore_normalize(record)
    return segment(record, duration_s)


# qc csv
def _join(leads: list[int]) -> str:
    return ';'.join(str(i) for i in leads)


def _split(cell) -> list[int]:
    if pd.isna(cell) or str(cell) == '':
        return []
    return [int(i) for i in str(cell).split(';')]


def write_qc_csv(reports: list[QcReport], path: str | Path, config_hash: str = None) -> Path:
    df = pd.DataFrame([{
        'record_id': r.record_id,
        'accepted': r.accepted,
        'n_leads': r.n_leads,
        'flatline_leads': _join(r.flatline_leads),
        'dead_leads': _join(r.dead_leads),
        'noisy_leads': _join(r.noisy_leads),
    } for r in reports], columns=QC_COLUMNS)
    return write_csv(df, path, config_hash=config_hash)


def read_qc_csv(path: str | Path) -> list[QcReport]:
    df = read_csv(path, dtype={'record_id': str, 'flatline_leads': str, 'dead_leads': str, 'noisy_leads': str}, keep_default_na=False)
    return [QcReport(row.record_id, _split(row.flatline_leads), _split(row.dead_leads), _split(row.noisy_leads), int(row.n_leads))
            for row in df.itertuples(index=False)]
