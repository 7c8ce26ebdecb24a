from typing import Literal, Iterable
from pathlib import Path
import hashlib
import logging
import json

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import get_config_dir
from .errors import ConfigError

logger = logging.getLogger(__name__)

ARCHS = ('cnn1d', 'cnnlstm')
ARCH_NAMES = {'cnn1d': 'CNN1D', 'cnnlstm': 'CNN-LSTM'}
STANDARD_FS = (62, 100, 250, 500)


class _Frozen(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class QcThresholds(_Frozen):
    flatline_std_mv: float = Field(1e-4, gt=0)
    noise_band_frac: float = Field(0.4, gt=0, lt=1)
    noise_power_ratio: float = Field(0.5, gt=0, le=1)


class SplitParams(_Frozen):
    test_frac: float = Field(0.3, gt=0, lt=1)
    folds: int = Field(5, ge=2)
    seed: int = Field(42, ge=0)


class TrainConfig(_Frozen):
    """Training hyperparameters of one architecture.

    Declared once per architecture and bound to a sampling frequency with
    `for_fs`, so every frequency of an experiment trains with the same values.

    Note:
        - `class_weights=None` means inverse-frequency weights n_total/(2*n_class),
          recomputed on each fold's training pool
        - `early_stop_metric='val_f1'` keeps the best val F1 epoch; 'val_loss'
          keeps the lowest validation loss instead
    """
    arch_id: Literal['cnn1d', 'cnnlstm']
    fs_hz: int | None = None
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(64, gt=0)
    max_epochs: int = Field(100, gt=0)
    patience: int = Field(10, gt=0)
    early_stop_metric: Literal['val_f1', 'val_loss'] = 'val_f1'
    class_weights: tuple[float, float] | None = None
    dropout_p: float = Field(0.3, ge=0, lt=1)
    seed: int = Field(42, ge=0)
    device: str = 'cpu'

    @field_validator('class_weights')
    @classmethod
    def _positive_weights(cls, v):
        if v is not None and min(v) <= 0:
            raise ValueError('class weights must be positive')
        return v

    def for_fs(self, fs_hz: int) -> 'TrainConfig':
        return self.model_copy(update={'fs_hz': int(fs_hz)})


def ensure_uniform(configs: Iterable[TrainConfig]) -> None:
    """Refuse train configs that differ in anything other than `fs_hz`."""
    configs = list(configs)
    if not configs:
        return
    base = configs[0].model_dump(exclude={'fs_hz'})
    for c in configs[1:]:
        other = c.model_dump(exclude={'fs_hz'})
        if other != base:
            diff = sorted(k for k in base if base[k] != other[k])
            raise ConfigError(f'train configs differ across frequencies in {diff}')


class MetricsParams(_Frozen):
    n_bins: int = Field(10, ge=1)
    tau: float = Field(0.5, ge=0, le=1)
    grid_size: int = Field(101, ge=2)


def _default_train() -> dict[str, TrainConfig]:
    return {arch: TrainConfig(arch_id=arch) for arch in ARCHS}


class ExperimentConfig(_Frozen):
    manifest_path: Path
    output_root: Path
    target_fs: list[int] = Field(default_factory=lambda: list(STANDARD_FS))
    source_fs: int = Field(500, gt=0)
    duration_s: int = Field(10, gt=0)
    clip_limit_mv: float = Field(32.0, gt=0)
    qc: QcThresholds = Field(default_factory=QcThresholds)
    split: SplitParams = Field(default_factory=SplitParams)
    train: dict[str, TrainConfig] = Field(default_factory=_default_train)
    metrics: MetricsParams = Field(default_factory=MetricsParams)
    n_jobs: int = 1

    @field_validator('target_fs')
    @classmethod
    def _valid_fs(cls, v):
        if not v or min(v) <= 0:
            raise ValueError('target_fs must be a non-empty list of positive rates')
        if len(set(v)) != len(v):
            raise ValueError('target_fs contains duplicates')
        unknown = sorted(set(v) - set(STANDARD_FS))
        if unknown:
            raise ValueError(f'target_fs {unknown} not among the benchmark rates {list(STANDARD_FS)}')
        return v

    @model_validator(mode='after')
    def _train_keys(self):
        for arch, cfg in self.train.items():
            if arch != cfg.arch_id:
                raise ValueError(f'train[{arch!r}] declares arch_id {cfg.arch_id!r}')
            if cfg.fs_hz is not None:
                raise ValueError(f'train[{arch!r}] must not fix fs_hz; it is bound per frequency')
        return self

    @property
    def archs(self) -> list[str]:
        return [a for a in ARCHS if a in self.train]

    def train_config(self, arch: str, fs_hz: int) -> TrainConfig:
        if arch not in self.train:
            raise ConfigError(f'no train config for arch {arch!r}')
        return self.train[arch].for_fs(fs_hz)

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        """Copy with the split seed and every train seed replaced."""
        return self.model_copy(update={
            'split': self.split.model_copy(update={'seed': seed}),
            'train': {k: v.model_copy(update={'seed': seed}) for k, v in self.train.items()},
        })


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(cfg.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]


class Config:
    def __init__(self, config_dir: str | Path = None):
        self.config_dir = Path(config_dir) if config_dir is not None else get_config_dir()

    def _load_config(self, file_name: str) -> tuple[dict, Path]:
        """
        Load a JSON config file from the config directory.

        The main file is tried first; if it does not exist the committed
        example template is used instead.

        Args:
            file_name: config file name, e.g. 'experiment.json'

        Returns:
            tuple: (parsed JSON, path it was read from)

        Notes:
            - main config files (*.json) should not be committed
            - example files (*.example.json) are the templates
        """
        main_path = self.config_dir / file_name
        example_path = self.config_dir / file_name.replace('.json', '.example.json')

        for path in (main_path, example_path):
            if path.exists():
                return _read_json(path), path
        raise FileNotFoundError(f"No config file found in {self.config_dir}")

    def experiment(self) -> ExperimentConfig:
        data, path = self._load_config('experiment.json')
        return parse_experiment_config(data, base_dir=path.parent)


def _read_json(path: Path) -> dict:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f'{path}: invalid JSON ({e})') from e


def parse_experiment_config(data: dict, base_dir: Path = None) -> ExperimentConfig:
    """Validate a config document; relative paths resolve against `base_dir`."""
    # materialized copies carry their own hash
    data = {k: v for k, v in data.items() if k != 'config_hash'}
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    if base_dir is not None:
        cfg = cfg.model_copy(update={
            'manifest_path': _resolve(cfg.manifest_path, base_dir),
            'output_root': _resolve(cfg.output_root, base_dir),
        })
    return cfg


def _resolve(path: Path, base_dir: Path) -> Path:
    return path if path.is_absolute() else (Path(base_dir) / path).resolve()


def load_experiment_config(path: str | Path = None, seed: int = None) -> ExperimentConfig:
    """Load the experiment config.

    Args:
        path: JSON config file; if None, `experiment.json` from the config dir
        seed: optional override of the split and train seeds

    Examples:
        ```python
        cfg = load_experiment_config('config/experiment.json', seed=7)
        ```
    """
    if path is None:
        try:
            cfg = Config().experiment()
        except FileNotFoundError as e:
            raise ConfigError(str(e)) from e
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f'config file not found: {path}')
        cfg = parse_experiment_config(_read_json(path), base_dir=path.parent)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def write_materialized(cfg: ExperimentConfig, path: str | Path) -> str:
    """Write the config with every default filled in; returns its hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    doc = {'config_hash': digest, **cfg.model_dump(mode='json')}
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write('\n')
    return digest
