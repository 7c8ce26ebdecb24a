"""CNN1D and CNN-LSTM graphs for 12-lead input [B x 12 x T]

Both graphs are independent of the sampling rate: only activation lengths
change with T = 10 * fs, never the parameters.

Available Functions:
    - build_cnn1d / build_cnn_lstm / build_model
    - forward: checked inference call
    - ModelCheckpoint, save_checkpoint, load_checkpoint: `best.ckpt` container

Examples:
    ```python
    model = build_model('cnnlstm', dropout_p=0.3, seed=7)
    logits = forward(model.eval(), torch.zeros(4, 12, 620))   # [4, 2]
    ```
"""

from dataclasses import dataclass, field
from pathlib import Path
import logging
import json
import math

import numpy as np
import torch
import torch.nn as nn

from .errors import BadMagic, InputTooShort, IoFailure, NonFiniteActivation, TruncatedPayload, UnsupportedVersion
from .store import N_LEADS

logger = logging.getLogger(__name__)

N_CLASSES = 2
LSTM_HIDDEN = 128
SHORTCUT_CHANNELS = (16, 16, 32, 32, 64, 64, 128, 128)
SHORTCUT_KERNEL = 10


def _fan_in_uniform_(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.LSTM):
            for name, p in m.named_parameters():
                if name.startswith('bias'):
                    nn.init.zeros_(p)
                if name.startswith('bias_ih'):
                    # gate order i, f, g, o
                    h = m.hidden_size
                    with torch.no_grad():
                        p[h:2 * h].fill_(1.0)


class CNN1D(nn.Module):
    arch_id = 'cnn1d'
    min_length = 8

    def __init__(self, n_leads: int = N_LEADS, dropout_p: float = 0.3):
        super().__init__()
        self.dropout_p = dropout_p

        def stage(c_in, c_out, k, pool=True):
            layers = [nn.Conv1d(c_in, c_out, kernel_size=k, stride=1, padding=k // 2), nn.BatchNorm1d(c_out), nn.ReLU()]
            if pool:
                layers.append(nn.MaxPool1d(kernel_size=2))
            return nn.Sequential(*layers)

        self.features = nn.Sequential(
            stage(n_leads, 32, 7),
            stage(32, 64, 5),
            stage(64, 128, 5),
            stage(128, 256, 3, pool=False),
        )
        self.pool = nn.AdaptiveAvgPool1d(1)
        self.dropout = nn.Dropout(dropout_p)
        self.fc = nn.Linear(256, N_CLASSES)

    def forward(self, x):
        x = self.features(x)            # [B, 256, T/8]
        x = self.pool(x).flatten(1)     # [B, 256]
        return self.fc(self.dropout(x))

    @staticmethod
    def feature_lengths(T: int) -> list[int]:
        out = []
        for _ in range(3):
            T //= 2
            out.append(T)
        return out


class ShortcutConvBlock1D(nn.Module):
    """BN -> Conv(k=10, pad 5/4) -> ReLU -> Dropout, plus a shortcut, then cat(AvgPool2, MaxPool2).

    Channels double (2 * c_out) and time halves (floor).
    """

    def __init__(self, c_in: int, c_out: int, kernel_size: int = SHORTCUT_KERNEL, dropout_p: float = 0.3):
        super().__init__()
        self.body = nn.Sequential(
            nn.BatchNorm1d(c_in),
            nn.ConstantPad1d((kernel_size // 2, kernel_size - 1 - kernel_size // 2), 0.0),
            nn.Conv1d(c_in, c_out, kernel_size=kernel_size),
            nn.ReLU(),
            nn.Dropout(dropout_p),
        )
        self.shortcut = nn.Conv1d(c_in, c_out, kernel_size=1) if c_in != c_out else nn.Identity()
        self.avg = nn.AvgPool1d(2)
        self.max = nn.MaxPool1d(2)

    def forward(self, x):
        x = self.body(x) + self.shortcut(x)
        return torch.cat([self.avg(x), self.max(x)], dim=1)


class CNNLSTM(nn.Module):
    arch_id = 'cnnlstm'
    min_length = 2 ** len(SHORTCUT_CHANNELS)

    def __init__(self, n_leads: int = N_LEADS, dropout_p: float = 0.3, channels=SHORTCUT_CHANNELS):
        super().__init__()
        self.dropout_p = dropout_p
        blocks, c_in = [], n_leads
        for c in channels:
            blocks.append(ShortcutConvBlock1D(c_in, c, dropout_p=dropout_p))
            c_in = 2 * c
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = c_in
        self.lstm = nn.LSTM(input_size=c_in, hidden_size=LSTM_HIDDEN, num_layers=1, batch_first=True)
        self.dropout = nn.Dropout(dropout_p)
        self.fc = nn.Linear(LSTM_HIDDEN, N_CLASSES)

    def forward(self, x):
        x = self.blocks(x)              # [B, 256, T']
        x = x.permute(0, 2, 1)          # [B, T', 256]
        out, _ = self.lstm(x)
        out = out.mean(dim=1)           # temporal mean
        return self.fc(self.dropout(out))

    @staticmethod
    def feature_lengths(T: int) -> list[int]:
        out = []
        for _ in SHORTCUT_CHANNELS:
            T //= 2
            out.append(T)
        return out


def _build(cls, dropout_p: float, seed: int = None) -> nn.Module:
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        model = cls(dropout_p=dropout_p)
        _fan_in_uniform_(model)
    return model


def build_cnn1d(dropout_p: float = 0.3, seed: int = None) -> CNN1D:
    return _build(CNN1D, dropout_p, seed)


def build_cnn_lstm(dropout_p: float = 0.3, seed: int = None) -> CNNLSTM:
    return _build(CNNLSTM, dropout_p, seed)


MODEL_BUILDERS = {'cnn1d': build_cnn1d, 'cnnlstm': build_cnn_lstm}


def build_model(arch_id: str, dropout_p: float = 0.3, seed: int = None) -> nn.Module:
    if arch_id not in MODEL_BUILDERS:
        raise ValueError(f'unknown arch {arch_id!r}, expected one of {list(MODEL_BUILDERS)}')
    return MODEL_BUILDERS[arch_id](dropout_p=dropout_p, seed=seed)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def forward(model: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """Run the graph on [B x 12 x T]; rejects T below the graph's minimum and non-finite logits."""
    if batch.ndim != 3:
        raise InputTooShort(f'expected [B, leads, T], got shape {tuple(batch.shape)}')
    T = batch.shape[-1]
    if T < model.min_length:
        raise InputTooShort(f'{model.arch_id} needs T >= {model.min_length}, got {T}')
    logits = model(batch)
    if not torch.isfinite(logits).all():
        raise NonFiniteActivation(f'{model.arch_id}: non-finite logits for input length {T}')
    return logits


# checkpoint container
CKPT_MAGIC = b'ECGK'
CKPT_VERSION = 1
CKPT_HEADER_DTYPE = np.dtype([
    ('magic', 'S4'),
    ('version', 'u1'),
    ('reserved', 'S3'),
    ('header_len', '<u4'),
])
PAYLOAD_DTYPE = np.dtype('<f4')


@dataclass
class ModelCheckpoint:
    arch_id: str
    fs_hz: int
    fold_index: int
    dropout_p: float
    best_epoch: int
    best_val_f1: float
    state_dict: dict[str, torch.Tensor] = field(repr=False, default_factory=dict)
    config_hash: str = None

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.arch_id, self.fs_hz, self.fold_index)

    def build(self) -> nn.Module:
        """Model with these weights, in eval mode."""
        model = build_model(self.arch_id, self.dropout_p)
        model.load_state_dict(self.state_dict)
        return model.eval()


def save_checkpoint(ckpt: ModelCheckpoint, path: str | Path, config_hash: str = None) -> Path:
    """Write an ECGK file; the JSON header carries the config hash of the run, like every CSV artifact."""
    index, chunks, offset = {}, [], 0
    for name, tensor in ckpt.state_dict.items():
        arr = tensor.detach().cpu().numpy().astype(PAYLOAD_DTYPE)
        index[name] = [offset, list(arr.shape), str(tensor.dtype).replace('torch.', '')]
        chunks.append(np.ascontiguousarray(arr).tobytes())
        offset += arr.nbytes

    header = json.dumps({
        'arch_id': ckpt.arch_id,
        'fs_hz': int(ckpt.fs_hz),
        'fold_index': int(ckpt.fold_index),
        'dropout_p': float(ckpt.dropout_p),
        'best_epoch': int(ckpt.best_epoch),
        'best_val_f1': float(ckpt.best_val_f1),
        'config_hash': config_hash if config_hash is not None else ckpt.config_hash,
        'index': index,
    }, sort_keys=True).encode('utf-8')

    prefix = np.zeros(1, dtype=CKPT_HEADER_DTYPE)
    prefix['magic'] = CKPT_MAGIC
    prefix['version'] = CKPT_VERSION
    prefix['header_len'] = len(header)

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(prefix.tobytes())
            f.write(header)
            for chunk in chunks:
                f.write(chunk)
    except OSError as e:
        raise IoFailure(f'{path}: {e}') from e
    return path


def load_checkpoint(path: str | Path) -> ModelCheckpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f'{path}: {e}') from e

    size = CKPT_HEADER_DTYPE.itemsize
    if len(raw) < size or raw[:4] != CKPT_MAGIC:
        raise BadMagic(f'{path}: not a checkpoint file')
    prefix = np.frombuffer(raw, dtype=CKPT_HEADER_DTYPE, count=1)[0]
    if int(prefix['version']) != CKPT_VERSION:
        raise UnsupportedVersion(f'{path}: checkpoint version {int(prefix["version"])}')

    header_len = int(prefix['header_len'])
    header = json.loads(raw[size:size + header_len].decode('utf-8'))
    payload = raw[size + header_len:]

    expected = sum(int(np.prod(shape)) * PAYLOAD_DTYPE.itemsize for _, shape, _ in header['index'].values())
    if len(payload) != expected:
        raise TruncatedPayload(expected, len(payload), path)

    state = {}
    for name, (offset, shape, dtype) in header['index'].items():
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=count, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy()).to(getattr(torch, dtype))

    return ModelCheckpoint(
        arch_id=header['arch_id'],
        fs_hz=header['fs_hz'],
        fold_index=header['fold_index'],
        dropout_p=header['dropout_p'],
        best_epoch=header['best_epoch'],
        best_val_f1=header['best_val_f1'],
        state_dict=state,
        config_hash=header.get('config_hash'),
    )
