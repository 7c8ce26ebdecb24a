from pathlib import Path
import json

import pandas as pd
import numpy as np


def mean_dfs(x_list: list[pd.DataFrame | pd.Series]) -> pd.DataFrame | pd.Series:
    return pd.concat(x_list, keys=range(len(x_list))).groupby(level=1, sort=False).mean()


def std_dfs(x_list: list[pd.DataFrame | pd.Series], ddof: int = 0) -> pd.DataFrame | pd.Series:
    return pd.concat(x_list, keys=range(len(x_list))).groupby(level=1, sort=False).std(ddof=ddof)


def write_csv(df: pd.DataFrame, path: str | Path, config_hash: str = None, index: bool = False) -> Path:
    """寫出 CSV，第一行附上設定檔雜湊

    Args:
        df (pd.DataFrame): 要寫出的資料
        path (str | Path): 輸出路徑，父目錄不存在時自動建立
        config_hash (str, optional): 產生此檔案的設定檔雜湊，寫成 `# config_hash: ...`

    Returns:
        Path: 輸出路徑

    Note:
        - 以 `read_csv` 讀回時會略過註解行
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        if config_hash is not None:
            f.write(f'# config_hash: {config_hash}\n')
        df.to_csv(f, index=index, lineterminator='\n')
    return path


def read_csv(path: str | Path, **kwargs) -> pd.DataFrame:
    return pd.read_csv(path, comment='#', **kwargs)


def read_config_hash(path: str | Path) -> str | None:
    with open(path, 'r', encoding='utf-8') as f:
        first = f.readline()
    if first.startswith('# config_hash:'):
        return first.split(':', 1)[1].strip()
    return None


def _to_builtin(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f'not JSON serializable: {type(obj)}')


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return None
    return obj


def write_json(obj: dict, path: str | Path, config_hash: str = None) -> Path:
    """Write sorted-key JSON; non-finite floats become null."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {'config_hash': config_hash, **obj} if config_hash is not None else obj
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_nan_to_none(doc), f, indent=2, sort_keys=True, default=_to_builtin)
        f.write('\n')
    return path
