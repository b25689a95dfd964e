"""
Curve storage for SGD Lab
Writes risk curves as a long CSV table (one row per series and checkpoint)
and reads them back
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

from errors import ConfigError
from runner import RiskCurve, Series

CSV_COLUMNS = ['run_id', 'series', 't', 'value', 'stderr', 'replicates']
FLOAT_FORMAT = '%.17g'


def curves_to_frame(curves: Iterable[RiskCurve]) -> pd.DataFrame:
    frames = []
    for curve in curves:
        n = curve.checkpoints.size
        stderr = curve.stderrs if curve.stderrs is not None else np.full(n, np.nan)
        frames.append(pd.DataFrame({
            'run_id': [curve.run_id] * n,
            'series': [curve.series.value] * n,
            't': curve.checkpoints,
            'value': curve.values,
            'stderr': stderr,
            'replicates': np.full(n, curve.replicates, dtype=np.int64),
        }, columns=CSV_COLUMNS))
    if not frames:
        return pd.DataFrame(columns=CSV_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def _write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='')
    except OSError as e:
        raise ConfigError(f"Cannot write {path}: {e}")
    logging.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_curves(curves: Sequence[RiskCurve], path: Union[str, Path]) -> Path:
    """Save curves to a CSV file"""
    return _write_frame(curves_to_frame(curves), path)


def read_curves(path: Union[str, Path]) -> List[RiskCurve]:
    """Load curves from a CSV file written by write_curves"""
    try:
        frame = pd.read_csv(path, dtype={'run_id': str, 'series': str})
    except (OSError, pd.errors.ParserError) as e:
        raise ConfigError(f"Cannot read curves from {path}: {e}")
    if list(frame.columns) != CSV_COLUMNS:
        raise ConfigError(f"{path} does not have the curve header {','.join(CSV_COLUMNS)}")

    curves = []
    for (run_id, series), group in frame.groupby(['run_id', 'series'], sort=False):
        stderr = group['stderr'].to_numpy(dtype=float)
        curves.append(RiskCurve(
            checkpoints=group['t'].to_numpy(dtype=np.int64),
            values=group['value'].to_numpy(dtype=float),
            series=Series(series),
            replicates=int(group['replicates'].iloc[0]),
            stderrs=None if np.all(np.isnan(stderr)) else stderr,
            run_id=run_id,
        ))
    return curves


def write_records(records: Sequence[Dict], columns: Sequence[str], path: Union[str, Path]) -> Path:
    """Save flat report records (dominance, lemma margins) to CSV"""
    frame = pd.DataFrame.from_records(list(records), columns=list(columns))
    return _write_frame(frame, path)
