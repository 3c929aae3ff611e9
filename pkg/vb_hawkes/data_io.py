"""
Event files, model files and table output.

Events are read from one-timestamp-per-line CSV, whose window sits in a
``# t_max=`` comment line, or JSON (a bare array or an
object with ``t_max`` and ``events``). Models are stored as JSON through
dataclasses-json; Python's float repr makes the round trip exact.
"""

import re
import json
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from .engine import FitResult, VariationalState
from .errors import DataError, IncompatibleModelError, ModelFileError
from .kernel_gp import GPContext, InducingGrid
from .models import MODEL_FORMAT_VERSION, EventSequence, FitConfig, KernelConfig, ModelFile, Priors

FLOAT_FORMAT = '%.17g'
TIE_INCREMENT = 1e-9
WINDOW_HEADER = re.compile(r'^#\s*t_max\s*=\s*(\S+)\s*$')


def _parse_csv(path: Path) -> tuple:
    values = []
    t_max = None
    with open(path, 'r') as f:
        for line_number, line in enumerate(f, start=1):
            text = line.strip()
            if text.startswith('#'):
                header = WINDOW_HEADER.match(text)
                if header:
                    try:
                        t_max = float(header.group(1))
                    except ValueError:
                        raise DataError(f"{path}:{line_number}: cannot parse window '{text}'")
                continue
            if not text:
                continue
            try:
                values.append(float(text.split(',')[0]))
            except ValueError:
                raise DataError(f"{path}:{line_number}: cannot parse timestamp '{text}'")
    return values, t_max


def _parse_json(path: Path) -> tuple:
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e

    t_max = None
    if isinstance(data, dict):
        if 'events' not in data:
            raise DataError(f"{path}: JSON object must contain an 'events' array")
        t_max = data.get('t_max')
        data = data['events']
    if not isinstance(data, list):
        raise DataError(f"{path}: expected an array of timestamps")
    values = []
    for index, item in enumerate(data):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise DataError(f"{path}: event {index} is not a number: {item!r}")
        values.append(float(item))
    return values, (float(t_max) if t_max is not None else None)


def load_events(path: str, fmt: Optional[str] = None, scale_to: Optional[float] = None,
                t_max: Optional[float] = None) -> EventSequence:
    """
    Load an event sequence from CSV or JSON

    Args:
        path: File to read
        fmt: 'csv' or 'json'; inferred from the suffix when omitted
        scale_to: Map the observed span affinely onto [0, scale_to)
        t_max: End of the observation window; defaults to the file's value or the last event

    Returns:
        Sorted EventSequence; ties are separated by 1e-9 increments and counted
        in ``metadata['ties_perturbed']``

    Raises:
        DataError: on unparsable rows, negative or non-finite timestamps
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Events file not found: {path}")
    fmt = (fmt or path.suffix.lstrip('.') or 'csv').lower()
    if fmt == 'csv':
        values, file_t_max = _parse_csv(path)
    elif fmt == 'json':
        values, file_t_max = _parse_json(path)
    else:
        raise DataError(f"Unsupported events format '{fmt}'")

    times = np.sort(np.asarray(values, dtype=float))
    if times.size and not np.all(np.isfinite(times)):
        raise DataError(f"{path}: timestamps must be finite")
    if times.size and times[0] < 0:
        raise DataError(f"{path}: negative timestamp {times[0]}")

    metadata: Dict[str, Any] = {'source': str(path)}
    if scale_to is not None:
        if scale_to <= 0:
            raise DataError("scale_to must be positive")
        if times.size:
            span = times[-1] - times[0]
            factor = scale_to / (span * (1.0 + 1e-6)) if span > 0 else 1.0
            metadata.update({'scale_offset': float(times[0]), 'scale_factor': float(factor)})
            times = (times - times[0]) * factor
        window = float(scale_to)
    else:
        window = t_max if t_max is not None else file_t_max
        if window is None:
            window = float(times[-1]) if times.size and times[-1] > 0 else 1.0
            logging.warning(f"{path} records no observation window, using t_max={window:.17g}; "
                            f"pass t_max to set it")

    ties = 0
    for i in range(1, times.size):
        if times[i] <= times[i - 1]:
            times[i] = times[i - 1] + TIE_INCREMENT
            ties += 1
    if ties:
        logging.warning(f"Perturbed {ties} tied timestamps in {path}")
    metadata['ties_perturbed'] = ties
    if times.size and times[-1] > window:
        if times[-1] - window > ties * TIE_INCREMENT:
            raise DataError(f"{path}: event at {times[-1]} lies beyond t_max={window}")
        window = float(times[-1])

    return EventSequence(times, t_max=window, label=path.stem, metadata=metadata)


def save_events(sequence: EventSequence, path: str, fmt: Optional[str] = None):
    """Write events as CSV (window in a ``# t_max=`` comment line) or JSON"""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip('.') or 'csv').lower()
    if fmt == 'csv':
        with open(path, 'w', newline='') as f:
            f.write(f"# t_max={FLOAT_FORMAT % sequence.t_max}\n")
            pd.DataFrame({'t': sequence.times}).to_csv(f, header=False, index=False, float_format=FLOAT_FORMAT)
    elif fmt == 'json':
        with open(path, 'w') as f:
            json.dump({'t_max': sequence.t_max, 't_min': sequence.t_min,
                       'events': sequence.times.tolist(), 'metadata': sequence.metadata}, f, indent=2)
    else:
        raise DataError(f"Unsupported events format '{fmt}'")


def write_table(table: pd.DataFrame, path: Optional[str] = None) -> str:
    """Write a table as CSV with 17 significant digits; returns the text when no path is given"""
    if path is None:
        return table.to_csv(index=False, float_format=FLOAT_FORMAT)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return str(path)


def to_model_file(result: FitResult, metadata: Optional[Dict[str, Any]] = None) -> ModelFile:
    state, gp = result.state, result.gp
    return ModelFile(
        domain=gp.domain,
        kernel=gp.cfg,
        priors=result.priors,
        grid_points=gp.grid.points.tolist(),
        m=state.m.tolist(),
        s_factor=np.tril(state.s_factor).tolist(),
        k=float(state.k),
        c=float(state.c),
        support=gp.support,
        report=result.report,
        fit_config=result.cfg,
        metadata=dict(metadata or {}),
    )


def from_model_file(model: ModelFile) -> FitResult:
    """Rebuild the GP context and variational state of a stored model"""
    grid = InducingGrid.from_points(model.grid_points)
    gp = GPContext.from_grid(model.domain, model.kernel, grid, support=model.support)
    state = VariationalState(m=np.asarray(model.m), s_factor=np.asarray(model.s_factor), k=model.k, c=model.c)
    return FitResult(state=state, report=model.report, gp=gp, priors=model.priors, cfg=model.fit_config)


def save_model(model: ModelFile, path: str):
    with open(path, 'w') as f:
        json.dump(model.to_dict(), f, indent=2)


def load_model(path: str) -> ModelFile:
    """
    Raises:
        FileNotFoundError: if the file does not exist
        ModelFileError: if the file is truncated or malformed
        IncompatibleModelError: if it was written by another format version
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ModelFileError(f"{path}:{e.lineno}: model file is not valid JSON ({e.msg})") from e
    if not isinstance(data, dict):
        raise ModelFileError(f"{path}: model file must hold a JSON object")
    version = data.get('version')
    if version != MODEL_FORMAT_VERSION:
        raise IncompatibleModelError(f"{path}: model format '{version}' is not supported "
                                     f"(expected '{MODEL_FORMAT_VERSION}')")
    try:
        return ModelFile.from_dict(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError(f"{path}: incomplete model file ({e})") from e


def fit_cache_key(sequence: EventSequence, kernel_cfg: KernelConfig, priors: Optional[Priors],
                  fit_cfg: FitConfig) -> str:
    """Cache key of a fit: digest of the data plus the settings that change the result"""
    digest = hashlib.sha256(np.ascontiguousarray(sequence.times).tobytes()).hexdigest()
    settings = {
        'window': [sequence.t_min, sequence.t_max],
        'kernel': kernel_cfg.to_dict(),
        'priors': priors.to_dict() if priors is not None else None,
        'fit': fit_cfg.to_dict(),
    }
    return f"fit:{digest}:{json.dumps(settings, sort_keys=True)}"
