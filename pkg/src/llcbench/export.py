#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
import csv
import io
import json
import logging
import os
from pathlib import Path
import tempfile
from typing import Any, Dict, Iterable, List, Union

import numpy as np

from . import utils
from .base import DictBase, Field
from .exceptions import FormatError


__all__ = [
    "MetricsRecord",
    "CSV_HEADER",
    "FORMATS",
    "records_to_csv",
    "write_csv",
    "read_csv",
    "write_json",
    "read_json",
    "write_manifest",
    "save_checkpoint",
    "load_checkpoint",
    "export"
]

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "epoch",
    "train_loss",
    "val_loss",
    "update_norm",
    "lambda_hat",
    "lambda_se",
    "wbic",
    "hessian_trace",
    "hessian_se",
    "kappa_mean",
)
"""The fixed column order of metric CSV files."""

FORMATS = {"csv", "json"}


class MetricsRecord(DictBase):
    """
    The metrics of one epoch. Optional quantities are `None` at epochs where their cadence does not fire.
    """

    epoch = Field(0)
    train_loss = Field(None)
    val_loss = Field(None)
    update_norm = Field(0.0, doc="Mean over the epoch's batches of `||w_new - w_old||`.")
    lambda_hat = Field(None)
    lambda_se = Field(None)
    wbic = Field(None)
    hessian_trace = Field(None)
    hessian_se = Field(None)
    kappa_mean = Field(None, doc="Mean NGD smoothing over the epoch's steps.")
    bic = Field(None, doc="BIC at the same point as `wbic` (JSON only).")
    fisher_trace = Field(None, doc="Empirical Fisher trace on the metric batch (JSON only).")

    def __init__(self, *args, **kwargs) -> None:
        super(MetricsRecord, self).__init__(*args, **kwargs)
        for name, field in self.fields().items():
            self.setdefault(name, field.make_default())


def _cell(key: str, value: Any) -> str:
    if value is None:
        return ""
    if key == "epoch":
        return str(int(value))
    return repr(float(value))


def records_to_csv(records: Iterable[Dict]) -> str:
    """
    Parameters
    ----------
    records : Iterable[Dict]
        Metric records.

    Returns
    -------
    str : The CSV text: the fixed header, one line per record, absent values empty and floats in shortest
    round-trip form.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for record in records:
        writer.writerow([_cell(key, record.get(key)) for key in CSV_HEADER])
    return buffer.getvalue()


def _atomic_write(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as _:
            _.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def write_csv(records: Iterable[Dict], path: Union[str, Path]) -> Path:
    """
    Write metric records as CSV; identical records give identical bytes.

    Returns
    -------
    Path : The written file.
    """
    return _atomic_write(path, records_to_csv(records))


def read_csv(path: Union[str, Path]) -> List[MetricsRecord]:
    """
    Parse a metric CSV written by `write_csv`.

    Parameters
    ----------
    path : Union[str, Path]
        The file.

    Returns
    -------
    List[MetricsRecord]

    Raises
    ------
    llcbench.exceptions.FormatError
        If the header differs from `CSV_HEADER`.
    """
    with open(path, "r", encoding="utf-8", newline="") as _:
        rows = list(csv.reader(_))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise FormatError(f"File {path} does not start with the metric header {','.join(CSV_HEADER)}.")
    records = []
    for row in rows[1:]:
        values = {}
        for key, cell in zip(CSV_HEADER, row):
            if cell == "":
                values[key] = None
            elif key == "epoch":
                values[key] = int(cell)
            else:
                values[key] = float(cell)
        records.append(MetricsRecord(**values))
    return records


def write_json(records: Iterable[DictBase], path: Union[str, Path]) -> Path:
    """
    Returns
    -------
    Path : The written file, a JSON list of records with every field.
    """
    payload = [_.to_dict() if isinstance(_, DictBase) else dict(_) for _ in records]
    return _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_json(path: Union[str, Path]) -> List[MetricsRecord]:
    with open(path, "r", encoding="utf-8") as _:
        return [MetricsRecord(**_) for _ in json.load(_)]


def write_manifest(
        path: Union[str, Path],
        config: DictBase,
        seed: int,
        wall_time: float,
        **extra
) -> Path:
    """
    Write the run manifest: the full configuration, the seed, a `git describe`-style version and the wall time.

    Parameters
    ----------
    path : Union[str, Path]
        The manifest file.
    config : DictBase
        The run configuration.
    seed : int
        The run seed.
    wall_time : float
        Elapsed seconds.
    extra
        Further JSON-serializable entries.

    Returns
    -------
    Path
    """
    manifest = {
        "config": config.to_dict(),
        "seed": seed,
        "version": utils.describe_version(),
        "wall_time_seconds": float(wall_time),
        **extra
    }
    return _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def save_checkpoint(path: Union[str, Path], params: np.ndarray) -> Path:
    """
    Persist a parameter vector as a `.npy` file.

    Returns
    -------
    Path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.asarray(params, dtype=np.float64), allow_pickle=False)
    logger.debug("Checkpoint written to %s.", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> np.ndarray:
    """
    Returns
    -------
    np.ndarray : The flat parameter vector stored by `save_checkpoint`.
    """
    try:
        params = np.load(path, allow_pickle=False)
    except ValueError as err:
        raise FormatError(f"File {path} is not a parameter checkpoint: {err}.") from err
    return np.asarray(params, dtype=np.float64).ravel()


def export(
        records: Iterable[Dict],
        fmt: str,
        out_dir: Union[str, Path],
        *,
        stem: str = "metrics"
) -> Path:
    """
    Write records in the requested format.

    Parameters
    ----------
    records : Iterable[Dict]
        Metric records.
    fmt : str
        `csv` or `json`.
    out_dir : Union[str, Path]
        The target directory (created when missing).
    stem : str
        The file stem. Default `"metrics"`.

    Returns
    -------
    Path : The written file.
    """
    utils.check_choice(fmt, "format", FORMATS)
    path = Path(out_dir) / f"{stem}.{fmt}"
    if fmt == "csv":
        return write_csv(records, path)
    return write_json(records, path)
