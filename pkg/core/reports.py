"""CSV and JSON artifacts written into a run directory."""

from __future__ import annotations

import csv
import json
import logging
import os
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence, TextIO, Union

import numpy as np

from .errors import ReportIoError

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "step", "split", "loss", "recon", "kl", "kl_weight", "mrstft", "mae", "lr")


@dataclass
class MetricRow:
    """One line of the training metric log; unused fields stay empty."""
    epoch:     int
    step:      int
    split:     str
    loss:      float
    recon:     Optional[float] = None
    kl:        Optional[float] = None
    kl_weight: Optional[float] = None
    mrstft:    Optional[float] = None
    mae:       Optional[float] = None
    lr:        Optional[float] = None


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@contextmanager
def _report_file(path: Union[str, Path]) -> Iterator[TextIO]:
    """Open a CSV report for writing, creating parent directories.

    Raises:
      ReportIoError: The directory or file could not be created or written.
    """
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            yield f
    except OSError as e:
        raise ReportIoError(f"could not write '{path}': {e}") from e


def write_metric_csv(rows: Iterable[MetricRow], path: Union[str, Path]) -> None:
    """Write the metric log with the fixed column order."""
    with _report_file(path) as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            values = asdict(row)
            writer.writerow([_fmt(values[c]) for c in METRIC_COLUMNS])


def read_metric_csv(path: Union[str, Path]) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def write_json(obj: Any, path: Union[str, Path]) -> None:
    """Pretty JSON, written atomically.

    Raises:
      ReportIoError: The directory or file could not be created or written.
    """
    path = Path(path)
    tmp: Optional[str] = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent, text=True)
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2, default=_jsonable)
            f.write("\n")
        os.replace(tmp, path)
    except OSError as e:
        raise ReportIoError(f"could not write '{path}': {e}") from e
    finally:
        if tmp is not None and os.path.exists(tmp):
            os.remove(tmp)


def write_table_csv(header: Sequence[str], rows: Iterable[Sequence[Any]], path: Union[str, Path]) -> None:
    with _report_file(path) as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_confusion_csv(matrix: np.ndarray, labels: Sequence[str], path: Union[str, Path]) -> None:
    """Confusion matrix grid: rows are true labels, columns predictions."""
    write_table_csv(
        ["true\\pred", *labels],
        ([label, *(int(v) for v in matrix[i])] for i, label in enumerate(labels)),
        path,
    )
