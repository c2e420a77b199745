"""CSV outputs. Every file starts with a header row in the documented order."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .evaluate import EvalRecord

RECORD_COLUMNS = ("index", "mode", "prediction", "label", "correct", "pre_ssl", "post_ssl", "inner_product",
                  "seconds")
POINT_COLUMNS = ("kind", "level", "inner_product", "joint_error", "ttt_error", "improvement")
HISTORY_COLUMNS = ("epoch", "l_m", "l_s", "train_acc", "lr")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows(path, columns: Sequence[str], rows: Iterable[Mapping]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(columns)
        for row in rows:
            out.writerow([_fmt(row.get(c)) for c in columns])


def write_records(path, records: Sequence[EvalRecord]) -> None:
    rows = ({**r.__dict__, "correct": r.correct} for r in records)
    write_rows(path, RECORD_COLUMNS, rows)


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
