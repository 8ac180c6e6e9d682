"""Bundled datasets."""
from __future__ import annotations

import csv
from pathlib import Path

from ..survdata import SubjectRecord

_HERE = Path(__file__).resolve().parent


def pembro_path() -> Path:
    """Path of the bundled KEYNOTE-048 reconstruction (pembrolizumab alone
    versus cetuximab with chemotherapy, overall survival)."""
    return _HERE / "pembro.csv"


def load_pembro() -> list:
    """The bundled fixture as SubjectRecord objects (group 1 = pembrolizumab)."""
    return load_csv(pembro_path())


def load_csv(path) -> list:
    """Read a ``time,event,group`` CSV into SubjectRecord objects.

    Raises ValueError with the offending line number on malformed input.
    """
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"time", "event", "group"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError(
                f"line 1: header must contain columns {sorted(required)}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                time = float(row["time"])
                event = int(row["event"])
                group = int(row["group"])
                if event not in (0, 1) or group not in (0, 1):
                    raise ValueError
            except (TypeError, ValueError):
                raise ValueError(f"line {lineno}: malformed row {row!r}") from None
            records.append(SubjectRecord(time, bool(event), group))
    if not records:
        raise ValueError("line 2: file contains no data rows")
    return records
