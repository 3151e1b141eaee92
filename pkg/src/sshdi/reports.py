"""CSV ingestion and report serialization.

JSON reports carry ``schema_version`` and write floats with ``repr`` (shortest
round-trip form); non-finite values become ``null``. Human-facing CSVs use six
significant digits.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .errors import DimensionError, IngestError

SCHEMA_VERSION = 1
RESULTS_COLUMNS = ("name", "estimate", "se", "z", "p_raw", "p_adjusted", "ci_low", "ci_high", "flags")
TABLE1_COLUMNS = ("index", "beta_star", "bias", "cov_prob")


def read_csv_dataset(path, response: str, log_transform: bool = False) -> Dataset:
    """Rectangular numeric CSV with a header row; ``response`` names the y column.

    Rows are numbered from 1 after the header in error messages.
    """
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"cannot read {path}: {exc}")
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise IngestError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if any(not h for h in header):
        raise IngestError(f"{path}: empty column name at position {header.index('') + 1}")
    seen = set()
    dupes = sorted({h for h in header if h in seen or seen.add(h)})
    if dupes:
        raise IngestError(f"{path}: duplicate column names {dupes}")
    if response not in header:
        raise IngestError(f"{path}: response column {response!r} not found")

    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=1):
        if len(row) != len(header):
            raise IngestError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
        for k, cell in enumerate(row):
            cell = cell.strip()
            if not cell:
                raise IngestError(f"{path}: missing value at row {i}, column {header[k]!r}")
            try:
                v = float(cell)
            except ValueError:
                raise IngestError(f"{path}: non-numeric value {cell!r} at row {i}, column {header[k]!r}")
            if not math.isfinite(v):
                raise IngestError(f"{path}: non-finite value {cell!r} at row {i}, column {header[k]!r}")
            if log_transform and v <= 0:
                raise IngestError(f"{path}: cannot take log of {cell!r} at row {i}, column {header[k]!r}")
            values[i - 1, k] = v

    if len(body) < 8:
        raise DimensionError(f"{path}: need at least 8 rows, found {len(body)}")
    if len(header) < 2:
        raise DimensionError(f"{path}: need at least one predictor column")
    if log_transform:
        values = np.log(values)
    ycol = header.index(response)
    xcols = [k for k in range(len(header)) if k != ycol]
    return Dataset(x=values[:, xcols], y=values[:, ycol], names=tuple(header[k] for k in xcols))


def write_csv_dataset(path, data: Dataset, response="y"):
    """Write a dataset with full float precision (inverse of :func:`read_csv_dataset`)."""
    names = data.column_names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((response,) + names)
        for yi, xi in zip(data.y, data.x):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_clean(report), indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_json(path, report: dict):
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def _g6(v):
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


def inference_rows(table) -> list[dict]:
    """Rows of an :class:`~sshdi.core.InferenceTable` sorted by adjusted p, then column index."""
    rows = []
    for j in table.order():
        rows.append({
            "column": int(j) + 1,
            "name": table.names[j],
            "estimate": float(table.estimate[j]),
            "variance": float(table.variance[j]),
            "se": float(table.se[j]),
            "z": float(table.z[j]),
            "p_raw": float(table.p_raw[j]),
            "p_adjusted": float(table.p_adjusted[j]),
            "ci_low": float(table.ci_low[j]),
            "ci_high": float(table.ci_high[j]),
            "flags": list(table.flags[j]),
        })
    return rows


def results_csv(rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(RESULTS_COLUMNS)
    for r in rows:
        w.writerow([r["name"]] + [_g6(r[c]) for c in RESULTS_COLUMNS[1:-1]] + [";".join(r["flags"])])
    return out.getvalue()


def table1_csv(report) -> str:
    """Signal rows then one ``noise`` row with the coordinate-averaged values."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TABLE1_COLUMNS)
    for r in report.signal_rows:
        w.writerow([r["index"], _g6(r["beta_star"]), _g6(r["bias"]), _g6(r["cov_prob"])])
    nr = report.noise_row
    w.writerow(["noise", _g6(nr["beta_star"]), _g6(nr["bias"]), _g6(nr["cov_prob"])])
    return out.getvalue()
