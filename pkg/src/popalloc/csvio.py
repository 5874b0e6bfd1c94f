"""CSV readers and writers for trial, target, generalization and weight files."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .estimate import GeneralizationCohort, TargetCohort, TrialDataset
from .exceptions import DataError

SCHEMAS = {
    "trial": ("w1", "w2", "a", "y", "p_assign"),
    "target": ("w1", "w2"),
    "generalization": ("w1", "w2", "z", "a", "y", "p_assign"),
    "weights": ("stratum_id", "tau_star"),
}


def _read(path, columns) -> tuple[list[dict], list[int]]:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(line for line in fh if not line.startswith("#")))]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0][1]]
    missing = [c for c in columns if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}; header is {header}")
    pos = {c: header.index(c) for c in columns}
    out, lines = [], []
    for row_no, (_, cells) in enumerate(rows[1:], start=1):
        if not any(c.strip() for c in cells):
            continue
        if len(cells) < len(header):
            cells = cells + [""] * (len(header) - len(cells))
        record = {}
        for c, j in pos.items():
            text = cells[j].strip()
            if text == "":
                record[c] = math.nan
                continue
            try:
                record[c] = float(text)
            except ValueError:
                raise DataError(f"{path}: row {row_no}, column '{c}': non-numeric value {text!r}") from None
        out.append(record)
        lines.append(row_no)
    return out, lines


def _require(path, rec, row_no, cols):
    for c in cols:
        if math.isnan(rec[c]):
            raise DataError(f"{path}: row {row_no}, column '{c}' is blank")


def _check_prob(path, rec, row_no):
    if not 0.0 < rec["p_assign"] < 1.0:
        raise DataError(f"{path}: row {row_no}: p_assign={rec['p_assign']} outside (0, 1)")


def load_csv(path, schema: str):
    """Read ``path`` under one of the ``SCHEMAS``; parse errors name the data row (1-based)."""
    if schema not in SCHEMAS:
        raise DataError(f"unknown schema {schema!r}")
    cols = SCHEMAS[schema]
    recs, lines = _read(path, cols)

    if schema == "weights":
        for rec, ln in zip(recs, lines):
            _require(path, rec, ln, cols)
        recs.sort(key=lambda r: r["stratum_id"])
        weights = tuple(r["tau_star"] for r in recs)
        total = sum(weights)
        if abs(total - 1.0) > 1e-9:
            raise DataError(f"{path}: tau_star values sum to {total!r}, expected 1")
        if any(w <= 0 for w in weights):
            raise DataError(f"{path}: tau_star values must be positive")
        return weights

    if not recs:
        raise DataError(f"{path}: no data rows")
    if schema == "target":
        for rec, ln in zip(recs, lines):
            _require(path, rec, ln, cols)
        return TargetCohort([r["w1"] for r in recs], [r["w2"] for r in recs])

    if schema == "trial":
        for rec, ln in zip(recs, lines):
            _require(path, rec, ln, cols)
            _check_prob(path, rec, ln)
        return TrialDataset(*([r[c] for r in recs] for c in cols))

    for rec, ln in zip(recs, lines):
        _require(path, rec, ln, ("w1", "w2", "z"))
        if rec["z"] == 1:
            _require(path, rec, ln, ("a", "y", "p_assign"))
            _check_prob(path, rec, ln)
        elif rec["z"] != 0:
            raise DataError(f"{path}: row {ln}: z must be 0 or 1")
    return GeneralizationCohort(*([r[c] for r in recs] for c in cols))


def _fmt(x) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def write_csv(path, data, header_comment: str | None = None) -> None:
    """Write a dataset object back out under its schema."""
    if isinstance(data, GeneralizationCohort):
        cols = SCHEMAS["generalization"]
    elif isinstance(data, TrialDataset):
        cols = SCHEMAS["trial"]
    elif isinstance(data, TargetCohort):
        cols = SCHEMAS["target"]
    else:
        raise DataError(f"cannot write {type(data).__name__}")
    arrays = [np.asarray(getattr(data, c)) for c in cols]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*arrays):
            w.writerow([_fmt(v) for v in row])
