"""Long-format CSV ingestion for observed panels and deterministic report writers.

Panel files have one row per ``(unit_id, time)`` with columns
``unit_id, time, treatment, outcome, step_prob`` and optionally ``group_id``.
``step_prob`` is the probability the design gave to the treatment actually
received. Floats are written with ``repr`` so a write/read cycle is exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .assignment import ObservedPanel
from .errors import AssumptionViolation, ValidationError
from .panel_core import TreatmentAlphabet

REQUIRED_COLUMNS = ("unit_id", "time", "treatment", "outcome", "step_prob")
OPTIONAL_COLUMNS = ("group_id",)


def _infer_alphabet(tokens: Iterable[str]) -> TreatmentAlphabet:
    distinct = sorted(set(tokens))
    try:
        ints = sorted({int(t) for t in distinct})
    except ValueError:
        ints = None
    if ints is not None:
        if set(ints) <= {0, 1}:
            return TreatmentAlphabet((0, 1))
        return TreatmentAlphabet(tuple(ints))
    try:
        return TreatmentAlphabet(tuple(sorted({float(t) for t in distinct})))
    except ValueError:
        pass
    if len(distinct) < 2:
        raise ValidationError(f"cannot infer a treatment alphabet from the single label {distinct!r}; "
                              "pass the alphabet explicitly")
    return TreatmentAlphabet(tuple(distinct))


def _float(text, line, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ValidationError(f"line {line}: column {column!r} value {text!r} is not a number") from None
    if not math.isfinite(value):
        raise ValidationError(f"line {line}: column {column!r} value {text!r} is not finite")
    return value


def ingest_panel(path, alphabet: TreatmentAlphabet | Sequence | None = None) -> ObservedPanel:
    """Read and validate a long-format panel CSV.

    Units are ordered by first appearance. Diagnostics cite the file line
    (the header is line 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing required column(s) {missing}")
        has_group = "group_id" in header
        rows = [(k + 2, row) for k, row in enumerate(reader)]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    if alphabet is None:
        alphabet = _infer_alphabet(row["treatment"].strip() for _, row in rows)
    elif not isinstance(alphabet, TreatmentAlphabet):
        alphabet = TreatmentAlphabet(tuple(alphabet))

    units: dict[str, int] = {}
    cells: dict[tuple[int, int], tuple] = {}
    for line, row in rows:
        uid = (row["unit_id"] or "").strip()
        if not uid:
            raise ValidationError(f"line {line}: empty unit_id")
        try:
            t = int(row["time"])
        except (TypeError, ValueError):
            raise ValidationError(f"line {line}: time {row['time']!r} is not an integer") from None
        if t < 1:
            raise ValidationError(f"line {line}: time {t} must be at least 1")
        i = units.setdefault(uid, len(units))
        if (i, t) in cells:
            raise ValidationError(f"line {line}: duplicate (unit_id, time) = ({uid}, {t}), "
                                  f"first seen on line {cells[(i, t)][0]}")
        try:
            code = alphabet.parse(row["treatment"])
        except ValidationError as exc:
            raise ValidationError(f"line {line}: {exc}") from None
        y = _float(row["outcome"], line, "outcome")
        sp = _float(row["step_prob"], line, "step_prob")
        if not 0.0 < sp < 1.0:
            raise AssumptionViolation(
                f"line {line}: step_prob={row['step_prob'].strip()} violates probabilistic assignment "
                "(must lie strictly between 0 and 1)", unit=i, time=t)
        gid = None
        if has_group:
            gid = (row["group_id"] or "").strip()
            if not gid:
                raise ValidationError(f"line {line}: empty group_id")
        cells[(i, t)] = (line, code, y, sp, gid)

    n = len(units)
    ids = list(units)
    per_unit: list[list[int]] = [[] for _ in range(n)]
    for i, t in cells:
        per_unit[i].append(t)
    T = max(max(ts) for ts in per_unit)
    for i, ts in enumerate(per_unit):
        have = set(ts)
        gaps = [t for t in range(1, T + 1) if t not in have]
        if gaps:
            raise ValidationError(f"unit {ids[i]!r}: missing time(s) {gaps[:5]} (each unit needs times 1..{T})")
    W = np.empty((n, T), dtype=np.int64)
    Y = np.empty((n, T))
    SP = np.empty((n, T))
    G = np.empty((n, T), dtype=object) if has_group else None
    for (i, t), (_, code, y, sp, gid) in cells.items():
        W[i, t - 1], Y[i, t - 1], SP[i, t - 1] = code, y, sp
        if G is not None:
            G[i, t - 1] = gid
    return ObservedPanel(W, Y, SP, alphabet, G, tuple(ids))


def write_panel(observed: ObservedPanel, path) -> None:
    """Write the long-format CSV read by :func:`ingest_panel`."""
    path = Path(path)
    ids = observed.unit_ids or tuple(str(i) for i in range(observed.n_units))
    cols = list(REQUIRED_COLUMNS) + (["group_id"] if observed.group_ids is not None else [])
    with path.open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(cols)
        for i in range(observed.n_units):
            for t in range(observed.n_periods):
                rec = [ids[i], t + 1, observed.alphabet.label(observed.assignments[i, t]),
                       repr(float(observed.outcomes[i, t])), repr(float(observed.step_probs[i, t]))]
                if observed.group_ids is not None:
                    rec.append(observed.group_ids[i, t])
                out.writerow(rec)


# ---------------------------------------------------------------------------
# Reports


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(doc, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_rows(rows: Sequence[dict], path, columns: Sequence[str] | None = None) -> None:
    """CSV with a fixed column order (first row's keys unless given)."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with Path(path).open("w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(columns)
        for row in rows:
            out.writerow([_cell(row.get(c)) for c in columns])


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
