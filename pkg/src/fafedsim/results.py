"""CSV emission, audit sidecars and run comparison tables."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .engine import COLUMNS, AuditTrace, Row, RunRecord

HEADER = ",".join(COLUMNS)
INT_COLUMNS = {"t", "samples", "comms"}


def _fmt(name: str, value) -> str:
    if name in INT_COLUMNS:
        return str(int(value))
    # 17 significant digits pin a double exactly
    return "%.17g" % value


def format_csv(rows) -> str:
    out = [HEADER]
    for r in rows:
        out.append(",".join(_fmt(n, v) for n, v in zip(COLUMNS, r)))
    return "\n".join(out) + "\n"


def write_csv(record_or_rows, path) -> Path:
    rows = record_or_rows.rows if isinstance(record_or_rows, RunRecord) else record_or_rows
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_csv(rows))
    return path


def parse_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or ",".join(header) != HEADER:
        raise ValueError(f"bad header; expected {HEADER}")
    rows = []
    for lineno, fields in enumerate(reader, start=2):
        if not fields:
            continue
        if len(fields) != len(COLUMNS):
            raise ValueError(f"line {lineno}: expected {len(COLUMNS)} fields, got {len(fields)}")
        rows.append(Row(*(int(v) if n in INT_COLUMNS else float(v)
                          for n, v in zip(COLUMNS, fields))))
    return rows


def read_csv(path) -> list:
    return parse_csv(Path(path).read_text())


def read_columns(path) -> dict:
    """Any CSV with a header, as column name -> list of floats."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        cols = {h: [] for h in header}
        for fields in reader:
            if not fields:
                continue
            for h, v in zip(header, fields):
                cols[h].append(float(v))
    return cols


def audit_path(csv_path) -> Path:
    return Path(str(csv_path) + ".audit.json")


def write_audit(trace: AuditTrace, csv_path) -> Path:
    # json writes floats with repr, which round-trips exactly
    path = audit_path(csv_path)
    path.write_text(json.dumps(trace.to_dict(), sort_keys=True))
    return path


def read_audit(csv_path) -> AuditTrace | None:
    path = audit_path(csv_path)
    if not path.exists():
        return None
    return AuditTrace.from_dict(json.loads(path.read_text()))


def _reached(rows, threshold: float):
    for r in rows:
        if r.grad_norm <= threshold:
            return r
    return None


def compare_runs(csv_paths, threshold: float) -> str:
    """Text table of final loss, final gradient norm and cost to reach ``threshold``."""
    if not (threshold > 0 and math.isfinite(threshold)):
        raise ValueError("threshold must be > 0 and finite")
    header = ("run", "final_loss", "final_grad_norm", "samples_to_thr", "comms_to_thr")
    table = [header]
    for p in csv_paths:
        rows = read_csv(p)
        if not rows:
            raise ValueError(f"{p}: no rows")
        hit = _reached(rows, threshold)
        table.append((
            Path(p).stem, "%.6g" % rows[-1].loss, "%.6g" % rows[-1].grad_norm,
            "n/a" if hit is None else str(hit.samples),
            "n/a" if hit is None else str(hit.comms),
        ))
    widths = [max(len(r[k]) for r in table) for k in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table)
