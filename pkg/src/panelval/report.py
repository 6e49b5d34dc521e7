"""Report documents and their JSON / CSV serialization."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError

REPORT_KEYS = ("tool_version", "command", "seed", "inputs", "results")
METRIC_TABLE_HEADER = ("metric", "estimate", "lower", "upper")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def input_entry(role: str, path) -> dict:
    return {"role": role, "path": str(path), "sha256": file_digest(path)}


def jsonable(obj):
    """Plain JSON types; NaN and infinities become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):  # numpy scalars
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


@dataclass
class ReportDocument:
    tool_version: str
    command: list[str]
    seed: int | None
    inputs: list[dict]
    results: dict
    # rows for --format csv; not part of the JSON document
    table: tuple[tuple[str, ...], list[tuple]] | None = field(default=None, compare=False)

    def as_dict(self) -> dict:
        return jsonable(
            {
                "tool_version": self.tool_version,
                "command": list(self.command),
                "seed": self.seed,
                "inputs": self.inputs,
                "results": self.results,
            }
        )


def format_value(v) -> str:
    """CSV cell text: full-precision floats, empty for missing."""
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def emit_report(doc: ReportDocument, fmt: str = "json") -> bytes:
    """Serialize ``doc``. Floats keep full precision (``repr``)."""
    if fmt == "json":
        text = json.dumps(doc.as_dict(), indent=2, allow_nan=False) + "\n"
        return text.encode("utf-8")
    if fmt == "csv":
        if doc.table is None:
            raise InputError("this report has no tabular form; use --format json")
        header, rows = doc.table
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
        return buf.getvalue().encode("utf-8")
    raise InputError(f"unsupported report format {fmt!r}")


def parse_report(data: bytes | str) -> ReportDocument:
    obj = json.loads(data)
    missing = [k for k in REPORT_KEYS if k not in obj]
    if missing:
        raise InputError(f"report lacks keys: {', '.join(missing)}")
    return ReportDocument(**{k: obj[k] for k in REPORT_KEYS})


def interval_dict(iv) -> dict:
    if iv is None:
        return {"estimate": None, "lower": None, "upper": None}
    return {
        "estimate": iv.estimate,
        "lower": iv.lower,
        "upper": iv.upper,
        "n_valid_replicates": iv.n_valid_replicates,
        "n_undefined_replicates": iv.n_undefined_replicates,
    }


def metric_table(intervals: dict) -> tuple[tuple[str, ...], list[tuple]]:
    rows = []
    for name, iv in intervals.items():
        if iv is None:
            rows.append((name, None, None, None))
        elif isinstance(iv, dict):
            rows.append((name, iv.get("estimate"), iv.get("lower"), iv.get("upper")))
        else:
            rows.append((name, iv.estimate, iv.lower, iv.upper))
    return METRIC_TABLE_HEADER, rows


def write_bytes(path, payload: bytes) -> None:
    Path(path).write_bytes(payload)
