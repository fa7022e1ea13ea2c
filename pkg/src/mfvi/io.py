"""Result files: CSV or JSON lines, plus a metadata sidecar."""

from __future__ import annotations

import csv
import json
import math
import os
import subprocess

SIDECAR_SUFFIX = ".meta.json"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, bool):
        return int(v)
    return v


def emit_results(rows, path, columns, fmt: str = "csv", metadata: dict | None = None) -> str:
    """Write ``rows`` (dicts) with a fixed column order; returns the sidecar path.

    Missing keys become empty cells (``null`` in JSON lines); keys outside
    ``columns`` are an error so that headers stay stable.
    """
    columns = list(columns)
    rows = list(rows)
    for i, row in enumerate(rows):
        extra = set(row) - set(columns)
        if extra:
            raise ValueError(f"row {i} has columns outside the schema: {sorted(extra)}")
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(row.get(c)) for c in columns])
    elif fmt == "json-lines":
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                rec = {c: _json_value(row.get(c)) for c in columns}
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    meta = {"columns": columns, "format": fmt, "rows": len(rows), "git": git_hash()}
    meta.update(metadata or {})
    side = str(path) + SIDECAR_SUFFIX
    with open(side, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return side


def read_results(path, fmt: str = "csv") -> list[dict]:
    """Inverse of :func:`emit_results` for the data file."""
    if fmt == "csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                return []
            return [{c: _parse_cell(x) for c, x in zip(header, rec)} for rec in reader]
    if fmt == "json-lines":
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    raise ValueError(f"unknown format {fmt!r}")


def read_header(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh), [])


def git_hash(cwd=None) -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=cwd or os.getcwd(),
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None
