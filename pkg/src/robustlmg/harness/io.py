"""Versioned CSV tables and content hashes."""
from __future__ import annotations

import csv
import hashlib
import io
from pathlib import Path

SCHEMA_LINE = "# schema=1"


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.write_text(format_csv(header, rows))
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SCHEMA_LINE:
        raise ValueError(f"{path}: missing schema line")
    rows = list(csv.reader(lines[1:]))
    return rows[0], rows[1:]


def csv_body(path) -> str:
    """Everything after the schema line, for byte comparisons."""
    return Path(path).read_text().split("\n", 1)[1]


def git_blob_sha1(data: bytes) -> str:
    """Hash ``data`` the way git hashes a blob."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()
