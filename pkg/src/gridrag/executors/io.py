"""Non-spreadsheet file I/O: csv, json, plain text and markdown."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..errors import IOParseError, UnsupportedFormat
from ._fs import atomic_write_bytes

FORMATS = ("csv", "json", "text", "markdown")
_EXT = {".csv": "csv", ".json": "json", ".txt": "text", ".text": "text", ".log": "text", ".md": "markdown",
        ".markdown": "markdown"}
STUB_EXT = {".pdf": "pdf", ".docx": "docx"}


def detect_format(path: str | Path) -> str:
    ext = Path(path).suffix.lower()
    if ext in STUB_EXT:
        raise UnsupportedFormat(f"{STUB_EXT[ext]} files are not supported (stub)")
    if ext not in _EXT:
        raise UnsupportedFormat(f"cannot infer a format for {path}; use one of {', '.join(FORMATS)}")
    return _EXT[ext]


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        head = data[: exc.start]
        line = head.count(b"\n") + 1
        column = exc.start - (head.rfind(b"\n") + 1) + 1
        raise IOParseError(f"invalid UTF-8 byte 0x{data[exc.start]:02x}", line, column) from None


def parse_csv(text: str) -> dict:
    rows = []
    reader = csv.reader(io.StringIO(text, newline=""), strict=True)
    try:
        for row in reader:
            rows.append(row)
    except csv.Error as exc:
        raise IOParseError(f"csv: {exc}", reader.line_num, None) from None
    if not rows:
        return {"header": [], "records": []}
    header, records = rows[0], rows[1:]
    for n, rec in enumerate(records, 2):
        if len(rec) != len(header):
            raise IOParseError(f"csv: expected {len(header)} fields, got {len(rec)}", n, len(rec))
    return {"header": header, "records": records}


def io_read(path: str | Path, format: str | None = None):
    """Read a file: csv -> {"header", "records"}, json -> parsed value, text/markdown -> str."""
    fmt = format or detect_format(path)
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"unsupported format {fmt!r}")
    text = _decode(Path(path).read_bytes())
    if fmt == "csv":
        return parse_csv(text)
    if fmt == "json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise IOParseError(f"json: {exc.msg}", exc.lineno, exc.colno) from None
    return text


def render(content, fmt: str) -> str:
    if fmt == "csv":
        if isinstance(content, dict):
            rows = [content.get("header", [])] + list(content.get("records", []))
        else:
            rows = list(content)
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        for row in rows:
            if isinstance(row, (str, bytes)) or not hasattr(row, "__iter__"):
                raise UnsupportedFormat("csv content must be a list of rows")
            writer.writerow(["" if v is None else v for v in row])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(content, ensure_ascii=False, indent=2) + "\n"
    if not isinstance(content, str):
        raise UnsupportedFormat(f"{fmt} content must be a string")
    return content


def io_write(path: str | Path, content, format: str | None = None) -> str:
    """Atomically write ``content``; returns the written path."""
    fmt = format or detect_format(path)
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"unsupported format {fmt!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(path, render(content, fmt).encode("utf-8"))
    return str(path)
