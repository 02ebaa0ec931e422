"""In-memory workbook model, canonical JSON format and A1 coordinate helpers."""
from __future__ import annotations

import base64
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .errors import InvalidCoordinate, MalformedWorkbook, UnsupportedFormat

FORMAT_VERSION = 1
CELL_KINDS = ("empty", "text", "number", "boolean", "datetime", "formula")
MAX_ROWS = 1_048_576
MAX_COLS = 16_384

_A1_RE = re.compile(r"^\$?([A-Za-z]{1,3})\$?([0-9]+)$")


# --------------------------------------------------------------------------- A1

def col_letters(col: int) -> str:
    if not isinstance(col, int) or col < 1:
        raise InvalidCoordinate(f"column must be >= 1, got {col!r}")
    out = []
    while col:
        col, rem = divmod(col - 1, 26)
        out.append(chr(ord("A") + rem))
    return "".join(reversed(out))


def col_index(letters: str) -> int:
    n = 0
    for ch in letters.upper():
        if not "A" <= ch <= "Z":
            raise InvalidCoordinate(f"bad column letters {letters!r}")
        n = n * 26 + (ord(ch) - ord("A") + 1)
    if n == 0:
        raise InvalidCoordinate("empty column letters")
    return n


def a1_ref(row: int, col: int) -> str:
    """Return the A1-style reference for a 1-based (row, col) pair."""
    if not isinstance(row, int) or row < 1:
        raise InvalidCoordinate(f"row must be >= 1, got {row!r}")
    return f"{col_letters(col)}{row}"


def parse_a1(ref: str) -> tuple[int, int]:
    m = _A1_RE.match(ref.strip())
    if not m:
        raise InvalidCoordinate(f"not an A1 reference: {ref!r}")
    row = int(m.group(2))
    if row < 1:
        raise InvalidCoordinate(f"not an A1 reference: {ref!r}")
    return row, col_index(m.group(1))


def a1_span(row_span: tuple[int, int], col_span: tuple[int, int]) -> str:
    return f"{a1_ref(row_span[0], col_span[0])}:{a1_ref(row_span[1], col_span[1])}"


def parse_range(text: str) -> tuple[tuple[int, int], tuple[int, int]]:
    """Parse ``A1:B3`` (or a single ``A1``) into normalized ((r1, c1), (r2, c2))."""
    parts = text.split(":")
    if len(parts) == 1:
        r, c = parse_a1(parts[0])
        return (r, c), (r, c)
    if len(parts) != 2:
        raise InvalidCoordinate(f"not an A1 range: {text!r}")
    (r1, c1), (r2, c2) = parse_a1(parts[0]), parse_a1(parts[1])
    return (min(r1, r2), min(c1, c2)), (max(r1, r2), max(c1, c2))


def split_sheet_ref(text: str) -> tuple[str | None, str]:
    """Split ``'My Sheet'!A1:B2`` into (sheet, range); sheet is None when absent."""
    if "!" not in text:
        return None, text
    sheet, _, rng = text.rpartition("!")
    if len(sheet) >= 2 and sheet[0] == sheet[-1] == "'":
        sheet = sheet[1:-1].replace("''", "'")
    return sheet, rng


def quote_sheet(name: str) -> str:
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_.]*", name):
        return name
    return "'" + name.replace("'", "''") + "'"


# ----------------------------------------------------------------------- model

@dataclass(frozen=True)
class CellValue:
    kind: str
    raw: str = ""
    numeric: float | None = None
    formula_text: str | None = None
    style: dict | None = field(default=None, compare=True)

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise MalformedWorkbook(f"unknown cell kind {self.kind!r}")
        if self.kind == "number" and (self.numeric is None or not math.isfinite(self.numeric)):
            raise MalformedWorkbook(f"number cell needs a finite numeric value, got {self.numeric!r}")
        if self.kind == "formula":
            if not self.formula_text or not self.formula_text.startswith("="):
                raise MalformedWorkbook(f"formula cell needs formula_text starting with '=': {self.formula_text!r}")
        elif self.formula_text is not None:
            raise MalformedWorkbook("formula_text is only allowed on formula cells")

    @classmethod
    def empty(cls) -> "CellValue":
        return cls("empty")

    @classmethod
    def text(cls, value: str) -> "CellValue":
        return cls("text", value)

    @classmethod
    def number(cls, value: float, raw: str | None = None) -> "CellValue":
        value = float(value)
        return cls("number", raw if raw is not None else format_number(value), value)

    @classmethod
    def boolean(cls, value: bool) -> "CellValue":
        return cls("boolean", "TRUE" if value else "FALSE", 1.0 if value else 0.0)

    @classmethod
    def formula(cls, text: str, raw: str = "", numeric: float | None = None) -> "CellValue":
        return cls("formula", raw, numeric, text)

    @property
    def is_empty(self) -> bool:
        return self.kind == "empty" and not self.raw

    @property
    def is_error(self) -> bool:
        return self.kind == "formula" and self.raw.startswith("#")


def format_number(x: float) -> str:
    if math.isfinite(x) and x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass(frozen=True)
class EmbeddedImage:
    image_id: str
    sheet: str
    row: int
    col: int
    payload: bytes
    encoding: str = "image/png"
    alt_text: str = ""

    @property
    def anchor(self) -> tuple[str, int, int]:
        return (self.sheet, self.row, self.col)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.payload).hexdigest()


@dataclass(frozen=True)
class Sheet:
    name: str
    cells: dict = field(default_factory=dict)  # (row, col) -> CellValue, non-empty only
    images: tuple = ()
    n_rows: int = 0
    n_cols: int = 0

    def get(self, row: int, col: int) -> CellValue:
        return self.cells.get((row, col)) or CellValue.empty()

    def iter_cells(self) -> Iterator[tuple[int, int, CellValue]]:
        for (r, c) in sorted(self.cells):
            yield r, c, self.cells[(r, c)]


@dataclass(frozen=True)
class Workbook:
    workbook_id: str
    sheets: tuple

    def sheet(self, name: str) -> Sheet:
        for s in self.sheets:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def sheet_names(self) -> list[str]:
        return [s.name for s in self.sheets]

    @property
    def images(self) -> list[EmbeddedImage]:
        return [img for s in self.sheets for img in s.images]


def make_sheet(name: str, cells: dict, images=()) -> Sheet:
    """Build a Sheet, dropping empty cells and computing the bounding box."""
    kept = {}
    for (r, c), v in cells.items():
        if not (1 <= r <= MAX_ROWS and 1 <= c <= MAX_COLS):
            raise MalformedWorkbook(f"sheet {name!r}: cell ({r},{c}) is out of bounds")
        if v.kind == "empty" and not v.raw and not v.style:
            continue
        kept[(r, c)] = v
    rows = [r for r, _ in kept] + [img.row for img in images]
    cols = [c for _, c in kept] + [img.col for img in images]
    return Sheet(
        name=name,
        cells=kept,
        images=tuple(sorted(images, key=lambda i: (i.row, i.col, i.image_id))),
        n_rows=max(rows, default=0),
        n_cols=max(cols, default=0),
    )


def make_workbook(workbook_id: str, sheets) -> Workbook:
    sheets = tuple(sheets)
    if not sheets:
        raise MalformedWorkbook("a workbook needs at least one sheet")
    names = [s.name for s in sheets]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise MalformedWorkbook(f"duplicate sheet names: {dupes}")
    image_ids = [img.image_id for s in sheets for img in s.images]
    if len(set(image_ids)) != len(image_ids):
        raise MalformedWorkbook("duplicate image ids")
    return Workbook(workbook_id, sheets)


# ------------------------------------------------------------------ canonical IO

def derive_workbook_id(path: str | Path, content: bytes) -> str:
    stem = Path(path).name.split(".")[0] or "workbook"
    return f"{stem}-{hashlib.sha256(content).hexdigest()[:12]}"


def _cell_from_record(sheet: str, rec: dict) -> tuple[tuple[int, int], CellValue]:
    try:
        row, col = rec["row"], rec["col"]
        kind = rec.get("kind", "text")
        raw = rec.get("raw", "")
    except (KeyError, TypeError) as exc:
        raise MalformedWorkbook(f"sheet {sheet!r}: bad cell record {rec!r}") from exc
    if not isinstance(row, int) or not isinstance(col, int) or isinstance(row, bool) or isinstance(col, bool):
        raise MalformedWorkbook(f"sheet {sheet!r}: cell coordinates must be integers: {rec!r}")
    numeric = rec.get("numeric")
    if numeric is not None:
        numeric = float(numeric)
    if kind == "number" and numeric is None:
        try:
            numeric = float(str(raw).replace(",", ""))
        except ValueError as exc:
            raise MalformedWorkbook(f"sheet {sheet!r}: number cell without numeric value: {rec!r}") from exc
    return (row, col), CellValue(kind, str(raw), numeric, rec.get("formula_text"), rec.get("style"))


def workbook_from_dict(doc: dict, default_id: str | None = None) -> Workbook:
    if not isinstance(doc, dict):
        raise MalformedWorkbook("workbook document must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise MalformedWorkbook(f"unsupported format_version {version!r}")
    wb_id = doc.get("workbook_id") or default_id
    if not wb_id:
        raise MalformedWorkbook("missing workbook_id")
    sheets = []
    for sdoc in doc.get("sheets") or []:
        name = sdoc.get("name")
        if not isinstance(name, str) or not name:
            raise MalformedWorkbook(f"sheet without a name: {sdoc!r}")
        cells = {}
        for rec in sdoc.get("cells", []):
            key, value = _cell_from_record(name, rec)
            if key in cells:
                raise MalformedWorkbook(f"sheet {name!r}: duplicate cell {a1_ref(*key)}")
            cells[key] = value
        images = []
        for idoc in sdoc.get("images", []):
            try:
                payload = base64.b64decode(idoc["payload_base64"], validate=True)
                img = EmbeddedImage(
                    image_id=str(idoc["image_id"]),
                    sheet=name,
                    row=int(idoc["row"]),
                    col=int(idoc["col"]),
                    payload=payload,
                    encoding=idoc.get("encoding", "image/png"),
                    alt_text=idoc.get("alt_text", ""),
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise MalformedWorkbook(f"sheet {name!r}: bad image record: {exc}") from exc
            if not img.payload:
                raise MalformedWorkbook(f"image {img.image_id}: empty payload")
            if not (1 <= img.row <= MAX_ROWS and 1 <= img.col <= MAX_COLS):
                raise MalformedWorkbook(f"image {img.image_id}: anchor out of bounds")
            images.append(img)
        sheets.append(make_sheet(name, cells, images))
    return make_workbook(wb_id, sheets)


def workbook_to_dict(wb: Workbook) -> dict:
    sheets = []
    for s in wb.sheets:
        cells = []
        for r, c, v in s.iter_cells():
            rec = {"row": r, "col": c, "kind": v.kind, "raw": v.raw}
            if v.numeric is not None:
                rec["numeric"] = v.numeric
            if v.formula_text is not None:
                rec["formula_text"] = v.formula_text
            if v.style:
                rec["style"] = v.style
            cells.append(rec)
        images = [
            {
                "image_id": img.image_id,
                "row": img.row,
                "col": img.col,
                "encoding": img.encoding,
                "payload_base64": base64.b64encode(img.payload).decode("ascii"),
                "alt_text": img.alt_text,
            }
            for img in s.images
        ]
        sheets.append({"name": s.name, "cells": cells, "images": images})
    return {"format_version": FORMAT_VERSION, "workbook_id": wb.workbook_id, "sheets": sheets}


def dumps_canonical(wb: Workbook) -> str:
    return json.dumps(workbook_to_dict(wb), ensure_ascii=False, indent=1) + "\n"


def ingest_canonical(path: str | Path) -> Workbook:
    """Load a canonical ``*.wb.json`` workbook document."""
    path = Path(path)
    content = path.read_bytes()  # FileNotFoundError propagates
    try:
        doc = json.loads(content.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedWorkbook(f"{path}: not a JSON document: {exc}") from exc
    return workbook_from_dict(doc, default_id=derive_workbook_id(path, content))


def write_canonical(wb: Workbook, path: str | Path) -> None:
    Path(path).write_text(dumps_canonical(wb), encoding="utf-8")


def load_workbook(path: str | Path) -> Workbook:
    """Dispatch on extension: canonical JSON or XLSX."""
    path = Path(path)
    name = path.name.lower()
    if name.endswith(".xlsx"):
        from .xlsx import ingest_xlsx

        return ingest_xlsx(path).workbook
    if name.endswith(".json"):
        return ingest_canonical(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raise UnsupportedFormat(f"{path}: expected a .wb.json or .xlsx file")
