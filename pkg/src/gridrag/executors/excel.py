"""Spreadsheet read/write executor with formula recalculation."""
from __future__ import annotations

import contextlib
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import BadRange, CycleDetected, EvalError, FormulaError, SheetNotFound, UnsupportedFormat
from ..workbook import (CellValue, Sheet, Workbook, a1_ref, dumps_canonical, load_workbook, make_sheet,
                        make_workbook, parse_a1, parse_range, split_sheet_ref)
from ..xlsx import write_xlsx
from ._fs import file_lock, stage_bytes
from .formula import ErrorValue, error_cell, evaluate, parse_formula, to_cell_value


@dataclass(frozen=True)
class CellEdit:
    sheet: str
    row: int
    col: int
    new_value: CellValue

    def __post_init__(self):
        if self.row < 1 or self.col < 1:
            raise BadRange(f"cell coordinates must be >= 1, got ({self.row}, {self.col})")

    @property
    def ref(self) -> str:
        return f"{self.sheet}!{a1_ref(self.row, self.col)}"


@dataclass
class WriteReport:
    path: str
    cells_written: int
    artifacts: list = field(default_factory=list)
    eval_errors: list = field(default_factory=list)  # EvalError per edited formula that did not evaluate

    def to_dict(self) -> dict:
        return {"path": self.path, "cells_written": self.cells_written, "artifacts": list(self.artifacts),
                "eval_errors": [{"cell": e.cell, "error": str(e.cause)} for e in self.eval_errors]}


def canonical_path(path: str | Path) -> Path:
    """Where the canonical document for an output path lives (``x.xlsx`` -> ``x.wb.json``)."""
    path = Path(path)
    if path.suffix.lower() == ".xlsx":
        return path.with_name(path.name[: -len(".xlsx")] + ".wb.json")
    if path.suffix.lower() == ".json":
        return path
    raise UnsupportedFormat(f"{path}: workbook outputs must end in .xlsx or .json")


def open_workbook(path: str | Path) -> Workbook:
    """Load a workbook, preferring the canonical sibling of an ``.xlsx`` we wrote ourselves."""
    path = Path(path)
    if path.suffix.lower() == ".xlsx":
        canon = canonical_path(path)
        if canon.exists():
            return load_workbook(canon)
    return load_workbook(path)


def coerce_value(value) -> CellValue:
    """Plain JSON values from tool calls to CellValue."""
    if isinstance(value, CellValue):
        return value
    if value is None:
        return CellValue.empty()
    if isinstance(value, bool):
        return CellValue.boolean(value)
    if isinstance(value, (int, float)):
        return CellValue.number(value)
    if isinstance(value, str):
        if value.startswith("=") and len(value) > 1:
            return CellValue.formula(value)
        return CellValue.text(value)
    raise BadRange(f"unsupported cell value {value!r}")


def excel_read_range(workbook_path: str | Path, sheet: str, a1_range: str) -> list[list[CellValue]]:
    """Dense row-major grid for ``a1_range``; cells outside the data are empty."""
    wb = open_workbook(workbook_path)
    try:
        sh = wb.sheet(sheet)
    except KeyError:
        raise SheetNotFound(f"sheet {sheet!r} not in {workbook_path}") from None
    try:
        (r1, c1), (r2, c2) = parse_range(a1_range)
    except ValueError as exc:
        raise BadRange(f"bad range {a1_range!r}: {exc}") from None
    return [[sh.get(r, c) for c in range(c1, c2 + 1)] for r in range(r1, r2 + 1)]


class _Recalc:
    """Evaluates every formula cell once, following references across sheets."""

    def __init__(self, cells_by_sheet: dict, edited: set):
        self.cells = cells_by_sheet
        self.edited = edited
        self.done: dict = {}
        self.active: set = set()
        self.errors: list[EvalError] = []

    def resolver(self, home: str):
        def resolve(sheet, row, col):
            return self.get(sheet or home, row, col)

        resolve.bounds = lambda sheet: self.bounds(sheet or home)
        return resolve

    def bounds(self, sheet):
        cells = self.cells.get(sheet) or {}
        if not cells:
            return (0, 0)
        return (max(r for r, _ in cells), max(c for _, c in cells))

    def get(self, sheet, row, col):
        if sheet not in self.cells:
            return ErrorValue("#REF!")
        v = self.cells[sheet].get((row, col))
        if v is None or v.kind != "formula":
            return v
        key = (sheet, row, col)
        if key in self.done:
            return self.done[key]
        if key in self.active:
            raise CycleDetected(f"circular reference through {sheet}!{a1_ref(row, col)}")
        self.active.add(key)
        try:
            try:
                result = to_cell_value(v.formula_text, evaluate(parse_formula(v.formula_text), self.resolver(sheet)))
            except FormulaError as exc:
                if key not in self.edited and not isinstance(exc, CycleDetected):
                    result = v  # outside the whitelist and untouched: keep the stored cache
                else:
                    result = error_cell(v.formula_text, exc)
                    if key in self.edited:
                        self.errors.append(EvalError(f"{sheet}!{a1_ref(row, col)}", exc))
            if result.is_error and key in self.edited and not any(e.cell == f"{sheet}!{a1_ref(row, col)}"
                                                                    for e in self.errors):
                self.errors.append(EvalError(f"{sheet}!{a1_ref(row, col)}", result.raw))
        finally:
            self.active.discard(key)
        result = replace(result, style=v.style)
        self.done[key] = result
        return result

    def run(self) -> dict:
        for sheet in list(self.cells):
            for (r, c), v in list(self.cells[sheet].items()):
                if v.kind == "formula":
                    self.cells[sheet][(r, c)] = self.get(sheet, r, c)
        return self.cells


def apply_edits(wb: Workbook, edits) -> tuple[Workbook, list[EvalError]]:
    """Pure: apply edits, recalculate formulas, return the new workbook and edited-cell eval errors."""
    cells = {s.name: dict(s.cells) for s in wb.sheets}
    images = {s.name: s.images for s in wb.sheets}
    order = list(cells)
    edited = set()
    for e in edits:
        if e.sheet not in cells:
            cells[e.sheet] = {}
            images[e.sheet] = ()
            order.append(e.sheet)
        sheet_cells = cells[e.sheet]
        value = e.new_value
        old = sheet_cells.get((e.row, e.col))
        if value.style is None and old is not None and old.style and value.kind != "empty":
            value = replace(value, style=old.style)
        if value.kind == "formula":
            value = replace(value, raw="", numeric=None)
        if value.kind == "empty" and not value.style:
            sheet_cells.pop((e.row, e.col), None)
        else:
            sheet_cells[(e.row, e.col)] = value
        edited.add((e.sheet, e.row, e.col))
    recalc = _Recalc(cells, edited)
    recalc.run()
    new = make_workbook(wb.workbook_id, [make_sheet(name, cells[name], images[name]) for name in order])
    return new, recalc.errors


def excel_write(workbook_path: str | Path, edits, create_if_missing: bool = False) -> WriteReport:
    """Apply ``edits`` atomically under a per-file lock.

    The canonical document is always written; an ``.xlsx`` path also gets an
    XLSX rendering. Formulas that fail to evaluate are persisted with an error
    cache and listed in ``eval_errors``.
    """
    path = Path(workbook_path)
    canon = canonical_path(path)
    edits = list(edits)
    if not path.parent.exists():
        if not create_if_missing:
            raise FileNotFoundError(f"directory {path.parent} does not exist")
        path.parent.mkdir(parents=True, exist_ok=True)
    with file_lock(path):
        if canon.exists() or path.exists():
            wb = open_workbook(path)
        elif create_if_missing:
            wb = Workbook(canon.name.split(".")[0] or "workbook", ())
        else:
            raise FileNotFoundError(f"{path} does not exist and create_if_missing is false")
        new, errors = apply_edits(wb, edits)
        staged = [(stage_bytes(canon, dumps_canonical(new).encode("utf-8")), canon)]
        try:
            if path != canon:
                fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
                os.close(fd)
                staged.append((Path(tmp), path))
                write_xlsx(new, tmp)
        except BaseException:
            for tmp, _ in staged:
                with contextlib.suppress(FileNotFoundError):
                    os.unlink(tmp)
            raise
        for tmp, dest in staged:
            os.replace(tmp, dest)
    artifacts = [str(dest) for _, dest in staged]
    return WriteReport(str(path), len(edits), artifacts, errors)


def parse_cell_ref(ref: str, default_sheet: str | None = None) -> tuple[str, int, int]:
    sheet, cell = split_sheet_ref(ref)
    sheet = sheet or default_sheet
    if not sheet:
        raise BadRange(f"{ref!r} needs a sheet name")
    try:
        row, col = parse_a1(cell)
    except ValueError as exc:
        raise BadRange(f"bad cell reference {ref!r}: {exc}") from None
    return sheet, row, col


def sheet_or_raise(wb: Workbook, name: str) -> Sheet:
    try:
        return wb.sheet(name)
    except KeyError:
        raise SheetNotFound(f"sheet {name!r} not found") from None
