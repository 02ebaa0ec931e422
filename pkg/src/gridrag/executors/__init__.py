"""Tool registries for the excel, io, validation, ocr and web executor types."""
from __future__ import annotations

from pathlib import Path

from ..agent import Tool, ToolRegistry
from .excel import CellEdit, coerce_value, excel_read_range, excel_write, parse_cell_ref
from .io import io_read, io_write
from .ocr import transcribe_image
from .validation import DEFAULT_TOLERANCE, check_balance_sheet, check_debit_credit


def _resolver(workdir):
    base = Path(workdir) if workdir is not None else Path.cwd()

    def resolve(path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else base / p

    return resolve


def _display(path, workdir) -> str:
    """Paths under the working directory are reported relative to it, keeping traces portable."""
    base = Path(workdir) if workdir is not None else Path.cwd()
    try:
        return str(Path(path).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(path)


def _param(type_, description, required=False, **extra):
    return {"type": type_, "description": description, "required": required, **extra}


def _stub(name: str, description: str, params: dict) -> Tool:
    def run(**_):
        raise NotImplementedError(f"{name} is not available in this build")

    return Tool(name, description + " (not available in this build)", params, run)


def _images_of(index) -> dict:
    if index is None:
        return {}
    return {c.image.image_id: c.image for c in index.chunks if c.image is not None}


def transcribe_tool(index=None) -> Tool:
    images = _images_of(index)

    def run(image_id: str):
        return transcribe_image(image_id, images).to_dict()

    return Tool("transcribe_image", "Transcribe an embedded image by id; returns its text.",
                {"image_id": _param("string", "image id from an image chunk", True)}, run)


def excel_tools(workdir=None, index=None) -> ToolRegistry:
    resolve = _resolver(workdir)

    def read_range(path: str, sheet: str, range: str):
        grid = excel_read_range(resolve(path), sheet, range)
        return {"sheet": sheet, "range": range,
                "values": [[{"kind": v.kind, "raw": v.raw, **({"formula": v.formula_text} if v.formula_text else {})}
                            for v in row] for row in grid]}

    def write(path: str, edits: list, create_if_missing: bool = True):
        parsed = []
        for e in edits:
            if not isinstance(e, dict) or "cell" not in e:
                raise ValueError(f"edit must be an object with 'cell' and 'value': {e!r}")
            sheet, row, col = parse_cell_ref(e["cell"], e.get("sheet"))
            value = coerce_value(e.get("value"))
            if e.get("style"):
                value = type(value)(value.kind, value.raw, value.numeric, value.formula_text, dict(e["style"]))
            parsed.append(CellEdit(sheet, row, col, value))
        report = excel_write(resolve(path), parsed, create_if_missing).to_dict()
        report["path"] = path
        report["artifacts"] = [_display(a, workdir) for a in report["artifacts"]]
        return report

    return ToolRegistry([
        Tool("excel_read_range", "Read a rectangular A1 range from a workbook as a grid of values.", {
            "path": _param("string", "workbook path (.xlsx or .wb.json)", True),
            "sheet": _param("string", "sheet name", True),
            "range": _param("string", "A1 range such as A1:C10", True),
        }, read_range),
        Tool("excel_write", "Write values or formulas into cells; formulas are evaluated on write.", {
            "path": _param("string", "output workbook path (.xlsx or .json)", True),
            "edits": _param("array", "list of {sheet, cell, value, style?}; value strings starting with '=' are formulas",
                            True),
            "create_if_missing": _param("boolean", "create the workbook if it does not exist (default true)"),
        }, write),
        transcribe_tool(index),
    ])


def io_tools(workdir=None) -> ToolRegistry:
    resolve = _resolver(workdir)

    def read(path: str, format: str | None = None):
        return {"path": path, "content": io_read(resolve(path), format)}

    def write(path: str, content, format: str | None = None):
        out = io_write(resolve(path), content, format)
        return {"path": path, "artifacts": [_display(out, workdir)]}

    path = {"path": _param("string", "file path", True)}
    fmt = {"format": _param("string", "csv, json, text or markdown (default: from extension)")}
    return ToolRegistry([
        Tool("io_read", "Read a csv, json, text or markdown file.", {**path, **fmt}, read),
        Tool("io_write", "Write a csv, json, text or markdown file atomically.",
             {**path, "content": _param("any", "rows for csv, any JSON value for json, a string otherwise", True),
              **fmt}, write),
        _stub("read_pdf", "Extract text from a PDF", path),
        _stub("write_pdf", "Render a PDF document", {**path, "content": _param("string", "document text", True)}),
        _stub("read_docx", "Extract text from a DOCX", path),
        _stub("write_docx", "Render a DOCX document", {**path, "content": _param("string", "document text", True)}),
    ])


def validation_tools(workdir=None) -> ToolRegistry:
    resolve = _resolver(workdir)
    tol = _param("number", f"absolute tolerance (default {DEFAULT_TOLERANCE})")

    def balance(path, sheet, assets_ref, liabilities_ref, equity_ref, tolerance=DEFAULT_TOLERANCE):
        return check_balance_sheet(resolve(path), sheet, assets_ref, liabilities_ref, equity_ref, tolerance).to_dict()

    def debit_credit(path, sheet, debit_range, credit_range, tolerance=DEFAULT_TOLERANCE):
        return check_debit_credit(resolve(path), sheet, debit_range, credit_range, tolerance).to_dict()

    common = {"path": _param("string", "workbook path", True), "sheet": _param("string", "sheet name", True)}
    return ToolRegistry([
        Tool("check_balance_sheet", "Check assets = liabilities + equity.", {
            **common,
            "assets_ref": _param("string", "A1 cell holding total assets", True),
            "liabilities_ref": _param("string", "A1 cell holding total liabilities", True),
            "equity_ref": _param("string", "A1 cell holding total equity", True),
            "tolerance": tol,
        }, balance),
        Tool("check_debit_credit", "Check that total debits equal total credits.", {
            **common,
            "debit_range": _param("string", "A1 range of debit amounts", True),
            "credit_range": _param("string", "A1 range of credit amounts", True),
            "tolerance": tol,
        }, debit_credit),
    ])


def ocr_tools(index=None) -> ToolRegistry:
    return ToolRegistry([
        transcribe_tool(index),
        _stub("ocr_document", "Run OCR over a scanned document file", {"path": _param("string", "file path", True)}),
    ])


def web_tools() -> ToolRegistry:
    return ToolRegistry([
        _stub("web_search", "Search the web", {"query": _param("string", "search query", True)}),
        _stub("web_fetch", "Fetch a web page as text", {"url": _param("string", "page URL", True)}),
    ])


__all__ = ["excel_tools", "io_tools", "validation_tools", "ocr_tools", "web_tools", "transcribe_tool"]
