"""Best-effort OOXML (.xlsx) reader and writer.

Cell values and formulas come from openpyxl. Embedded pictures are read straight
from the drawing parts of the package because openpyxl does not expose their
anchors through public API. Pivot caches, charts and VBA projects are dropped
and counted in the ingestion report.
"""
from __future__ import annotations

import datetime as dt
import hashlib
import posixpath
import zipfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from xml.etree import ElementTree as ET

from .errors import UnsupportedFormat
from .workbook import CellValue, EmbeddedImage, Workbook, derive_workbook_id, make_sheet, make_workbook

NS = {
    "main": "http://schemas.openxmlformats.org/spreadsheetml/2006/main",
    "r": "http://schemas.openxmlformats.org/officeDocument/2006/relationships",
    "rel": "http://schemas.openxmlformats.org/package/2006/relationships",
    "xdr": "http://schemas.openxmlformats.org/drawingml/2006/spreadsheetDrawing",
    "a": "http://schemas.openxmlformats.org/drawingml/2006/main",
}
_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".gif": "image/gif",
    ".bmp": "image/bmp",
    ".tif": "image/tiff",
    ".tiff": "image/tiff",
}


@dataclass
class IngestResult:
    workbook: Workbook
    dropped: dict = field(default_factory=dict)  # feature -> count
    warnings: list = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.dropped)


def _rels(zf: zipfile.ZipFile, part: str) -> dict[str, str]:
    """Map relationship ids of ``part`` to absolute part names."""
    folder, name = posixpath.split(part)
    rels_name = posixpath.join(folder, "_rels", name + ".rels")
    if rels_name not in zf.namelist():
        return {}
    root = ET.fromstring(zf.read(rels_name))
    out = {}
    for rel in root.findall("rel:Relationship", NS):
        if rel.get("TargetMode") == "External":
            continue
        target = rel.get("Target", "")
        if target.startswith("/"):
            resolved = target.lstrip("/")
        else:
            resolved = posixpath.normpath(posixpath.join(folder, target))
        out[rel.get("Id")] = resolved
    return out


def _sheet_parts(zf: zipfile.ZipFile) -> list[tuple[str, str]]:
    root = ET.fromstring(zf.read("xl/workbook.xml"))
    rels = _rels(zf, "xl/workbook.xml")
    out = []
    for sh in root.findall("main:sheets/main:sheet", NS):
        rid = sh.get(f"{{{NS['r']}}}id")
        if rid in rels:
            out.append((sh.get("name"), rels[rid]))
    return out


def _drawing_images(zf: zipfile.ZipFile, sheet_name: str, sheet_part: str, counter: Counter) -> list[EmbeddedImage]:
    images = []
    sheet_rels = _rels(zf, sheet_part)
    root = ET.fromstring(zf.read(sheet_part))
    for drawing in root.findall("main:drawing", NS):
        dpart = sheet_rels.get(drawing.get(f"{{{NS['r']}}}id"))
        if not dpart or dpart not in zf.namelist():
            continue
        drels = _rels(zf, dpart)
        droot = ET.fromstring(zf.read(dpart))
        anchors = droot.findall("xdr:twoCellAnchor", NS) + droot.findall("xdr:oneCellAnchor", NS)
        for anchor in anchors:
            if anchor.find("xdr:graphicFrame", NS) is not None:
                counter["chart"] += 1
                continue
            pic = anchor.find("xdr:pic", NS)
            frm = anchor.find("xdr:from", NS)
            if pic is None or frm is None:
                continue
            blip = pic.find(".//a:blip", NS)
            media = drels.get(blip.get(f"{{{NS['r']}}}embed")) if blip is not None else None
            if not media or media not in zf.namelist():
                continue
            payload = zf.read(media)
            if not payload:
                continue
            cnv = pic.find("xdr:nvPicPr/xdr:cNvPr", NS)
            alt = ""
            if cnv is not None:
                alt = cnv.get("descr") or cnv.get("title") or ""
            row = int(frm.findtext("xdr:row", "0", NS)) + 1
            col = int(frm.findtext("xdr:col", "0", NS)) + 1
            ext = posixpath.splitext(media)[1].lower()
            images.append(
                EmbeddedImage(
                    image_id=f"{sheet_name}:{hashlib.sha256(payload).hexdigest()[:12]}:{row}:{col}",
                    sheet=sheet_name,
                    row=row,
                    col=col,
                    payload=payload,
                    encoding=_MEDIA_TYPES.get(ext, "application/octet-stream"),
                    alt_text=alt,
                )
            )
    return images


def _to_cell(value, cached) -> CellValue | None:
    from openpyxl.utils.datetime import to_excel

    if value is None:
        return None
    if isinstance(value, str) and value.startswith("=") and len(value) > 1:
        if cached is None:
            return CellValue.formula(value)
        if isinstance(cached, bool):
            return CellValue.formula(value, "TRUE" if cached else "FALSE", float(cached))
        if isinstance(cached, (int, float)):
            return CellValue.formula(value, CellValue.number(cached).raw, float(cached))
        return CellValue.formula(value, str(cached))
    if isinstance(value, bool):
        return CellValue.boolean(value)
    if isinstance(value, (int, float)):
        return CellValue.number(value)
    if isinstance(value, (dt.datetime, dt.date, dt.time)):
        serial = to_excel(value)
        return CellValue("datetime", value.isoformat(), float(serial) if serial is not None else None)
    if isinstance(value, dt.timedelta):
        return CellValue("number", str(value), value.total_seconds() / 86400.0)
    text = str(value)
    return CellValue.text(text) if text else None


def ingest_xlsx(path: str | Path) -> IngestResult:
    """Read an .xlsx package into the workbook model with a drop report."""
    import openpyxl

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix.lower() != ".xlsx":
        raise UnsupportedFormat(f"{path}: only .xlsx files are accepted")
    content = path.read_bytes()
    if not zipfile.is_zipfile(path):
        raise UnsupportedFormat(f"{path}: not a ZIP-based OOXML package")

    dropped: Counter = Counter()
    warnings: list[str] = []
    try:
        with zipfile.ZipFile(path) as zf:
            names = zf.namelist()
            if "xl/workbook.xml" not in names:
                raise UnsupportedFormat(f"{path}: no xl/workbook.xml part")
            dropped["macro"] += sum(1 for n in names if n.lower().endswith("vbaproject.bin"))
            dropped["pivot_cache"] += sum(1 for n in names if n.startswith("xl/pivotCache/pivotCacheDefinition"))
            images_by_sheet = {name: _drawing_images(zf, name, part, dropped) for name, part in _sheet_parts(zf)}
        formulas = openpyxl.load_workbook(path, data_only=False)
        cached = openpyxl.load_workbook(path, data_only=True)
    except (zipfile.BadZipFile, KeyError, ET.ParseError, OSError) as exc:
        raise UnsupportedFormat(f"{path}: unreadable OOXML package: {exc}") from exc

    sheets = []
    for ws in formulas.worksheets:
        cws = cached[ws.title]
        cells = {}
        for row in ws.iter_rows():
            for cell in row:
                if cell.value is None:
                    continue
                cv = _to_cell(cell.value, cws.cell(cell.row, cell.column).value)
                if cv is not None:
                    cells[(cell.row, cell.column)] = cv
        if ws.merged_cells.ranges:
            warnings.append(f"sheet {ws.title!r}: {len(ws.merged_cells.ranges)} merged ranges kept at anchor cell")
        sheets.append(make_sheet(ws.title, cells, images_by_sheet.get(ws.title, [])))
    dropped = {k: v for k, v in sorted(dropped.items()) if v}
    for feature, count in dropped.items():
        warnings.append(f"dropped {count} {feature} part(s)")
    wb = make_workbook(derive_workbook_id(path, content), sheets)
    return IngestResult(wb, dropped, warnings)


def write_xlsx(wb: Workbook, path: str | Path) -> None:
    """Write cell values and formulas (as text) to an .xlsx file."""
    import openpyxl
    from openpyxl.styles import Font, PatternFill

    out = openpyxl.Workbook()
    out.remove(out.active)
    for sheet in wb.sheets:
        ws = out.create_sheet(sheet.name)
        for r, c, v in sheet.iter_cells():
            cell = ws.cell(row=r, column=c)
            if v.kind == "formula":
                cell.value = v.formula_text
            elif v.kind in ("number", "datetime") and v.numeric is not None:
                cell.value = v.numeric
            elif v.kind == "boolean":
                cell.value = v.raw.upper() == "TRUE"
            elif v.raw:
                cell.value = v.raw
            style = v.style or {}
            if style.get("number_format"):
                cell.number_format = style["number_format"]
            if style.get("bold"):
                cell.font = Font(bold=True)
            if style.get("fill"):
                color = style["fill"].lstrip("#")
                cell.fill = PatternFill(start_color=color, end_color=color, fill_type="solid")
    out.save(path)
