"""Split a workbook into row, column, window and image chunks."""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ChunkTooLarge
from .workbook import EmbeddedImage, Sheet, Workbook, a1_ref, a1_span, col_letters

CHUNK_KINDS = ("row", "column", "window", "image")
TRUNCATION_MARK = "…[truncated]"


@dataclass(frozen=True)
class ChunkConfig:
    window_rows: int = 16
    window_cols: int = 8
    window_stride_rows: int = 8
    window_stride_cols: int = 4
    header_row_count: int = 1
    max_cells_per_chunk: int = 4096

    def __post_init__(self):
        for name in ("window_rows", "window_cols", "window_stride_rows", "window_stride_cols",
                     "header_row_count", "max_cells_per_chunk"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.window_stride_rows > self.window_rows or self.window_stride_cols > self.window_cols:
            raise ValueError("window strides must not exceed window sizes")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    kind: str
    workbook_id: str
    sheet: str
    row_span: tuple
    col_span: tuple
    headers: tuple = ()
    text: str = ""
    image: EmbeddedImage | None = field(default=None, repr=False)

    @property
    def location(self) -> str:
        return f"{self.sheet}!{a1_span(self.row_span, self.col_span)}"

    def contains(self, row: int | None = None, col: int | None = None) -> bool:
        if row is not None and not self.row_span[0] <= row <= self.row_span[1]:
            return False
        if col is not None and not self.col_span[0] <= col <= self.col_span[1]:
            return False
        return True


def make_chunk_id(workbook_id: str, sheet: str, kind: str, row_span, col_span) -> str:
    return f"{workbook_id}/{sheet}/{kind}/{a1_span(row_span, col_span)}"


def sheet_headers(sheet: Sheet, header_row_count: int) -> list[str]:
    """Header label for every column in the bounding box.

    Rows 1..header_row_count are joined per column. A header band holding only
    numbers is not a header, so every column falls back to its letters.
    """
    band = [
        sheet.cells[(r, c)]
        for r in range(1, min(header_row_count, sheet.n_rows) + 1)
        for c in range(1, sheet.n_cols + 1)
        if (r, c) in sheet.cells
    ]
    numeric_only = bool(band) and all(v.kind == "number" for v in band)
    headers = []
    for c in range(1, sheet.n_cols + 1):
        label = ""
        if not numeric_only:
            parts = [sheet.get(r, c).raw.strip() for r in range(1, header_row_count + 1)]
            label = " ".join(p for p in parts if p)
        headers.append(label or col_letters(c))
    return headers


def serialize_chunk_text(sheet: str, kind: str, row_span, col_span, items, max_cells: int | None = None) -> str:
    """Render chunk contents as ``sheet=<name> <kind>=<span> | label=value | ...``.

    ``items`` is a sequence of (label, raw value); empty values are skipped.
    Returns "" when nothing is left, which callers treat as "no chunk".
    """
    pairs = [f"{label}={raw}" for label, raw in items if raw != ""]
    if not pairs:
        return ""
    truncated = max_cells is not None and len(pairs) > max_cells
    if truncated:
        pairs = pairs[:max_cells]
    text = f"sheet={sheet} {kind}={a1_span(row_span, col_span)} | " + " | ".join(pairs)
    return text + (" " + TRUNCATION_MARK if truncated else "")


def cell_display(v) -> str:
    """Text shown for a cell; uncached formulas show their formula."""
    return v.raw if v.raw else (v.formula_text or "")


def _window_starts(extent: int, size: int, stride: int) -> list[int]:
    starts = [1]
    while starts[-1] + size - 1 < extent:
        starts.append(starts[-1] + stride)
    return starts


def _chunk_sheet(wb_id: str, sheet: Sheet, config: ChunkConfig) -> list[Chunk]:
    if sheet.n_rows == 0 or sheet.n_cols == 0:
        return []
    headers = sheet_headers(sheet, config.header_row_count)
    by_row: dict[int, list[int]] = {}
    by_col: dict[int, list[int]] = {}
    for (r, c), v in sheet.cells.items():
        if cell_display(v) == "":
            continue
        by_row.setdefault(r, []).append(c)
        by_col.setdefault(c, []).append(r)
    chunks = []

    def add(kind, row_span, col_span, hdrs, text, image=None):
        chunk_id = make_chunk_id(wb_id, sheet.name, kind, row_span, col_span)
        if image is not None:
            chunk_id += f"#{image.image_id}"
        chunks.append(Chunk(chunk_id, kind, wb_id, sheet.name, row_span, col_span, tuple(hdrs), text, image))

    full_cols = (1, sheet.n_cols)
    full_rows = (1, sheet.n_rows)
    for r in sorted(by_row):
        cols = sorted(by_row[r])
        if len(cols) > config.max_cells_per_chunk:
            raise ChunkTooLarge(f"{sheet.name} row {r} has {len(cols)} cells (max {config.max_cells_per_chunk})")
        items = [(headers[c - 1], cell_display(sheet.cells[(r, c)])) for c in cols]
        add("row", (r, r), full_cols, headers,
            serialize_chunk_text(sheet.name, "row", (r, r), full_cols, items))
    for c in sorted(by_col):
        rows = sorted(by_col[c])
        items = [(a1_ref(r, c), cell_display(sheet.cells[(r, c)])) for r in rows]
        add("column", full_rows, (c, c), [headers[c - 1]],
            serialize_chunk_text(sheet.name, "column", full_rows, (c, c), items, config.max_cells_per_chunk))
    for r0 in _window_starts(sheet.n_rows, config.window_rows, config.window_stride_rows):
        r1 = min(r0 + config.window_rows - 1, sheet.n_rows)
        for c0 in _window_starts(sheet.n_cols, config.window_cols, config.window_stride_cols):
            c1 = min(c0 + config.window_cols - 1, sheet.n_cols)
            items = [
                (f"{headers[c - 1]}@{a1_ref(r, c)}", cell_display(sheet.cells[(r, c)]))
                for r in range(r0, r1 + 1)
                for c in range(c0, c1 + 1)
                if (r, c) in sheet.cells
            ]
            text = serialize_chunk_text(sheet.name, "window", (r0, r1), (c0, c1), items, config.max_cells_per_chunk)
            if text:
                add("window", (r0, r1), (c0, c1), headers[c0 - 1:c1], text)
    for img in sheet.images:
        add("image", (img.row, img.row), (img.col, img.col), [], image_text(img), img)
    return chunks


def image_text(img: EmbeddedImage) -> str:
    caption = f"image at {img.sheet}!{a1_ref(img.row, img.col)}"
    return f"{caption} | {img.alt_text}" if img.alt_text else caption


def chunk_workbook(workbook: Workbook, config: ChunkConfig | None = None) -> list[Chunk]:
    """Extract every chunk of ``workbook``, sorted by chunk_id."""
    config = config or ChunkConfig()
    chunks = [ch for sheet in workbook.sheets for ch in _chunk_sheet(workbook.workbook_id, sheet, config)]
    chunks.sort(key=lambda ch: ch.chunk_id)
    ids = [ch.chunk_id for ch in chunks]
    assert len(set(ids)) == len(ids), "chunk ids collide"
    return chunks
