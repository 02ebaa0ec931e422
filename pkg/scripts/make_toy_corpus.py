"""Regenerate src/gridrag/data/toy_ledger.wb.json.

Run from the repo root: python3 scripts/make_toy_corpus.py
"""
import base64
import json
import struct
import zlib
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "gridrag" / "data" / "toy_ledger.wb.json"


def png(width, height, rgb):
    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    raw = b"".join(b"\x00" + bytes(rgb) * width for _ in range(height))
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw, 9))
            + chunk(b"IEND", b""))


def text(row, col, value):
    return {"row": row, "col": col, "kind": "text", "raw": value}


def num(row, col, value, raw=None):
    return {"row": row, "col": col, "kind": "number", "raw": raw or str(value), "numeric": float(value)}


def formula(row, col, expr, cached):
    return {"row": row, "col": col, "kind": "formula", "raw": str(cached), "numeric": float(cached),
            "formula_text": expr}


def main():
    # summary P&L: line items down, regions across
    pnl = [text(1, c, h) for c, h in enumerate(["Account", "Line", "EMEA", "APAC", "Americas"], 1)]
    lines = [("4000", "Revenue", 215, 158, 1200), ("5000", "Cost", 141, 97, 900), ("6000", "Margin", 74, 61, 300)]
    for r, (account, line, *vals) in enumerate(lines, 2):
        pnl += [text(r, 1, account), text(r, 2, line)]
        for c, v in enumerate(vals, 3):
            pnl.append(num(r, c, v, "1,200.00" if v == 1200 else None))

    # division-level detail
    seg = [text(1, c, h) for c, h in enumerate(["Region", "Division", "Sales", "Expenses"], 1)]
    detail = [("EMEA", "Retail", 120, 80), ("EMEA", "Wholesale", 95, 61),
              ("APAC", "Retail", 70, 45), ("APAC", "Wholesale", 88, 52)]
    for r, (region, division, sales, expenses) in enumerate(detail, 2):
        seg += [text(r, 1, region), text(r, 2, division), num(r, 3, sales), num(r, 4, expenses)]

    # consolidation sheet with the two charts
    cons = [text(1, 1, "Segment"), text(1, 2, "Consolidated"), text(1, 3, "Note"),
            text(2, 1, "EMEA"), formula(2, 2, "=SUM(Segments!C2:C3)", 215), text(2, 3, "Division roll-up"),
            text(3, 1, "APAC"), formula(3, 2, "=SUM(Segments!C4:C5)", 158), text(3, 3, "Division roll-up"),
            text(4, 1, "Group"), formula(4, 2, "=SUM(B2:B3)+'P&L'!E2", 1573), text(4, 3, "Reported total")]

    images = [
        {"image_id": "img-margin", "row": 6, "col": 1, "encoding": "image/png",
         "payload_base64": base64.b64encode(png(4, 3, (30, 120, 200))).decode(), "alt_text": "Q3 margin chart by division"},
        {"image_id": "img-headcount", "row": 6, "col": 3, "encoding": "image/png",
         "payload_base64": base64.b64encode(png(4, 3, (220, 90, 40))).decode(), "alt_text": "Headcount trend line chart"},
    ]
    doc = {
        "format_version": 1,
        "workbook_id": "toy_ledger",
        "sheets": [
            {"name": "P&L", "cells": pnl, "images": []},
            {"name": "Rollup", "cells": cons, "images": images},
            {"name": "Segments", "cells": seg, "images": []},
        ],
    }
    OUT.write_text(json.dumps(doc, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
