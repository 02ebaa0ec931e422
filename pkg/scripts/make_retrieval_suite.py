"""Regenerate the 20-query retrieval suite under src/gridrag/data/.

Half the queries are exact invoice numbers drawn from a pool of look-alike
numbers (only BM25 separates them); the other half are misspelled glossary
terms that share no token with the corpus (only the trigram embedder helps).

Run from the repo root: python3 scripts/make_retrieval_suite.py
"""
import json
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "gridrag" / "data"
WB_ID = "retrieval_suite"

INVOICES = ["48213", "48231", "48123", "48132", "48321", "48312", "41823", "41832", "42813", "42831",
            "43812", "43821", "84213", "84231", "82413", "82431", "81243", "81234", "83124", "83142"]
CUSTOMERS = ["Halvorsen", "Quintero", "Mbeki", "Castellano", "Nakamura", "Oyelaran", "Brandt", "Sokolova",
             "Ferreira", "Lindqvist", "Achebe", "Moreau", "Tanaka", "Whitfield", "Kowalski", "Delacroix",
             "Ibsen", "Vasquez", "Okafor", "Petrov"]
GLOSSARY = [
    ("accounts receivable", "money customers still owe"),
    ("depreciation schedule", "spreading asset cost over years"),
    ("accrued liabilities", "expenses incurred but unpaid"),
    ("inventory turnover", "how often stock is sold"),
    ("goodwill impairment", "writedown of acquisition premium"),
    ("deferred revenue", "cash received before delivery"),
    ("working capital", "current assets minus current liabilities"),
    ("retained earnings", "profits kept in the business"),
    ("amortization", "gradual expensing of intangibles"),
    ("dividend payout", "share of profit paid to owners"),
    ("operating leverage", "fixed cost sensitivity"),
    ("contingent consideration", "earnout owed to sellers"),
]
LEXICAL = [0, 3, 6, 9, 12, 15, 18, 1, 10, 17]  # invoice rows queried by exact number
SEMANTIC = [
    ("acounts recievable", 0),
    ("depreciaton shedule", 1),
    ("acrued liabilites", 2),
    ("inventorie turnovr", 3),
    ("goodwil impairmnt", 4),
    ("defered revenu", 5),
    ("workng capitol", 6),
    ("retaned earnngs", 7),
    ("amortizaton", 8),
    ("divident payot", 9),
]


def cell(row, col, raw, kind="text"):
    rec = {"row": row, "col": col, "kind": kind, "raw": raw}
    if kind == "number":
        rec["numeric"] = float(raw)
    return rec


def main():
    inv = [cell(1, 1, "Invoice"), cell(1, 2, "Customer"), cell(1, 3, "Amount")]
    for i, (num, cust) in enumerate(zip(INVOICES, CUSTOMERS), 2):
        inv += [cell(i, 1, num), cell(i, 2, cust), cell(i, 3, f"{(i * 37) % 90 + 10}.{i % 10}5", "number")]
    glo = [cell(1, 1, "Term"), cell(1, 2, "Meaning")]
    for i, (term, meaning) in enumerate(GLOSSARY, 2):
        glo += [cell(i, 1, term), cell(i, 2, meaning)]
    doc = {"format_version": 1, "workbook_id": WB_ID,
           "sheets": [{"name": "Invoices", "cells": inv, "images": []},
                      {"name": "Glossary", "cells": glo, "images": []}]}
    (DATA / "retrieval_suite.wb.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

    queries = []
    for n, i in enumerate(LEXICAL, 1):
        queries.append({"query_id": f"lex-{n:02d}", "query": INVOICES[i],
                        "relevant_chunk_ids": [f"{WB_ID}/Invoices/row/A{i + 2}:C{i + 2}"]})
    for n, (q, i) in enumerate(SEMANTIC, 1):
        queries.append({"query_id": f"sem-{n:02d}", "query": q,
                        "relevant_chunk_ids": [f"{WB_ID}/Glossary/row/A{i + 2}:B{i + 2}"]})
    (DATA / "retrieval_suite.queries.json").write_text(
        json.dumps({"format_version": 1, "queries": queries}, indent=1) + "\n", encoding="utf-8")
    print("wrote retrieval_suite.wb.json and retrieval_suite.queries.json")


if __name__ == "__main__":
    main()
