"""Accounting invariant checks over workbook cells."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path

from ..errors import BadRange, NonNumericCell
from ..workbook import a1_ref, parse_a1, parse_range
from .excel import open_workbook, sheet_or_raise

DEFAULT_TOLERANCE = 0.01


@dataclass
class ValidationReport:
    check_name: str
    passed: bool
    lhs: float
    rhs: float
    tolerance: float
    locations: list = field(default_factory=list)

    @property
    def delta(self) -> float:
        return float(abs(Decimal(repr(self.lhs)) - Decimal(repr(self.rhs))))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delta"] = self.delta
        return d


def within(lhs: Decimal, rhs: Decimal, tolerance: float) -> bool:
    # Decimal over the shortest repr so 100 vs 99.99 is exactly 0.01 apart
    return abs(lhs - rhs) <= Decimal(repr(float(tolerance)))


def _numeric(sheet, ref: str, allow_empty: bool) -> Decimal:
    try:
        row, col = parse_a1(ref)
    except ValueError:
        raise BadRange(f"bad cell reference {ref!r}") from None
    v = sheet.get(row, col)
    if v.kind == "empty" and allow_empty:
        return Decimal(0)
    if v.kind in ("number", "formula") and v.numeric is not None and not v.is_error \
            and v.raw not in ("TRUE", "FALSE"):
        return Decimal(repr(v.numeric))
    raise NonNumericCell(f"{sheet.name}!{ref}")


def check_balance_sheet(workbook_path: str | Path, sheet: str, assets_ref: str, liabilities_ref: str,
                        equity_ref: str, tolerance: float = DEFAULT_TOLERANCE) -> ValidationReport:
    """assets == liabilities + equity within ``tolerance``."""
    sh = sheet_or_raise(open_workbook(workbook_path), sheet)
    assets = _numeric(sh, assets_ref, False)
    rhs = _numeric(sh, liabilities_ref, False) + _numeric(sh, equity_ref, False)
    return ValidationReport("balance_sheet", within(assets, rhs, tolerance), float(assets), float(rhs),
                            tolerance, [f"{sheet}!{r}" for r in (assets_ref, liabilities_ref, equity_ref)])


def _range_refs(rng: str) -> list[str]:
    try:
        (r1, c1), (r2, c2) = parse_range(rng)
    except ValueError:
        raise BadRange(f"bad range {rng!r}") from None
    return [a1_ref(r, c) for r in range(r1, r2 + 1) for c in range(c1, c2 + 1)]


def check_debit_credit(workbook_path: str | Path, sheet: str, debit_range: str, credit_range: str,
                       tolerance: float = DEFAULT_TOLERANCE) -> ValidationReport:
    """Sum of debits equals sum of credits within ``tolerance``; blanks count as zero."""
    sh = sheet_or_raise(open_workbook(workbook_path), sheet)
    debits = sum((_numeric(sh, ref, True) for ref in _range_refs(debit_range)), Decimal(0))
    credits = sum((_numeric(sh, ref, True) for ref in _range_refs(credit_range)), Decimal(0))
    return ValidationReport("debit_credit", within(debits, credits, tolerance), float(debits), float(credits),
                            tolerance, [f"{sheet}!{debit_range}", f"{sheet}!{credit_range}"])
