"""Whitelisted spreadsheet formula evaluator.

Supported: numbers, strings, TRUE/FALSE, cell refs (optionally sheet-qualified),
ranges, + - * / ^, unary +/-, comparisons, parentheses and the functions
SUM AVERAGE MIN MAX COUNT IF. Anything else is rejected at parse time.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Any, Callable

from ..errors import FormulaError, ParseError, UnknownFunction
from ..workbook import CellValue, col_index, format_number

FUNCTIONS = ("SUM", "AVERAGE", "MIN", "MAX", "COUNT", "IF")
ERROR_CODES = ("#DIV/0!", "#VALUE!", "#NAME?", "#REF!", "#NUM!", "#N/A")


@dataclass(frozen=True)
class ErrorValue:
    code: str

    def __str__(self):
        return self.code


# ------------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>"(?:[^"]|"")*")
  | (?P<ref>(?:(?:'(?:[^']|'')+'|[A-Za-z_][\w.]*)!)?\$?[A-Za-z]{1,3}\$?\d+(?::\$?[A-Za-z]{1,3}\$?\d+)?(?![\w(]))
  | (?P<name>[A-Za-z_][\w.]*)
  | (?P<op><>|<=|>=|[-+*/^=<>(),])
""", re.VERBOSE)


def tokenize(expr: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(expr):
        m = _TOKEN_RE.match(expr, pos)
        if not m:
            raise ParseError(f"unexpected character {expr[pos]!r} at position {pos}")
        pos = m.end()
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group()))
    return tokens


# ---------------------------------------------------------------------- parser
# AST nodes are tuples: ("num", v) ("str", s) ("bool", b) ("ref", sheet, r, c)
# ("range", sheet, r1, c1, r2, c2) ("neg", x) ("bin", op, a, b) ("call", name, args)

_BINARY = {"=": 1, "<>": 1, "<": 1, ">": 1, "<=": 1, ">=": 1, "+": 2, "-": 2, "*": 3, "/": 3, "^": 4}


def _cell(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\$?([A-Za-z]{1,3})\$?(\d+)", text)
    row = int(m.group(2))
    col = col_index(m.group(1).upper())
    if row < 1 or col > 16384 or row > 1048576:
        raise ParseError(f"reference {text} out of bounds")
    return row, col


def _ref_node(text: str):
    sheet = None
    if "!" in text:
        sheet, _, text = text.rpartition("!")
        if sheet.startswith("'"):
            sheet = sheet[1:-1].replace("''", "'")
    if ":" in text:
        a, b = text.split(":")
        (r1, c1), (r2, c2) = _cell(a), _cell(b)
        return ("range", sheet, min(r1, r2), min(c1, c2), max(r1, r2), max(c1, c2))
    return ("ref", sheet, *_cell(text))


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ParseError(f"expected {value or 'a token'}, got {tok[1]!r}")
        self.i += 1
        return tok

    def expr(self, min_prec=1):
        left = self.unary()
        while True:
            kind, val = self.peek()
            if kind != "op" or val not in _BINARY or _BINARY[val] < min_prec:
                return left
            self.i += 1
            right = self.expr(_BINARY[val] + 1)  # all binary operators are left-associative
            left = ("bin", val, left, right)

    def unary(self):
        kind, val = self.peek()
        if kind == "op" and val in "+-":
            self.i += 1
            operand = self.unary()
            return ("neg", operand) if val == "-" else ("pos", operand)
        return self.primary()

    def primary(self):
        kind, val = self.take()
        if kind == "number":
            return ("num", float(val))
        if kind == "string":
            return ("str", val[1:-1].replace('""', '"'))
        if kind == "ref":
            return _ref_node(val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.take(")")
            return node
        if kind == "name":
            upper = val.upper()
            if self.peek() == ("op", "("):
                if upper not in FUNCTIONS:
                    raise UnknownFunction(f"function {val} is not supported")
                self.i += 1
                args = []
                if self.peek() != ("op", ")"):
                    args.append(self.expr())
                    while self.peek() == ("op", ","):
                        self.i += 1
                        args.append(self.expr())
                self.take(")")
                return ("call", upper, args)
            if upper in ("TRUE", "FALSE"):
                return ("bool", upper == "TRUE")
            raise ParseError(f"unknown name {val}")
        raise ParseError(f"unexpected token {val!r}")


def parse_formula(expr: str):
    if not isinstance(expr, str) or not expr.startswith("="):
        raise ParseError("formula must start with '='")
    parser = _Parser(tokenize(expr[1:]))
    if not parser.tokens:
        raise ParseError("empty formula")
    node = parser.expr()
    if parser.i != len(parser.tokens):
        raise ParseError(f"unexpected token {parser.tokens[parser.i][1]!r}")
    return node


# ------------------------------------------------------------------- evaluator

Resolver = Callable[[Any, int, int], Any]  # (sheet or None, row, col) -> CellValue | python value


def cell_to_value(v):
    """Map a stored CellValue to a python scalar: float, str, bool, None or ErrorValue."""
    if not isinstance(v, CellValue):
        return v
    if v.kind == "empty":
        return None
    if v.kind == "number":
        return v.numeric
    if v.kind == "boolean":
        return v.raw.upper() == "TRUE"
    if v.kind == "text":
        return v.raw
    # formula: use the cached value
    if v.raw.startswith("#"):
        return ErrorValue(v.raw)
    if v.numeric is not None:
        if v.raw in ("TRUE", "FALSE"):
            return v.raw == "TRUE"
        return v.numeric
    return v.raw if v.raw else None


class _Err(Exception):
    def __init__(self, code):
        self.code = code


def _num(x) -> float:
    if isinstance(x, ErrorValue):
        raise _Err(x.code)
    if x is None:
        return 0.0
    if isinstance(x, bool):
        return 1.0 if x else 0.0
    if isinstance(x, float):
        return x
    try:
        return float(x)
    except ValueError:
        raise _Err("#VALUE!") from None


def _type_rank(x) -> int:
    return 2 if isinstance(x, bool) else 1 if isinstance(x, str) else 0


def _compare(op, a, b) -> bool:
    for x in (a, b):
        if isinstance(x, ErrorValue):
            raise _Err(x.code)
    if a is None:
        a = "" if isinstance(b, str) else False if isinstance(b, bool) else 0.0
    if b is None:
        b = "" if isinstance(a, str) else False if isinstance(a, bool) else 0.0
    ra, rb = _type_rank(a), _type_rank(b)
    if ra != rb:
        a, b = ra, rb
    elif ra == 1:
        a, b = a.lower(), b.lower()
    return {"=": a == b, "<>": a != b, "<": a < b, ">": a > b, "<=": a <= b, ">=": a >= b}[op]


class _Evaluator:
    def __init__(self, resolver: Resolver):
        self.resolver = resolver

    def value(self, sheet, row, col):
        return cell_to_value(self.resolver(sheet, row, col))

    def items(self, node):
        """Values of an argument; ranges expand, flagged so aggregates can skip non-numbers."""
        if node[0] == "range":
            _, sheet, r1, c1, r2, c2 = node
            bounds = getattr(self.resolver, "bounds", None)
            if bounds is not None:  # skip the blank tail of very large ranges
                n_rows, n_cols = bounds(sheet)
                r2, c2 = min(r2, n_rows), min(c2, n_cols)
            return [(self.value(sheet, r, c), True) for r in range(r1, r2 + 1) for c in range(c1, c2 + 1)]
        if node[0] == "ref":
            return [(self.value(*node[1:]), True)]
        return [(self.eval(node), False)]

    def numbers(self, args, count_only=False):
        out = []
        for arg in args:
            for v, from_ref in self.items(arg):
                if isinstance(v, ErrorValue):
                    if count_only:
                        continue
                    raise _Err(v.code)
                if isinstance(v, float):
                    out.append(v)
                elif from_ref or v is None:
                    continue  # text, booleans and blanks in references are ignored
                elif isinstance(v, bool):
                    out.append(1.0 if v else 0.0)
                elif count_only:
                    try:
                        out.append(float(v))
                    except ValueError:
                        pass
                else:
                    out.append(_num(v))
        return out

    def eval(self, node):
        tag = node[0]
        if tag in ("num", "str", "bool"):
            return node[1]
        if tag == "ref":
            return self.value(*node[1:])
        if tag == "range":
            raise _Err("#VALUE!")  # a bare range is not a scalar
        if tag == "neg":
            return -_num(self.eval(node[1]))
        if tag == "pos":
            return self.eval(node[1])
        if tag == "bin":
            _, op, a, b = node
            x, y = self.eval(a), self.eval(b)
            if op in ("=", "<>", "<", ">", "<=", ">="):
                return _compare(op, x, y)
            x, y = _num(x), _num(y)
            if op == "+":
                r = x + y
            elif op == "-":
                r = x - y
            elif op == "*":
                r = x * y
            elif op == "/":
                if y == 0:
                    raise _Err("#DIV/0!")
                r = x / y
            else:
                if x == 0 and y < 0:
                    raise _Err("#DIV/0!")
                try:
                    r = x ** y
                except (OverflowError, ZeroDivisionError):
                    raise _Err("#NUM!") from None
                if isinstance(r, complex):
                    raise _Err("#NUM!")
            if not math.isfinite(r):
                raise _Err("#NUM!")
            return r
        if tag == "call":
            return self.call(node[1], node[2])
        raise _Err("#VALUE!")

    def call(self, name, args):
        if name == "IF":
            if not 2 <= len(args) <= 3:
                raise _Err("#VALUE!")
            cond = self.eval(args[0])
            if isinstance(cond, ErrorValue):
                raise _Err(cond.code)
            if isinstance(cond, str):
                raise _Err("#VALUE!")
            if _num(cond) != 0:
                return self.eval(args[1])
            return self.eval(args[2]) if len(args) == 3 else False
        if not args:
            raise _Err("#VALUE!")
        if name == "COUNT":
            return float(len(self.numbers(args, count_only=True)))
        nums = self.numbers(args)
        if name == "SUM":
            return math.fsum(nums)
        if name == "AVERAGE":
            if not nums:
                raise _Err("#DIV/0!")
            return math.fsum(nums) / len(nums)
        if name == "MIN":
            return min(nums) if nums else 0.0
        if name == "MAX":
            return max(nums) if nums else 0.0
        raise _Err("#NAME?")


def evaluate(expr_or_ast, resolver: Resolver):
    """Evaluate to a python scalar (float, str, bool) or an ErrorValue."""
    ast = parse_formula(expr_or_ast) if isinstance(expr_or_ast, str) else expr_or_ast
    try:
        v = _Evaluator(resolver).eval(ast)
    except _Err as e:
        return ErrorValue(e.code)
    if v is None:
        return 0.0  # a bare reference to a blank cell shows 0
    if isinstance(v, ErrorValue):
        return v
    return v


def to_cell_value(expr: str, value) -> CellValue:
    """Wrap an evaluation result as a formula cell with a cached value."""
    if isinstance(value, ErrorValue):
        return CellValue.formula(expr, value.code)
    if isinstance(value, bool):
        return CellValue.formula(expr, "TRUE" if value else "FALSE", 1.0 if value else 0.0)
    if isinstance(value, float):
        return CellValue.formula(expr, format_number(value), value)
    return CellValue.formula(expr, str(value))


def eval_formula(expr: str, resolver: Resolver) -> CellValue:
    """Parse and evaluate ``expr``; runtime errors become Excel error values.

    ParseError and UnknownFunction are raised; CycleDetected propagates from the resolver.
    """
    return to_cell_value(expr, evaluate(parse_formula(expr), resolver))


def error_cell(expr: str, exc: FormulaError) -> CellValue:
    return CellValue.formula(expr, exc.code)
