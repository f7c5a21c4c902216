"""Reading and writing of "trades" and "quotes" tick files.

Timestamps are integer milliseconds since midnight and prices are integer
milli-units (0.001 currency), so that every comparison done by the matcher is
exact.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Union

SIDES = ("A", "B")

Source = Union[bytes, str, IO[bytes], IO[str], Iterable[str]]


class ParseError(ValueError):
    """Malformed line in a tick file."""

    def __init__(self, lineno: int, raw: str, reason: str, path: str | None = None):
        self.lineno = lineno
        self.raw = raw
        self.reason = reason
        self.path = path
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{lineno}: {reason}: {raw!r}")


@dataclass(frozen=True, slots=True)
class TradeRecord:
    t: int
    price: int
    qty: int


@dataclass(frozen=True, slots=True)
class QuoteRecord:
    t: int
    side: str
    level: int
    price: int
    qty: int


def parse_fixed3(text: str) -> int:
    """Parse a non-negative decimal with at most 3 fractional digits into thousandths."""
    text = text.strip()
    if not text:
        raise ValueError("empty number")
    whole, _, frac = text.partition(".")
    if not whole and not frac:
        raise ValueError(f"not a number: {text!r}")
    whole = whole or "0"
    if not text.isascii() or not whole.isdigit() or (frac and not frac.isdigit()):
        raise ValueError(f"not a non-negative decimal: {text!r}")
    if len(frac) > 3:
        raise ValueError(f"more than 3 decimals: {text!r}")
    return int(whole) * 1000 + int(frac.ljust(3, "0") or 0)


def format_fixed3(value: int) -> str:
    if value < 0:
        raise ValueError("negative fixed-point value")
    return f"{value // 1000}.{value % 1000:03d}"


# aliases used throughout the package
parse_time = parse_fixed3
parse_price = parse_fixed3
format_time = format_fixed3
format_price = format_fixed3


def ms_to_seconds(t: int) -> float:
    return t / 1000.0


def _lines(source: Source) -> Iterator[str]:
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)
    for line in source:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line.rstrip("\r\n")


def parse_trades(source: Source, path: str | None = None) -> list[TradeRecord]:
    out = []
    for lineno, raw in enumerate(_lines(source), start=1):
        if not raw.strip():
            continue
        fields = raw.split(",")
        if len(fields) != 3:
            raise ParseError(lineno, raw, f"expected 3 fields, got {len(fields)}", path)
        qty_text = fields[2].strip()
        if qty_text.startswith("-"):
            raise ParseError(lineno, raw, "negative quantity", path)
        try:
            t = parse_time(fields[0])
            price = parse_price(fields[1])
            qty = int(qty_text)
        except ValueError as exc:
            raise ParseError(lineno, raw, str(exc), path) from None
        if price <= 0:
            raise ParseError(lineno, raw, "price must be positive", path)
        if qty <= 0:
            raise ParseError(lineno, raw, "quantity must be positive", path)
        out.append(TradeRecord(t, price, qty))
    return out


def parse_quotes(source: Source, depth: int = 10, path: str | None = None) -> list[QuoteRecord]:
    out = []
    for lineno, raw in enumerate(_lines(source), start=1):
        if not raw.strip():
            continue
        fields = raw.split(",")
        if len(fields) != 5:
            raise ParseError(lineno, raw, f"expected 5 fields, got {len(fields)}", path)
        side = fields[1].strip()
        if side not in SIDES:
            raise ParseError(lineno, raw, f"unknown side {side!r}", path)
        try:
            t = parse_time(fields[0])
            level = int(fields[2])
            price = parse_price(fields[3])
            qty = int(fields[4])
        except ValueError as exc:
            raise ParseError(lineno, raw, str(exc), path) from None
        if not 1 <= level <= depth:
            raise ParseError(lineno, raw, f"level outside [1, {depth}]", path)
        if price <= 0:
            raise ParseError(lineno, raw, "price must be positive", path)
        if qty < 0:
            raise ParseError(lineno, raw, "negative quantity", path)
        out.append(QuoteRecord(t, side, level, price, qty))
    return out


def format_trade(r: TradeRecord) -> str:
    return f"{format_time(r.t)},{format_price(r.price)},{r.qty}"


def format_quote(r: QuoteRecord) -> str:
    return f"{format_time(r.t)},{r.side},{r.level},{format_price(r.price)},{r.qty}"


def write_trades(records: Iterable[TradeRecord]) -> bytes:
    return "".join(format_trade(r) + "\n" for r in records).encode("utf-8")


def write_quotes(records: Iterable[QuoteRecord]) -> bytes:
    return "".join(format_quote(r) + "\n" for r in records).encode("utf-8")


def read_trades(path) -> list[TradeRecord]:
    with open(path, "rb") as fh:
        return parse_trades(fh.read(), path=str(path))


def read_quotes(path, depth: int = 10) -> list[QuoteRecord]:
    with open(path, "rb") as fh:
        return parse_quotes(fh.read(), depth=depth, path=str(path))
