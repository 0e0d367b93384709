"""Per-iteration training metrics and their CSV form."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import astuple, dataclass, fields


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsRow:
    iter: int
    real_score: float
    fake_score: float
    w_estimate: float
    grad_penalty: float
    gen_loss: float
    pos_loss: float = 0.0
    gate_frac: float = 0.0

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in astuple(self))


COLUMNS = tuple(f.name for f in fields(MetricsRow))
HEADER = ",".join(COLUMNS)


class MetricsLog:
    """Append-only log; iteration indices must strictly increase."""

    def __init__(self, rows=()):
        self.rows: list[MetricsRow] = []
        for r in rows:
            self.append(r)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.iter <= self.rows[-1].iter:
            raise MetricsError(f"iteration {row.iter} does not follow {self.rows[-1].iter}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name: str) -> list[float]:
        if name not in COLUMNS:
            raise KeyError(name)
        return [getattr(r, name) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(HEADER + "\n")
        for r in self.rows:
            buf.write(format_row(r) + "\n")
        return buf.getvalue()

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, source: str = "<csv>") -> "MetricsLog":
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise MetricsError(f"{source}: empty file") from None
        if tuple(h.strip() for h in header) != COLUMNS:
            raise MetricsError(f"{source}: header must be '{HEADER}'")
        log = cls()
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(COLUMNS):
                raise MetricsError(f"{source} line {lineno}: expected {len(COLUMNS)} fields, got {len(rec)}")
            try:
                row = MetricsRow(int(rec[0]), *(float(v) for v in rec[1:]))
                log.append(row)
            except ValueError as exc:
                raise MetricsError(f"{source} line {lineno}: {exc}") from exc
        return log

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MetricsLog":
        try:
            text = open(path, newline="").read()
        except OSError as exc:
            raise MetricsError(f"cannot read {path}: {exc}") from exc
        return cls.from_csv(text, str(path))


def format_row(r: MetricsRow) -> str:
    return f"{r.iter}," + ",".join(f"{v:.6f}" for v in astuple(r)[1:])


class CsvWriter:
    """Streams rows to disk as they are produced, so crashed runs keep their history."""

    def __init__(self, path: str | os.PathLike):
        self.fh = open(path, "w", newline="")
        self.fh.write(HEADER + "\n")

    def write(self, row: MetricsRow) -> None:
        self.fh.write(format_row(row) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()
