"""CSV input/output: comma separated, no header, one tuple per line."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .context import F32, NUMPY_DTYPE
from .relation import Relation, make_schema

logger = logging.getLogger(__name__)


class CSVFormatError(ValueError):
    def __init__(self, message: str, row: int):
        self.row = row
        super().__init__(f"row {row}: {message}")


def format_value(v, t: str) -> str:
    if t == F32:
        return np.format_float_positional(np.float32(v), unique=True, trim="0")
    return str(int(v))


def _parse_slow(path: Path, schema) -> Relation:
    cols: list[list] = [[] for _ in schema]
    with open(path, newline="") as fh:
        for rowno, row in enumerate(csv.reader(fh), start=1):
            if len(row) != len(schema):
                raise CSVFormatError(f"expected {len(schema)} fields, found {len(row)}", rowno)
            for j, ((name, t), tok) in enumerate(zip(schema, row)):
                tok = tok.strip()
                try:
                    cols[j].append(float(tok) if t == F32 else int(tok))
                except ValueError:
                    raise CSVFormatError(f"cannot parse {tok!r} as {t} for column {name!r}", rowno) from None
    n = len(cols[0]) if cols else 0
    return Relation.from_columns(schema, [np.array(c, dtype=NUMPY_DTYPE[t]) for c, (_, t) in zip(cols, schema)], n)


def read_csv(path, schema) -> Relation:
    """Read ``path`` into a relation; malformed rows abort with their 1-based row number."""
    schema = make_schema(schema)
    path = Path(path)
    try:
        import pandas as pd

        frame = pd.read_csv(
            path,
            header=None,
            names=list(range(len(schema))),
            dtype={j: ("float64" if t == F32 else "int64") for j, (_, t) in enumerate(schema)},
            engine="c",
            skip_blank_lines=False,
        )
        if frame.isna().to_numpy().any():
            raise ValueError("missing fields")
        cols = [frame[j].to_numpy().astype(NUMPY_DTYPE[t]) for j, (_, t) in enumerate(schema)]
        return Relation.from_columns(schema, cols, len(frame))
    except (ValueError, TypeError, OverflowError, ImportError) as exc:
        logger.debug("fast CSV path failed (%s); rescanning row by row", exc)
    except Exception as exc:  # pandas.errors.ParserError and friends
        if type(exc).__module__.startswith("pandas"):
            logger.debug("fast CSV path failed (%s); rescanning row by row", exc)
        else:
            raise
    return _parse_slow(path, schema)


def write_csv(path, relation: Relation, chunk_rows: int = 1 << 16) -> None:
    """Write without a header; f32 values use 9 significant digits, which round-trips exactly."""
    import pandas as pd

    with open(path, "w", newline="") as fh:
        for lo in range(0, relation.cardinality, chunk_rows):
            hi = min(relation.cardinality, lo + chunk_rows)
            frame = pd.DataFrame({j: c[lo:hi] for j, c in enumerate(relation.columns)})
            frame.to_csv(fh, header=False, index=False, float_format="%.9g", lineterminator="\n")
