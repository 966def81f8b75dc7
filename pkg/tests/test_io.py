import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tupleflow.context import F32, I32
from tupleflow.engine import Engine
from tupleflow.io import CSVFormatError, read_csv, write_csv
from tupleflow.relation import Relation, TupleSet

SCHEMA = [("a", F32), ("n", I32)]


def test_load_evaluate_save_round_trip(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("1.5,2\n-0.25,3\n7,-4\n")
    ts = TupleSet.load(src, SCHEMA)
    out = Engine(backend="python").evaluate(ts)
    dst = tmp_path / "out.csv"
    out.save(dst)
    assert read_csv(dst, SCHEMA).equals(ts.relation)
    assert dst.read_text() == "1.5,2\n-0.25,3\n7,-4\n"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(width=32, allow_nan=False, allow_infinity=False),
                          st.integers(-2**31, 2**31 - 1)), max_size=40))
def test_round_trip_is_exact(tmp_path_factory, rows):
    rel = Relation.from_rows(SCHEMA, rows)
    path = tmp_path_factory.mktemp("csv") / "r.csv"
    write_csv(path, rel)
    back = read_csv(path, SCHEMA) if rows else rel
    assert back.equals(rel)


@pytest.mark.parametrize("text,row", [("1,2\n3\n", 2), ("1,2\n2,3\nx,4\n", 3), ("1,2.5\n", 1)])
def test_malformed_rows_report_row_number(tmp_path, text, row):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(CSVFormatError) as exc:
        read_csv(path, SCHEMA)
    assert exc.value.row == row


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_csv(tmp_path / "nope.csv", SCHEMA)


def test_relation_packed_layout():
    rel = Relation.from_columns(SCHEMA, [np.array([1.0, 2.0]), np.array([3, 4])])
    xf, xi = rel.packed()
    assert xf.shape == (1, 2) and xi.shape == (1, 2)
    assert rel.rows() == [(1.0, 3), (2.0, 4)]
