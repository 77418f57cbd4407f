"""Table model: canonical ordering, equality, rendering, file round trips."""

from __future__ import annotations

import math
import random

import pytest

from adprep.tables import (
    INT,
    LIST,
    REAL,
    TEXT,
    Schema,
    ColumnSpec,
    Table,
    TableError,
    TableIOError,
    canonicalize,
    cells_equal,
    compare_cells,
    make_table,
    read_table,
    serialize_table,
    table_from_rows,
    tables_equal,
    write_table,
)
from conftest import random_table


def test_canonicalize_sorts_columns_and_rows():
    t = make_table(
        "t",
        [("b", "text"), ("a", "int")],
        [("x", 3), ("y", 1), ("a", 1)],
    )
    c = canonicalize(t)
    assert c.column_names == ("a", "b")
    # rows reordered to column order (a, b), then sorted lexicographically
    assert c.rows == ((1, "a"), (1, "y"), (3, "x"))


def test_canonicalize_cell_order_across_kinds():
    from functools import cmp_to_key

    # ordering: Null < Boolean < numeric < Text < List
    cells = [None, False, True, -1, 0.5, 2, "a", "b", ("a",)]
    ordered = sorted(cells[::-1], key=cmp_to_key(compare_cells))
    assert ordered == cells


def test_canonicalize_idempotent_random():
    rng = random.Random(7)
    for _ in range(60):
        t = random_table(rng)
        c1 = canonicalize(t)
        c2 = canonicalize(c1)
        assert c1 == c2


def test_canonicalize_preserves_row_multiset():
    rng = random.Random(8)
    for _ in range(40):
        t = random_table(rng)
        c = canonicalize(t)
        assert len(c.rows) == len(t.rows)
        order = [t.column_names.index(n) for n in c.column_names]
        remapped = sorted(repr(tuple(row[i] for i in order)) for row in t.rows)
        assert remapped == sorted(repr(r) for r in c.rows)


def test_tables_equal_ignores_permutations():
    a = make_table("x", [("a", "int"), ("b", "text")], [(1, "p"), (2, "q")])
    b = make_table("y", [("b", "text"), ("a", "int")], [("q", 2), ("p", 1)])
    assert tables_equal(a, b)


def test_tables_equal_int_real_cross_kind():
    a = make_table("x", [("a", "int")], [(2,)])
    b = make_table("x", [("a", "real")], [(2.0,)])
    assert tables_equal(a, b)


def test_tables_equal_multiset_multiplicity():
    a = make_table("x", [("a", "int")], [(1,), (1,)])
    b = make_table("x", [("a", "int")], [(1,)])
    assert not tables_equal(a, b)


def test_tables_equal_bool_is_not_int():
    a = make_table("x", [("a", "bool")], [(True,)])
    b = make_table("x", [("a", "int")], [(1,)])
    assert not tables_equal(a, b)


def test_cells_equal_lists():
    assert cells_equal((1, 2), (1, 2.0))
    assert not cells_equal((1, 2), (1, 2, 3))
    assert not cells_equal("a", ("a",))


def test_nan_and_inf_rejected():
    with pytest.raises(TableError):
        make_table("t", [("a", "real")], [(float("nan"),)])
    with pytest.raises(TableError):
        make_table("t", [("a", "real")], [(math.inf,)])


def test_cell_kind_must_match_dtype():
    with pytest.raises(TableError):
        make_table("t", [("a", "int")], [("12",)])
    with pytest.raises(TableError):
        make_table("t", [("a", "int")], [(True,)])


def test_int64_bounds_enforced():
    make_table("t", [("a", "int")], [(2**63 - 1,)])
    with pytest.raises(TableError):
        make_table("t", [("a", "int")], [(2**63,)])


def test_duplicate_column_names_rejected():
    with pytest.raises(TableError):
        Schema("t", (ColumnSpec("a", "int"), ColumnSpec("a", "text")))


def test_ragged_rows_rejected():
    with pytest.raises(TableError):
        make_table("t", [("a", "int"), ("b", "int")], [(1,)])


def test_serialize_empty_table():
    t = make_table("t", [("a", "int"), ("b", "text")], [])
    out = serialize_table(t, sample_rows=5)
    assert out.splitlines() == [
        "| a | b |",
        "| int | text |",
        "rows: 0",
    ]


def test_serialize_row_sampling_and_line_count():
    t = make_table("t", [("a", "int")], [(i,) for i in range(10)])
    out = serialize_table(t, sample_rows=5)
    lines = out.splitlines()
    assert len(lines) == 3 + 5
    assert lines[-1] == "rows: 10"
    assert lines[2] == "| 0 |"


def test_serialize_deterministic():
    rng = random.Random(11)
    t = random_table(rng)
    assert serialize_table(t) == serialize_table(t)


def test_serialize_escapes_pipes():
    t = make_table("t", [("a", "text")], [("x|y",)])
    assert "x\\|y" in serialize_table(t)


def test_csv_round_trip_with_sidecar(tmp_path):
    rng = random.Random(13)
    for i in range(25):
        t = random_table(rng, name=f"t{i}")
        path = tmp_path / f"t{i}.csv"
        write_table(t, path)
        back = read_table(path)
        assert tables_equal(t, back), f"csv round trip failed for table {i}"
        assert back.schema == t.schema


def test_json_rows_round_trip(tmp_path):
    rng = random.Random(14)
    for i in range(25):
        t = random_table(rng, name=f"t{i}")
        path = tmp_path / f"t{i}.json"
        write_table(t, path, fmt="json-rows")
        back = read_table(path, fmt="json-rows")
        assert tables_equal(t, back), f"json round trip failed for table {i}"


def test_csv_inference_without_sidecar(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b,c,d\n1,2.5,true,hello\n2,,false,\n")
    t = read_table(path)
    assert [c.dtype for c in t.schema.columns] == ["int", "real", "bool", "text"]
    assert t.rows == ((1, 2.5, True, "hello"), (2, None, False, None))


def test_csv_inference_mixed_int_real(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a\n1\n2.5\n")
    t = read_table(path)
    assert t.schema.columns[0].dtype == "real"
    assert t.rows == ((1.0,), (2.5,))


def test_csv_inference_falls_back_to_text(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a\n1\nx\n")
    t = read_table(path)
    assert t.schema.columns[0].dtype == "text"
    assert t.rows == (("1",), ("x",))


def test_csv_empty_cell_is_null(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a\n\n1\n")
    t = read_table(path)
    assert t.rows == ((None,), (1,))


def test_csv_ragged_row_rejected(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n1\n")
    with pytest.raises(TableIOError):
        read_table(path)


def test_csv_duplicate_header_rejected(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,a\n1,2\n")
    with pytest.raises(TableIOError):
        read_table(path)


def test_csv_quoting_round_trip(tmp_path):
    t = make_table(
        "t",
        [("a", "text")],
        [('say "hi", ok',), ("line1\nline2",), ("plain",)],
    )
    path = tmp_path / "t.csv"
    write_table(t, path)
    back = read_table(path)
    assert tables_equal(t, back)


def test_sidecar_dtype_beats_inference(tmp_path):
    t = make_table("t", [("a", "text")], [("12",), ("34",)])
    path = tmp_path / "t.csv"
    write_table(t, path)
    back = read_table(path)
    assert back.schema.columns[0].dtype == "text"
    assert back.rows == (("12",), ("34",))


def test_table_from_rows_promotes_int_to_real():
    t = table_from_rows("t", ["a"], [(1,), (2.5,)])
    assert t.schema.columns[0].dtype == "real"
    assert t.rows == ((1.0,), (2.5,))


def test_table_from_rows_mixed_kinds_rejected():
    with pytest.raises(TableError):
        table_from_rows("t", ["a"], [(1,), ("x",)])
