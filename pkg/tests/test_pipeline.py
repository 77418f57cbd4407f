"""Pipeline execution, result extraction, and text round-trip."""

import random

import pytest

from adprep.operators import OpParseError, parse_operator_call
from adprep.pipeline import (
    PipelineError,
    final_table,
    parse_pipeline,
    run_pipeline,
    serialize_pipeline,
)
from adprep.tables import INT, TEXT, make_table, tables_equal
from conftest import random_table_set

PIPELINE_TEXT = """
# tidy up and join
Deduplicate("movies", ["id"], "first")

Join("movies", "directors", ["director_id"], "inner")
"""


def sample_state():
    movies = make_table(
        "movies",
        [("id", INT), ("title", TEXT), ("director_id", INT)],
        [(1, "Alien", 10), (1, "Alien", 10), (2, "Arrival", 11)],
    )
    directors = make_table(
        "directors",
        [("director_id", INT), ("director", TEXT)],
        [(10, "Scott"), (11, "Villeneuve")],
    )
    return {"movies": movies, "directors": directors}


def test_parse_pipeline_skips_blanks_and_comments():
    ops = parse_pipeline(PIPELINE_TEXT)
    assert [op.kind for op in ops] == ["Deduplicate", "Join"]


def test_parse_pipeline_reports_line_number():
    text = 'Count("t")\nNope("t")\n'
    with pytest.raises(OpParseError) as err:
        parse_pipeline(text)
    assert str(err.value).startswith("line 2:")


def test_serialize_round_trip():
    ops = parse_pipeline(PIPELINE_TEXT)
    text = serialize_pipeline(ops)
    assert parse_pipeline(text) == ops
    assert text.endswith("\n")


def test_run_pipeline_records_every_state():
    ops = parse_pipeline(PIPELINE_TEXT)
    trace = run_pipeline(ops, sample_state())
    assert trace.ok
    assert trace.steps_completed == 2
    assert len(trace.states) == 3
    assert set(trace.states[0]) == {"movies", "directors"}
    assert set(trace.states[1]) == {"movies", "directors"}
    assert set(trace.states[2]) == {"movies_directors_join"}
    assert trace.states[1]["movies"].n_rows == 2


def test_run_pipeline_short_circuits():
    ops = parse_pipeline(
        'Deduplicate("movies", ["id"], "first")\n'
        'DropColumn("movies", ["missing"])\n'
        'Count("movies")\n'
    )
    trace = run_pipeline(ops, sample_state())
    assert not trace.ok
    assert trace.failed_index == 1
    assert trace.steps_completed == 1
    assert trace.failure.detail == "missing"
    # the failing operator left no partial state behind
    assert set(trace.final_state) == {"movies", "directors"}


def test_run_pipeline_does_not_touch_input():
    state = sample_state()
    ops = parse_pipeline('Count("movies")\n')
    run_pipeline(ops, state)
    assert set(state) == {"movies", "directors"}
    assert state["movies"].n_rows == 3


def test_empty_pipeline_is_identity():
    state = sample_state()
    trace = run_pipeline([], state)
    assert trace.ok
    assert trace.final_state == state


def test_final_table_selection():
    state = sample_state()
    assert final_table(state, "movies").name == "movies"
    with pytest.raises(PipelineError):
        final_table(state, "ghost")
    with pytest.raises(PipelineError):
        final_table(state)  # two tables, no name
    with pytest.raises(PipelineError):
        final_table({})
    only = {"x": state["movies"]}
    assert final_table(only) is state["movies"]


def test_random_pipelines_round_trip_and_replay():
    rng = random.Random(31)
    for _ in range(25):
        state = random_table_set(rng, n_tables=2, dtypes=(INT, TEXT), min_cols=2)
        names = list(state)
        ops = parse_pipeline(
            f'Deduplicate("{names[0]}", [], "first")\n'
            f'Count("{names[1]}")\n'
        )
        text = serialize_pipeline(ops)
        assert parse_pipeline(text) == ops
        a = run_pipeline(ops, state)
        b = run_pipeline(ops, state)
        assert a.ok and b.ok
        for ta, tb in zip(a.final_state.values(), b.final_state.values()):
            assert tables_equal(ta, tb)
