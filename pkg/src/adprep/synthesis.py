"""Task synthesis: corrupt clean sources so the fix is known in advance.

A task starts from clean source tables and a short pipeline that builds the
target table. The sources are then damaged with reversible corruptions,
each carrying the exact operator that undoes it. The ground-truth pipeline
is those cleaning operators (newest damage first) followed by the original
task operators.

Every corruption is accepted only if its cleaner restores the table it
damaged cell for cell. Anything ambiguous gets rejected: duplicating a row
in a table that already had duplicates, uppercasing a column that was not
uniformly lowercase ("USA" would come back "usa"), reformatting dates the
parser could misread. Corrupted rows are appended at the end so row order
survives the round trip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .operators import (
    OperatorInstance,
    TableSet,
    execute_operator,
    ExecError,
    make_operator,
)
from .pipeline import parse_pipeline, run_pipeline, serialize_pipeline
from .tables import (
    BOOL,
    INT,
    REAL,
    TEXT,
    Schema,
    Table,
    make_table,
    read_schema,
    read_table,
    render_scalar,
    tables_equal,
    write_schema,
    write_table,
)

CANONICAL_DATE = "%Y-%m-%d"
ALTERNATE_DATE_FORMATS = ("%m/%d/%Y", "%d %B %Y", "%B %d, %Y", "%Y/%m/%d")


class SynthesisError(Exception):
    pass


@dataclass(frozen=True)
class Corruption:
    """One accepted piece of damage and the operator that undoes it."""

    name: str
    table: str
    cleaner: OperatorInstance


@dataclass
class CorruptionResult:
    table: Table
    applied: list[Corruption] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)


@dataclass
class TaskBundle:
    task_id: str
    sources: TableSet
    target_schema: Schema
    target_table: Table
    gt_pipeline: tuple[OperatorInstance, ...]
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# corruption catalog
# ---------------------------------------------------------------------------

def _swap_column(t: Table, col: str, cells, dtype=None) -> Table:
    i = t.column_index(col)
    specs = [(c.name, dtype if (c.name == col and dtype) else c.dtype, c.description)
             for c in t.schema.columns]
    rows = [list(r) for r in t.rows]
    for r, cell in zip(rows, cells):
        r[i] = cell
    return make_table(t.name, specs, rows)


def _corrupt_duplicate_rows(rng, t: Table):
    if t.n_rows == 0:
        return None
    count = rng.randint(1, min(3, t.n_rows))
    picks = [t.rows[rng.randrange(t.n_rows)] for _ in range(count)]
    damaged = Table(t.schema, t.rows + tuple(picks))
    return damaged, make_operator("Deduplicate", t.name, [], "first")


def _corrupt_inject_nulls(rng, t: Table):
    if t.n_rows == 0 or not t.column_names:
        return None
    col = rng.choice(t.column_names)
    if any(v is None for v in t.column(col)):
        return None  # the cleaner would eat real rows too
    extra = []
    for _ in range(rng.randint(1, 2)):
        row = list(t.rows[rng.randrange(t.n_rows)])
        row[t.column_index(col)] = None
        extra.append(tuple(row))
    damaged = Table(t.schema, t.rows + tuple(extra))
    return damaged, make_operator("DropNA", t.name, [col], "any")


def _corrupt_date_format(rng, t: Table):
    from datetime import datetime

    candidates = []
    for c in t.schema.columns:
        if c.dtype != TEXT:
            continue
        cells = t.column(c.name)
        try:
            if cells and all(
                v is None or datetime.strptime(v, CANONICAL_DATE) for v in cells
            ):
                candidates.append(c.name)
        except (ValueError, TypeError):
            continue
    if not candidates:
        return None
    col = rng.choice(candidates)
    fmt = rng.choice(ALTERNATE_DATE_FORMATS)
    rewritten = [
        None if v is None else datetime.strptime(v, CANONICAL_DATE).strftime(fmt)
        for v in t.column(col)
    ]
    damaged = _swap_column(t, col, rewritten)
    return damaged, make_operator("StandardizeDatetime", t.name, col, CANONICAL_DATE)


def _corrupt_uppercase(rng, t: Table):
    candidates = [c.name for c in t.schema.columns if c.dtype == TEXT]
    if not candidates:
        return None
    col = rng.choice(candidates)
    cells = t.column(col)
    if all(v is None or v == "" for v in cells):
        return None
    shouted = [None if v is None else v.upper() for v in cells]
    if tuple(shouted) == tuple(cells):
        return None  # nothing changed; not a corruption
    damaged = _swap_column(t, col, shouted)
    expr = f'lower(col("{col}"))'
    return damaged, make_operator("ValueTransform", t.name, col, expr)


def _corrupt_stringify(rng, t: Table):
    candidates = [c for c in t.schema.columns if c.dtype in (INT, REAL, BOOL)]
    if not candidates:
        return None
    spec = rng.choice(candidates)
    cells = t.column(spec.name)
    as_text = [None if v is None else render_scalar(v) for v in cells]
    damaged = _swap_column(t, spec.name, as_text, dtype=TEXT)
    return damaged, make_operator("CastType", t.name, spec.name, spec.dtype)


CORRUPTIONS = {
    "duplicate_rows": _corrupt_duplicate_rows,
    "inject_nulls": _corrupt_inject_nulls,
    "date_format": _corrupt_date_format,
    "uppercase_text": _corrupt_uppercase,
    "stringify_column": _corrupt_stringify,
}


def _cleaner_restores(cleaner: OperatorInstance, damaged: Table, pristine: Table) -> bool:
    try:
        healed = execute_operator(cleaner, {damaged.name: damaged})
    except ExecError:
        return False
    got = healed.get(damaged.name)
    return got is not None and tables_equal(got, pristine)


def corrupt_table(
    rng,
    t: Table,
    *,
    max_corruptions: int = 2,
    attempts: int = 12,
    kinds=None,
) -> CorruptionResult:
    """Stack reversible damage onto one table.

    Each accepted corruption is verified against the state it damaged, so
    undoing them newest-first walks back to the pristine table exactly.
    """
    names = list(kinds) if kinds else sorted(CORRUPTIONS)
    result = CorruptionResult(table=t)
    for _ in range(attempts):
        if len(result.applied) >= max_corruptions:
            break
        name = rng.choice(names)
        made = CORRUPTIONS[name](rng, result.table)
        if made is None:
            continue
        damaged, cleaner = made
        if not _cleaner_restores(cleaner, damaged, result.table):
            result.rejected.append(name)
            continue
        result.applied.append(Corruption(name, t.name, cleaner))
        result.table = damaged
    return result


# ---------------------------------------------------------------------------
# whole tasks
# ---------------------------------------------------------------------------

def _produced_table(before: TableSet, after: TableSet) -> Table:
    fresh = [t for name, t in after.items() if before.get(name) is not t]
    if len(fresh) != 1:
        raise SynthesisError(
            f"expected the pipeline step to produce one table, found {len(fresh)}"
        )
    return fresh[0]


def synthesize_task(
    rng,
    task_id: str,
    sources: TableSet,
    task_ops,
    *,
    max_corruptions: int = 2,
    kinds=None,
) -> TaskBundle:
    """Build a bundle: run the task on clean sources, then damage the inputs.

    The ground truth is the cleaning operators (in undo order) followed by
    the task operators, re-verified end to end before the bundle is
    returned.
    """
    task_ops = tuple(task_ops)
    if not task_ops:
        raise SynthesisError("a task needs at least one operator")
    trace = run_pipeline(task_ops, sources)
    if not trace.ok:
        raise SynthesisError(f"task pipeline fails on clean sources: {trace.failure}")
    target = _produced_table(trace.states[-2], trace.states[-1])

    corrupted: TableSet = {}
    cleaners: list[OperatorInstance] = []
    applied = {}
    for name in sources:
        outcome = corrupt_table(rng, sources[name], max_corruptions=max_corruptions, kinds=kinds)
        corrupted[name] = outcome.table
        # undo newest damage first
        cleaners.extend(c.cleaner for c in reversed(outcome.applied))
        if outcome.applied:
            applied[name] = [c.name for c in outcome.applied]

    gt = tuple(cleaners) + task_ops
    verify_trace = run_pipeline(gt, corrupted)
    if not verify_trace.ok:
        raise SynthesisError(f"ground truth fails on corrupted sources: {verify_trace.failure}")
    rebuilt = _produced_table(verify_trace.states[-2], verify_trace.states[-1])
    if not tables_equal(rebuilt, target):
        raise SynthesisError("ground truth does not rebuild the target table")

    schema = target.schema
    if not schema.description:
        cols = ", ".join(c.name for c in schema.columns)
        schema = Schema(
            schema.table_name, schema.columns,
            f"build the table {schema.table_name} with columns {cols}",
        )

    return TaskBundle(
        task_id=task_id,
        sources=corrupted,
        target_schema=schema,
        target_table=target,
        gt_pipeline=gt,
        provenance={
            "corruptions": applied,
            "task_op_count": len(task_ops),
            "cleaner_count": len(cleaners),
        },
    )


def select_shortest_valid_pipeline(candidates, sources: TableSet, target: Table):
    """Pick the shortest candidate that rebuilds the target; ties keep order."""
    best = None
    for ops in candidates:
        ops = tuple(ops)
        trace = run_pipeline(ops, dict(sources))
        if not trace.ok:
            continue
        try:
            produced = _produced_table(trace.states[-2], trace.states[-1]) if ops else None
        except SynthesisError:
            continue
        if produced is None or not tables_equal(produced, target):
            continue
        if best is None or len(ops) < len(best):
            best = ops
    return best


# ---------------------------------------------------------------------------
# demo suite generation
# ---------------------------------------------------------------------------

_FIRST_WORDS = (
    "amber", "birch", "cedar", "delta", "ember", "fjord", "garnet", "harbor",
    "indigo", "juniper", "krill", "lagoon", "meadow", "nectar", "onyx", "pine",
)
_REGIONS = ("north", "south", "east", "west", "central")


def _demo_sources(rng) -> tuple[TableSet, list[OperatorInstance]]:
    """One random base scenario plus the task operators that finish it."""
    n = rng.randint(6, 12)
    rows = []
    for i in range(n):
        rows.append((
            i + 1,
            rng.choice(_FIRST_WORDS),
            rng.choice(_REGIONS),
            rng.randint(1, 500),
            f"2023-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}",
        ))
    orders = make_table(
        "orders",
        [("order_id", INT), ("item", TEXT), ("region", TEXT), ("amount", INT), ("placed", TEXT)],
        rows,
    )
    pattern = rng.randrange(3)
    if pattern == 0:
        ops = [
            make_operator("SelectColumn", "orders", ["order_id", "item", "amount"]),
            make_operator("Sort", "orders", ["amount", "order_id"], [False, True]),
        ]
        return {"orders": orders}, ops
    if pattern == 1:
        ops = [
            make_operator("GroupBy", "orders", ["region"], {"amount": "sum"}),
            make_operator("Sort", "orders", ["region"], True),
        ]
        return {"orders": orders}, ops
    regions = make_table(
        "regions",
        [("region", TEXT), ("manager", TEXT)],
        [(r, rng.choice(_FIRST_WORDS)) for r in _REGIONS],
    )
    ops = [
        make_operator("Join", "orders", "regions", ["region"], "inner"),
        make_operator("SelectColumn", "orders_regions_join", ["order_id", "item", "manager"]),
    ]
    return {"orders": orders, "regions": regions}, ops


def synthesize_demo_task(rng, task_id: str, *, max_corruptions: int = 2) -> TaskBundle:
    sources, ops = _demo_sources(rng)
    return synthesize_task(rng, task_id, sources, ops, max_corruptions=max_corruptions)


# ---------------------------------------------------------------------------
# bundle I/O
# ---------------------------------------------------------------------------

def write_bundle(bundle: TaskBundle, directory: str | Path) -> Path:
    root = Path(directory)
    (root / "sources").mkdir(parents=True, exist_ok=True)
    for name in sorted(bundle.sources):
        write_table(bundle.sources[name], root / "sources" / f"{name}.csv")
    write_schema(bundle.target_schema, root / "target_schema.json")
    write_table(bundle.target_table, root / "target_table.csv")
    (root / "gt_pipeline.txt").write_text(serialize_pipeline(bundle.gt_pipeline))
    provenance = {"task_id": bundle.task_id, **bundle.provenance}
    (root / "provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    return root


def read_bundle(directory: str | Path) -> TaskBundle:
    root = Path(directory)
    source_dir = root / "sources"
    if not source_dir.is_dir():
        raise SynthesisError(f"{root}: no sources/ directory")
    sources: TableSet = {}
    for path in sorted(source_dir.glob("*.csv")):
        t = read_table(path)
        sources[t.name] = t
    if not sources:
        raise SynthesisError(f"{root}: sources/ holds no csv tables")
    schema = read_schema(root / "target_schema.json")
    target = read_table(root / "target_table.csv")
    gt_text = root / "gt_pipeline.txt"
    gt = tuple(parse_pipeline(gt_text.read_text())) if gt_text.exists() else ()
    provenance = {}
    prov_path = root / "provenance.json"
    if prov_path.exists():
        provenance = json.loads(prov_path.read_text())
    task_id = provenance.pop("task_id", root.name)
    return TaskBundle(
        task_id=task_id,
        sources=sources,
        target_schema=schema,
        target_table=target,
        gt_pipeline=gt,
        provenance=provenance,
    )


def verify_bundle(bundle: TaskBundle) -> None:
    """Re-run the ground truth over the stored sources; raise on any drift."""
    if not bundle.gt_pipeline:
        raise SynthesisError(f"{bundle.task_id}: bundle has no ground-truth pipeline")
    trace = run_pipeline(bundle.gt_pipeline, dict(bundle.sources))
    if not trace.ok:
        raise SynthesisError(f"{bundle.task_id}: ground truth fails: {trace.failure}")
    produced = _produced_table(trace.states[-2], trace.states[-1])
    if not tables_equal(produced, bundle.target_table):
        raise SynthesisError(f"{bundle.task_id}: ground truth no longer rebuilds the target")
