"""Reasoning tree: expansion, partial chains, parent resolution."""

import json
import random

import pytest

from adprep.operators import parse_operator_call
from adprep.pipeline import parse_pipeline
from adprep.tree import ReasoningTree, TreeError
from adprep.tables import INT, TEXT, make_table
from conftest import random_table


def start_state():
    t = make_table(
        "people",
        [("id", INT), ("name", TEXT)],
        [(1, "ada"), (1, "ada"), (2, "grace"), (None, "alan")],
    )
    return {"people": t}


DEDUP = 'Deduplicate("people", ["id"], "first")'
DROPNA = 'DropNA("people", ["id"], "any")'
BAD = 'DropColumn("people", ["ghost"])'


def test_expand_creates_nodes_per_success():
    tree = ReasoningTree(start_state())
    result = tree.expand(tree.root, parse_pipeline(f"{DEDUP}\n{DROPNA}\n"))
    assert result.ok
    assert len(result.chain) == 2
    assert result.leaf.state["people"].n_rows == 2
    assert result.leaf.prefix == tuple(parse_pipeline(f"{DEDUP}\n{DROPNA}\n"))
    assert tree.root.children[0].state["people"].n_rows == 3


def test_partial_failure_keeps_prefix_nodes():
    tree = ReasoningTree(start_state())
    result = tree.expand(tree.root, parse_pipeline(f"{DEDUP}\n{BAD}\n{DROPNA}\n"))
    assert not result.ok
    assert len(result.chain) == 1  # the dedup survived
    assert result.leaf is result.chain[-1]
    assert result.leaf.failures[0].op == parse_operator_call(BAD)
    assert result.leaf.failures[0].detail == "ghost"
    # the failed suffix created no nodes
    assert len(tree.nodes) == 2


def test_first_op_failure_lands_on_parent():
    tree = ReasoningTree(start_state())
    result = tree.expand(tree.root, parse_pipeline(f"{BAD}\n"))
    assert not result.ok
    assert result.chain == []
    assert result.leaf is tree.root
    assert tree.root.failures[0].detail == "ghost"


def test_expand_reuses_existing_children():
    tree = ReasoningTree(start_state())
    tree.expand(tree.root, parse_pipeline(f"{DEDUP}\n"))
    tree.expand(tree.root, parse_pipeline(f"{DEDUP}\n{DROPNA}\n"))
    assert len(tree.root.children) == 1
    assert len(tree.nodes) == 3


def test_resolve_walks_prefix_and_reports_misses():
    tree = ReasoningTree(start_state())
    result = tree.expand(tree.root, parse_pipeline(f"{DEDUP}\n{DROPNA}\n"))
    found = tree.resolve(result.leaf.prefix)
    assert found is result.leaf
    assert tree.resolve(()) is tree.root
    with pytest.raises(TreeError) as err:
        tree.resolve(parse_pipeline(f"{DROPNA}\n"))
    assert "Deduplicate" in str(err.value)  # available children are listed


def test_path_text():
    tree = ReasoningTree(start_state())
    result = tree.expand(tree.root, parse_pipeline(f"{DEDUP}\n"))
    assert tree.root.path_text == "root"
    assert result.leaf.path_text == 'Deduplicate("people", ["id"], "first")'


def test_resolve_of_extracted_path_is_identity_randomized():
    rng = random.Random(77)
    for _ in range(30):
        t = random_table(rng, name="t", dtypes=(INT, TEXT), min_cols=1)
        tree = ReasoningTree({"t": t})
        names = list(t.column_names)
        candidates = [
            f'Deduplicate("t", [], "first")',
            f'DropNA("t", [], "any")',
            f'Sort("t", ["{rng.choice(names)}"], true)',
            f'TopK("t", {rng.randint(0, 3)})',
            f'Count("t")',
        ]
        rng.shuffle(candidates)
        for text in candidates[: rng.randint(1, 3)]:
            parent = rng.choice(tree.nodes)
            tree.expand(parent, parse_pipeline(text + "\n"))
        for node in tree.nodes:
            assert tree.resolve(node.prefix) is node


def test_subtree_failure_flag():
    tree = ReasoningTree(start_state())
    good = tree.expand(tree.root, parse_pipeline(f"{DEDUP}\n")).leaf
    assert not tree.root.subtree_has_failure()
    tree.expand(good, parse_pipeline(f"{BAD}\n"))
    assert good.subtree_has_failure()
    assert tree.root.subtree_has_failure()


def test_snapshot_is_json_serializable():
    tree = ReasoningTree(start_state())
    tree.expand(tree.root, parse_pipeline(f"{DEDUP}\n{BAD}\n"))
    snap = json.loads(json.dumps(tree.to_json()))
    assert snap["nodes"][0]["op"] is None
    assert snap["nodes"][1]["op"] == 'Deduplicate("people", ["id"], "first")'
    assert snap["nodes"][1]["failures"][0]["detail"] == "ghost"
    assert snap["nodes"][1]["tables"]["people"]["rows"] == 3
