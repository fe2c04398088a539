from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from synthetic import random_subgraph, scramble

from prodkg.constraints import PropertyAssignment, Provenance
from prodkg.errors import ChainEndpointMismatch, EmptyLabel, InvalidSubgraph
from prodkg.graph import (
    IS_A,
    Edge,
    InventoryGraph,
    KindConflict,
    NodeKey,
    NodeKind,
    ProductSubgraph,
    chain_labels,
    format_number,
    merge_subgraph,
    normalize_label,
    scan_duplicates,
    subgraph_from_assignment,
)

DARK_CHAIN = ["Dark Chocolate Bar", "Dark Chocolate", "Chocolate", "Food and Beverages"]


def assignment(**overrides) -> PropertyAssignment:
    values = {
        "Product Name": "Dark Chocolate Bar",
        "Category": "Food and Beverages",
        "Brand": "Lindt",
        "Price": 3.49,
        "Primary Package Color": "Brown",
        "Package Material": "Paper",
        "Package Shape": "Rectangular",
        "Weight": 0.5,
    }
    values.update(overrides)
    return PropertyAssignment(values, Provenance.CONSTRAINED)


# --- normalization ---------------------------------------------------------------


@pytest.mark.parametrize(
    "display,normalized",
    [
        ("Dark Chocolate", "chocolate dark"),
        ("chocolate, DARK", "chocolate dark"),
        ("X", "x"),
        ("very very dark", "dark very very"),
        ("Hershey's", "hershey s"),
        ("0.5 kg", "0.5 kg"),
        ("Crème brûlée", "brûlée crème"),
    ],
)
def test_normalize(display, normalized):
    assert normalize_label(display) == normalized


def test_decimals_are_not_split():
    assert normalize_label("0.5 kg") != normalize_label("5.0 kg")


@pytest.mark.parametrize("display", ["", "   ", "--", "!?"])
def test_empty_label(display):
    with pytest.raises(EmptyLabel):
        normalize_label(display)


@given(st.text(min_size=1))
def test_normalize_idempotent(text):
    try:
        once = normalize_label(text)
    except EmptyLabel:
        return
    assert normalize_label(once) == once


@given(st.lists(st.sampled_from(["dark", "Milk", "BAR", "tea", "0.5", "kg"]), min_size=1, max_size=6), st.randoms())
def test_normalize_ignores_order_case_and_separators(words, rnd):
    shuffled = list(words)
    rnd.shuffle(shuffled)
    assert normalize_label(" ".join(words)) == normalize_label(", ".join(w.swapcase() for w in shuffled))


def test_node_key_equality_ignores_display():
    a = NodeKey.of("Dark Chocolate", NodeKind.CATEGORY)
    b = NodeKey.of("chocolate dark", NodeKind.CATEGORY)
    assert a == b and hash(a) == hash(b)
    assert a != NodeKey.of("Dark Chocolate", NodeKind.PRODUCT)


# --- subgraphs -------------------------------------------------------------------


def test_subgraph_shape(schema):
    sub = subgraph_from_assignment(assignment(), [DARK_CHAIN], schema)
    assert len(sub.property_edges) == 7
    assert len(sub.hierarchy_chains[0]) == 4
    isa = sub.chain_edges()
    assert [(e.src.display, e.dst.display) for e in isa] == [
        ("Dark Chocolate Bar", "Dark Chocolate"),
        ("Dark Chocolate", "Chocolate"),
        ("Chocolate", "Food and Beverages"),
    ]
    assert all(e.label == IS_A for e in isa)
    kinds = [k.kind for k in sub.hierarchy_chains[0]]
    assert kinds == [NodeKind.PRODUCT, NodeKind.CATEGORY, NodeKind.CATEGORY, NodeKind.VALUE]


def test_numeric_value_nodes(schema):
    sub = subgraph_from_assignment(assignment(Weight=0.5, Price=3.0), [], schema)
    by_label = {e.label: e for e in sub.property_edges}
    assert by_label["Weight"].dst.display == "0.5 kg"
    assert (by_label["Weight"].value, by_label["Weight"].unit) == (0.5, "kg")
    assert by_label["Price"].dst.display == "3.0 USD"


def test_chain_endpoint_mismatch(schema):
    with pytest.raises(ChainEndpointMismatch):
        subgraph_from_assignment(assignment(), [["Dark Chocolate Bar", "Chocolate", "Candy"]], schema)
    with pytest.raises(ChainEndpointMismatch):
        subgraph_from_assignment(assignment(), [["Milk Bar", "Food and Beverages"]], schema)


def test_adjacent_equal_keys_collapse(schema):
    sub = subgraph_from_assignment(
        assignment(), [["Dark Chocolate Bar", "Chocolate", "chocolate", "Food and Beverages"]], schema
    )
    assert len(sub.hierarchy_chains[0]) == 3


def test_repeated_node_in_chain_rejected(schema):
    with pytest.raises(InvalidSubgraph):
        subgraph_from_assignment(
            assignment(), [["Dark Chocolate Bar", "Chocolate", "Candy", "Chocolate", "Food and Beverages"]], schema
        )


def test_direct_chain_has_no_is_a(schema):
    sub = subgraph_from_assignment(assignment(), [["Dark Chocolate Bar", "Food and Beverages"]], schema)
    assert sub.chain_edges() == []


def test_check_rejects_foreign_property_edge():
    root = NodeKey.of("Bar", NodeKind.PRODUCT)
    other = NodeKey.of("Other", NodeKind.PRODUCT)
    value = NodeKey.of("Lindt", NodeKind.VALUE)
    with pytest.raises(InvalidSubgraph):
        ProductSubgraph(root, (Edge(other, value, "Brand"),)).check()
    with pytest.raises(InvalidSubgraph):
        ProductSubgraph(root, (Edge(root, value, "Brand"), Edge(root, value, "Brand"))).check()


# --- merge -----------------------------------------------------------------------


def test_merge_unifies_equal_keys(schema):
    g = InventoryGraph()
    merge_subgraph(g, subgraph_from_assignment(assignment(), [DARK_CHAIN], schema))
    n_nodes = len(g.nodes)
    other = assignment(**{"Product Name": "Extra Dark Chocolate Bar"})
    merge_subgraph(g, subgraph_from_assignment(
        other, [["Extra Dark Chocolate Bar", "chocolate DARK", "Food and Beverages"]], schema))
    # Only the new product node; every value and the category are shared.
    assert len(g.nodes) == n_nodes + 1
    assert g.get("Dark Chocolate", NodeKind.CATEGORY).display == "Dark Chocolate"
    assert g.get("dark chocolate", NodeKind.CATEGORY).in_degree == 2


def test_merge_idempotent(schema):
    sub = subgraph_from_assignment(assignment(), [DARK_CHAIN], schema)
    once = merge_subgraph(InventoryGraph(), sub)
    twice = merge_subgraph(merge_subgraph(InventoryGraph(), sub), sub)
    assert once == twice
    assert len(twice.edges) == 7 + 3


def test_first_seen_display_wins(schema):
    g = InventoryGraph()
    merge_subgraph(g, subgraph_from_assignment(assignment(Brand="LINDT"), [], schema))
    merge_subgraph(g, subgraph_from_assignment(assignment(Brand="lindt"), [], schema))
    assert g.get("Lindt", NodeKind.VALUE).display == "LINDT"


def test_kind_scoped_merge_records_conflict(schema):
    g = InventoryGraph()
    merge_subgraph(g, subgraph_from_assignment(assignment(), [DARK_CHAIN], schema))
    choc = assignment(**{"Product Name": "Chocolate"})
    merge_subgraph(g, subgraph_from_assignment(choc, [], schema))
    assert g.get("Chocolate", NodeKind.PRODUCT) is not None
    assert g.get("Chocolate", NodeKind.CATEGORY) is not None
    assert KindConflict("chocolate", NodeKind.CATEGORY, NodeKind.PRODUCT) in g.conflicts


def test_bad_subgraph_leaves_inventory_untouched(schema):
    g = merge_subgraph(InventoryGraph(), subgraph_from_assignment(assignment(), [], schema))
    before = g.copy()
    root = NodeKey.of("Bar", NodeKind.PRODUCT)
    bad = ProductSubgraph(root, (), ((root,),), None)
    with pytest.raises(InvalidSubgraph):
        merge_subgraph(g, bad)
    assert g == before


def test_chain_labels(schema):
    sub = subgraph_from_assignment(assignment(), [DARK_CHAIN], schema)
    g = merge_subgraph(InventoryGraph(), sub)
    assert chain_labels(g, sub.hierarchy_chains[0]) == DARK_CHAIN


def test_merge_ops_independent_of_inventory_size(schema):
    rng = random.Random(3)
    small, big = InventoryGraph(), InventoryGraph()
    for _ in range(10):
        merge_subgraph(small, random_subgraph(rng, schema))
    for _ in range(500):
        merge_subgraph(big, random_subgraph(rng, schema))
    probe = random_subgraph(rng, schema)
    small.ops.clear()
    big.ops.clear()
    merge_subgraph(small, probe)
    merge_subgraph(big, probe)
    assert small.ops == big.ops


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_merge_permutation_insensitive(seed):
    rng = random.Random(seed)
    subs = [random_subgraph(rng) for _ in range(20)]
    a, b = InventoryGraph(), InventoryGraph()
    for s in subs:
        merge_subgraph(a, s)
    shuffled = list(subs)
    rng.shuffle(shuffled)
    for s in shuffled:
        merge_subgraph(b, s)
    assert a.node_keys() == b.node_keys()
    assert a.edge_triples() == b.edge_triples()
    assert scan_duplicates(a) == [] and scan_duplicates(b) == []
    for e in a.edges.values():
        assert e.src in a.nodes and e.dst in a.nodes


def test_scramble_preserves_key():
    rng = random.Random(0)
    for _ in range(100):
        assert normalize_label(scramble("dark milk chocolate", rng)) == "chocolate dark milk"


@pytest.mark.parametrize("value,text", [(1.0, "1.0"), (0.5, "0.5"), (3, "3"), (0.043, "0.043"), (1e20, "1e+20")])
def test_format_number(value, text):
    assert format_number(value) == text
