from __future__ import annotations

import json
import random
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from synthetic import random_subgraph

from prodkg.errors import InvariantViolation, ParseError, VersionMismatch
from prodkg.graph import Edge, InventoryGraph, NodeKey, NodeKind, merge_subgraph
from prodkg.persist import (
    FORMAT_VERSION,
    cypher_identifier,
    cypher_string,
    export,
    load,
    save,
    to_graphml,
    to_statements,
    xml_escape,
)

NS = "{http://graphml.graphdrawing.org/xmlns}"


def test_round_trip(e2e_inventory):
    text = save(e2e_inventory)
    again = load(text)
    assert again == e2e_inventory
    assert save(again) == text


def test_document_layout(e2e_inventory):
    doc = json.loads(save(e2e_inventory))
    assert doc["format_version"] == FORMAT_VERSION
    assert (len(doc["nodes"]), len(doc["edges"]), len(doc["products"])) == (30, 39, 3)
    ids = [n["id"] for n in doc["nodes"]]
    assert ids == sorted(ids, key=lambda i: (i.split(":", 1)[0], i.split(":", 1)[1]))
    weight = next(e for e in doc["edges"] if e["label"] == "Weight" and e["from"] == "product:bar chocolate dark")
    assert (weight["value"], weight["unit"]) == (0.1, "kg")


def test_exports_are_byte_identical(e2e_inventory):
    for fmt in ("graphml", "statements"):
        assert export(e2e_inventory, fmt) == export(load(save(e2e_inventory)), fmt)
    with pytest.raises(ValueError):
        export(e2e_inventory, "csv")


def test_statement_count(e2e_inventory):
    lines = to_statements(e2e_inventory).splitlines()
    assert len(lines) == 30 + 39
    assert all(line.endswith(";") for line in lines)
    assert sum(line.startswith("MERGE ") for line in lines) == 30


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_round_trip_random(seed):
    rng = random.Random(seed)
    g = InventoryGraph()
    for _ in range(rng.randint(1, 15)):
        merge_subgraph(g, random_subgraph(rng))
    assert load(save(g)) == g


# --- escaping --------------------------------------------------------------------

NASTY = 'Ben & Jerry\'s <"Tub">\tA\\B\x01'


def _nasty_graph() -> InventoryGraph:
    g = InventoryGraph()
    p = NodeKey.of(NASTY, NodeKind.PRODUCT)
    v = NodeKey.of("new\nline", NodeKind.VALUE)
    g.add_node(p)
    g.add_node(v)
    g.add_edge(Edge(p, v, "odd`label", 1.5, 'u"nit'))
    return g


def test_graphml_escaping_parses_back():
    root = ET.fromstring(to_graphml(_nasty_graph()))
    displays = {d.text for d in root.iter(f"{NS}data") if d.get("key") == "display"}
    assert NASTY.replace("\x01", "�") in displays
    assert "new\nline" in displays
    edge = next(root.iter(f"{NS}edge"))
    data = {d.get("key"): d.text for d in edge}
    assert data == {"label": "odd`label", "value": "1.5", "unit": 'u"nit'}


@pytest.mark.parametrize(
    "text,escaped",
    [("a&b", "a&amp;b"), ("<x>", "&lt;x&gt;"), ("\"'", "&quot;&apos;"), ("\t\n\r", "&#9;&#10;&#13;"), ("\x00", "�")],
)
def test_xml_escape(text, escaped):
    assert xml_escape(text) == escaped


@pytest.mark.parametrize(
    "text,literal",
    [('say "hi"', '"say \\"hi\\""'), ("a\\b", '"a\\\\b"'), ("x\ny", '"x\\ny"'), ("\x01", '"\\u0001"'), ("é", '"é"')],
)
def test_cypher_string(text, literal):
    assert cypher_string(text) == literal


def test_cypher_identifier():
    assert cypher_identifier("Primary Package Color") == "`Primary Package Color`"
    assert cypher_identifier("a`b") == "`a``b`"


def test_statements_escape_labels():
    text = to_statements(_nasty_graph())
    assert "[r:`odd``label`]" in text
    assert 'r.unit = "u\\"nit"' in text
    assert len(text.splitlines()) == 3


# --- load errors -----------------------------------------------------------------


def _doc(e2e_inventory) -> dict:
    return json.loads(save(e2e_inventory))


def test_version_mismatch(e2e_inventory):
    doc = _doc(e2e_inventory)
    doc["format_version"] = "prodkg-graph/0"
    with pytest.raises(VersionMismatch):
        load(json.dumps(doc))


def test_parse_errors(e2e_inventory):
    with pytest.raises(ParseError):
        load("{not json")
    with pytest.raises(ParseError):
        load("[]")
    doc = _doc(e2e_inventory)
    del doc["edges"]
    with pytest.raises(ParseError, match="edges"):
        load(json.dumps(doc))
    doc = _doc(e2e_inventory)
    doc["edges"][0]["value"] = "heavy"
    with pytest.raises(ParseError):
        load(json.dumps(doc))


@pytest.mark.parametrize(
    "corrupt,needle",
    [
        (lambda d: d["edges"][0].update(to="value:nowhere"), "not a node"),
        (lambda d: d["nodes"][0].update(key="something else"), "does not match"),
        (lambda d: d["nodes"].append(dict(d["nodes"][0])), "duplicate node"),
        (lambda d: d["edges"].append(dict(d["edges"][0])), "duplicate edge"),
        (lambda d: d["products"].pop(), "products list"),
        (lambda d: d["nodes"][0].update(kind="brand"), "unknown node kind"),
    ],
)
def test_invariant_violations(e2e_inventory, corrupt, needle):
    doc = _doc(e2e_inventory)
    corrupt(doc)
    with pytest.raises(InvariantViolation, match=needle):
        load(json.dumps(doc))
