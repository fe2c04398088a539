r"""Inventory documents and graph-database exports.

Saved inventories are JSON (``*.kg.json``)::

    {"format_version": "prodkg-graph/1",
     "nodes": [{"id": "product:bar chocolate dark", "kind": "product",
                "key": "bar chocolate dark", "display": "Dark Chocolate Bar"}, ...],
     "edges": [{"from": id, "to": id, "label": "Weight", "value": 0.1, "unit": "kg"}, ...],
     "products": [id, ...]}

Nodes are sorted by (kind, key) and edges by (from, label, to), so equal
graphs serialize to identical bytes.

Exports:

* ``graphml`` (``*.graphml``): GraphML with node data ``kind``/``display``
  and edge data ``label``/``value``/``unit``. Text is escaped as
  ``&`` → ``&amp;``, ``<`` → ``&lt;``, ``>`` → ``&gt;``, ``"`` → ``&quot;``,
  ``'`` → ``&apos;``, tab/LF/CR → ``&#9;``/``&#10;``/``&#13;``; other C0
  control characters cannot appear in XML 1.0 and become U+FFFD.
* ``statements`` (``*.cypher``): one Cypher statement per line, a MERGE per
  node followed by a MATCH…MERGE per edge. String literals are double-quoted
  with ``\\``, ``\"``, ``\n``, ``\r``, ``\t`` escapes and ``\uXXXX`` for other
  control characters; relationship types are backtick-quoted with embedded
  backticks doubled.
"""

from __future__ import annotations

import json
import math
from typing import Any

from prodkg.errors import EmptyLabel, InvariantViolation, ParseError, VersionMismatch
from prodkg.graph import Edge, InventoryGraph, NodeKey, NodeKind, normalize_label

FORMAT_VERSION = "prodkg-graph/1"

NODE_LABELS = {NodeKind.PRODUCT: "Product", NodeKind.VALUE: "PropertyValue", NodeKind.CATEGORY: "Category"}


def _sorted_nodes(inventory: InventoryGraph) -> list[NodeKey]:
    return sorted(inventory.nodes, key=lambda k: k.sort_key)


def _sorted_edges(inventory: InventoryGraph) -> list[Edge]:
    return sorted(inventory.edges.values(), key=lambda e: e.sort_key)


def to_document(inventory: InventoryGraph) -> dict[str, Any]:
    nodes = [
        {"id": k.ident, "kind": k.kind.value, "key": k.normalized, "display": inventory.nodes[k].display}
        for k in _sorted_nodes(inventory)
    ]
    edges = []
    for e in _sorted_edges(inventory):
        item: dict[str, Any] = {"from": e.src.ident, "to": e.dst.ident, "label": e.label}
        if e.value is not None:
            item["value"] = e.value
        if e.unit is not None:
            item["unit"] = e.unit
        edges.append(item)
    products = sorted(k.ident for k in inventory.products)
    return {"format_version": FORMAT_VERSION, "nodes": nodes, "edges": edges, "products": products}


def save(inventory: InventoryGraph) -> str:
    with inventory.lock:
        doc = to_document(inventory)
    return json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def _require(obj: dict[str, Any], name: str, kind: type, where: str) -> Any:
    if name not in obj:
        raise ParseError(f"missing {name!r}", field=where)
    value = obj[name]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ParseError(f"{name!r} must be {kind.__name__}", field=where)
    return value


def load(text: str) -> InventoryGraph:
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if not isinstance(doc, dict):
        raise ParseError("inventory document must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"expected format_version {FORMAT_VERSION!r}, got {version!r}")
    nodes = _require(doc, "nodes", list, "<top>")
    edges = _require(doc, "edges", list, "<top>")
    products = _require(doc, "products", list, "<top>")

    graph = InventoryGraph()
    by_id: dict[str, NodeKey] = {}
    for i, node in enumerate(nodes):
        where = f"nodes[{i}]"
        if not isinstance(node, dict):
            raise ParseError("node must be an object", field=where)
        ident = _require(node, "id", str, where)
        kind_name = _require(node, "kind", str, where)
        key = _require(node, "key", str, where)
        display = _require(node, "display", str, where)
        try:
            kind = NodeKind(kind_name)
        except ValueError:
            raise InvariantViolation(f"{where}: unknown node kind {kind_name!r}") from None
        try:
            normalized = normalize_label(display)
        except EmptyLabel:
            raise InvariantViolation(f"{where}: display label {display!r} is empty") from None
        if normalized != key:
            raise InvariantViolation(f"{where}: key {key!r} does not match display {display!r}")
        node_key = NodeKey(key, kind, display)
        if ident != node_key.ident:
            raise InvariantViolation(f"{where}: id {ident!r} should be {node_key.ident!r}")
        if ident in by_id:
            raise InvariantViolation(f"{where}: duplicate node {ident!r}")
        by_id[ident] = node_key
        graph.add_node(node_key)

    seen_edges: set[tuple[str, str, str]] = set()
    for i, edge in enumerate(edges):
        where = f"edges[{i}]"
        if not isinstance(edge, dict):
            raise ParseError("edge must be an object", field=where)
        src = _require(edge, "from", str, where)
        dst = _require(edge, "to", str, where)
        label = _require(edge, "label", str, where)
        for end in (src, dst):
            if end not in by_id:
                raise InvariantViolation(f"{where}: edge endpoint {end!r} is not a node")
        triple = (src, label, dst)
        if triple in seen_edges:
            raise InvariantViolation(f"{where}: duplicate edge {triple}")
        seen_edges.add(triple)
        value = edge.get("value")
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ParseError("'value' must be a number", field=where)
        unit = edge.get("unit")
        if unit is not None and not isinstance(unit, str):
            raise ParseError("'unit' must be a string", field=where)
        graph.add_edge(Edge(by_id[src], by_id[dst], label, value, unit))

    product_ids = set()
    for ident in products:
        if not isinstance(ident, str) or ident not in by_id or by_id[ident].kind is not NodeKind.PRODUCT:
            raise InvariantViolation(f"products entry {ident!r} is not a product node")
        product_ids.add(by_id[ident])
    if product_ids != graph.products:
        raise InvariantViolation("products list does not match the product nodes")
    graph.ops.clear()
    return graph


# --- GraphML -------------------------------------------------------------------

_XML_ESCAPES = {
    "&": "&amp;",
    "<": "&lt;",
    ">": "&gt;",
    '"': "&quot;",
    "'": "&apos;",
    "\t": "&#9;",
    "\n": "&#10;",
    "\r": "&#13;",
}


def xml_escape(text: str) -> str:
    out = []
    for ch in text:
        if ch in _XML_ESCAPES:
            out.append(_XML_ESCAPES[ch])
        elif ord(ch) < 0x20 or 0xD800 <= ord(ch) <= 0xDFFF or ch in "\ufffe\uffff":
            out.append("\ufffd")
        else:
            out.append(ch)
    return "".join(out)


def _number(value: int | float) -> str:
    if isinstance(value, float) and not math.isfinite(value):
        raise InvariantViolation(f"non-finite edge value {value}")
    return repr(value)


def to_graphml(inventory: InventoryGraph) -> str:
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns"'
        ' xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance"'
        ' xsi:schemaLocation="http://graphml.graphdrawing.org/xmlns'
        ' http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd">',
        '  <key id="kind" for="node" attr.name="kind" attr.type="string"/>',
        '  <key id="display" for="node" attr.name="display" attr.type="string"/>',
        '  <key id="label" for="edge" attr.name="label" attr.type="string"/>',
        '  <key id="value" for="edge" attr.name="value" attr.type="double"/>',
        '  <key id="unit" for="edge" attr.name="unit" attr.type="string"/>',
        '  <graph id="inventory" edgedefault="directed">',
    ]
    with inventory.lock:
        nodes = _sorted_nodes(inventory)
        edges = _sorted_edges(inventory)
        displays = {k: inventory.nodes[k].display for k in nodes}
    for k in nodes:
        lines.append(
            f'    <node id="{xml_escape(k.ident)}">'
            f'<data key="kind">{k.kind.value}</data>'
            f'<data key="display">{xml_escape(displays[k])}</data></node>'
        )
    for i, e in enumerate(edges):
        data = f'<data key="label">{xml_escape(e.label)}</data>'
        if e.value is not None:
            data += f'<data key="value">{_number(e.value)}</data>'
        if e.unit is not None:
            data += f'<data key="unit">{xml_escape(e.unit)}</data>'
        lines.append(
            f'    <edge id="e{i}" source="{xml_escape(e.src.ident)}" target="{xml_escape(e.dst.ident)}">{data}</edge>'
        )
    lines += ["  </graph>", "</graphml>"]
    return "\n".join(lines) + "\n"


# --- Cypher statements -----------------------------------------------------------

_CYPHER_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def cypher_string(text: str) -> str:
    out = []
    for ch in text:
        if ch in _CYPHER_ESCAPES:
            out.append(_CYPHER_ESCAPES[ch])
        elif ord(ch) < 0x20 or ord(ch) == 0x7F:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return '"' + "".join(out) + '"'


def cypher_identifier(name: str) -> str:
    return "`" + name.replace("`", "``") + "`"


def _match(var: str, key: NodeKey) -> str:
    return f"({var}:{NODE_LABELS[key.kind]} {{key: {cypher_string(key.normalized)}}})"


def to_statements(inventory: InventoryGraph) -> str:
    with inventory.lock:
        nodes = _sorted_nodes(inventory)
        edges = _sorted_edges(inventory)
        displays = {k: inventory.nodes[k].display for k in nodes}
    lines = [
        f"MERGE {_match('n', k)} ON CREATE SET n.display = {cypher_string(displays[k])};" for k in nodes
    ]
    for e in edges:
        line = f"MATCH {_match('a', e.src)}, {_match('b', e.dst)} MERGE (a)-[r:{cypher_identifier(e.label)}]->(b)"
        sets = []
        if e.value is not None:
            sets.append(f"r.value = {_number(e.value)}")
        if e.unit is not None:
            sets.append(f"r.unit = {cypher_string(e.unit)}")
        if sets:
            line += " ON CREATE SET " + ", ".join(sets)
        lines.append(line + ";")
    return "".join(line + "\n" for line in lines)


EXPORT_FORMATS = {"graphml": to_graphml, "statements": to_statements}


def export(inventory: InventoryGraph, format: str) -> str:
    try:
        writer = EXPORT_FORMATS[format]
    except KeyError:
        raise ValueError(f"unknown export format {format!r}; choose from {sorted(EXPORT_FORMATS)}") from None
    return writer(inventory)
