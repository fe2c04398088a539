"""Product subgraphs, the inventory graph, and lexical node merging.

Nodes are identified by ``(normalized label, kind)``. The normalized label
lowercases the display text, splits it into word and number tokens and
sorts them, so "Dark Chocolate" and "chocolate, DARK" become the same node
while "0.5 kg" and "5.0 kg" stay apart. Merging never crosses kinds: a
product called "Chocolate" does not absorb the category "Chocolate".
"""

from __future__ import annotations

import enum
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from prodkg.constraints import ABSENT, PropertyAssignment, Unparsed
from prodkg.errors import ChainEndpointMismatch, EmptyLabel, InvalidSubgraph
from prodkg.schema import PropertySchema, TypeKind

IS_A = "is_a"

# Numbers keep their sign and decimal point; everything else that is not a
# letter or digit separates tokens.
_TOKEN = re.compile(r"-?\d+(?:\.\d+)*|[^\W_]+")


def normalize_label(display: str) -> str:
    tokens = _TOKEN.findall(display.lower())
    if not tokens:
        raise EmptyLabel(f"label {display!r} has no words")
    return " ".join(sorted(tokens))


class NodeKind(str, enum.Enum):
    CATEGORY = "category"
    PRODUCT = "product"
    VALUE = "value"


@dataclass(frozen=True)
class NodeKey:
    normalized: str
    kind: NodeKind
    display: str = field(default="", compare=False)

    @classmethod
    def of(cls, display: str, kind: NodeKind) -> NodeKey:
        return cls(normalize_label(display), NodeKind(kind), display.strip())

    @property
    def sort_key(self) -> tuple[str, str]:
        return (self.kind.value, self.normalized)

    @property
    def ident(self) -> str:
        return f"{self.kind.value}:{self.normalized}"


@dataclass(frozen=True)
class Edge:
    src: NodeKey
    dst: NodeKey
    label: str
    value: int | float | None = field(default=None, compare=False)
    unit: str | None = field(default=None, compare=False)

    @property
    def triple(self) -> tuple[NodeKey, str, NodeKey]:
        return (self.src, self.label, self.dst)

    @property
    def sort_key(self) -> tuple[tuple[str, str], str, tuple[str, str]]:
        return (self.src.sort_key, self.label, self.dst.sort_key)


@dataclass(frozen=True)
class ProductSubgraph:
    root: NodeKey
    property_edges: tuple[Edge, ...]
    hierarchy_chains: tuple[tuple[NodeKey, ...], ...] = ()
    anchor_value: NodeKey | None = None

    def chain_edges(self) -> list[Edge]:
        edges = []
        for chain in self.hierarchy_chains:
            for a, b in zip(chain, chain[1:]):
                # The direct product → anchor link is the anchor property edge.
                if a.kind is NodeKind.PRODUCT and b == self.anchor_value:
                    continue
                edges.append(Edge(a, b, IS_A))
        return edges

    def edges(self) -> list[Edge]:
        return list(self.property_edges) + self.chain_edges()

    def nodes(self) -> list[NodeKey]:
        seen: dict[NodeKey, None] = {self.root: None}
        for e in self.property_edges:
            seen.setdefault(e.dst, None)
        for chain in self.hierarchy_chains:
            for key in chain:
                seen.setdefault(key, None)
        return list(seen)

    def check(self) -> None:
        if self.root.kind is not NodeKind.PRODUCT:
            raise InvalidSubgraph("subgraph root must be a product node")
        labels = [e.label for e in self.property_edges]
        if len(set(labels)) != len(labels):
            raise InvalidSubgraph("more than one edge for the same property")
        for e in self.property_edges:
            if e.src != self.root or e.label == IS_A:
                raise InvalidSubgraph("property edges must start at the product root")
        for chain in self.hierarchy_chains:
            if len(chain) < 2 or chain[0] != self.root or chain[-1] != self.anchor_value:
                raise InvalidSubgraph("hierarchy chains must run from the root to the anchor value")
            if len(set(chain)) != len(chain):
                raise InvalidSubgraph("hierarchy chain repeats a node")


@dataclass
class NodeRecord:
    key: NodeKey
    display: str
    in_degree: int = 0
    out_degree: int = 0

    @property
    def kind(self) -> NodeKind:
        return self.key.kind


@dataclass(frozen=True)
class KindConflict:
    """A product label collided with a non-product label; kept apart."""

    normalized: str
    existing: NodeKind
    incoming: NodeKind


class InventoryGraph:
    """The accumulated graph. Mutated only through ``merge_subgraph``.

    ``ops`` counts node and edge upserts so tests can check that merging a
    product costs the same regardless of how large the inventory is.
    """

    def __init__(self) -> None:
        self.nodes: dict[NodeKey, NodeRecord] = {}
        self.edges: dict[tuple[NodeKey, str, NodeKey], Edge] = {}
        self.products: set[NodeKey] = set()
        self.conflicts: set[KindConflict] = set()
        self.ops: Counter[str] = Counter()
        self._kinds: dict[str, set[NodeKind]] = {}
        self.lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InventoryGraph):
            return NotImplemented
        return (
            self._node_view() == other._node_view()
            and self._edge_view() == other._edge_view()
            and self.products == other.products
        )

    __hash__ = None  # type: ignore[assignment]

    def _node_view(self) -> dict[tuple[str, str], str]:
        return {k.sort_key: r.display for k, r in self.nodes.items()}

    def _edge_view(self) -> dict[tuple, tuple]:
        return {e.sort_key: (e.value, e.unit) for e in self.edges.values()}

    def node_keys(self) -> set[tuple[str, str]]:
        return {k.sort_key for k in self.nodes}

    def edge_triples(self) -> set[tuple]:
        return {e.sort_key for e in self.edges.values()}

    def get(self, display: str, kind: NodeKind) -> NodeRecord | None:
        return self.nodes.get(NodeKey.of(display, kind))

    def out_edges(self, key: NodeKey) -> Iterator[Edge]:
        # Full scan; lookups are for reporting, not for the merge path.
        return (e for e in self.edges.values() if e.src == key)

    def copy(self) -> InventoryGraph:
        other = InventoryGraph()
        other.nodes = {k: NodeRecord(r.key, r.display, r.in_degree, r.out_degree) for k, r in self.nodes.items()}
        other.edges = dict(self.edges)
        other.products = set(self.products)
        other.conflicts = set(self.conflicts)
        other._kinds = {k: set(v) for k, v in self._kinds.items()}
        return other

    # -- mutation (callers hold ``lock`` when sharing the graph) ---------------

    def _upsert_node(self, key: NodeKey) -> NodeKey:
        self.ops["node_upserts"] += 1
        record = self.nodes.get(key)
        if record is not None:
            return record.key
        kinds = self._kinds.setdefault(key.normalized, set())
        for existing in kinds:
            if (existing is NodeKind.PRODUCT) != (key.kind is NodeKind.PRODUCT):
                self.conflicts.add(KindConflict(key.normalized, existing, key.kind))
        kinds.add(key.kind)
        self.nodes[key] = NodeRecord(key, key.display)
        if key.kind is NodeKind.PRODUCT:
            self.products.add(key)
        return key

    def _upsert_edge(self, edge: Edge, src: NodeKey, dst: NodeKey) -> None:
        self.ops["edge_upserts"] += 1
        triple = (src, edge.label, dst)
        if triple in self.edges:
            return
        self.edges[triple] = Edge(src, dst, edge.label, edge.value, edge.unit)
        self.nodes[src].out_degree += 1
        self.nodes[dst].in_degree += 1

    def add_node(self, key: NodeKey) -> None:
        self._upsert_node(key)

    def add_edge(self, edge: Edge) -> None:
        if edge.src not in self.nodes or edge.dst not in self.nodes:
            raise InvalidSubgraph("edge endpoints must already be in the graph")
        self._upsert_edge(edge, self.nodes[edge.src].key, self.nodes[edge.dst].key)


def merge_subgraph(inventory: InventoryGraph, sub: ProductSubgraph) -> InventoryGraph:
    """Add ``sub`` to ``inventory`` in place, unifying equal-key nodes.

    The subgraph is checked before anything is written, so a bad subgraph
    leaves the inventory untouched. Existing display labels win.
    """
    sub.check()
    canonical: dict[NodeKey, NodeKey] = {}
    for key in sub.nodes():
        canonical[key] = inventory._upsert_node(key)
    for edge in sub.edges():
        inventory._upsert_edge(edge, canonical[edge.src], canonical[edge.dst])
    return inventory


def format_number(value: int | float) -> str:
    if isinstance(value, float) and value.is_integer() and abs(value) < 1e16:
        return f"{value:.1f}"
    return repr(value)


def subgraph_from_assignment(
    assignment: PropertyAssignment,
    chains: Sequence[Sequence[str]],
    schema: PropertySchema,
) -> ProductSubgraph:
    for name, value in assignment.values.items():
        if value is ABSENT or isinstance(value, Unparsed):
            raise InvalidSubgraph(f"property {name!r} has no usable value")
    root = NodeKey.of(str(assignment[schema.root_property.name]), NodeKind.PRODUCT)
    edges = []
    anchor_value: NodeKey | None = None
    for spec in schema.properties:
        value = assignment[spec.name]
        if spec.kind.numeric:
            display = f"{format_number(value)} {spec.unit}"
            edge = Edge(root, NodeKey.of(display, NodeKind.VALUE), spec.name, value, spec.unit)
        else:
            edge = Edge(root, NodeKey.of(str(value), NodeKind.VALUE), spec.name)
        edges.append(edge)
        if spec.name == schema.anchor:
            anchor_value = edge.dst

    built: list[tuple[NodeKey, ...]] = []
    for labels in chains:
        if anchor_value is None:
            raise ChainEndpointMismatch("schema has no hierarchy anchor, so chains are not allowed")
        if len(labels) < 2:
            raise ChainEndpointMismatch(f"chain {list(labels)} is too short")
        if NodeKey.of(labels[0], NodeKind.PRODUCT) != root:
            raise ChainEndpointMismatch(f"chain starts at {labels[0]!r}, not the product {root.display!r}")
        if NodeKey.of(labels[-1], NodeKind.VALUE) != anchor_value:
            raise ChainEndpointMismatch(
                f"chain ends at {labels[-1]!r}, not the anchor value {anchor_value.display!r}"
            )
        keys = [root] + [NodeKey.of(label, NodeKind.CATEGORY) for label in labels[1:-1]] + [anchor_value]
        deduped = [k for i, k in enumerate(keys) if i == 0 or k != keys[i - 1]]
        built.append(tuple(deduped))
    sub = ProductSubgraph(root, tuple(edges), tuple(built), anchor_value)
    sub.check()
    return sub


def scan_duplicates(inventory: InventoryGraph) -> list[tuple[str, str]]:
    """Full scan for nodes sharing (normalized, kind); should always be empty."""
    counts = Counter((r.kind.value, normalize_label(r.display)) for r in inventory.nodes.values())
    return sorted(key for key, n in counts.items() if n > 1)


def chain_labels(inventory: InventoryGraph, chain: Iterable[NodeKey]) -> list[str]:
    return [inventory.nodes[k].display for k in chain]
