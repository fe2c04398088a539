"""Property schemas, schema induction, and the schema file format.

A schema is an ordered list of typed product properties under a root
"product name" property. Induction asks a language model to (1) list the
properties worth recording, (2) pick a data type for each by argmax over
{int, float, str, choices}, (3) guess a unit for numeric properties from
the continuation of "<property> of a product could be 5 ", and (4) propose
choice labels, always closed by the "Others" catch-all.
"""

from __future__ import annotations

import enum
import logging
import re
import string
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence, TypeVar

import yaml

from prodkg.errors import (
    EmptyResult,
    EmptyUnit,
    InductionError,
    InvalidInput,
    ParseError,
    SchemaInvariantViolation,
    TooFewChoices,
    UnparseableTypeLabel,
)
from prodkg.model_client import ChatExchange, ModelBackend
from prodkg.prompts import render

log = logging.getLogger(__name__)

CATCH_ALL = "Others"
ROOT_NAME = "Product Name"


class TypeKind(str, enum.Enum):
    # Declaration order is the argmax tie-break order.
    INT = "int"
    FLOAT = "float"
    STR = "str"
    CHOICES = "choices"

    @property
    def numeric(self) -> bool:
        return self in (TypeKind.INT, TypeKind.FLOAT)


TYPE_ORDER: tuple[TypeKind, ...] = tuple(TypeKind)


@dataclass(frozen=True)
class DataType:
    kind: TypeKind
    choices: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TypeKind(self.kind))
        if self.kind is TypeKind.CHOICES:
            # An empty tuple is the placeholder handed out by infer_data_type.
            object.__setattr__(self, "choices", tuple(self.choices or ()))
        elif self.choices is not None:
            raise SchemaInvariantViolation(f"{self.kind.value} data type cannot carry choices")

    @classmethod
    def of(cls, kind: str | TypeKind, choices: Iterable[str] | None = None) -> DataType:
        return cls(TypeKind(kind), tuple(choices) if choices is not None else None)


_CONTROL = re.compile(r"[\x00-\x1f\x7f]")


@dataclass(frozen=True)
class PropertySpec:
    name: str
    data_type: DataType
    unit: str | None = None

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise SchemaInvariantViolation("property name must be non-empty")
        if _CONTROL.search(self.name):
            raise SchemaInvariantViolation(f"property name {self.name!r} contains control characters")
        kind = self.data_type.kind
        if kind.numeric and not self.unit:
            raise SchemaInvariantViolation(f"numeric property {self.name!r} needs a unit")
        if not kind.numeric and self.unit is not None:
            raise SchemaInvariantViolation(f"{kind.value} property {self.name!r} cannot have a unit")
        if kind is TypeKind.CHOICES:
            _check_choice_list(self.name, self.data_type.choices or ())

    @property
    def kind(self) -> TypeKind:
        return self.data_type.kind

    @property
    def choices(self) -> tuple[str, ...]:
        return self.data_type.choices or ()

    def type_text(self) -> str:
        text = self.kind.value
        if self.unit:
            text += f" ({self.unit})"
        return text


def _check_choice_list(name: str, labels: Sequence[str]) -> None:
    if not labels:
        raise SchemaInvariantViolation(f"choices property {name!r} has no labels")
    if labels[-1] != CATCH_ALL:
        raise SchemaInvariantViolation(f"choices of {name!r} must end with {CATCH_ALL!r}")
    seen: set[str] = set()
    for label in labels:
        if not label.strip() or _CONTROL.search(label):
            raise SchemaInvariantViolation(f"choices of {name!r} contain an invalid label {label!r}")
        folded = label.casefold()
        if folded in seen:
            raise SchemaInvariantViolation(f"choices of {name!r} repeat {label!r}")
        seen.add(folded)


@dataclass(frozen=True)
class PropertySchema:
    root_property: PropertySpec
    properties: tuple[PropertySpec, ...]
    anchor: str | None = None
    _by_name: dict[str, PropertySpec] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "properties", tuple(self.properties))
        if self.root_property.kind is not TypeKind.STR:
            raise SchemaInvariantViolation("the root property must be of type str")
        seen: set[str] = set()
        for spec in self.all_properties:
            folded = spec.name.casefold()
            if folded in seen:
                raise SchemaInvariantViolation(f"duplicate property name {spec.name!r}")
            seen.add(folded)
        by_name = {p.name: p for p in self.all_properties}
        object.__setattr__(self, "_by_name", by_name)
        if self.anchor is not None:
            spec = by_name.get(self.anchor)
            if spec is None or spec is self.root_property:
                raise SchemaInvariantViolation(f"hierarchy anchor {self.anchor!r} is not a schema property")
            if spec.kind is not TypeKind.CHOICES:
                raise SchemaInvariantViolation(f"hierarchy anchor {self.anchor!r} must be a choices property")

    @property
    def all_properties(self) -> tuple[PropertySpec, ...]:
        return (self.root_property, *self.properties)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.all_properties)

    @property
    def anchor_property(self) -> PropertySpec | None:
        return self._by_name[self.anchor] if self.anchor is not None else None

    def __getitem__(self, name: str) -> PropertySpec:
        return self._by_name[name]

    def __contains__(self, name: object) -> bool:
        return name in self._by_name


# --- default schema ---------------------------------------------------------

_CATEGORY = (
    "Electronics", "Fashion", "Home and Kitchen", "Beauty and Personal Care", "Food and Beverages",
    "Sports and Outdoors", "Baby and Kids Products", "Health and Wellness", "Automotive",
    "Arts and Crafts", "Pet Products", "Office and School Supplies", "Industrial and Scientific",
    "Musical Instruments", "Toys and Games", "Others",
)  # fmt: skip
_COLOR = (
    "White", "Black", "Gray", "Beige", "Brown", "Tan", "Green", "Red", "Blue", "Yellow",
    "Light Blue", "Pink", "Baby Blue", "Mint Green", "Silver", "Gold", "Copper", "Purple",
    "Orange", "Turquoise", "Others",
)  # fmt: skip
_MATERIAL = (
    "Plastic", "Paper", "Cardboard", "Glass", "Metal", "Wood", "Fabric", "Foam", "Bamboo",
    "Bioplastic", "Molded Pulp", "Corrugated", "Others",
)  # fmt: skip
_SHAPE = (
    "Rectangular", "Cylindrical", "Spherical", "Oval", "Triangular", "Irregular", "Flat",
    "Tubular", "Conical", "Geometric", "Others",
)  # fmt: skip


def default_schema() -> PropertySchema:
    """The eight-property product schema used for the benchmark."""
    return PropertySchema(
        root_property=PropertySpec(ROOT_NAME, DataType(TypeKind.STR)),
        properties=(
            PropertySpec("Category", DataType(TypeKind.CHOICES, _CATEGORY)),
            PropertySpec("Brand", DataType(TypeKind.STR)),
            PropertySpec("Price", DataType(TypeKind.FLOAT), unit="USD"),
            PropertySpec("Primary Package Color", DataType(TypeKind.CHOICES, _COLOR)),
            PropertySpec("Package Material", DataType(TypeKind.CHOICES, _MATERIAL)),
            PropertySpec("Package Shape", DataType(TypeKind.CHOICES, _SHAPE)),
            PropertySpec("Weight", DataType(TypeKind.FLOAT), unit="kg"),
        ),
        anchor="Category",
    )


# --- induction ---------------------------------------------------------------

T = TypeVar("T")


def dedup_casefold(items: Iterable[str]) -> list[str]:
    """Drop case-insensitive repeats, keeping the first spelling."""
    seen: set[str] = set()
    out: list[str] = []
    for item in items:
        key = item.casefold()
        if key not in seen:
            seen.add(key)
            out.append(item)
    return out


_BULLET = re.compile(r"^\s*(?:[-*•]+|\d+[.)])\s*")


def split_list_reply(reply: str) -> list[str]:
    """Split a comma/newline separated model reply into clean items."""
    items = []
    for line in reply.splitlines():
        line = _BULLET.sub("", line)
        for part in line.split(","):
            part = part.strip().strip("\"'`").strip().rstrip(".").strip()
            if part:
                items.append(part)
    return items


def _ask_with_retry(
    llm: ModelBackend,
    exchange: ChatExchange,
    parse: Callable[[str], T],
    failure: type[InductionError],
) -> T:
    """Run ``exchange``; on a parse failure ask once more with the error text."""
    reply = llm.complete(exchange)[0]
    try:
        return parse(reply)
    except InductionError as exc:
        log.info("retrying induction step after unusable reply: %s", exc)
        retry = exchange.followed_by(reply, render("induction_retry", error=str(exc)))
    reply = llm.complete(retry)[0]
    try:
        return parse(reply)
    except InductionError as exc:
        raise failure(f"{exc} (after one retry)") from exc


def identify_properties(
    mode: str,
    seed_list: Sequence[str] | None = None,
    llm: ModelBackend | None = None,
    *,
    temperature: float = 0.0,
) -> list[str]:
    mode = mode.lower()
    if mode == "manual":
        if not seed_list:
            raise InvalidInput("manual mode needs a non-empty property list")
        return dedup_casefold(s.strip() for s in seed_list if s.strip())
    if mode != "auto":
        raise InvalidInput(f"unknown mode {mode!r}")
    if llm is None:
        raise InvalidInput("auto mode needs a language model backend")

    def parse(reply: str) -> list[str]:
        names = dedup_casefold(split_list_reply(reply))
        if not names:
            raise EmptyResult("no property names in reply")
        return names

    exchange = ChatExchange.start(render("identify_properties"), temperature=temperature)
    return _ask_with_retry(llm, exchange, parse, EmptyResult)


def pick_type(scores: dict[str, float]) -> TypeKind | None:
    """Argmax over the four type labels; first in TYPE_ORDER wins ties."""
    folded = {k.strip().lower(): v for k, v in scores.items()}
    best: TypeKind | None = None
    best_score = float("-inf")
    for kind in TYPE_ORDER:
        score = folded.get(kind.value)
        if score is not None and score > best_score:
            best, best_score = kind, score
    return best


_TYPE_WORDS = {
    TypeKind.INT: ("int",),
    TypeKind.FLOAT: ("float",),
    TypeKind.STR: ("str",),
    TypeKind.CHOICES: ("choice",),
}


def type_from_text(reply: str) -> TypeKind:
    text = reply.lower()
    for kind in TYPE_ORDER:
        if any(word in text for word in _TYPE_WORDS[kind]):
            return kind
    raise UnparseableTypeLabel(f"none of int/float/str/choices in {reply.strip()[:80]!r}")


def infer_data_type(property_name: str, llm: ModelBackend) -> DataType:
    if not property_name.strip():
        raise InvalidInput("property name must be non-empty")
    exchange = ChatExchange.start(render("data_type", property=property_name), temperature=0.0)
    labels = tuple(k.value for k in TYPE_ORDER)
    kind = None
    scores = llm.score_labels(exchange, labels)
    if scores:
        kind = pick_type(scores)
    if kind is None:
        kind = _ask_with_retry(llm, exchange, type_from_text, UnparseableTypeLabel)
    return DataType(kind, () if kind is TypeKind.CHOICES else None)


_STRIP_PUNCT = string.punctuation + "‘’“”"


def unit_from_continuation(reply: str) -> str:
    for token in reply.split():
        token = token.strip(_STRIP_PUNCT)
        if token:
            return token
    raise EmptyUnit(f"no unit token in {reply!r}")


def infer_unit(property_name: str, llm: ModelBackend) -> str:
    exchange = ChatExchange.start(
        render("unit", property=property_name), system=render("unit_system"), temperature=0.0
    )
    return _ask_with_retry(llm, exchange, unit_from_continuation, EmptyUnit)


def canonical_choices(labels: Iterable[str]) -> list[str]:
    """Dedup labels and close the list with the single catch-all label."""
    out = [
        label
        for label in dedup_casefold(label.strip() for label in labels if label.strip())
        if label.casefold() not in ("other", "others")
    ]
    out.append(CATCH_ALL)
    return out


def generate_choices(property_name: str, llm: ModelBackend, *, temperature: float = 0.0) -> list[str]:
    def parse(reply: str) -> list[str]:
        labels = canonical_choices(split_list_reply(reply))
        if len(labels) - 1 < 2:
            raise TooFewChoices(f"need at least 2 distinct labels besides {CATCH_ALL!r}, got {labels[:-1]}")
        return labels

    exchange = ChatExchange.start(render("choices", property=property_name), temperature=temperature)
    return _ask_with_retry(llm, exchange, parse, TooFewChoices)


def induce_schema(property_names: Sequence[str], llm: ModelBackend) -> PropertySchema:
    """Type every property and fill in units and choices.

    The first choices property whose name mentions "category" becomes the
    hierarchy anchor.
    """
    specs: list[PropertySpec] = []
    anchor = None
    for name in dedup_casefold(property_names):
        if name.casefold() == ROOT_NAME.casefold():
            continue
        dtype = infer_data_type(name, llm)
        if dtype.kind.numeric:
            specs.append(PropertySpec(name, dtype, unit=infer_unit(name, llm)))
        elif dtype.kind is TypeKind.CHOICES:
            specs.append(PropertySpec(name, DataType(TypeKind.CHOICES, tuple(generate_choices(name, llm)))))
            if anchor is None and "category" in name.casefold():
                anchor = name
        else:
            specs.append(PropertySpec(name, dtype))
    return PropertySchema(PropertySpec(ROOT_NAME, DataType(TypeKind.STR)), tuple(specs), anchor=anchor)


# --- schema documents --------------------------------------------------------


def _spec_to_doc(spec: PropertySpec, anchor: bool = False) -> dict[str, Any]:
    doc: dict[str, Any] = {"name": spec.name, "type": spec.kind.value}
    if spec.unit is not None:
        doc["unit"] = spec.unit
    if spec.kind is TypeKind.CHOICES:
        doc["choices"] = list(spec.choices)
    if anchor:
        doc["hierarchy_anchor"] = True
    return doc


def schema_to_dict(schema: PropertySchema) -> dict[str, Any]:
    return {
        "root_property": _spec_to_doc(schema.root_property),
        "properties": [_spec_to_doc(p, p.name == schema.anchor) for p in schema.properties],
    }


def schema_from_dict(doc: dict[str, Any]) -> PropertySchema:
    return parse_schema(yaml.safe_dump(doc, sort_keys=False, allow_unicode=True))


def serialize_schema(schema: PropertySchema) -> str:
    return yaml.safe_dump(schema_to_dict(schema), sort_keys=False, allow_unicode=True, width=100)


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


def _scalar(node: yaml.Node, fld: str, expect: type) -> Any:
    if not isinstance(node, yaml.ScalarNode):
        raise ParseError(f"expected a {expect.__name__}", line=_line(node), field=fld)
    loader = yaml.SafeLoader("")
    try:
        value = loader.construct_object(node, deep=True)
    finally:
        loader.dispose()
    if expect is str and not isinstance(value, str) and value is not None:
        # Unquoted labels such as 3D or Yes resolve to other YAML types.
        value = node.value
    if value is None or not isinstance(value, expect):
        raise ParseError(f"expected a {expect.__name__}", line=_line(node), field=fld)
    return value


_PROPERTY_KEYS = {"name", "type", "unit", "choices", "hierarchy_anchor"}


def _parse_property(node: yaml.Node, where: str) -> tuple[PropertySpec, bool]:
    if not isinstance(node, yaml.MappingNode):
        raise ParseError("expected a mapping", line=_line(node), field=where)
    fields: dict[str, yaml.Node] = {}
    for key_node, value_node in node.value:
        key = _scalar(key_node, where, str)
        if key not in _PROPERTY_KEYS:
            raise ParseError(f"unknown key {key!r}", line=_line(key_node), field=where)
        if key in fields:
            raise ParseError(f"repeated key {key!r}", line=_line(key_node), field=where)
        fields[key] = value_node
    for required in ("name", "type"):
        if required not in fields:
            raise ParseError(f"missing {required!r}", line=_line(node), field=where)
    name = _scalar(fields["name"], f"{where}.name", str)
    type_name = _scalar(fields["type"], f"{where}.type", str)
    try:
        kind = TypeKind(type_name)
    except ValueError:
        raise ParseError(
            f"type must be one of int/float/str/choices, got {type_name!r}",
            line=_line(fields["type"]),
            field=f"{name}.type",
        ) from None
    unit = _scalar(fields["unit"], f"{name}.unit", str) if "unit" in fields else None
    choices = None
    if "choices" in fields:
        seq = fields["choices"]
        if not isinstance(seq, yaml.SequenceNode):
            raise ParseError("expected a list", line=_line(seq), field=f"{name}.choices")
        choices = tuple(_scalar(item, f"{name}.choices", str) for item in seq.value)
    anchor = _scalar(fields["hierarchy_anchor"], f"{name}.hierarchy_anchor", bool) if "hierarchy_anchor" in fields else False
    try:
        spec = PropertySpec(name, DataType(kind, choices), unit)
    except SchemaInvariantViolation as exc:
        raise SchemaInvariantViolation(f"line {_line(node)}: {exc}") from None
    return spec, anchor


def parse_schema(text: str) -> PropertySchema:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(str(exc).splitlines()[0], line=mark.line + 1 if mark else None) from None
    if not isinstance(root, yaml.MappingNode):
        raise ParseError("schema document must be a mapping", line=_line(root) if root else None)
    top: dict[str, yaml.Node] = {}
    for key_node, value_node in root.value:
        key = _scalar(key_node, "<top>", str)
        if key not in ("root_property", "properties"):
            raise ParseError(f"unknown top-level key {key!r}", line=_line(key_node))
        top[key] = value_node
    for required in ("root_property", "properties"):
        if required not in top:
            raise ParseError(f"missing top-level key {required!r}", line=_line(root))
    root_spec, root_anchor = _parse_property(top["root_property"], "root_property")
    if root_anchor:
        raise SchemaInvariantViolation("the root property cannot be the hierarchy anchor")
    seq = top["properties"]
    if not isinstance(seq, yaml.SequenceNode):
        raise ParseError("expected a list", line=_line(seq), field="properties")
    specs = []
    anchors = []
    for i, item in enumerate(seq.value):
        spec, is_anchor = _parse_property(item, f"properties[{i}]")
        specs.append(spec)
        if is_anchor:
            anchors.append(spec.name)
    if len(anchors) > 1:
        raise SchemaInvariantViolation(f"more than one hierarchy anchor: {anchors}")
    return PropertySchema(root_spec, tuple(specs), anchor=anchors[0] if anchors else None)
