"""Schema → generation pattern compilation and strict output validation.

The rendered pattern matches exactly one JSON object whose keys are the
schema's property names in schema order. It sticks to the regex subset
that constrained-decoding servers accept: literals, character classes,
alternation, groups, bounded and unbounded repetition, and ``^``/``$``
anchors. No lookaround, no backreferences, no flags.

Value patterns:

* int     ``-?(?:0|[1-9][0-9]{0,17})``
* float   the int pattern plus an optional ``.`` and 1-17 digits
* str     a JSON string of 1-512 characters or escape sequences
* choices one of the labels, verbatim

Whitespace (space, tab, CR, LF) is allowed between any two tokens.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Mapping, Union

from prodkg.errors import (
    ExtraField,
    MalformedObject,
    MissingField,
    TypeMismatch,
    UnknownChoice,
)
from prodkg.schema import PropertySchema, PropertySpec, TypeKind

STR_MAX = 512

WS = r"[ \t\n\r]*"
INT_PATTERN = r"-?(?:0|[1-9][0-9]{0,17})"
FLOAT_PATTERN = INT_PATTERN + r"(?:\.[0-9]{1,17})?"
# Unicode escapes exclude the surrogate range D800-DFFF.
_STR_UNIT = (
    r'(?:[^"\\\x00-\x1f]|\\["\\/bfnrt]'
    r"|\\u(?:[0-9a-cA-Ce-fE-F][0-9a-fA-F]{3}|[dD][0-7][0-9a-fA-F]{2}))"
)
STR_PATTERN = '"' + _STR_UNIT + "{1," + str(STR_MAX) + '}"'

_SPECIAL = set("\\.^$|?*+()[]{}")


def regex_literal(text: str) -> str:
    return "".join("\\" + ch if ch in _SPECIAL else ch for ch in text)


def _json_string_literal(text: str) -> str:
    return '"' + regex_literal(json.dumps(text, ensure_ascii=False)[1:-1]) + '"'


def value_pattern(spec: PropertySpec) -> str:
    if spec.kind is TypeKind.INT:
        return INT_PATTERN
    if spec.kind is TypeKind.FLOAT:
        return FLOAT_PATTERN
    if spec.kind is TypeKind.STR:
        return STR_PATTERN
    return "(?:" + "|".join(_json_string_literal(label) for label in spec.choices) + ")"


@lru_cache(maxsize=64)
def _compiled(pattern: str) -> re.Pattern[str]:
    return re.compile(pattern)


@dataclass(frozen=True)
class GenerationConstraint:
    field_patterns: tuple[tuple[str, str], ...]
    rendered_pattern: str

    def matches(self, text: str) -> bool:
        return _compiled(self.rendered_pattern).fullmatch(text) is not None


def compile_constraint(schema: PropertySchema) -> GenerationConstraint:
    field_patterns = tuple((spec.name, value_pattern(spec)) for spec in schema.all_properties)
    members = [
        _json_string_literal(name) + WS + ":" + WS + pattern for name, pattern in field_patterns
    ]
    body = (WS + "," + WS).join(members)
    rendered = "^" + WS + r"\{" + WS + body + WS + r"\}" + WS + "$"
    return GenerationConstraint(field_patterns, rendered)


# --- assignments --------------------------------------------------------------


class Provenance(str, enum.Enum):
    CONSTRAINED = "constrained"
    BASELINE_TRIPLES = "baseline_triples"


class _AbsentType:
    """Marker for a property the model never produced."""

    _instance = None

    def __new__(cls) -> _AbsentType:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False


ABSENT = _AbsentType()


@dataclass(frozen=True)
class Unparsed:
    """Model text kept for scoring although it fits the property's type."""

    text: str


Value = Union[int, float, str, Unparsed, _AbsentType]


@dataclass(frozen=True)
class PropertyAssignment:
    values: Mapping[str, Value]
    provenance: Provenance = Provenance.CONSTRAINED

    def __getitem__(self, name: str) -> Value:
        return self.values[name]

    def is_complete(self) -> bool:
        return not any(isinstance(v, (Unparsed, _AbsentType)) for v in self.values.values())

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name, value in self.values.items():
            if value is ABSENT:
                out[name] = None
            elif isinstance(value, Unparsed):
                out[name] = {"unparsed": value.text}
            else:
                out[name] = value
        return {"provenance": self.provenance.value, "values": out}

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> PropertyAssignment:
        values: dict[str, Value] = {}
        for name, value in doc["values"].items():
            if value is None:
                values[name] = ABSENT
            elif isinstance(value, dict):
                values[name] = Unparsed(value["unparsed"])
            else:
                values[name] = value
        return cls(values, Provenance(doc.get("provenance", Provenance.CONSTRAINED.value)))


def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in pairs:
        if key in out:
            raise MalformedObject(f"duplicate key {key!r}")
        out[key] = value
    return out


def _reject_constant(name: str) -> Any:
    raise MalformedObject(f"non-finite number {name}")


def _has_surrogate(text: str) -> bool:
    return any("\ud800" <= ch <= "\udfff" for ch in text)


def match_choice(spec: PropertySpec, text: str) -> str | None:
    folded = text.strip().casefold()
    for label in spec.choices:
        if label.casefold() == folded:
            return label
    return None


def _typed_value(spec: PropertySpec, value: Any) -> Value:
    kind = spec.kind
    name = spec.name
    if kind is TypeKind.INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatch(name, "integer", value)
        return value
    if kind is TypeKind.FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatch(name, "number", value)
        value = float(value)
        if not math.isfinite(value):
            raise TypeMismatch(name, "finite number", value)
        return value
    if not isinstance(value, str):
        raise TypeMismatch(name, "string", value)
    if kind is TypeKind.STR:
        if not value or len(value) > STR_MAX or _has_surrogate(value):
            raise TypeMismatch(name, f"string of 1-{STR_MAX} characters", value)
        return value
    label = match_choice(spec, value)
    if label is None:
        raise UnknownChoice(name, value, spec.choices)
    return label


def validate_output(raw: str, schema: PropertySchema) -> PropertyAssignment:
    """Parse model output strictly; errors name the offending field."""
    try:
        obj = json.loads(raw, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)
    except MalformedObject:
        raise
    except (ValueError, TypeError) as exc:
        raise MalformedObject(str(exc)) from None
    if not isinstance(obj, dict):
        raise MalformedObject(f"top-level value is {type(obj).__name__}")
    for key in obj:
        if key not in schema:
            raise ExtraField(key)
    for name in schema.names:
        if name not in obj:
            raise MissingField(name)
    values = {spec.name: _typed_value(spec, obj[spec.name]) for spec in schema.all_properties}
    return PropertyAssignment(values, Provenance.CONSTRAINED)


_LEADING_NUMBER = re.compile(r"\s*\$?\s*(-?\d+(?:\.\d+)?)")


def lenient_assignment(objects: Mapping[str, str | None], schema: PropertySchema) -> PropertyAssignment:
    """Best-effort typing of free-text objects; nothing is dropped.

    Text that does not fit the property's type is kept as ``Unparsed`` and
    properties with no object at all become ``ABSENT``.
    """
    values: dict[str, Value] = {}
    for spec in schema.all_properties:
        text = objects.get(spec.name)
        if text is None or not text.strip():
            values[spec.name] = ABSENT
            continue
        text = text.strip()
        if spec.kind.numeric:
            m = _LEADING_NUMBER.match(text)
            if m is None:
                values[spec.name] = Unparsed(text)
            elif spec.kind is TypeKind.INT:
                number = float(m.group(1))
                values[spec.name] = int(number) if number.is_integer() else Unparsed(text)
            else:
                values[spec.name] = float(m.group(1))
        elif spec.kind is TypeKind.CHOICES:
            label = match_choice(spec, text)
            values[spec.name] = label if label is not None else Unparsed(text)
        else:
            values[spec.name] = text
    return PropertyAssignment(values, Provenance.BASELINE_TRIPLES)


_TYPE_WORD = {TypeKind.INT: "int", TypeKind.FLOAT: "float", TypeKind.STR: "string", TypeKind.CHOICES: "choices"}


def schema_prompt_text(schema: PropertySchema) -> str:
    lines = []
    for spec in schema.all_properties:
        line = f"{spec.name}: {_TYPE_WORD[spec.kind]}"
        if spec.unit:
            line += f" ({spec.unit})"
        if spec.kind is TypeKind.CHOICES:
            line += " [" + ", ".join(spec.choices) + "]"
        lines.append(line)
    return "\n".join(lines)
