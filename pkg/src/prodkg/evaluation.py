"""Property-extraction benchmark: metrics, annotations, and the results table.

Categorical properties are scored by exact (case-folded) label match.
Weight is scored by accuracy@threshold on the relative error
``|pred - gt| / gt``, where a prediction counts only if its error is
strictly below the threshold. Missing predictions always count as wrong
and stay in the denominator.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from prodkg.constraints import ABSENT
from prodkg.errors import AnnotationError, ConfigError, EmptyPairs, ProdKGError
from prodkg.graph import InventoryGraph, merge_subgraph
from prodkg.pipeline import Backends, EnrollmentConfig, Mode, build_product
from prodkg.schema import PropertySchema, TypeKind, default_schema

log = logging.getLogger(__name__)

# Annotation field → schema property.
CATEGORICAL_FIELDS = {
    "category": "Category",
    "primary_package_color": "Primary Package Color",
    "package_material": "Package Material",
    "package_shape": "Package Shape",
}
WEIGHT_FIELD = "weight_kg"
WEIGHT_PROPERTY = "Weight"
THRESHOLDS = (0.01, 0.05)

COLUMNS = (
    "Primary Package Color",
    "Package Shape",
    "Package Material",
    "Category",
    "Weight (Acc@0.01)",
    "Weight (Acc@0.05)",
)

ROW_NAMES = {
    Mode.BASELINE_ZERO_SHOT: "Baseline (zero-shot)",
    Mode.BASELINE_SCHEMA: "Baseline w/ schema",
    Mode.NO_REASONING: "ours w/o reasoning",
    Mode.NO_MULTI_TURN: "ours w/o multi-turn",
    Mode.FULL: "ours",
}


@dataclass(frozen=True)
class AnnotationRecord:
    image: Path
    category: str | None
    primary_package_color: str | None
    package_material: str | None
    package_shape: str | None
    weight_kg: float | None

    def ground_truth(self, field_name: str) -> Any:
        return getattr(self, field_name)


def parse_annotation(doc: Mapping[str, Any], schema: PropertySchema, base_dir: Path | None = None) -> AnnotationRecord:
    if not isinstance(doc, Mapping):
        raise AnnotationError("annotation must be an object")
    unknown = set(doc) - {"image", WEIGHT_FIELD, *CATEGORICAL_FIELDS}
    if unknown:
        raise AnnotationError(f"unknown annotation fields {sorted(unknown)}")
    image = doc.get("image")
    if not isinstance(image, str) or not image:
        raise AnnotationError("'image' must be a non-empty path")
    path = Path(image)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    values: dict[str, Any] = {}
    for field_name, prop in CATEGORICAL_FIELDS.items():
        label = doc.get(field_name)
        if label is None:
            values[field_name] = None
            continue
        spec = schema[prop]
        canonical = next((c for c in spec.choices if isinstance(label, str) and c.casefold() == label.casefold()), None)
        if canonical is None:
            raise AnnotationError(f"{field_name}={label!r} is not one of the {prop} choices")
        values[field_name] = canonical
    weight = doc.get(WEIGHT_FIELD)
    if weight is not None:
        if isinstance(weight, bool) or not isinstance(weight, (int, float)) or not math.isfinite(weight):
            raise AnnotationError(f"{WEIGHT_FIELD} must be a number")
        if weight <= 0:
            raise AnnotationError(f"{WEIGHT_FIELD} must be > 0, got {weight}")
        weight = float(weight)
    return AnnotationRecord(path, weight_kg=weight, **values)


def load_annotations(path: str | Path, schema: PropertySchema | None = None) -> list[AnnotationRecord]:
    """JSON Lines, one record per image. Relative image paths resolve against the file."""
    path = Path(path)
    schema = schema or default_schema()
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(parse_annotation(json.loads(line), schema, path.parent))
        except (ValueError, AnnotationError) as exc:
            raise AnnotationError(f"{path}:{lineno}: {exc}") from None
    return records


# --- metrics ---------------------------------------------------------------------


@dataclass(frozen=True)
class EvalPair:
    property: str
    predicted: Any
    ground_truth: Any

    def __post_init__(self) -> None:
        if self.ground_truth is None:
            raise ValueError("ground truth must be present")

    @property
    def absent(self) -> bool:
        return self.predicted is None or self.predicted is ABSENT


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def error_ratio(v_pred: Any, v_gt: float) -> float:
    """Relative error; a missing or non-numeric prediction is infinitely wrong."""
    if v_gt <= 0:
        raise ValueError("ground truth must be > 0")
    if not _is_number(v_pred) or not math.isfinite(v_pred):
        return math.inf
    return abs(v_pred - v_gt) / v_gt


def percentage(correct: int, total: int) -> float:
    """100·correct/total, rounded half-up to two decimals."""
    value = Decimal(100 * correct) / Decimal(total)
    return float(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class CellStats:
    correct: int
    incorrect: int
    absent: int

    @property
    def total(self) -> int:
        return self.correct + self.incorrect + self.absent

    @property
    def value(self) -> float:
        return percentage(self.correct, self.total)

    def to_json(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "correct": self.correct,
            "incorrect": self.incorrect,
            "absent": self.absent,
            "denominator": self.total,
        }


def score_numeric(threshold: float, pairs: Sequence[EvalPair]) -> CellStats:
    if not pairs:
        raise EmptyPairs("no pairs to score")
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    correct = absent = 0
    for pair in pairs:
        if pair.absent:
            absent += 1
        elif error_ratio(pair.predicted, pair.ground_truth) < threshold:
            correct += 1
    return CellStats(correct, len(pairs) - correct - absent, absent)


def _label_matches(predicted: Any, truth: str) -> bool:
    return isinstance(predicted, str) and predicted.strip().casefold() == truth.strip().casefold()


def score_categorical(pairs: Sequence[EvalPair]) -> CellStats:
    if not pairs:
        raise EmptyPairs("no pairs to score")
    correct = absent = 0
    for pair in pairs:
        if pair.absent:
            absent += 1
        elif _label_matches(pair.predicted, pair.ground_truth):
            correct += 1
    return CellStats(correct, len(pairs) - correct - absent, absent)


def accuracy_at(threshold: float, pairs: Sequence[EvalPair]) -> float:
    return score_numeric(threshold, pairs).value


def categorical_accuracy(pairs: Sequence[EvalPair]) -> float:
    return score_categorical(pairs).value


# --- benchmark -------------------------------------------------------------------


@dataclass
class MetricsTable:
    rows: list[str]
    columns: list[str] = field(default_factory=lambda: list(COLUMNS))
    cells: dict[str, dict[str, CellStats]] = field(default_factory=dict)

    def value(self, row: str, column: str) -> float:
        return self.cells[row][column].value

    def to_json(self) -> dict[str, Any]:
        return {
            "columns": self.columns,
            "rows": [
                {"method": row, "cells": {col: self.cells[row][col].to_json() for col in self.columns}}
                for row in self.rows
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n"

    def render_text(self) -> str:
        header = ["Method", *self.columns]
        body = [[row, *(f"{self.cells[row][c].value:.2f}" for c in self.columns)] for row in self.rows]
        if self.rows:
            first = self.cells[self.rows[0]]
            body.append(["n", *(str(first[c].total) for c in self.columns)])
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]

        def fmt(cells: list[str]) -> str:
            first, *rest = cells
            return " | ".join([first.ljust(widths[0]), *(c.rjust(w) for c, w in zip(rest, widths[1:]))])

        rule = "-+-".join("-" * w for w in widths)
        lines = [fmt(header), rule, *(fmt(r) for r in body[: len(self.rows)])]
        if self.rows:
            lines += [rule, fmt(body[-1])]
        return "\n".join(lines) + "\n"


def _predictions(
    records: Sequence[AnnotationRecord],
    schema: PropertySchema,
    backends: Backends,
    config: EnrollmentConfig,
) -> list[Mapping[str, Any]]:
    inventory = InventoryGraph()
    out: list[Mapping[str, Any]] = []
    for rec in records:
        try:
            sub, record = build_product(rec.image, schema, backends, config)
            if sub is not None:
                merge_subgraph(inventory, sub)
            out.append(record.assignment.values if record.assignment is not None else {})
        except ProdKGError as exc:
            log.warning("%s under %s scored as absent: %s", rec.image, config.mode.value, exc)
            out.append({})
    return out


def score_predictions(
    records: Sequence[AnnotationRecord],
    predictions: Sequence[Mapping[str, Any]],
) -> dict[str, CellStats]:
    cells: dict[str, CellStats] = {}
    for field_name, prop in CATEGORICAL_FIELDS.items():
        pairs = [
            EvalPair(prop, pred.get(prop), rec.ground_truth(field_name))
            for rec, pred in zip(records, predictions)
            if rec.ground_truth(field_name) is not None
        ]
        cells[prop] = score_categorical(pairs) if pairs else CellStats(0, 0, 0)
    weight_pairs = [
        EvalPair(WEIGHT_PROPERTY, pred.get(WEIGHT_PROPERTY), rec.weight_kg)
        for rec, pred in zip(records, predictions)
        if rec.weight_kg is not None
    ]
    for t in THRESHOLDS:
        cells[f"Weight (Acc@{t})"] = score_numeric(t, weight_pairs) if weight_pairs else CellStats(0, 0, 0)
    return cells


def run_benchmark(
    dataset: Sequence[AnnotationRecord],
    modes: Sequence[EnrollmentConfig],
    backends: Backends | Mapping[Mode, Backends],
    schema: PropertySchema | None = None,
) -> MetricsTable:
    if not dataset:
        raise ConfigError("benchmark dataset is empty")
    if not modes:
        raise ConfigError("no modes to benchmark")
    schema = schema or default_schema()
    for prop in (*CATEGORICAL_FIELDS.values(), WEIGHT_PROPERTY):
        if prop not in schema:
            raise ConfigError(f"schema lacks the benchmarked property {prop!r}")
    if schema[WEIGHT_PROPERTY].kind not in (TypeKind.FLOAT, TypeKind.INT):
        raise ConfigError("Weight must be numeric")
    table = MetricsTable(rows=[])
    for config in modes:
        row = ROW_NAMES[config.mode]
        if row in table.cells:
            raise ConfigError(f"mode {config.mode.value} listed twice")
        if isinstance(backends, Backends):
            mode_backends = backends
        elif config.mode in backends:
            mode_backends = backends[config.mode]
        else:
            raise ConfigError(f"no backends for mode {config.mode.value}")
        predictions = _predictions(dataset, schema, mode_backends, config)
        table.rows.append(row)
        table.cells[row] = score_predictions(dataset, predictions)
    return table


def modes_from_names(names: Iterable[str], base: EnrollmentConfig | None = None) -> list[EnrollmentConfig]:
    base = base or EnrollmentConfig()
    out = []
    for name in names:
        try:
            mode = Mode(name)
        except ValueError:
            raise ConfigError(f"unknown mode {name!r}; choose from {[m.value for m in Mode]}") from None
        out.append(replace(base, mode=mode))
    return out
