"""Product knowledge graphs from product images."""

from __future__ import annotations

from prodkg.graph import InventoryGraph, merge_subgraph, normalize_label
from prodkg.pipeline import Backends, EnrollmentConfig, Mode, build_product, enroll, enroll_batch
from prodkg.schema import PropertySchema, default_schema, induce_schema, parse_schema, serialize_schema

__version__ = "0.1.0"

__all__ = [
    "Backends",
    "EnrollmentConfig",
    "InventoryGraph",
    "Mode",
    "PropertySchema",
    "build_product",
    "default_schema",
    "enroll",
    "enroll_batch",
    "induce_schema",
    "merge_subgraph",
    "normalize_label",
    "parse_schema",
    "serialize_schema",
]
