"""Enrollment: extract → format/infer → expand hierarchy → merge.

Each product is processed without touching the inventory; only the final
merge writes to it, under the inventory's lock. A failure in any stage
therefore leaves the inventory exactly as it was.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence, TypeVar

from PIL import Image, UnidentifiedImageError

from prodkg.constraints import (
    PropertyAssignment,
    compile_constraint,
    lenient_assignment,
    schema_prompt_text,
    validate_output,
)
from prodkg.errors import (
    ConfigError,
    ConstraintViolation,
    EmptyDescription,
    ImageDecodeError,
    OutputValidationError,
    ProdKGError,
    StageError,
)
from prodkg.graph import (
    InventoryGraph,
    ProductSubgraph,
    merge_subgraph,
    normalize_label,
    subgraph_from_assignment,
)
from prodkg.model_client import ChatExchange, ImageRef, ModelBackend
from prodkg.prompts import PROMPT_VERSION, render
from prodkg.schema import PropertySchema, schema_from_dict, schema_to_dict

log = logging.getLogger(__name__)

IMAGE_SIZE = (448, 448)


class Mode(str, enum.Enum):
    FULL = "full"
    NO_REASONING = "no-reasoning"
    NO_MULTI_TURN = "no-multi-turn"
    BASELINE_ZERO_SHOT = "baseline-zero-shot"
    BASELINE_SCHEMA = "baseline-schema"

    @property
    def is_baseline(self) -> bool:
        return self in (Mode.BASELINE_ZERO_SHOT, Mode.BASELINE_SCHEMA)

    @property
    def multi_turn(self) -> bool:
        return self in (Mode.FULL, Mode.NO_REASONING)

    @property
    def reasoning(self) -> bool:
        return self in (Mode.FULL, Mode.NO_MULTI_TURN)


@dataclass(frozen=True)
class EnrollmentConfig:
    mode: Mode = Mode.FULL
    expansion_depth: int = 2
    expansion_parallel: int = 3
    expansion_top_k: int | None = 10
    extract_temperature: float = 0.2
    reason_temperature: float = 0.2
    constrained_temperature: float = 0.0
    expansion_temperature: float = 0.8

    # Fixed: one constrained retry with the validation error appended.
    retry_on_constraint_violation = 1

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "mode", Mode(self.mode))
        except ValueError:
            raise ConfigError(f"unknown mode {self.mode!r}") from None
        if self.expansion_depth < 1:
            raise ConfigError("expansion_depth must be >= 1")
        if self.expansion_parallel < 1:
            raise ConfigError("expansion_parallel must be >= 1")
        if self.expansion_top_k is not None and self.expansion_top_k < 1:
            raise ConfigError("expansion_top_k must be >= 1")
        for name in ("extract", "reason", "constrained", "expansion"):
            if getattr(self, f"{name}_temperature") < 0:
                raise ConfigError(f"{name}_temperature must be >= 0")

    def to_json(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["mode"] = self.mode.value
        doc["retry_on_constraint_violation"] = self.retry_on_constraint_violation
        return doc


@dataclass(frozen=True)
class Backends:
    vlm: ModelBackend
    llm: ModelBackend


# --- transcripts -----------------------------------------------------------------


class Transcript:
    """Every backend call of one enrollment, in order."""

    def __init__(self) -> None:
        self.calls: list[dict[str, Any]] = []

    def call(self, backend: ModelBackend, exchange: ChatExchange, stage: str) -> list[str]:
        entry: dict[str, Any] = {"stage": stage, "exchange": exchange.canonical(backend.model)}
        self.calls.append(entry)
        try:
            replies = backend.complete(exchange)
        except ConstraintViolation as exc:
            entry["constraint_violation"] = exc.reply
            raise
        except ProdKGError as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            raise
        entry["replies"] = list(replies)
        return replies

    def stage(self, name: str) -> list[dict[str, Any]]:
        return [c for c in self.calls if c["stage"] == name]


def _call(backend: ModelBackend, exchange: ChatExchange, stage: str, transcript: Transcript | None) -> list[str]:
    if transcript is None:
        return backend.complete(exchange)
    return transcript.call(backend, exchange, stage)


# --- images ----------------------------------------------------------------------


def prepare_image(source: str | Path | bytes | ImageRef) -> ImageRef:
    """Decode, convert to RGB, and resize to 448×448 PNG."""
    if isinstance(source, ImageRef):
        return source
    if isinstance(source, (str, Path)):
        try:
            data = Path(source).read_bytes()
        except OSError as exc:
            raise ImageDecodeError(f"cannot read image {source}: {exc}") from exc
    else:
        data = source
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            rgb = img.convert("RGB").resize(IMAGE_SIZE, Image.Resampling.BICUBIC)
    except (UnidentifiedImageError, OSError, ValueError, Image.DecompressionBombError) as exc:
        raise ImageDecodeError(f"cannot decode image: {exc}") from exc
    digest = hashlib.sha256(b"RGB%dx%d:" % IMAGE_SIZE + rgb.tobytes()).hexdigest()
    buf = io.BytesIO()
    rgb.save(buf, format="PNG")
    return ImageRef(buf.getvalue(), "image/png", digest)


# --- stages ----------------------------------------------------------------------


def _nonempty(reply: str, what: str) -> str:
    if not reply.strip():
        raise EmptyDescription(f"{what} is empty")
    return reply


def extract(
    image: str | Path | bytes | ImageRef,
    schema: PropertySchema,
    vlm: ModelBackend,
    multi_turn: bool,
    *,
    temperature: float = 0.2,
    transcript: Transcript | None = None,
) -> list[str]:
    ref = prepare_image(image)
    first = ChatExchange.start(
        render("extract_first", schema=schema_prompt_text(schema)), image=ref, temperature=temperature
    )
    descriptions = [_nonempty(_call(vlm, first, "extract", transcript)[0], "first description")]
    if multi_turn:
        second = first.followed_by(descriptions[0], render("extract_followup"))
        descriptions.append(_nonempty(_call(vlm, second, "extract", transcript)[0], "follow-up description"))
    return descriptions


@dataclass
class FormatResult:
    assignment: PropertyAssignment
    reasoning: str = ""
    retries: int = 0

    def __iter__(self) -> Iterator[Any]:
        yield self.assignment
        yield self.reasoning


def _describe_rejection(reply: str, schema: PropertySchema) -> str:
    try:
        validate_output(reply, schema)
    except OutputValidationError as exc:
        return str(exc)
    keys = ", ".join(json.dumps(n, ensure_ascii=False) for n in schema.names)
    return f"the JSON object must list exactly these keys in this order: {keys}"


def _format_block(descriptions: Sequence[str]) -> str:
    if len(descriptions) == 1:
        return descriptions[0].strip()
    return "\n\n".join(f"Description {i}:\n{d.strip()}" for i, d in enumerate(descriptions, 1))


def format_and_infer(
    descriptions: Sequence[str],
    schema: PropertySchema,
    llm: ModelBackend,
    with_reasoning: bool,
    *,
    reason_temperature: float = 0.2,
    constrained_temperature: float = 0.0,
    transcript: Transcript | None = None,
) -> FormatResult:
    if not descriptions or not any(d.strip() for d in descriptions):
        raise EmptyDescription("no description to format")
    constraint = compile_constraint(schema)
    keys = ", ".join(json.dumps(n, ensure_ascii=False) for n in schema.names)
    block = _format_block(descriptions)
    schema_text = schema_prompt_text(schema)
    reasoning = ""
    if with_reasoning:
        first = ChatExchange.start(
            render("reason", descriptions=block, schema=schema_text), temperature=reason_temperature
        )
        reasoning = _call(llm, first, "reason", transcript)[0]
        exchange = first.followed_by(
            reasoning,
            render("format_after_reasoning", keys=keys),
            temperature=constrained_temperature,
            constraint=constraint,
        )
    else:
        exchange = ChatExchange.start(
            render("format_direct", descriptions=block, schema=schema_text, keys=keys),
            temperature=constrained_temperature,
            constraint=constraint,
        )

    try:
        reply = _call(llm, exchange, "format", transcript)[0]
        return FormatResult(validate_output(reply, schema), reasoning, 0)
    except ConstraintViolation as exc:
        rejected, error = exc.reply, _describe_rejection(exc.reply, schema)
    except OutputValidationError as exc:
        rejected, error = reply, str(exc)
    log.info("constrained reply rejected (%s); retrying once", error)
    retry = exchange.followed_by(
        rejected,
        render("format_retry", error=error),
        temperature=constrained_temperature,
        constraint=constraint,
    )
    reply = _call(llm, retry, "format", transcript)[0]
    return FormatResult(validate_output(reply, schema), reasoning, 1)


_LABEL_PREFIX = re.compile(r"^\s*(?:[-*•]+|\d+[.)])?\s*(?:category\s*:\s*)?", re.IGNORECASE)


def parse_proposal(reply: str) -> str | None:
    for line in reply.splitlines():
        line = _LABEL_PREFIX.sub("", line).strip().strip("\"'`*").strip().rstrip(".").strip()
        if line:
            try:
                normalize_label(line)
            except ProdKGError:
                return None
            return line
    return None


def expand_hierarchy(
    product_name: str,
    anchor_value: str,
    llm: ModelBackend,
    depth: int,
    k: int,
    *,
    temperature: float = 0.8,
    top_k: int | None = None,
    transcript: Transcript | None = None,
) -> list[list[str]]:
    """Grow up to ``k`` chains product → … → anchor, one insertion per step.

    Each step asks for one label between the product and its current parent.
    Chains in the same state share a request with ``n_samples`` equal to the
    number of chains, so the first step samples ``k`` proposals at once.
    """
    if depth < 1 or k < 1:
        raise ConfigError("depth and k must be >= 1")
    chains = [[product_name, anchor_value] for _ in range(k)]
    for _ in range(depth):
        groups: dict[tuple[str, ...], list[int]] = {}
        for i, chain in enumerate(chains):
            groups.setdefault(tuple(normalize_label(x) for x in chain), []).append(i)
        for members in groups.values():
            chain = chains[members[0]]
            exchange = ChatExchange.start(
                render(
                    "expand",
                    product=product_name,
                    path=" > ".join(reversed(chain)),
                    parent=chain[1],
                ),
                temperature=temperature,
                top_k=top_k,
                n_samples=len(members),
            )
            replies = _call(llm, exchange, "expand", transcript)
            for i, reply in zip(members, replies):
                proposal = parse_proposal(reply)
                if proposal is None:
                    continue
                taken = {normalize_label(x) for x in chains[i]}
                if normalize_label(proposal) in taken:
                    continue
                chains[i].insert(1, proposal)
    unique: dict[tuple[str, ...], list[str]] = {}
    for chain in chains:
        unique.setdefault(tuple(normalize_label(x) for x in chain), chain)
    return list(unique.values())


def parse_triples(reply: str, predicates: Sequence[str]) -> tuple[str | None, dict[str, str]]:
    """Read ``(subject, predicate, object)`` lines; first object per predicate wins."""
    ordered = sorted(predicates, key=len, reverse=True)
    patterns = [
        (p, re.compile(r"^(.*?)\s*[,|;]\s*[\"']?" + re.escape(p) + r"[\"']?\s*[,|;]\s*(.*)$", re.IGNORECASE))
        for p in ordered
    ]
    subject: str | None = None
    objects: dict[str, str] = {}
    for raw in reply.splitlines():
        line = re.sub(r"^\s*(?:[-*•]+|\d+[.)])\s*", "", raw).strip()
        if line.startswith("(") and line.endswith(")"):
            line = line[1:-1].strip()
        elif line.startswith("(") and line.endswith("),"):
            line = line[1:-2].strip()
        for predicate, pattern in patterns:
            m = pattern.match(line)
            if m is None:
                continue
            subj = m.group(1).strip().strip("\"'").strip()
            obj = m.group(2).strip().strip("\"'").strip()
            if subject is None and subj:
                subject = subj
            if obj and predicate not in objects:
                objects[predicate] = obj
            break
    return subject, objects


def baseline_extract(
    image: str | Path | bytes | ImageRef,
    schema: PropertySchema,
    vlm: ModelBackend,
    with_schema_prompt: bool,
    *,
    temperature: float = 0.2,
    transcript: Transcript | None = None,
) -> PropertyAssignment:
    """Triple-generation baseline: product name as subject, property names as predicates."""
    ref = prepare_image(image)
    predicates = [p.name for p in schema.properties]
    prompt = render("baseline", predicates=", ".join(predicates))
    if with_schema_prompt:
        prompt = schema_prompt_text(schema) + "\n\n" + prompt
    exchange = ChatExchange.start(prompt, image=ref, temperature=temperature)
    reply = _call(vlm, exchange, "baseline", transcript)[0]
    subject, objects = parse_triples(reply, predicates)
    if subject is not None:
        objects.setdefault(schema.root_property.name, subject)
    return lenient_assignment(objects, schema)


# --- enrollment ------------------------------------------------------------------


@dataclass
class EnrollmentRecord:
    image: str | None
    image_sha256: str | None
    mode: str
    config: dict[str, Any]
    schema: dict[str, Any]
    prompt_version: str = PROMPT_VERSION
    external_id: str | None = None
    descriptions: list[str] = field(default_factory=list)
    reasoning: str = ""
    assignment: PropertyAssignment | None = None
    chains: list[list[str]] = field(default_factory=list)
    retries: dict[str, int] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    graph_ops: dict[str, int] = field(default_factory=dict)
    transcript: list[dict[str, Any]] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["assignment"] = self.assignment.to_json() if self.assignment is not None else None
        return doc

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> EnrollmentRecord:
        doc = dict(doc)
        if doc.get("assignment") is not None:
            doc["assignment"] = PropertyAssignment.from_json(doc["assignment"])
        return cls(**doc)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False, sort_keys=True) + "\n"

    def subgraph(self) -> ProductSubgraph:
        """Rebuild the product subgraph from the record alone."""
        if self.assignment is None:
            raise ConfigError("record has no assignment")
        return subgraph_from_assignment(self.assignment, self.chains, schema_from_dict(self.schema))


T = TypeVar("T")


def _timed(record: EnrollmentRecord, stage: str, fn: Callable[[], T]) -> T:
    start = time.perf_counter()
    try:
        return fn()
    except StageError:
        raise
    except ProdKGError as exc:
        raise StageError(stage, exc) from exc
    finally:
        elapsed = time.perf_counter() - start
        record.timings[stage] = elapsed
        log.info(
            json.dumps(
                {"event": "stage_timing", "stage": stage, "seconds": round(elapsed, 6), "image": record.image},
                ensure_ascii=False,
            )
        )


def _describe_source(source: Any) -> str | None:
    if isinstance(source, (str, Path)):
        return str(source)
    return None


def build_product(
    source: str | Path | bytes | ImageRef | None,
    schema: PropertySchema,
    backends: Backends,
    config: EnrollmentConfig,
    *,
    descriptions: Sequence[str] | None = None,
    external_id: str | None = None,
) -> tuple[ProductSubgraph | None, EnrollmentRecord]:
    """Run every stage but the merge. Pure with respect to the inventory.

    Pass ``descriptions`` instead of an image to skip the extract stage.
    Baseline modes only predict properties and return no subgraph.
    """
    mode = config.mode
    record = EnrollmentRecord(
        image=_describe_source(source),
        image_sha256=None,
        mode=mode.value,
        config=config.to_json(),
        schema=schema_to_dict(schema),
        external_id=external_id,
    )
    transcript = Transcript()
    record.transcript = transcript.calls
    ref = None
    if source is not None:
        ref = _timed(record, "image", lambda: prepare_image(source))
        record.image_sha256 = ref.content_hash
    elif descriptions is None:
        raise ConfigError("need an image or text descriptions")

    if mode.is_baseline:
        if ref is None:
            raise ConfigError("baseline modes need an image")
        record.assignment = _timed(
            record,
            "baseline",
            lambda: baseline_extract(
                ref,
                schema,
                backends.vlm,
                mode is Mode.BASELINE_SCHEMA,
                temperature=config.extract_temperature,
                transcript=transcript,
            ),
        )
        return None, record

    if descriptions is None:
        descriptions = _timed(
            record,
            "extract",
            lambda: extract(
                ref,
                schema,
                backends.vlm,
                mode.multi_turn,
                temperature=config.extract_temperature,
                transcript=transcript,
            ),
        )
    record.descriptions = list(descriptions)

    result = _timed(
        record,
        "format",
        lambda: format_and_infer(
            record.descriptions,
            schema,
            backends.llm,
            mode.reasoning,
            reason_temperature=config.reason_temperature,
            constrained_temperature=config.constrained_temperature,
            transcript=transcript,
        ),
    )
    record.assignment = result.assignment
    record.reasoning = result.reasoning
    record.retries["format"] = result.retries

    if schema.anchor is not None:
        product = str(result.assignment[schema.root_property.name])
        anchor_value = str(result.assignment[schema.anchor])
        record.chains = _timed(
            record,
            "expand",
            lambda: expand_hierarchy(
                product,
                anchor_value,
                backends.llm,
                config.expansion_depth,
                config.expansion_parallel,
                temperature=config.expansion_temperature,
                top_k=config.expansion_top_k,
                transcript=transcript,
            ),
        )
    sub = _timed(record, "subgraph", lambda: subgraph_from_assignment(result.assignment, record.chains, schema))
    return sub, record


def _merge(inventory: InventoryGraph, sub: ProductSubgraph | None, record: EnrollmentRecord) -> None:
    if sub is None:
        return
    with inventory.lock:
        before = dict(inventory.ops)
        _timed(record, "merge", lambda: merge_subgraph(inventory, sub))
        record.graph_ops = {k: inventory.ops[k] - before.get(k, 0) for k in ("node_upserts", "edge_upserts")}


def enroll(
    image: str | Path | bytes | ImageRef | None,
    schema: PropertySchema,
    inventory: InventoryGraph,
    backends: Backends,
    config: EnrollmentConfig = EnrollmentConfig(),
    *,
    descriptions: Sequence[str] | None = None,
    external_id: str | None = None,
) -> tuple[InventoryGraph, EnrollmentRecord]:
    sub, record = build_product(
        image, schema, backends, config, descriptions=descriptions, external_id=external_id
    )
    _merge(inventory, sub, record)
    return inventory, record


@dataclass
class BatchItem:
    image: str | Path | bytes | ImageRef
    external_id: str | None = None


@dataclass
class BatchResult:
    item: BatchItem
    record: EnrollmentRecord | None = None
    error: BaseException | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def enroll_batch(
    items: Sequence[BatchItem],
    schema: PropertySchema,
    inventory: InventoryGraph,
    backends: Backends,
    config: EnrollmentConfig = EnrollmentConfig(),
    *,
    jobs: int = 1,
) -> list[BatchResult]:
    """Enroll many products; failures are logged and skipped.

    Products are built concurrently (up to ``jobs``) but merged in input
    order, so the resulting inventory does not depend on ``jobs``.
    """
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")

    def build(item: BatchItem) -> tuple[ProductSubgraph | None, EnrollmentRecord]:
        return build_product(item.image, schema, backends, config, external_id=item.external_id)

    results: list[BatchResult] = []
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(build, item) for item in items]
        for item, future in zip(items, futures):
            try:
                sub, record = future.result()
                _merge(inventory, sub, record)
            except ProdKGError as exc:
                log.warning("enrollment failed for %s: %s", item.external_id or _describe_source(item.image), exc)
                results.append(BatchResult(item, error=exc))
                continue
            results.append(BatchResult(item, record))
    return results


def read_manifest(path: str | Path) -> list[BatchItem]:
    """One JSON object per line: ``{"image": path, "id": optional}``.

    Relative image paths resolve against the manifest's directory.
    """
    path = Path(path)
    items = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            image = Path(doc["image"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad manifest line ({exc})") from None
        if not image.is_absolute():
            image = path.parent / image
        items.append(BatchItem(image, doc.get("id")))
    return items


__all__ = [
    "Backends",
    "BatchItem",
    "BatchResult",
    "EnrollmentConfig",
    "EnrollmentRecord",
    "FormatResult",
    "Mode",
    "Transcript",
    "baseline_extract",
    "build_product",
    "enroll",
    "enroll_batch",
    "expand_hierarchy",
    "extract",
    "format_and_infer",
    "parse_triples",
    "prepare_image",
    "read_manifest",
]
