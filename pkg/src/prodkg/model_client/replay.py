"""Deterministic record/replay backend.

A fixture is addressed by the SHA-256 of the exchange's canonical JSON
(turns, sampling options, model id; images by content hash). Each fixture
lives in its own ``<key>.json`` file holding the canonical exchange next to
the stored replies, so a fixture directory is reviewable as plain text.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any, Protocol

from prodkg.errors import ConstraintViolation, DuplicateKey, FixtureMiss, InvalidInput
from prodkg.model_client.exchange import ChatExchange, ModelBackend


def _canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def fixture_key(exchange: ChatExchange, model: str, labels: tuple[str, ...] | None = None) -> str:
    doc = exchange.canonical(model)
    if labels is not None:
        doc["score_labels"] = list(labels)
    return hashlib.sha256(_canonical_json(doc).encode("ascii")).hexdigest()


class FixtureStore(Protocol):
    def get(self, key: str) -> dict[str, Any] | None: ...

    def put(self, key: str, entry: dict[str, Any]) -> None: ...


class MemoryFixtureStore:
    def __init__(self) -> None:
        self._entries: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()

    def get(self, key: str) -> dict[str, Any] | None:
        return self._entries.get(key)

    def put(self, key: str, entry: dict[str, Any]) -> None:
        with self._lock:
            self._entries[key] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def keys(self) -> list[str]:
        return sorted(self._entries)


class DirectoryFixtureStore:
    """One JSON file per key. Reads are lock-free, writes are serialized."""

    def __init__(self, root: str | os.PathLike[str]) -> None:
        self.root = Path(root)
        self._lock = threading.Lock()

    def path_for(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> dict[str, Any] | None:
        try:
            text = self.path_for(key).read_text(encoding="utf-8")
        except FileNotFoundError:
            return None
        return json.loads(text)

    def put(self, key: str, entry: dict[str, Any]) -> None:
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            text = json.dumps(entry, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, self.path_for(key))

    def keys(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.stem for p in self.root.glob("*.json"))

    def __len__(self) -> int:
        return len(self.keys())


_put_lock = threading.Lock()


def record_fixture(store: FixtureStore, exchange: ChatExchange, replies: list[str], model: str) -> str:
    """Store ``replies`` for ``exchange``; idempotent for identical replies."""
    replies = list(replies)
    if len(replies) != exchange.options.n_samples:
        raise InvalidInput(f"expected {exchange.options.n_samples} replies, got {len(replies)}")
    key = fixture_key(exchange, model)
    with _put_lock:
        existing = store.get(key)
        if existing is not None:
            if existing.get("replies") != replies:
                raise DuplicateKey(key)
            return key
        store.put(key, {"exchange": exchange.canonical(model), "replies": replies})
    return key


def record_scores(
    store: FixtureStore,
    exchange: ChatExchange,
    labels: tuple[str, ...],
    scores: dict[str, float],
    model: str,
) -> str:
    key = fixture_key(exchange, model, labels)
    with _put_lock:
        existing = store.get(key)
        if existing is not None:
            if existing.get("scores") != scores:
                raise DuplicateKey(key)
            return key
        doc = exchange.canonical(model)
        doc["score_labels"] = list(labels)
        store.put(key, {"exchange": doc, "scores": dict(scores)})
    return key


def _hint(exchange: ChatExchange) -> str:
    last = exchange.turns[-1].content.strip().splitlines()
    return f"last user turn starts {last[0][:60]!r}" if last else ""


class ReplayBackend:
    def __init__(self, store: FixtureStore, model: str = "replay") -> None:
        self.store = store
        self.model = model

    def complete(self, exchange: ChatExchange) -> list[str]:
        key = fixture_key(exchange, self.model)
        entry = self.store.get(key)
        if entry is None or "replies" not in entry:
            raise FixtureMiss(key, _hint(exchange))
        replies = list(entry["replies"])
        constraint = exchange.options.constraint
        if constraint is not None and not constraint.matches(replies[0]):
            raise ConstraintViolation(replies[0], constraint.rendered_pattern)
        return replies

    def score_labels(self, exchange: ChatExchange, labels: tuple[str, ...]) -> dict[str, float] | None:
        entry = self.store.get(fixture_key(exchange, self.model, labels))
        if entry is None or "scores" not in entry:
            return None
        return {str(k): float(v) for k, v in entry["scores"].items()}


class RecordingBackend:
    """Forwards to ``inner`` and records every reply into ``store``.

    Constraint-violating replies are recorded too, so a replay reproduces
    the same retry path the live run took.
    """

    def __init__(self, inner: ModelBackend, store: FixtureStore) -> None:
        self.inner = inner
        self.store = store
        self.model = inner.model

    def complete(self, exchange: ChatExchange) -> list[str]:
        try:
            replies = self.inner.complete(exchange)
        except ConstraintViolation as exc:
            record_fixture(self.store, exchange, [exc.reply], self.model)
            raise
        record_fixture(self.store, exchange, replies, self.model)
        return replies

    def score_labels(self, exchange: ChatExchange, labels: tuple[str, ...]) -> dict[str, float] | None:
        scores = self.inner.score_labels(exchange, labels)
        if scores is not None:
            record_scores(self.store, exchange, labels, scores, self.model)
        return scores
