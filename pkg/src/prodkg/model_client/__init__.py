from prodkg.model_client.exchange import ChatExchange, ImageRef, ModelBackend, SamplingOptions, Turn
from prodkg.model_client.http import HttpBackend
from prodkg.model_client.replay import (
    DirectoryFixtureStore,
    FixtureStore,
    MemoryFixtureStore,
    RecordingBackend,
    ReplayBackend,
    fixture_key,
    record_fixture,
    record_scores,
)


def complete(backend: ModelBackend, exchange: ChatExchange) -> list[str]:
    return backend.complete(exchange)


__all__ = [
    "ChatExchange",
    "DirectoryFixtureStore",
    "FixtureStore",
    "HttpBackend",
    "ImageRef",
    "MemoryFixtureStore",
    "ModelBackend",
    "RecordingBackend",
    "ReplayBackend",
    "SamplingOptions",
    "Turn",
    "complete",
    "fixture_key",
    "record_fixture",
    "record_scores",
]
