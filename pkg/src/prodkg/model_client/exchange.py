"""Conversation transcripts sent to model backends."""

from __future__ import annotations

import base64
import hashlib
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Literal, Protocol, runtime_checkable

from prodkg.errors import InvalidInput

if TYPE_CHECKING:
    from prodkg.constraints import GenerationConstraint

Role = Literal["system", "user", "assistant"]


@dataclass(frozen=True)
class ImageRef:
    """An encoded image attached to a user turn.

    ``content_hash`` identifies the image in fixture keys. Images prepared by
    the pipeline hash their decoded pixels so that re-encoding does not change
    the key; a bare ``ImageRef(data)`` hashes the raw bytes.
    """

    data: bytes = field(repr=False)
    media_type: str = "image/png"
    content_hash: str = ""

    def __post_init__(self) -> None:
        if not self.content_hash:
            object.__setattr__(self, "content_hash", hashlib.sha256(self.data).hexdigest())

    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"


@dataclass(frozen=True)
class Turn:
    role: Role
    content: str
    image: ImageRef | None = None


@dataclass(frozen=True)
class SamplingOptions:
    temperature: float = 0.0
    top_k: int | None = None
    n_samples: int = 1
    constraint: GenerationConstraint | None = None


@dataclass(frozen=True)
class ChatExchange:
    turns: tuple[Turn, ...]
    options: SamplingOptions = SamplingOptions()

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        validate_exchange(self)

    @classmethod
    def start(
        cls,
        prompt: str,
        *,
        image: ImageRef | None = None,
        system: str | None = None,
        **options: Any,
    ) -> ChatExchange:
        turns: list[Turn] = []
        if system is not None:
            turns.append(Turn("system", system))
        turns.append(Turn("user", prompt, image))
        return cls(tuple(turns), SamplingOptions(**options))

    def followed_by(self, reply: str, prompt: str, **options: Any) -> ChatExchange:
        """Append the assistant ``reply`` and a new user ``prompt``.

        Options not given are carried over, except ``constraint`` which must
        be restated for every constrained turn.
        """
        opts = replace(self.options, constraint=None)
        opts = replace(opts, **options)
        turns = self.turns + (Turn("assistant", reply), Turn("user", prompt))
        return ChatExchange(turns, opts)

    def with_options(self, **options: Any) -> ChatExchange:
        return ChatExchange(self.turns, replace(self.options, **options))

    def canonical(self, model: str) -> dict[str, Any]:
        """JSON-ready form used for fixture keys and transcripts."""
        turns = []
        for t in self.turns:
            item: dict[str, Any] = {"role": t.role, "content": t.content}
            if t.image is not None:
                item["image_sha256"] = t.image.content_hash
            turns.append(item)
        o = self.options
        return {
            "model": model,
            "turns": turns,
            "options": {
                "temperature": float(o.temperature),
                "top_k": o.top_k,
                "n_samples": o.n_samples,
                "constraint": o.constraint.rendered_pattern if o.constraint is not None else None,
            },
        }


def validate_exchange(exchange: ChatExchange) -> None:
    turns = exchange.turns
    if not turns:
        raise InvalidInput("an exchange needs at least one turn")
    body = turns[1:] if turns[0].role == "system" else turns
    for i, turn in enumerate(body):
        expected = "user" if i % 2 == 0 else "assistant"
        if turn.role != expected:
            raise InvalidInput(f"turn {i} has role {turn.role!r}, expected {expected!r}")
        if turn.image is not None and turn.role != "user":
            raise InvalidInput("images may only be attached to user turns")
    if turns[0].role == "system" and turns[0].image is not None:
        raise InvalidInput("images may only be attached to user turns")
    if not body or body[-1].role != "user":
        raise InvalidInput("an exchange must end with a user turn")
    o = exchange.options
    if o.temperature < 0:
        raise InvalidInput("temperature must be >= 0")
    if o.top_k is not None and o.top_k < 1:
        raise InvalidInput("top_k must be a positive integer")
    if o.n_samples < 1:
        raise InvalidInput("n_samples must be a positive integer")
    if o.constraint is not None and o.n_samples != 1:
        raise InvalidInput("constrained exchanges must request exactly one sample")


@runtime_checkable
class ModelBackend(Protocol):
    model: str

    def complete(self, exchange: ChatExchange) -> list[str]:
        """Return ``exchange.options.n_samples`` assistant replies."""
        ...

    def score_labels(self, exchange: ChatExchange, labels: tuple[str, ...]) -> dict[str, float] | None:
        """Per-label scores for the next answer, or None when unsupported."""
        ...
