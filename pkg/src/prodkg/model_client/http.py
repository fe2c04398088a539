"""Chat-completions HTTP client for hosted VLM/LLM inference servers.

Request body::

    {"model": str, "messages": [...], "temperature": float, "n": int,
     "top_k": int,                  # only when set and the server supports it
     "regex": str}                  # only for constrained turns

``regex`` carries ``GenerationConstraint.rendered_pattern`` verbatim. It is
the extension field SGLang's OpenAI-compatible server reads; pass
``constraint_field="guided_regex"`` for vLLM. User turns with an image are
sent as content parts ``[{"type": "text", ...}, {"type": "image_url",
"image_url": {"url": "data:image/png;base64,..."}}]``.

Response: ``choices[i].message.content``. Label scoring additionally reads
``choices[0].logprobs.content[0].top_logprobs``.
"""

from __future__ import annotations

import logging
import math
import os
from typing import Any

import httpx

from prodkg.errors import ConstraintViolation, TransportError
from prodkg.model_client.exchange import ChatExchange

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "PRODKG_API_KEY"


def build_messages(exchange: ChatExchange) -> list[dict[str, Any]]:
    messages: list[dict[str, Any]] = []
    for turn in exchange.turns:
        if turn.image is None:
            messages.append({"role": turn.role, "content": turn.content})
        else:
            messages.append(
                {
                    "role": turn.role,
                    "content": [
                        {"type": "text", "text": turn.content},
                        {"type": "image_url", "image_url": {"url": turn.image.data_url()}},
                    ],
                }
            )
    return messages


class HttpBackend:
    def __init__(
        self,
        endpoint: str,
        model: str,
        *,
        api_key_env: str = DEFAULT_API_KEY_ENV,
        timeout: float = 120.0,
        supports_top_k: bool = True,
        constraint_field: str = "regex",
        max_tokens: int | None = None,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.supports_top_k = supports_top_k
        self.constraint_field = constraint_field
        self.max_tokens = max_tokens
        self._transport = transport

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def request_body(self, exchange: ChatExchange, n: int | None = None) -> dict[str, Any]:
        o = exchange.options
        body: dict[str, Any] = {
            "model": self.model,
            "messages": build_messages(exchange),
            "temperature": o.temperature,
            "n": o.n_samples if n is None else n,
        }
        if o.top_k is not None and self.supports_top_k:
            body["top_k"] = o.top_k
        if o.constraint is not None:
            body[self.constraint_field] = o.constraint.rendered_pattern
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        # A fresh client per attempt gives the timeout retry a fresh connection.
        for attempt in (1, 2):
            try:
                with httpx.Client(timeout=self.timeout, transport=self._transport) as client:
                    resp = client.post(self.endpoint, json=body, headers=self._headers())
            except httpx.TimeoutException as exc:
                if attempt == 1:
                    log.warning("timeout talking to %s, retrying once", self.endpoint)
                    continue
                raise TransportError(f"timeout after retry: {exc}") from exc
            except httpx.HTTPError as exc:
                raise TransportError(str(exc)) from exc
            if resp.status_code >= 400:
                raise TransportError(
                    f"HTTP {resp.status_code} from {self.endpoint}: {resp.text[:200]}",
                    status=resp.status_code,
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise TransportError(f"non-JSON response from {self.endpoint}") from exc
        raise AssertionError("unreachable")

    @staticmethod
    def _contents(payload: dict[str, Any]) -> list[str]:
        try:
            return [c["message"]["content"] or "" for c in payload["choices"]]
        except (KeyError, TypeError) as exc:
            raise TransportError(f"unexpected response shape: {exc}") from exc

    def complete(self, exchange: ChatExchange) -> list[str]:
        want = exchange.options.n_samples
        constraint = exchange.options.constraint
        if constraint is not None:
            reply = ""
            for _ in range(2):
                reply = self._contents(self._post(self.request_body(exchange)))[0]
                if constraint.matches(reply):
                    return [reply]
                log.warning("constrained reply violated the pattern, retrying once")
            raise ConstraintViolation(reply, constraint.rendered_pattern)

        replies = self._contents(self._post(self.request_body(exchange)))[:want]
        # Servers without ``n`` support return one choice; top up one at a time.
        while len(replies) < want:
            more = self._contents(self._post(self.request_body(exchange, n=1)))
            if not more:
                raise TransportError("server returned no choices")
            replies.extend(more[: want - len(replies)])
        return replies

    def score_labels(self, exchange: ChatExchange, labels: tuple[str, ...]) -> dict[str, float] | None:
        body = self.request_body(exchange.with_options(temperature=0.0, n_samples=1, top_k=None))
        body.update({"max_tokens": 1, "logprobs": True, "top_logprobs": 20})
        payload = self._post(body)
        try:
            top = payload["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError):
            return None
        scores = {label: 0.0 for label in labels}
        for item in top:
            token = str(item.get("token", "")).strip().lower()
            if not token:
                continue
            p = math.exp(float(item.get("logprob", -math.inf)))
            for label in labels:
                if label.lower().startswith(token):
                    scores[label] += p
        return scores
