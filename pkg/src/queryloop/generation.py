"""HTTP client for a minimal chat-completion-style generation service.

Contract (documented in MANUAL.md): POST a JSON body
``{"messages": [{"role", "content"}...], "temperature", "top_p",
"max_new_tokens", "stop"}`` and receive ``{"text": "..."}``. The service
must return stop sequences inclusively, so generations end with their
closing tag. Any conforming server works; nothing here is vendor-shaped.

Retry policy mirrors the SPARQL client: transport errors and 5xx retry
with exponential backoff, everything else is surfaced immediately.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import requests


class GenerationError(Exception):
    """The generation service could not produce text (after retries)."""


@dataclass(frozen=True)
class GenerationEndpoint:
    url: str
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.25
    backoff_factor: float = 2.0


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_new_tokens: int = 512

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")


def generate_text(
    endpoint: GenerationEndpoint,
    messages: list[dict],
    params: DecodingParams = DecodingParams(),
    stop: list[str] | None = None,
    session: requests.Session | None = None,
) -> str:
    sess = session or requests
    body = {
        "messages": messages,
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_new_tokens": params.max_new_tokens,
        "stop": stop or [],
    }
    last_error: Exception | None = None
    for attempt in range(endpoint.max_retries + 1):
        if attempt > 0:
            time.sleep(endpoint.backoff_base * endpoint.backoff_factor ** (attempt - 1))
        try:
            response = sess.post(endpoint.url, json=body, timeout=endpoint.timeout)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if response.status_code == 200:
            try:
                return str(response.json()["text"])
            except (ValueError, KeyError) as exc:
                raise GenerationError(f"malformed generation response: {exc}") from exc
        if response.status_code >= 500:
            last_error = GenerationError(f"generation service returned {response.status_code}")
            continue
        raise GenerationError(f"generation service returned {response.status_code}: {response.text[:200]}")
    raise GenerationError(str(last_error))
