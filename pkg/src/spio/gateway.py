"""Provider-agnostic text generation with a token ledger.

Two provider kinds: `http_chat` talks the de-facto chat-completion JSON
shape to a hosted endpoint; `scripted` replays an ordered fixture list so
the whole engine runs offline and deterministically.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .errors import (
    FixtureExhausted,
    FixturePromptMismatch,
    ProviderRefusal,
    ProviderUnreachable,
    TokenBudgetExceeded,
)
from .model import RunLedger

DEFAULT_TEMPERATURE = 0.5
DEFAULT_TOP_P = 1.0
DEFAULT_MAX_TOKENS = 4096

BACKOFF_DELAYS = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class GenerationRequest:
    step_label: str
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    top_p: float = DEFAULT_TOP_P
    max_tokens: int = DEFAULT_MAX_TOKENS

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    input_tokens: int
    output_tokens: int

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


@dataclass(frozen=True)
class Fixture:
    """One canned completion for the scripted provider."""

    response_text: str
    input_tokens: int
    output_tokens: int
    expected_prompt_digest: str | None = None


class ScriptedFixtures:
    """Ordered fixture queue; consumption is serialized under a lock."""

    def __init__(self, fixtures: Sequence[Fixture]):
        if not fixtures:
            raise ValueError("fixtures must be non-empty")
        self._fixtures = list(fixtures)
        self._cursor = 0
        self._lock = threading.Lock()

    def take(self, step_label: str, prompt: str) -> Fixture:
        with self._lock:
            if self._cursor >= len(self._fixtures):
                raise FixtureExhausted(
                    f"no fixture left for step {step_label!r} (consumed {self._cursor})"
                )
            fixture = self._fixtures[self._cursor]
            if fixture.expected_prompt_digest is not None:
                digest = prompt_digest(prompt)
                if digest != fixture.expected_prompt_digest:
                    raise FixturePromptMismatch(step_label)
            self._cursor += 1
            return fixture

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._fixtures) - self._cursor


@dataclass
class ProviderConfig:
    """Transport configuration; scripted providers ignore the HTTP fields."""

    kind: str = "scripted"
    endpoint: str = ""
    model_name: str = ""
    api_key_env: str = ""
    request_timeout: float = 60.0
    max_retries: int = 3
    token_budget: int | None = None
    transcript_dir: str | Path | None = None
    fixtures: ScriptedFixtures | None = None
    # test seam: (url, payload, headers, timeout) -> (text, in_tokens|None, out_tokens|None)
    transport: Callable[..., tuple[str, int | None, int | None]] | None = None
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in ("http_chat", "scripted"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "scripted" and self.fixtures is None:
            raise ValueError("scripted provider needs fixtures")
        if self.kind == "http_chat" and not self.endpoint:
            raise ValueError("http_chat provider needs an endpoint")


def scripted_provider(fixtures: Sequence[Fixture | tuple]) -> ProviderConfig:
    """Build a scripted provider from fixtures or (digest, text, in, out) tuples."""
    normalized: list[Fixture] = []
    for item in fixtures:
        if isinstance(item, Fixture):
            normalized.append(item)
        else:
            digest, text, in_tokens, out_tokens = item
            normalized.append(
                Fixture(
                    response_text=text,
                    input_tokens=int(in_tokens),
                    output_tokens=int(out_tokens),
                    expected_prompt_digest=digest,
                )
            )
    return ProviderConfig(kind="scripted", model_name="scripted", fixtures=ScriptedFixtures(normalized))


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    """Fallback token estimate when the provider reports no usage."""
    return math.ceil(len(text) / 4)


def build_chat_payload(request: GenerationRequest, provider: ProviderConfig) -> dict[str, Any]:
    """Single-user-message chat-completion payload, sampling params verbatim."""
    return {
        "model": provider.model_name,
        "messages": [{"role": "user", "content": request.prompt}],
        "temperature": request.temperature,
        "top_p": request.top_p,
        "max_tokens": request.max_tokens,
    }


def _default_transport(
    url: str, payload: dict[str, Any], headers: dict[str, str], timeout: float
) -> tuple[str, int | None, int | None]:
    import requests  # imported lazily so offline runs never touch it

    response = requests.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    body = response.json()
    text = body["choices"][0]["message"]["content"] or ""
    usage = body.get("usage") or {}
    return (
        text,
        usage.get("prompt_tokens"),
        usage.get("completion_tokens"),
    )


def _is_transport_error(exc: Exception) -> bool:
    try:
        import requests
    except ImportError:  # pragma: no cover - requests is a declared dependency
        return isinstance(exc, (ConnectionError, TimeoutError, OSError))
    return isinstance(
        exc, (requests.ConnectionError, requests.Timeout, ConnectionError, TimeoutError, OSError)
    )


def _http_complete(request: GenerationRequest, provider: ProviderConfig) -> GenerationResponse:
    payload = build_chat_payload(request, provider)
    headers = {"Content-Type": "application/json"}
    if provider.api_key_env:
        key = os.environ.get(provider.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
    transport = provider.transport or _default_transport

    last_error: Exception | None = None
    for attempt in range(provider.max_retries + 1):
        try:
            text, in_tokens, out_tokens = transport(
                provider.endpoint, payload, headers, provider.request_timeout
            )
            break
        except Exception as exc:  # noqa: BLE001 - classified right below
            if not _is_transport_error(exc):
                raise
            last_error = exc
            if attempt >= provider.max_retries:
                raise ProviderUnreachable(
                    f"{provider.endpoint}: {exc} after {provider.max_retries} retries"
                ) from exc
            provider.sleep(BACKOFF_DELAYS[min(attempt, len(BACKOFF_DELAYS) - 1)])
    else:  # pragma: no cover - loop always breaks or raises
        raise ProviderUnreachable(str(last_error))

    if not text.strip():
        raise ProviderRefusal(f"empty completion for step {request.step_label!r}")
    return GenerationResponse(
        text=text,
        input_tokens=in_tokens if in_tokens is not None else estimate_tokens(request.prompt),
        output_tokens=out_tokens if out_tokens is not None else estimate_tokens(text),
    )


_TRANSCRIPT_SAFE = re.compile(r"[^A-Za-z0-9._-]+")


def _mirror_transcript(
    provider: ProviderConfig, seq: int, step_label: str, prompt: str, text: str
) -> None:
    directory = Path(provider.transcript_dir)
    directory.mkdir(parents=True, exist_ok=True)
    name = f"{seq:04d}-{_TRANSCRIPT_SAFE.sub('_', step_label)}.txt"
    body = prompt + "\n" + "-" * 8 + "\n" + text + "\n"
    (directory / name).write_text(body, encoding="utf-8", newline="\n")


def complete(
    request: GenerationRequest, provider: ProviderConfig, run: RunLedger
) -> GenerationResponse:
    """Generate text and record its token usage under the request's step label."""
    if provider.kind == "scripted":
        fixture = provider.fixtures.take(request.step_label, request.prompt)
        if not fixture.response_text.strip():
            raise ProviderRefusal(f"empty scripted completion for step {request.step_label!r}")
        response = GenerationResponse(
            text=fixture.response_text,
            input_tokens=fixture.input_tokens,
            output_tokens=fixture.output_tokens,
        )
    else:
        response = _http_complete(request, provider)

    event = run.add_token_event(request.step_label, response.input_tokens, response.output_tokens)
    if provider.transcript_dir is not None:
        _mirror_transcript(provider, event.seq, request.step_label, request.prompt, response.text)
    if provider.token_budget is not None:
        total_in, total_out = run.total_tokens()
        if total_in + total_out > provider.token_budget:
            raise TokenBudgetExceeded(
                f"token budget {provider.token_budget} exceeded at step {request.step_label!r}"
            )
    return response


def usage_report(run: RunLedger) -> list[tuple[str, int, int]]:
    """Per-step token sums in first-occurrence order, plus a grand-total row."""
    order: list[str] = []
    sums: dict[str, list[int]] = {}
    for event in run.token_events:
        if event.step_label not in sums:
            order.append(event.step_label)
            sums[event.step_label] = [0, 0]
        sums[event.step_label][0] += event.input_tokens
        sums[event.step_label][1] += event.output_tokens
    rows = [(label, sums[label][0], sums[label][1]) for label in order]
    rows.append(("total", sum(r[1] for r in rows), sum(r[2] for r in rows)))
    return rows
