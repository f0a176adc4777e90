"""Agent backends: token counting, deterministic mocks, and an HTTP chat client.

Every backend exposes ``generate(messages, meta) -> Generation``. ``messages``
is a sequence of ``Message(role, content)``; ``meta`` describes the call
(response or summary, round, actor) and is ignored by the HTTP client.
"""

from __future__ import annotations

import hashlib
import math
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Protocol, Sequence

import httpx

from .core import (
    BackendConfig,
    ConfigError,
    SplitMix64,
    TaskKind,
    extract_all_answers,
    format_answer,
    normalize,
)

ADDITIVE_WORDS = "additive_words"
ESTIMATOR = "estimator"
SUMMARY_WORD_LIMIT = 80


class BackendError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, body: str = "") -> None:
        super().__init__(message)
        self.status = status
        self.body = body


class Message(NamedTuple):
    role: str
    content: str


class Generation(NamedTuple):
    text: str
    prompt_tokens: int
    completion_tokens: int
    estimated: bool = False


@dataclass(frozen=True)
class CallMeta:
    """What a single generate() call is for.

    ``actor`` is an agent id for responses and MAD summaries, a group id
    (1-based) for grouped summaries; ``actor_kind`` says which.
    """

    kind: str  # "response" | "summary"
    round: int
    stage: int = 1
    actor: int = 1
    actor_kind: str = "agent"
    task: TaskKind = TaskKind.ARITHMETIC
    problem_id: str = ""
    truth: str | None = None

    @property
    def sentinel(self) -> str:
        head = "R" if self.kind == "response" else "S"
        who = "A" if self.actor_kind == "agent" else "G"
        return f"[[{head}{self.round}{who}{self.actor}]]"


class AgentBackend(Protocol):
    def generate(self, messages: Sequence[Message], meta: CallMeta | None = None) -> Generation: ...


# --------------------------------------------------------------------------
# Tokenizers
# --------------------------------------------------------------------------


def count_tokens(text: str, tokenizer: str = ADDITIVE_WORDS) -> int:
    """Token count under one of two counters.

    ``additive_words`` counts whitespace-delimited units, so joining two
    texts with whitespace adds their counts exactly. ``estimator`` is the
    usual ceil(chars / 4) rule of thumb for English BPE vocabularies, used
    only when a live endpoint does not report usage.
    """
    if tokenizer == ADDITIVE_WORDS:
        return len(text.split())
    if tokenizer == ESTIMATOR:
        return math.ceil(len(text) / 4)
    raise ValueError(f"unknown tokenizer {tokenizer!r}")


def serialize(messages: Sequence[Message]) -> str:
    return " ".join(m.content for m in messages)


# --------------------------------------------------------------------------
# Mock policies
# --------------------------------------------------------------------------


def _default_answer(meta: CallMeta) -> str:
    if meta.truth and len(meta.truth.split()) == 1:
        return meta.truth
    return "A" if TaskKind(meta.task) is TaskKind.MMLU else "0"


def _sized_text(tag: str, answer_word: str, n: int) -> str:
    if n <= 0:
        return ""
    if n == 1:
        return tag + answer_word
    return " ".join([tag] + ["tok"] * (n - 2) + [answer_word])


@dataclass(frozen=True)
class FixedLength:
    """Responses of exactly ``output_tokens`` words, summaries of ``summary_tokens``.

    The first word is the call's sentinel tag, the last word the answer
    marker, so prompts can be grepped for provenance.
    """

    output_tokens: int
    summary_tokens: int
    answer: str | None = None

    def __post_init__(self) -> None:
        if self.output_tokens < 0 or self.summary_tokens < 0:
            raise ValueError("token lengths must be >= 0")
        if self.summary_tokens > SUMMARY_WORD_LIMIT:
            raise ValueError(f"summaries are capped at {SUMMARY_WORD_LIMIT} words")

    def respond(self, messages: Sequence[Message], meta: CallMeta) -> str:
        value = self.answer if self.answer is not None else _default_answer(meta)
        word = format_answer(meta.task, value)
        n = self.output_tokens if meta.kind == "response" else self.summary_tokens
        return _sized_text(meta.sentinel, word, n)


ScriptEntry = str | Callable[[CallMeta], str]


@dataclass(frozen=True)
class Scripted:
    """Table lookup on (agent, round); ``(agent, None)`` matches any round."""

    table: Mapping[tuple[int, int | None], ScriptEntry]
    default: ScriptEntry = ""
    summary: ScriptEntry = "summary"

    def respond(self, messages: Sequence[Message], meta: CallMeta) -> str:
        if meta.kind == "summary":
            entry = self.summary
        else:
            entry = self.table.get(
                (meta.actor, meta.round), self.table.get((meta.actor, None), self.default)
            )
        return entry(meta) if callable(entry) else entry


def _derive_seed(*parts: object) -> int:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _wrong_answer(truth: str, task: TaskKind, rng: SplitMix64) -> str:
    if task is TaskKind.MMLU:
        letters = [c for c in "ABCD" if c != truth]
        return letters[rng.below(len(letters))]
    try:
        base = int(truth)
    except ValueError:
        return f"wrong{rng.below(1000)}"
    offset = rng.below(20) + 1
    return str(base + offset if rng.below(2) else base - offset)


@dataclass(frozen=True)
class SeededStochastic:
    """Answers correctly with probability ``accuracy``.

    With probability ``convergence`` an agent instead adopts the majority
    answer found in the latest incoming message (if it has any). Draws come
    from SplitMix64 seeded by (seed, problem, actor, round, kind), so the
    policy holds no state between calls.
    """

    accuracy: float
    convergence: float = 0.0
    seed: int = 0

    def respond(self, messages: Sequence[Message], meta: CallMeta) -> str:
        task = TaskKind(meta.task)
        rng = SplitMix64(_derive_seed(self.seed, meta.problem_id, meta.actor, meta.round, meta.kind))
        if meta.kind == "summary":
            answers = [normalize(a) for m in messages for a in extract_all_answers(m.content, task)]
            value = _majority(answers) or _default_answer(meta)
            return f"{meta.sentinel} The agents mostly conclude {format_answer(task, value)}"
        truth = meta.truth if meta.truth is not None else _default_answer(meta)
        incoming = next((m.content for m in reversed(messages) if m.role == "user"), "")
        peer = _majority([normalize(a) for a in extract_all_answers(incoming, task)])
        if len(messages) > 1 and peer is not None and rng.random() < self.convergence:
            value = peer
        elif rng.random() < self.accuracy:
            value = truth
        else:
            value = _wrong_answer(truth, task, rng)
        return f"{meta.sentinel} After checking the steps my answer is {format_answer(task, value)}"


def _majority(values: Sequence[str]) -> str | None:
    if not values:
        return None
    counts = Counter(values)
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


MockPolicy = FixedLength | Scripted | SeededStochastic


def mock_generate(
    policy: MockPolicy,
    messages: Sequence[Message],
    meta: CallMeta,
    tokenizer: str = ADDITIVE_WORDS,
) -> Generation:
    text = policy.respond(messages, meta)
    return Generation(text, count_tokens(serialize(messages), tokenizer), count_tokens(text, tokenizer))


@dataclass(frozen=True)
class MockBackend:
    policy: MockPolicy
    tokenizer: str = ADDITIVE_WORDS

    def generate(self, messages: Sequence[Message], meta: CallMeta | None = None) -> Generation:
        if meta is None:
            raise ValueError("mock backends need call metadata")
        return mock_generate(self.policy, messages, meta, self.tokenizer)


# --------------------------------------------------------------------------
# HTTP chat-completion client
# --------------------------------------------------------------------------

_RETRYABLE = {408, 409, 429, 500, 502, 503, 504}


@dataclass
class HttpChatBackend:
    """Blocking chat-completion client with bounded retries and in-flight cap.

    Retries transport errors and 408/409/429/5xx with exponential backoff
    (``backoff * 2**attempt`` seconds). Usage counts come from the response;
    when absent they are estimated and the generation is flagged.
    """

    config: BackendConfig
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep
    _client: httpx.Client = field(init=False, repr=False)
    _slots: threading.Semaphore = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not (self.config.endpoint and self.config.model):
            raise ConfigError("http backend requires endpoint and model")
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if not key:
                raise BackendError(
                    f"environment variable {self.config.api_key_env} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(
            headers=headers, timeout=self.config.timeout, transport=self.transport
        )
        self._slots = threading.Semaphore(self.config.max_inflight)

    def close(self) -> None:
        self._client.close()

    def payload(self, messages: Sequence[Message]) -> dict:
        return {
            "model": self.config.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }

    def generate(self, messages: Sequence[Message], meta: CallMeta | None = None) -> Generation:
        body = self.payload(messages)
        with self._slots:
            response = self._post(body)
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(
                f"malformed chat-completion response: {exc}",
                response.status_code,
                response.text[:500],
            ) from exc
        usage = data.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return Generation(text, int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
        tok = self.config.resolved_tokenizer
        return Generation(
            text,
            count_tokens(serialize(messages), tok),
            count_tokens(text, tok),
            estimated=True,
        )

    def _post(self, body: dict) -> httpx.Response:
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            last = attempt == attempts - 1
            try:
                response = self._client.post(self.config.endpoint, json=body)
            except httpx.TransportError as exc:
                if last:
                    raise BackendError(f"transport error after {attempts} attempts: {exc}") from exc
            else:
                if response.is_success:
                    return response
                if response.status_code not in _RETRYABLE or last:
                    raise BackendError(
                        f"chat endpoint returned {response.status_code} "
                        f"after {attempt + 1} attempt(s): {response.text[:200]}",
                        response.status_code,
                        response.text[:500],
                    )
            self.sleep(self.config.backoff * 2**attempt)
        raise AssertionError("unreachable")


def make_backend(config: BackendConfig, seed: int = 0) -> AgentBackend:
    """Backend described by ``config``; ``seed`` feeds stochastic mocks."""
    if config.kind == "http":
        return HttpChatBackend(config)
    tokenizer = config.resolved_tokenizer
    if config.policy == "stochastic":
        policy: MockPolicy = SeededStochastic(config.accuracy, config.convergence, seed)
    else:
        policy = FixedLength(config.output_tokens, config.summary_tokens)
    return MockBackend(policy, tokenizer)
