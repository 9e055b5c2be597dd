"""
Uniform access point for chat-completion, embedding, and re-ranking providers.

Two provider kinds are supported:

* ``http`` — a chat-completion-style JSON endpoint ({model, messages[],
  temperature, max_tokens} in, ``choices[0].message.content`` out), plus
  OpenAI-style ``/embeddings`` and Cohere-style rerank payloads.
* ``stub`` — a scripted provider driven by a :class:`StubScript`. Rules are
  matched first-rule-wins against the request tag and prompt text, so every
  LLM-driven pipeline stage can be exercised deterministically offline.

The stub embedder hashes character trigrams (with STX/ETX boundary
sentinels) into a fixed number of buckets using BLAKE2b keyed with
``HASH_SEED``, then L2-normalizes. Identical text always embeds to the
identical vector; the empty string embeds to the all-zero vector.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

__all__ = [
    "ChatRequest",
    "ChatResponse",
    "EmbeddingVector",
    "ProviderConfig",
    "StubRule",
    "StubScript",
    "Gateway",
    "GatewayError",
    "TransportError",
    "StubMissError",
    "chat",
    "embed",
    "cosine",
    "rerank",
    "stub_embed_text",
    "trigrams",
]

DEFAULT_DIM = 256
HASH_SEED = b"convbi-trigram-v1"
_BOUNDARY_START = "\x02"
_BOUNDARY_END = "\x03"

VALID_ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Base class for provider-access failures."""


class TransportError(GatewayError):
    """HTTP provider unreachable or failing after all retry attempts."""


class StubMissError(GatewayError):
    """No stub rule matched and the script has no default (a test-fixture bug)."""


@dataclass(frozen=True)
class ChatRequest:
    """One chat-completion call; ``tag`` names the calling pipeline stage."""

    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    tag: str = ""

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        for role, _ in self.messages:
            if role not in VALID_ROLES:
                raise ValueError(f"invalid role {role!r}")
        if self.messages[-1][0] != "user":
            raise ValueError("last message role must be 'user'")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @property
    def prompt_text(self) -> str:
        """All message texts joined; the haystack stub rules match against."""
        return "\n".join(text for _, text in self.messages)

    @staticmethod
    def of(prompt: str, tag: str, system: str | None = None, **kw) -> "ChatRequest":
        msgs: list[tuple[str, str]] = []
        if system:
            msgs.append(("system", system))
        msgs.append(("user", prompt))
        return ChatRequest(messages=tuple(msgs), tag=tag, **kw)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"  # stop | length | error

    def __post_init__(self) -> None:
        if self.finish_reason == "stop" and not self.text:
            raise ValueError("text must be non-empty when finish_reason is 'stop'")


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension real vector, L2-normalized unless all-zero."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if not np.all(np.isfinite(vals)):
            raise ValueError("embedding entries must be finite")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def is_zero(self) -> bool:
        return not np.any(self.values)


@dataclass(frozen=True)
class StubRule:
    """Canned response fired when tag and substring patterns both match.

    ``tag`` of None or ``"*"`` matches any request tag; ``contains`` of None
    matches any prompt text.
    """

    tag: str | None
    contains: str | None
    response: str

    def matches(self, request: ChatRequest) -> bool:
        if self.tag not in (None, "*") and self.tag != request.tag:
            return False
        if self.contains is not None and self.contains not in request.prompt_text:
            return False
        return True


@dataclass(frozen=True)
class StubScript:
    """Ordered first-match-wins rule list; replays are byte-identical."""

    rules: tuple[StubRule, ...] = ()
    default: str | None = None

    @staticmethod
    def from_dict(raw: dict) -> "StubScript":
        rules = tuple(
            StubRule(tag=r.get("tag"), contains=r.get("contains"), response=r["response"])
            for r in raw.get("rules", [])
        )
        return StubScript(rules=rules, default=raw.get("default"))

    @staticmethod
    def load(path: str | Path) -> "StubScript":
        with open(path, encoding="utf-8") as fh:
            return StubScript.from_dict(json.load(fh))

    def respond(self, request: ChatRequest) -> str:
        for rule in self.rules:
            if rule.matches(request):
                return rule.response
        if self.default is not None:
            return self.default
        raise StubMissError(
            f"no stub rule matched tag={request.tag!r} "
            f"prompt={request.prompt_text[:120]!r} and the script has no default"
        )


@dataclass(frozen=True)
class ProviderConfig:
    """How to reach one provider; ``kind='stub'`` requires a script."""

    kind: str = "stub"  # http | stub
    endpoint: str = ""
    model: str = ""
    auth_token: str = ""
    timeout_ms: int = 30_000
    retries: int = 0
    backoff_ms: int = 100  # fixed, no jitter: deterministic tests
    dim: int = DEFAULT_DIM
    stub: StubScript | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("http", "stub"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")
        if self.kind == "stub" and self.stub is None:
            raise ValueError("stub provider requires a stub script")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http provider requires an endpoint")


def trigrams(text: str) -> list[str]:
    """Boundary-padded character trigrams of the lowercased text."""
    padded = _BOUNDARY_START + text.lower() + _BOUNDARY_END
    if len(padded) < 3:
        return []
    return [padded[i : i + 3] for i in range(len(padded) - 2)]


def _bucket(trigram: str, dim: int) -> int:
    digest = hashlib.blake2b(trigram.encode("utf-8"), digest_size=8, key=HASH_SEED).digest()
    return int.from_bytes(digest, "big") % dim


def stub_embed_text(text: str, dim: int = DEFAULT_DIM) -> EmbeddingVector:
    """Trigram-hash embedding of one text; empty text gives the zero vector."""
    counts = np.zeros(dim, dtype=np.float64)
    for tri in trigrams(text):
        counts[_bucket(tri, dim)] += 1.0
    norm = np.linalg.norm(counts)
    if norm > 0:
        counts /= norm
    return EmbeddingVector(values=counts)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; defined as 0.0 when either vector is all-zero."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    na, nb = np.linalg.norm(a.values), np.linalg.norm(b.values)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / (na * nb))


def _http_post(config: ProviderConfig, payload: dict) -> dict:
    headers = {"Content-Type": "application/json"}
    if config.auth_token:
        headers["Authorization"] = f"Bearer {config.auth_token}"
    attempts = config.retries + 1
    last_error: Exception | None = None
    for attempt in range(attempts):
        try:
            response = httpx.post(
                config.endpoint,
                json=payload,
                headers=headers,
                timeout=config.timeout_ms / 1000.0,
            )
            response.raise_for_status()
            return response.json()
        except (httpx.HTTPError, ValueError) as exc:
            last_error = exc
            if attempt < attempts - 1:
                time.sleep(config.backoff_ms / 1000.0)
    raise TransportError(f"provider call failed after {attempts} attempts: {last_error}")


def chat(request: ChatRequest, config: ProviderConfig) -> ChatResponse:
    """Route one chat request to the configured provider."""
    if config.kind == "stub":
        assert config.stub is not None
        return ChatResponse(text=config.stub.respond(request), finish_reason="stop")
    payload = {
        "model": config.model,
        "messages": [{"role": role, "content": text} for role, text in request.messages],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }
    body = _http_post(config, payload)
    try:
        text = body["choices"][0]["message"]["content"]
        finish = body["choices"][0].get("finish_reason", "stop")
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed provider reply: {exc}") from exc
    return ChatResponse(text=text, finish_reason=finish if finish in ("stop", "length") else "error")


def embed(texts: list[str], config: ProviderConfig) -> list[EmbeddingVector]:
    """Embed texts in order; identical text always yields the identical vector."""
    if not texts:
        raise ValueError("texts must be a non-empty list")
    if config.kind == "stub":
        return [stub_embed_text(t, config.dim) for t in texts]
    body = _http_post(config, {"model": config.model, "input": texts})
    try:
        vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in body["data"]]
    except (KeyError, TypeError) as exc:
        raise TransportError(f"malformed embedding reply: {exc}") from exc
    out = []
    for vec in vectors:
        norm = np.linalg.norm(vec)
        out.append(EmbeddingVector(values=vec / norm if norm > 0 else vec))
    return out


def rerank(query: str, candidates: list[str], config: ProviderConfig) -> list[tuple[int, float]]:
    """Score candidates against the query, descending; ties keep input order."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if config.kind == "stub":
        qv = stub_embed_text(query, config.dim)
        scored = [(i, cosine(qv, stub_embed_text(c, config.dim))) for i, c in enumerate(candidates)]
    else:
        body = _http_post(
            config, {"model": config.model, "query": query, "documents": candidates}
        )
        try:
            scored = [(int(r["index"]), float(r["relevance_score"])) for r in body["results"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed rerank reply: {exc}") from exc
    # stable: equal scores stay in original candidate order
    return sorted(scored, key=lambda pair: (-pair[1], pair[0]))


@dataclass
class Gateway:
    """Bundles the per-role provider configs used across the pipeline.

    Shareable across concurrent callers: all state is read-only after
    construction and every call is independent.
    """

    chat_config: ProviderConfig
    embed_config: ProviderConfig
    rerank_config: ProviderConfig
    judge_config: ProviderConfig | None = None
    one_step_config: ProviderConfig | None = None

    def chat(self, request: ChatRequest) -> ChatResponse:
        return chat(request, self.chat_config)

    def ask(self, prompt: str, tag: str, system: str | None = None) -> str:
        return self.chat(ChatRequest.of(prompt, tag=tag, system=system)).text

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        return embed(texts, self.embed_config)

    def embed_one(self, text: str) -> EmbeddingVector:
        return self.embed([text])[0]

    def rerank(self, query: str, candidates: list[str]) -> list[tuple[int, float]]:
        return rerank(query, candidates, self.rerank_config)

    def judge(self, prompt: str, tag: str) -> str:
        config = self.judge_config or self.chat_config
        return chat(ChatRequest.of(prompt, tag=tag), config).text

    @staticmethod
    def scripted(script: StubScript, dim: int = DEFAULT_DIM) -> "Gateway":
        """All-stub gateway over one script; the standard test harness."""
        cfg = ProviderConfig(kind="stub", stub=script, dim=dim)
        return Gateway(chat_config=cfg, embed_config=cfg, rerank_config=cfg, judge_config=cfg)
