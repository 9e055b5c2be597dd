"""
Multi-round dialogue analysis with user-involved clarification.

Each incoming question is checked for semantic integrity: does it name at
least one metric (a quantitative measure) and one dimension (a granularity
attribute such as a time period or region)? Incomplete questions are
completed from the most recent historical turn that carried both, then the
completed text is classified:

    2  ready for SQL generation (metric and dimension present)
    1  still missing a metric or dimension -> ask the user for it
    0  not a data-analysis question -> politely decline

Class-2 questions pass through knowledge-guided clarification, which either
returns a refined rewrite or hands the user a set of disambiguation options;
the user's next message resolves the pending clarification and the loop
re-runs, bounded by ``max_clarify_rounds``.

All model replies are parsed strictly from fixed shapes (a two-list JSON
object for extraction, a single token for classification, a tagged JSON
object for clarification); anything else raises instead of guessing.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .gateway import Gateway
from .knowledge import KnowledgeStore, RetrievalHit

__all__ = [
    "IntentClass",
    "DialogueTurn",
    "ClarificationRequest",
    "PendingClarification",
    "SessionState",
    "SessionStore",
    "Assessment",
    "CompletionResult",
    "RouteAction",
    "ClarifyOutcome",
    "ExtractionError",
    "ClassificationError",
    "ClarificationExhausted",
    "assess_integrity",
    "complete_from_history",
    "classify_intent",
    "route_intent",
    "clarify_intent",
]

REPLY_KINDS = ("answer", "clarify", "ask_missing", "reject", "none")

MAX_CONSECUTIVE_ASKS = 2  # re-ask for missing info at most twice, then decline


class ExtractionError(ValueError):
    """Model reply did not match the expected shape; carries the raw text."""

    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}: {raw[:200]!r}")
        self.raw = raw


class ClassificationError(ExtractionError):
    pass


class ClarificationExhausted(RuntimeError):
    """The clarification loop ran out of rounds without a usable rewrite."""


@dataclass(frozen=True)
class IntentClass:
    value: int

    def __post_init__(self) -> None:
        if self.value not in (0, 1, 2):
            raise ValueError(f"intent must be 0, 1 or 2, got {self.value}")


@dataclass
class DialogueTurn:
    turn_id: int
    user_text: str
    detected_metrics: list[str] = field(default_factory=list)
    detected_dimensions: list[str] = field(default_factory=list)
    completed_text: str | None = None
    intent: int | None = None
    system_reply_kind: str = "none"

    def __post_init__(self) -> None:
        if self.turn_id < 1:
            raise ValueError("turn_id must be positive")
        if self.system_reply_kind not in REPLY_KINDS:
            raise ValueError(f"unknown reply kind {self.system_reply_kind!r}")
        if self.completed_text is not None and self.intent is None:
            raise ValueError("completed_text requires intent to be set")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "DialogueTurn":
        return DialogueTurn(**raw)


@dataclass(frozen=True)
class ClarificationRequest:
    question_text: str
    options: tuple[tuple[str, str, str], ...]  # (option_id, label, description)
    allows_free_text: bool = True

    def __post_init__(self) -> None:
        if not self.options and not self.allows_free_text:
            raise ValueError("clarification needs options or free text")

    def option(self, option_id: str) -> tuple[str, str, str] | None:
        for opt in self.options:
            if opt[0] == option_id:
                return opt
        return None


@dataclass
class PendingClarification:
    request: ClarificationRequest
    base_text: str  # the completed query being clarified
    round: int = 1


@dataclass
class SessionState:
    session_id: str
    turns: list[DialogueTurn] = field(default_factory=list)
    pending_clarification: PendingClarification | None = None
    created_at: float = field(default_factory=time.time)
    updated_at: float = field(default_factory=time.time)

    def next_turn_id(self) -> int:
        return self.turns[-1].turn_id + 1 if self.turns else 1

    def append_turn(self, turn: DialogueTurn) -> None:
        if self.turns and turn.turn_id <= self.turns[-1].turn_id:
            raise ValueError("turn_id must strictly increase")
        self.turns.append(turn)
        self.updated_at = time.time()

    def consecutive_asks(self) -> int:
        count = 0
        for turn in reversed(self.turns):
            if turn.system_reply_kind == "ask_missing":
                count += 1
            else:
                break
        return count


class SessionStore:
    """Sessions keyed by id, persisted turn-per-line as JSONL."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, SessionState] = {}
        self._lock = threading.Lock()

    def create(self, session_id: str) -> SessionState:
        with self._lock:
            if session_id in self._sessions:
                raise ValueError(f"session {session_id!r} already exists")
            session = SessionState(session_id=session_id)
            self._sessions[session_id] = session
            return session

    def get(self, session_id: str) -> SessionState | None:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None and self.directory:
            session = self._load(session_id)
            if session is not None:
                with self._lock:
                    self._sessions.setdefault(session_id, session)
        return session

    def persist_turn(self, session: SessionState, turn: DialogueTurn) -> None:
        if not self.directory:
            return
        path = self.directory / f"{session.session_id}.jsonl"
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(turn.to_dict(), ensure_ascii=False) + "\n")

    def _load(self, session_id: str) -> SessionState | None:
        path = self.directory / f"{session_id}.jsonl"
        if not path.exists():
            return None
        session = SessionState(session_id=session_id)
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                session.turns.append(DialogueTurn.from_dict(json.loads(line)))
        return session


@dataclass(frozen=True)
class Assessment:
    metrics: tuple[str, ...]
    dimensions: tuple[str, ...]

    @property
    def complete(self) -> bool:
        return bool(self.metrics) and bool(self.dimensions)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    no_history_found: bool = False
    source_turn_id: int | None = None


@dataclass(frozen=True)
class RouteAction:
    kind: str  # proceed | ask_missing | reject
    message: str = ""


@dataclass(frozen=True)
class ClarifyOutcome:
    kind: str  # rewritten | needs_user
    text: str | None = None
    request: ClarificationRequest | None = None


def assess_integrity(text: str, gateway: Gateway) -> Assessment:
    """Extract metrics and dimensions from the question via the model."""
    if not text.strip():
        raise ValueError("question must be non-empty")
    prompt = (
        "List the metrics (quantitative measures) and dimensions (granularity "
        "attributes such as time periods or locations) in this question:\n"
        f"{text}\n"
        'Reply with JSON {"metrics": ["..."], "dimensions": ["..."]}.'
    )
    reply = gateway.ask(prompt, tag="integrity_extract")
    try:
        raw = json.loads(reply)
        metrics = tuple(str(m) for m in raw["metrics"])
        dimensions = tuple(str(d) for d in raw["dimensions"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ExtractionError(f"bad extraction reply ({exc})", reply) from exc
    return Assessment(metrics=metrics, dimensions=dimensions)


def complete_from_history(
    text: str,
    assessment: Assessment,
    session: SessionState,
    gateway: Gateway,
) -> CompletionResult:
    """Merge the missing metric/dimension from the newest qualifying turn.

    Complete inputs pass through unchanged; with no qualifying history the
    text is returned unchanged and flagged.
    """
    if assessment.complete:
        return CompletionResult(text=text)
    source = None
    for turn in reversed(session.turns):
        if turn.detected_metrics and turn.detected_dimensions:
            source = turn
            break
    if source is None:
        return CompletionResult(text=text, no_history_found=True)

    history_text = source.completed_text or source.user_text
    missing = []
    if not assessment.metrics:
        missing.append("metric")
    if not assessment.dimensions:
        missing.append("dimension")
    prompt = (
        f"Current question: {text}\n"
        f"It is missing: {', '.join(missing)}.\n"
        f"Most recent complete question: {history_text}\n"
        "Rewrite the current question as one self-contained question, carrying "
        "over the missing elements from the earlier one. Reply with only the "
        "rewritten question."
    )
    completed = gateway.ask(prompt, tag="history_complete").strip()
    return CompletionResult(text=completed, source_turn_id=source.turn_id)


def classify_intent(text: str, gateway: Gateway) -> IntentClass:
    """Single-token classification of the completed question."""
    if not text.strip():
        raise ValueError("text must be non-empty")
    prompt = (
        "Classify this analytics question:\n"
        f"{text}\n"
        "Reply with exactly one character: 2 if it names both a metric and a "
        "dimension, 1 if it lacks one of them, 0 if it is not a data-analysis "
        "question."
    )
    reply = gateway.ask(prompt, tag="intent_classify").strip()
    if reply not in ("0", "1", "2"):
        raise ClassificationError("intent reply outside {0,1,2}", reply)
    return IntentClass(value=int(reply))


REJECT_MESSAGE = (
    "I can only help with data-analysis questions. Try asking about a metric "
    "over a time period, region, or other dimension."
)
ASK_MISSING_MESSAGE = (
    "I need a bit more to build this query: please name both the measure you "
    "want (e.g. sales count) and the scope (e.g. a time period or region)."
)


def route_intent(intent: IntentClass, session: SessionState) -> RouteAction:
    """Map intent class to the dialogue action; repeated asks downgrade."""
    if intent.value == 0:
        return RouteAction(kind="reject", message=REJECT_MESSAGE)
    if intent.value == 1:
        if session.consecutive_asks() >= MAX_CONSECUTIVE_ASKS:
            return RouteAction(
                kind="reject",
                message="I still don't have enough detail to build this query. "
                + REJECT_MESSAGE,
            )
        return RouteAction(kind="ask_missing", message=ASK_MISSING_MESSAGE)
    return RouteAction(kind="proceed")


def clarify_intent(
    text: str,
    hits: list[RetrievalHit],
    gateway: Gateway,
    store: KnowledgeStore | None = None,
    round_index: int = 1,
    max_rounds: int = 3,
) -> ClarifyOutcome:
    """Refine the query with domain knowledge, or ask the user to disambiguate."""
    if round_index > max_rounds:
        raise ClarificationExhausted(
            f"no usable rewrite after {max_rounds} clarification rounds"
        )
    triplet_lines = ""
    if store is not None:
        triplets = store.triplets(hits)
        triplet_lines = "\n".join(
            f'- ("{t.term}", "{t.definition}", "{t.demonstration}")' for t in triplets
        )
    knowledge_lines = "\n".join(f"- [{h.entry.label}] {h.entry.render()}" for h in hits)
    prompt = (
        "Refine this analytics question so it maps unambiguously onto the schema.\n"
        f"Question: {text}\n"
        f"Domain knowledge:\n{knowledge_lines}\n"
        + (f"Term triplets:\n{triplet_lines}\n" if triplet_lines else "")
        + 'If unambiguous, reply {"outcome": "rewritten", "text": "<refined question>"}.\n'
        'If the user must choose, reply {"outcome": "needs_user", "question": "...", '
        '"options": [{"id": "...", "label": "...", "description": "..."}], '
        '"allows_free_text": true}.'
    )
    reply = gateway.ask(prompt, tag="intent_clarify")
    try:
        raw = json.loads(reply)
        outcome = raw["outcome"]
        if outcome == "rewritten":
            rewritten = str(raw["text"]).strip()
            if not rewritten:
                raise KeyError("text")
            return ClarifyOutcome(kind="rewritten", text=rewritten)
        if outcome == "needs_user":
            options = tuple(
                (str(o["id"]), str(o["label"]), str(o.get("description", "")))
                for o in raw.get("options", [])
            )
            request = ClarificationRequest(
                question_text=str(raw["question"]),
                options=options,
                allows_free_text=bool(raw.get("allows_free_text", True)),
            )
            return ClarifyOutcome(kind="needs_user", request=request)
        raise KeyError(f"outcome {outcome!r}")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ExtractionError(f"bad clarification reply ({exc})", reply) from exc


def merge_clarification_answer(base_text: str, answer: str) -> str:
    """Fold the user's clarification answer back into the pending question."""
    return f"{base_text} [clarified: {answer}]"
