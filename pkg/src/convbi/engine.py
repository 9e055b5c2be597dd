"""
Per-message orchestration of the whole pipeline.

One message travels: integrity assessment -> completion from history ->
intent classification and routing -> knowledge retrieval -> clarification
(possibly handing options back to the user) -> table selection -> strategy
choice -> SQL generation -> execution -> optional insight planning. Every
domain failure maps to a structured reject/ask reply; the transport layer
only ever sees clean MessageResponse objects.

Sessions serialize their own messages (one in-flight message per session);
distinct sessions proceed concurrently. Answered turns are mirrored into
the knowledge store as history entries so later retrieval can see them.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from . import dialogue as dlg
from .config import EngineConfig
from .database import Schema, connect, run_select_capped
from .dialogue import (
    Assessment,
    ClarificationExhausted,
    ClarificationRequest,
    DialogueTurn,
    PendingClarification,
    SessionState,
    SessionStore,
)
from .gateway import Gateway, GatewayError, TransportError
from .insight import InsightRunner, InsightRequest
from .knowledge import KnowledgeEntry, KnowledgeStore, ValidationError
from .sqlgen import (
    ONE_STEP,
    GeneratedSQL,
    GenerationError,
    SirParseError,
    build_sir,
    domain_similarity,
    generate_sql_one_step,
    generate_sql_two_step,
    select_demonstrations,
    select_strategy,
)
from .tables import ScoredTable, TableSelector, profile_tables

__all__ = ["Engine", "MessageResponse", "UnknownSessionError"]

INSIGHT_HINTS = ("attribut", "why", "forecast", "diagnos", "compare", "root cause")

RETRIEVE_K = 10
RETRIEVE_N = 12
FEWSHOT_K = 3


class UnknownSessionError(KeyError):
    pass


@dataclass
class MessageResponse:
    kind: str  # answer | clarify | ask_missing | reject
    message: str = ""
    sql: str | None = None
    columns: list[str] | None = None
    rows: list[list] | None = None
    truncated: bool = False
    sir: dict | None = None
    insight: dict | None = None
    options: list[dict] | None = None
    allows_free_text: bool | None = None
    warnings: list[str] = field(default_factory=list)
    code: str | None = None

    def __post_init__(self) -> None:
        if self.kind == "answer" and not self.sql:
            raise ValueError("answer replies must carry sql")
        if self.kind == "clarify" and self.options is None:
            raise ValueError("clarify replies must carry options")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "message": self.message, "warnings": list(self.warnings)}
        for key in ("sql", "columns", "rows", "sir", "insight", "options",
                    "allows_free_text", "code"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        out["truncated"] = self.truncated
        return out


def _clarify_response(request: ClarificationRequest) -> MessageResponse:
    return MessageResponse(
        kind="clarify",
        message=request.question_text,
        options=[
            {"option_id": oid, "label": label, "description": desc}
            for oid, label, desc in request.options
        ],
        allows_free_text=request.allows_free_text,
    )


class Engine:
    """Builds every module from one config and serves messages."""

    def __init__(self, config: EngineConfig):
        self.config = config
        self.gateway = Gateway(
            chat_config=config.chat_provider,
            embed_config=config.embed_provider,
            rerank_config=config.rerank_provider,
            judge_config=config.judge_provider,
            one_step_config=config.one_step_provider,
        )
        self.knowledge = KnowledgeStore(self.gateway)
        if config.knowledge_dir:
            for path in sorted(Path(config.knowledge_dir).glob("*.jsonl")):
                self.knowledge.import_jsonl(path)
        self.schema = Schema.load(config.schema_file)
        self.selector = TableSelector(profile_tables(self.schema, self.gateway), self.gateway)
        self.sessions = SessionStore(config.sessions_dir)
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._replies: dict[str, dict[int, dict]] = {}
        self._db_path = config.database_path
        self.fewshots: list[str] = []
        if config.fewshot_file:
            self.fewshots = [
                line.strip()
                for line in Path(config.fewshot_file).read_text(encoding="utf-8").splitlines()
                if line.strip()
            ]
        self.s_domain = 1.0
        if config.target_domain and config.source_domain:
            self.s_domain = domain_similarity(
                config.target_domain, config.source_domain, self.gateway
            )
        self.strategy = select_strategy(config.n_labeled, self.s_domain, config.thresholds)

    # -- EngineLike surface ----------------------------------------------------

    def create_session(self) -> str:
        session_id = uuid.uuid4().hex[:12]
        self.sessions.create(session_id)
        with self._locks_guard:
            self._session_locks[session_id] = threading.Lock()
        return session_id

    def send(self, session_id: str, text: str, insight: bool = False) -> dict:
        return self.handle_message(session_id, text, insight=insight).to_dict()

    def use_database(self, db_path: str | Path) -> None:
        """Point execution at another database file (evaluation replays)."""
        self._db_path = Path(db_path)

    def transcript(self, session_id: str) -> SessionState:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(session_id)
        return session

    # -- message pipeline --------------------------------------------------------

    def handle_message(self, session_id: str, text: str, insight: bool = False) -> MessageResponse:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(session_id)
        if not text or not text.strip():
            raise ValueError("message text must be non-empty")
        lock = self._lock_for(session_id)
        with lock:
            try:
                return self._handle_locked(session, text.strip(), insight)
            except (GatewayError, TransportError) as exc:
                return self._record_simple(
                    session, text, "reject",
                    "The analysis service is unavailable right now.", code="provider_error",
                    detail=str(exc),
                )
            except (dlg.ExtractionError, SirParseError, GenerationError) as exc:
                return self._record_simple(
                    session, text, "reject",
                    "I could not turn that into a query.", code=type(exc).__name__,
                    detail=str(exc),
                )

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._session_locks.setdefault(session_id, threading.Lock())

    def _handle_locked(self, session: SessionState, text: str, insight: bool) -> MessageResponse:
        if session.pending_clarification is not None:
            return self._resume_clarification(session, text, insight)

        if self.config.features.completion:
            assessment = dlg.assess_integrity(text, self.gateway)
            completion = dlg.complete_from_history(text, assessment, session, self.gateway)
            completed = completion.text
        else:
            assessment = Assessment((), ())
            completed = text

        intent = dlg.classify_intent(completed, self.gateway)
        action = dlg.route_intent(intent, session)
        if action.kind != "proceed":
            return self._record(
                session, text, assessment, completed, intent.value,
                MessageResponse(kind=action.kind, message=action.message),
            )

        retrieval = self.knowledge.retrieve(completed, RETRIEVE_K, RETRIEVE_N, sql_context=True)

        if self.config.features.clarification:
            outcome = dlg.clarify_intent(
                completed, retrieval.hits, self.gateway, store=self.knowledge,
                round_index=1, max_rounds=self.config.max_clarify_rounds,
            )
            if outcome.kind == "needs_user":
                session.pending_clarification = PendingClarification(
                    request=outcome.request, base_text=completed, round=1
                )
                return self._record(
                    session, text, assessment, completed, intent.value,
                    _clarify_response(outcome.request),
                )
            final_query = outcome.text
        else:
            final_query = completed

        response = self._generate_and_answer(final_query, retrieval, insight,
                                             warnings=list(retrieval.flags))
        return self._record(session, text, assessment, completed, intent.value, response)

    def _resume_clarification(self, session: SessionState, text: str, insight: bool) -> MessageResponse:
        pending = session.pending_clarification
        option = pending.request.option(text.strip())
        answer = f"{option[1]} ({option[2]})" if option else text.strip()
        merged = dlg.merge_clarification_answer(pending.base_text, answer)
        session.pending_clarification = None

        retrieval = self.knowledge.retrieve(merged, RETRIEVE_K, RETRIEVE_N, sql_context=True)
        try:
            outcome = dlg.clarify_intent(
                merged, retrieval.hits, self.gateway, store=self.knowledge,
                round_index=pending.round + 1, max_rounds=self.config.max_clarify_rounds,
            )
        except ClarificationExhausted:
            return self._record(
                session, text, Assessment((), ()), merged, 2,
                MessageResponse(
                    kind="reject",
                    message="I couldn't pin down the intent after several tries; "
                    "please rephrase the question in one sentence.",
                    code="clarification_exhausted",
                ),
            )
        if outcome.kind == "needs_user":
            session.pending_clarification = PendingClarification(
                request=outcome.request, base_text=merged, round=pending.round + 1
            )
            return self._record(
                session, text, Assessment((), ()), merged, 2,
                _clarify_response(outcome.request),
            )
        response = self._generate_and_answer(outcome.text, retrieval, insight,
                                             warnings=list(retrieval.flags))
        return self._record(session, text, Assessment((), ()), merged, 2, response)

    def _generate_and_answer(self, query: str, retrieval, insight: bool,
                             warnings: list[str]) -> MessageResponse:
        selected = self.selector.select_tables(query, self.config.scoring)
        if not selected:
            return MessageResponse(
                kind="ask_missing",
                message="I couldn't match any tables; name the dataset or measure "
                "you want analyzed.",
                code="no_candidate_tables",
            )
        generated = self._generate(query, selected, retrieval)
        warnings = warnings + generated.warnings

        conn = connect(self._db_path)
        try:
            table, truncated = run_select_capped(conn, generated.sql_text, self.config.row_cap)
        except Exception as exc:
            return MessageResponse(
                kind="reject",
                message="The generated query failed to execute.",
                code="sql_execution_failed",
                warnings=warnings + [str(exc)],
            )
        finally:
            conn.close()

        insight_report = None
        if insight or self._wants_insight(query):
            insight_report = self._run_insight(query, generated, table)

        return MessageResponse(
            kind="answer",
            message="Here is the result.",
            sql=generated.sql_text,
            columns=table.columns,
            rows=[list(r) for r in table.rows],
            truncated=truncated,
            sir=generated.sir.to_wire() if generated.sir else None,
            insight=insight_report,
            warnings=warnings,
        )

    def _generate(self, query: str, selected: list[ScoredTable], retrieval) -> GeneratedSQL:
        profiles = [s.profile for s in selected]
        if self.strategy == ONE_STEP:
            return generate_sql_one_step(
                query, profiles, self.config.one_step_provider, self.gateway,
                strategy=self.strategy,
            )
        demos = select_demonstrations(query, self.fewshots, FEWSHOT_K, self.gateway)
        sir = build_sir(query, retrieval.hits, demos, self.gateway)
        return generate_sql_two_step(sir, profiles, self.gateway)

    def _wants_insight(self, query: str) -> bool:
        lowered = query.lower()
        return any(hint in lowered for hint in INSIGHT_HINTS)

    def _run_insight(self, query: str, generated: GeneratedSQL, base_table) -> dict:
        conn = connect(self._db_path)
        try:
            runner = InsightRunner(
                gateway=self.gateway,
                nl2sql=self.nl2sql,
                conn=conn,
                max_steps=self.config.max_steps,
            )
            request = InsightRequest(
                user_text=query, session_id="insight",
                base_sql=generated.sql_text, base_rows=base_table,
            )
            knowledge_text = "\n".join(
                h.entry.render() for h in
                self.knowledge.retrieve(query, RETRIEVE_K, 5).hits
            )
            return runner.run(request, knowledge_text).to_dict()
        finally:
            conn.close()

    def nl2sql(self, question: str) -> str:
        """One-shot two-step translation, used by insight data preparation
        and the pipeline's forward generator."""
        selected = self.selector.select_tables(question, self.config.scoring)
        if not selected:
            raise ValueError("no candidate tables for data preparation")
        retrieval = self.knowledge.retrieve(question, RETRIEVE_K, RETRIEVE_N, sql_context=True)
        sir = build_sir(question, retrieval.hits, [], self.gateway)
        return generate_sql_two_step(sir, [s.profile for s in selected], self.gateway).sql_text

    # -- bookkeeping -----------------------------------------------------------------

    def _record(self, session: SessionState, user_text: str, assessment: Assessment,
                completed: str, intent: int | None, response: MessageResponse) -> MessageResponse:
        turn = DialogueTurn(
            turn_id=session.next_turn_id(),
            user_text=user_text,
            detected_metrics=list(assessment.metrics),
            detected_dimensions=list(assessment.dimensions),
            completed_text=completed if intent is not None else None,
            intent=intent,
            system_reply_kind=response.kind,
        )
        session.append_turn(turn)
        self.sessions.persist_turn(session, turn)
        self._remember_reply(session.session_id, turn, response)
        if response.kind == "answer":
            self._mirror_history(session.session_id, turn, response)
        return response

    def _record_simple(self, session: SessionState, user_text: str, kind: str,
                       message: str, code: str, detail: str = "") -> MessageResponse:
        response = MessageResponse(kind=kind, message=message, code=code,
                                   warnings=[detail] if detail else [])
        return self._record(session, user_text, Assessment((), ()), user_text, None, response)

    def _remember_reply(self, session_id: str, turn: DialogueTurn, response: MessageResponse) -> None:
        self._replies.setdefault(session_id, {})[turn.turn_id] = response.to_dict()

    def reply_for(self, session_id: str, turn_id: int) -> dict | None:
        return self._replies.get(session_id, {}).get(turn_id)

    def _mirror_history(self, session_id: str, turn: DialogueTurn, response: MessageResponse) -> None:
        entry = KnowledgeEntry(
            id=f"history:{session_id}:{turn.turn_id}",
            label="history",
            name=f"{session_id}:{turn.turn_id}",
            description=turn.completed_text or turn.user_text,
            demonstration=response.sql,
        )
        try:
            self.knowledge.ingest([entry])
        except ValidationError:
            pass  # history mirroring must never break the reply
