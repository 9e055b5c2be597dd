"""
SQL generation: strategy selection, two-step IR-based generation, one-step
endpoint routing, and schema validation on the embedded engine.

Strategy choice is a pure rule over two deployment facts: the labeled-pair
count and the keyword-embedding similarity between the target domain and
the labeled source domain. Rich-data, near-domain deployments route to the
one-step fine-tuned endpoint; everything else takes the two-step path that
first rewrites the question into a structured intermediate form (key
components, knowledge mapping, understanding, rewritten query) and then
prompts a code model with the rewritten query plus the candidate-table
schema. Generated SQL never leaves this module unvalidated: one bounded
self-repair round runs with the violation text fed back, after which
generation fails loudly.
"""

from __future__ import annotations

import json
import re
import sqlite3
from dataclasses import dataclass, field

import numpy as np

from .database import ColumnDef, Schema, TableDef, schema_scratch_connection
from .gateway import ChatRequest, EmbeddingVector, Gateway, ProviderConfig, TransportError, chat, cosine
from .knowledge import RetrievalHit
from .tables import TableProfile

__all__ = [
    "ONE_STEP",
    "TWO_STEP",
    "StrategyThresholds",
    "DomainProfile",
    "SemanticIR",
    "GeneratedSQL",
    "SqlValidation",
    "SirParseError",
    "GenerationError",
    "ConfigurationError",
    "domain_similarity",
    "select_strategy",
    "select_demonstrations",
    "build_sir",
    "generate_sql_two_step",
    "generate_sql_one_step",
    "validate_sql",
    "schema_from_profiles",
    "referenced_tables",
]

ONE_STEP = "one_step"
TWO_STEP = "two_step"

_WIRE_KEYS = ("Key Components", "Knowledge Mapping", "Query Understanding", "Rewritten Query")


class SirParseError(ValueError):
    """Gateway reply could not be parsed into a valid intermediate form."""


class GenerationError(RuntimeError):
    """SQL failed validation even after the repair round."""


class ConfigurationError(ValueError):
    """Strategy routing asked for an impossible combination."""


@dataclass(frozen=True)
class StrategyThresholds:
    n_threshold: int = 500
    s_threshold: float = 0.7

    def __post_init__(self) -> None:
        if self.n_threshold <= 0:
            raise ValueError("n_threshold must be positive")
        if not 0.0 <= self.s_threshold <= 1.0:
            raise ValueError("s_threshold must be in [0, 1]")


@dataclass(frozen=True)
class DomainProfile:
    name: str
    keywords: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.keywords:
            raise ValueError(f"domain {self.name!r} needs at least one keyword")


@dataclass(frozen=True)
class SemanticIR:
    """Structured rewrite of a user query, built before SQL generation."""

    key_components: dict[str, object]
    knowledge_mapping: tuple[str, ...]
    query_understanding: str
    rewritten_query: str

    def __post_init__(self) -> None:
        if not self.key_components:
            raise SirParseError("key components must be non-empty")
        if not self.rewritten_query.strip():
            raise SirParseError("rewritten query must be non-empty")

    def to_wire(self) -> dict:
        return {
            "Key Components": dict(self.key_components),
            "Knowledge Mapping": list(self.knowledge_mapping),
            "Query Understanding": self.query_understanding,
            "Rewritten Query": self.rewritten_query,
        }

    @staticmethod
    def from_wire(raw: dict) -> "SemanticIR":
        missing = [k for k in _WIRE_KEYS if k not in raw]
        if missing:
            raise SirParseError(f"missing fields: {missing}")
        components = raw["Key Components"]
        if not isinstance(components, dict):
            raise SirParseError("Key Components must be an object")
        mapping = raw["Knowledge Mapping"]
        if not isinstance(mapping, list):
            raise SirParseError("Knowledge Mapping must be a list")
        return SemanticIR(
            key_components=components,
            knowledge_mapping=tuple(str(m) for m in mapping),
            query_understanding=str(raw["Query Understanding"]),
            rewritten_query=str(raw["Rewritten Query"]),
        )


@dataclass
class GeneratedSQL:
    sql_text: str
    strategy: str  # one_step | two_step
    sir: SemanticIR | None = None
    tables_used: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


@dataclass
class SqlValidation:
    ok: bool
    violations: list[str] = field(default_factory=list)


def domain_similarity(target: DomainProfile, source: DomainProfile, gateway: Gateway) -> float:
    """Cosine between the mean keyword embeddings of the two domains."""
    t_vecs = gateway.embed(list(target.keywords))
    s_vecs = gateway.embed(list(source.keywords))
    t_mean = EmbeddingVector(values=np.mean([v.values for v in t_vecs], axis=0))
    s_mean = EmbeddingVector(values=np.mean([v.values for v in s_vecs], axis=0))
    return cosine(t_mean, s_mean)


def select_strategy(n_labeled: int, s_domain: float, thresholds: StrategyThresholds) -> str:
    """One-step only when both the data volume and domain similarity clear
    their thresholds (inclusive); otherwise two-step."""
    if n_labeled < 0:
        raise ValueError("n_labeled must be non-negative")
    if n_labeled >= thresholds.n_threshold and s_domain >= thresholds.s_threshold:
        return ONE_STEP
    return TWO_STEP


def select_demonstrations(query: str, demonstrations: list[str], k: int, gateway: Gateway) -> list[str]:
    """Top-k demonstrations by embedding similarity to the query."""
    if not demonstrations or k <= 0:
        return []
    qv = gateway.embed_one(query)
    scored = [
        (i, cosine(qv, vec)) for i, vec in enumerate(gateway.embed(demonstrations))
    ]
    scored.sort(key=lambda p: (-p[1], p[0]))
    return [demonstrations[i] for i, _ in scored[:k]]


def _knowledge_lines(hits: list[RetrievalHit]) -> str:
    return "\n".join(f"- [{h.entry.label}] {h.entry.render()}" for h in hits)


def _mention_candidates(hits: list[RetrievalHit]) -> list[str]:
    return [h.entry.name for h in hits if h.entry.label in ("table", "column")]


def build_sir(
    query: str,
    hits: list[RetrievalHit],
    demonstrations: list[str],
    gateway: Gateway,
) -> SemanticIR:
    """Rewrite the clarified query into the structured intermediate form.

    One repair retry on an invalid reply; the rewritten query must mention
    at least one retrieved schema identifier when any were supplied.
    """
    demo_block = "\n\n".join(demonstrations)
    prompt = (
        "Rewrite the analytics question into a structured form.\n"
        f"Question: {query}\n"
        "Relevant knowledge:\n"
        f"{_knowledge_lines(hits)}\n"
        + (f"Examples:\n{demo_block}\n" if demo_block else "")
        + "Think through the intent step by step, then reply with JSON holding exactly "
        "these fields: \"Key Components\" (object), \"Knowledge Mapping\" (list), "
        "\"Query Understanding\" (string), \"Rewritten Query\" (string)."
    )
    candidates = _mention_candidates(hits)
    last_error: Exception | None = None
    for attempt in range(2):
        reply = gateway.ask(
            prompt if attempt == 0 else (
                prompt + f"\nYour previous reply was invalid ({last_error}). "
                "Reply with only the JSON object."
            ),
            tag="sir_build",
        )
        try:
            sir = SemanticIR.from_wire(json.loads(_strip_fences(reply)))
        except (json.JSONDecodeError, SirParseError) as exc:
            last_error = exc
            continue
        if candidates and not _mentions_any(sir.rewritten_query, candidates):
            last_error = SirParseError("rewritten query names no retrieved identifier")
            continue
        return sir
    raise SirParseError(f"could not parse intermediate form: {last_error}")


def _mentions_any(text: str, names: list[str]) -> bool:
    lowered = text.lower()
    return any(name.lower() in lowered for name in names)


def _strip_fences(reply: str) -> str:
    text = reply.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\n?", "", text)
        text = re.sub(r"\n?```$", "", text)
    if text.lower().startswith("sql:"):
        text = text[4:]
    return text.strip()


def schema_from_profiles(profiles: list[TableProfile]) -> Schema:
    tables = tuple(
        TableDef(
            name=p.table_name,
            columns=tuple(ColumnDef(name=n, type=t, comment=c) for n, t, c in p.columns),
        )
        for p in profiles
    )
    return Schema(tables=tables)


def referenced_tables(sql_text: str, schema: Schema) -> list[str]:
    """Schema tables whose names appear as words in the statement."""
    out = []
    for name in schema.table_names():
        if re.search(rf"\b{re.escape(name)}\b", sql_text, flags=re.IGNORECASE):
            out.append(name)
    return out


_SELECT_STARTERS = ("select", "with", "values")
_COMMENT_RE = re.compile(r"--[^\n]*|/\*.*?\*/", re.DOTALL)


def validate_sql(sql_text: str, schema: Schema) -> SqlValidation:
    """Check the statement against the schema on the embedded engine.

    Violations (not exceptions): empty input, non-SELECT statement heads,
    multiple statements, unknown tables/columns/functions, syntax errors.
    """
    stripped = _COMMENT_RE.sub(" ", sql_text).strip()
    if not stripped:
        return SqlValidation(ok=False, violations=["empty statement"])
    head = stripped.split(None, 1)[0].lower().rstrip("(")
    if head not in _SELECT_STARTERS:
        return SqlValidation(ok=False, violations=[f"not a SELECT-family statement: {head!r}"])

    conn = schema_scratch_connection(schema)
    try:
        conn.execute(sql_text)
    except (sqlite3.Warning, sqlite3.ProgrammingError) as exc:
        message = str(exc)
        if "one statement" in message:
            return SqlValidation(ok=False, violations=["multiple statements in one request"])
        return SqlValidation(ok=False, violations=[f"statement rejected: {message}"])
    except sqlite3.Error as exc:
        return SqlValidation(ok=False, violations=[_normalize_engine_error(str(exc))])
    finally:
        conn.close()
    return SqlValidation(ok=True)


def _normalize_engine_error(message: str) -> str:
    for engine_prefix, label in (
        ("no such table:", "unknown table:"),
        ("no such column:", "unknown column:"),
        ("no such function:", "unknown function:"),
        ("ambiguous column name:", "ambiguous column:"),
    ):
        if engine_prefix in message:
            detail = message.split(engine_prefix, 1)[1].strip()
            return f"{label} {detail}"
    return f"syntax error: {message}"


def _ask_sql(prompt: str, tag: str, config: ProviderConfig) -> str:
    return _strip_fences(chat(ChatRequest.of(prompt, tag=tag), config).text)


def _generate_validated(
    base_prompt: str,
    tag: str,
    repair_tag: str,
    config: ProviderConfig,
    schema: Schema,
) -> tuple[str, SqlValidation]:
    """One generation attempt plus one bounded repair round."""
    sql_text = _ask_sql(base_prompt, tag, config)
    report = validate_sql(sql_text, schema)
    if report.ok:
        return sql_text, report
    repair_prompt = (
        base_prompt
        + f"\nYour previous statement was rejected:\n{sql_text}\n"
        + "Violations:\n"
        + "\n".join(f"- {v}" for v in report.violations)
        + "\nReply with a corrected single SELECT statement."
    )
    sql_text = _ask_sql(repair_prompt, repair_tag, config)
    return sql_text, validate_sql(sql_text, schema)


def generate_sql_two_step(
    sir: SemanticIR,
    selected: list[TableProfile],
    gateway: Gateway,
) -> GeneratedSQL:
    """Prompt with the rewritten query plus the selected tables' schema."""
    if not selected:
        raise ValueError("two-step generation needs at least one selected table")
    schema = schema_from_profiles(selected)
    prompt = (
        "Write one SQL SELECT statement for this request.\n"
        f"Request: {sir.rewritten_query}\n"
        "Schema:\n"
        f"{schema.render()}\n"
        "Reply with only the SQL."
    )
    sql_text, report = _generate_validated(
        prompt, "sql_generate", "sql_repair", gateway.chat_config, schema
    )
    if not report.ok:
        raise GenerationError(f"SQL failed validation after repair: {report.violations}")
    return GeneratedSQL(
        sql_text=sql_text,
        strategy=TWO_STEP,
        sir=sir,
        tables_used=referenced_tables(sql_text, schema),
    )


def generate_sql_one_step(
    query: str,
    selected: list[TableProfile],
    endpoint: ProviderConfig | None,
    gateway: Gateway,
    strategy: str = ONE_STEP,
    force_one_step: bool = False,
) -> GeneratedSQL:
    """Route query + schema to the fine-tuned endpoint; degrade to two-step.

    Forcing one-step when the strategy rule chose two-step is a
    configuration error, not a silent override.
    """
    if strategy != ONE_STEP:
        if force_one_step:
            raise ConfigurationError("one_step forced but the strategy rule selected two_step")
        return _two_step_fallback(query, selected, gateway, warning="one_step_not_selected")
    if endpoint is None:
        return _two_step_fallback(query, selected, gateway, warning="one_step_unavailable")

    if not selected:
        raise ValueError("one-step generation needs at least one selected table")
    schema = schema_from_profiles(selected)
    prompt = (
        "Translate the request into one SQL SELECT statement.\n"
        f"Request: {query}\n"
        "Schema:\n"
        f"{schema.render()}\n"
        "Reply with only the SQL."
    )
    try:
        sql_text, report = _generate_validated(
            prompt, "one_step_sql", "one_step_sql", endpoint, schema
        )
    except TransportError:
        return _two_step_fallback(query, selected, gateway, warning="one_step_unavailable")
    if not report.ok:
        raise GenerationError(f"SQL failed validation after repair: {report.violations}")
    return GeneratedSQL(
        sql_text=sql_text,
        strategy=ONE_STEP,
        tables_used=referenced_tables(sql_text, schema),
    )


def _two_step_fallback(
    query: str, selected: list[TableProfile], gateway: Gateway, warning: str
) -> GeneratedSQL:
    sir = build_sir(query, hits=[], demonstrations=[], gateway=gateway)
    result = generate_sql_two_step(sir, selected, gateway)
    result.warnings.append(warning)
    return result
