"""
Automated training-data preparation for the one-step generation path.

Question/SQL pairs are produced two ways: reverse-engineering questions from
real SQL logs (the model sees the SQL, the schema, domain knowledge, and any
manually annotated demonstrations) and generating question sets from the
schema that a forward NL-to-SQL translator turns into pairs. Both streams
pass a judge-scored quality gate (with an optional manual veto file), the
survivors are diversified by self-instruct-style rewrites, and finally a
configured fraction of negative examples is injected by corrupting sampled
positives along client-named error categories. Every stage is deterministic
under the configured seed; reruns write byte-identical datasets.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .database import Schema
from .gateway import Gateway
from .sqlgen import validate_sql

__all__ = [
    "SOURCES",
    "QuerySQLPair",
    "PipelineConfig",
    "PipelineReport",
    "load_sql_log",
    "reverse_engineer",
    "generate_from_schema",
    "quality_filter",
    "augment",
    "inject_negatives",
    "run_pipeline",
]

SOURCES = ("reverse_engineered", "schema_generated", "augmented", "negative")

ERROR_CATALOG = ("wrong_column", "wrong_aggregate", "dropped_filter", "wrong_table")

_AGGREGATE_SWAP = {"SUM": "COUNT", "COUNT": "AVG", "AVG": "MAX", "MAX": "MIN", "MIN": "SUM"}


def pair_id_for(question: str, sql: str) -> str:
    return hashlib.sha1(f"{question}\x1f{sql}".encode("utf-8")).hexdigest()[:12]


@dataclass
class QuerySQLPair:
    question: str
    sql: str
    source: str
    quality: float | None = None
    error_category: str | None = None
    pair_id: str = ""

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.source == "negative" and not self.error_category:
            raise ValueError("negative pairs must carry an error_category")
        if not self.pair_id:
            self.pair_id = pair_id_for(self.question, self.sql)

    def to_dict(self) -> dict:
        out = {
            "pair_id": self.pair_id,
            "question": self.question,
            "sql": self.sql,
            "source": self.source,
        }
        if self.quality is not None:
            out["quality"] = self.quality
        if self.error_category is not None:
            out["error_category"] = self.error_category
        return out

    @staticmethod
    def from_dict(raw: dict) -> "QuerySQLPair":
        return QuerySQLPair(
            question=raw["question"],
            sql=raw["sql"],
            source=raw["source"],
            quality=raw.get("quality"),
            error_category=raw.get("error_category"),
            pair_id=raw.get("pair_id", ""),
        )


@dataclass(frozen=True)
class PipelineConfig:
    negative_ratio: float = 0.05
    quality_floor: float = 0.5
    augment_factor: int = 2
    error_categories: tuple[str, ...] = ERROR_CATALOG
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.negative_ratio <= 0.5:
            raise ValueError("negative_ratio must be in [0, 0.5]")
        if not 0.0 <= self.quality_floor <= 1.0:
            raise ValueError("quality_floor must be in [0, 1]")
        if self.augment_factor < 0:
            raise ValueError("augment_factor must be non-negative")
        if self.negative_ratio > 0 and not self.error_categories:
            raise ValueError("negative injection needs error categories")


@dataclass
class PipelineReport:
    stage_counts: dict[str, int] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    flagged: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage_counts": dict(self.stage_counts),
            "skipped": list(self.skipped),
            "flagged": list(self.flagged),
        }


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def load_sql_log(path: str | Path) -> list[str]:
    """Read a SQL log: one statement per line, or JSONL objects with "sql"."""
    statements = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("{"):
            try:
                entry = json.loads(line)
                statements.append(str(entry["sql"]))
                continue
            except (json.JSONDecodeError, KeyError):
                pass
        statements.append(line)
    return statements


def reverse_engineer(
    sql_log: list[str],
    schema: Schema,
    knowledge_lines: list[str],
    gateway: Gateway,
    demonstrations: list[str] | None = None,
) -> tuple[list[QuerySQLPair], list[str]]:
    """One pair per valid log statement; invalid or failing entries are
    skipped and reported, never silently dropped."""
    pairs: list[QuerySQLPair] = []
    skipped: list[str] = []
    demo_block = "\n".join(demonstrations or [])
    knowledge_block = "\n".join(knowledge_lines)
    for statement in sql_log:
        statement = statement.strip()
        if not statement:
            continue
        report = validate_sql(statement, schema)
        if not report.ok:
            skipped.append(f"invalid sql: {statement[:80]} ({report.violations[0]})")
            continue
        prompt = (
            "Recover the business question a user answered with this SQL.\n"
            f"SQL: {statement}\n"
            f"Schema:\n{schema.render()}\n"
            + (f"Domain knowledge:\n{knowledge_block}\n" if knowledge_block else "")
            + (f"Annotated examples:\n{demo_block}\n" if demo_block else "")
            + "Reply with only the question."
        )
        try:
            question = gateway.ask(prompt, tag="reverse_engineer").strip()
        except Exception as exc:
            skipped.append(f"gateway failure: {statement[:80]} ({exc})")
            continue
        pairs.append(QuerySQLPair(question=question, sql=statement, source="reverse_engineered"))
    return pairs, skipped


def generate_from_schema(
    schema: Schema,
    gateway: Gateway,
    translate: Callable[[str], str],
) -> list[QuerySQLPair]:
    """Question sets from the schema, translated forward; only validating
    pairs are kept."""
    if not schema.tables:
        raise ValueError("schema must be non-empty")
    prompt = (
        "Propose natural analytics questions answerable from this schema.\n"
        f"{schema.render()}\n"
        'Reply with JSON {"questions": ["..."]}.'
    )
    reply = gateway.ask(prompt, tag="schema_questions")
    questions = json.loads(reply)["questions"]
    pairs = []
    for question in questions:
        try:
            sql = translate(question)
        except Exception:
            continue
        if validate_sql(sql, schema).ok:
            pairs.append(QuerySQLPair(question=question, sql=sql, source="schema_generated"))
    return pairs


def quality_filter(
    pairs: list[QuerySQLPair],
    gateway: Gateway,
    quality_floor: float,
    veto_ids: set[str] | None = None,
) -> tuple[list[QuerySQLPair], list[str]]:
    """Judge-score each pair and keep those at or above the floor.

    Unparseable judge replies keep the pair with quality unset and a flag;
    veto always wins regardless of score.
    """
    veto_ids = veto_ids or set()
    kept: list[QuerySQLPair] = []
    flagged: list[str] = []
    for pair in pairs:
        if pair.pair_id in veto_ids:
            continue
        prompt = (
            "Rate how faithfully the SQL answers the question, 0.0 to 1.0.\n"
            f"Question: {pair.question}\n"
            f"SQL: {pair.sql}\n"
            "Reply with only the number."
        )
        reply = gateway.judge(prompt, tag="quality_judge")
        try:
            score = float(reply.strip())
            if not 0.0 <= score <= 1.0:
                raise ValueError(reply)
        except ValueError:
            flagged.append(pair.pair_id)
            pair.quality = None
            kept.append(pair)
            continue
        pair.quality = score
        if score >= quality_floor:
            kept.append(pair)
    return kept, flagged


def augment(
    seeds: list[QuerySQLPair],
    augment_factor: int,
    gateway: Gateway,
    schema: Schema,
) -> list[QuerySQLPair]:
    """Self-instruct-style rewrites: up to ``augment_factor`` new validating
    pairs per seed, appended after the seeds."""
    if augment_factor == 0:
        return list(seeds)
    out = list(seeds)
    for seed in seeds:
        prompt = (
            "Write up to "
            f"{augment_factor} question/SQL variations of this pair, keeping the "
            "schema valid but varying phrasing, filters, or aggregates.\n"
            f"Question: {seed.question}\n"
            f"SQL: {seed.sql}\n"
            f"Schema:\n{schema.render()}\n"
            'Reply with JSON {"rewrites": [{"question": "...", "sql": "..."}]}.'
        )
        try:
            reply = gateway.ask(prompt, tag="augment")
            rewrites = json.loads(reply)["rewrites"]
        except Exception:
            continue
        for rewrite in rewrites[:augment_factor]:
            sql = rewrite.get("sql", "")
            if validate_sql(sql, schema).ok:
                out.append(
                    QuerySQLPair(
                        question=rewrite.get("question", ""), sql=sql, source="augmented"
                    )
                )
    return out


def _corrupt(sql: str, category: str, schema: Schema, rng: random.Random) -> tuple[str, str] | None:
    """Apply one corruption operator; returns (corrupted sql, category) or
    None when the operator cannot change this statement."""
    if category == "wrong_column":
        tables = [t for t in schema.tables if any(
            _word_in(c.name, sql) for c in t.columns)]
        for table in tables:
            present = [c.name for c in table.columns if _word_in(c.name, sql)]
            absent = [c.name for c in table.columns if not _word_in(c.name, sql)]
            if present and absent:
                victim = rng.choice(sorted(present))
                replacement = rng.choice(sorted(absent))
                return _word_replace(sql, victim, replacement), category
        return None
    if category == "wrong_aggregate":
        for agg, swap in _AGGREGATE_SWAP.items():
            if _word_in(agg, sql):
                return _word_replace(sql, agg, swap), category
        return None
    if category == "dropped_filter":
        match = re.search(r"\bWHERE\b", sql, flags=re.IGNORECASE)
        if not match:
            return None
        tail = re.split(r"\b(GROUP BY|ORDER BY|LIMIT)\b", sql[match.start():],
                        maxsplit=1, flags=re.IGNORECASE)
        remainder = "" if len(tail) == 1 else " " + "".join(tail[1:])
        return (sql[: match.start()].rstrip() + remainder).strip(), category
    if category == "wrong_table":
        used = [t for t in schema.table_names() if _word_in(t, sql)]
        others = [t for t in schema.table_names() if t not in used]
        if used and others:
            return _word_replace(sql, rng.choice(sorted(used)), rng.choice(sorted(others))), category
        if used:
            return _word_replace(sql, used[0], f"{used[0]}_missing"), category
        return None
    return None


def _word_in(word: str, text: str) -> bool:
    return re.search(rf"\b{re.escape(word)}\b", text, flags=re.IGNORECASE) is not None


def _word_replace(text: str, word: str, replacement: str) -> str:
    return re.sub(rf"\b{re.escape(word)}\b", replacement, text, count=1, flags=re.IGNORECASE)


def inject_negatives(
    pairs: list[QuerySQLPair],
    config: PipelineConfig,
    schema: Schema,
) -> list[QuerySQLPair]:
    """Append corrupted copies of sampled positives so negatives make up
    ``negative_ratio`` of the final set (count solved as
    round(ratio * positives / (1 - ratio)), half-up)."""
    if config.negative_ratio == 0.0 or not pairs:
        return list(pairs)
    n_neg = _round_half_up(config.negative_ratio * len(pairs) / (1.0 - config.negative_ratio))
    rng = random.Random(config.seed)
    out = list(pairs)
    categories = [c for c in config.error_categories if c in ERROR_CATALOG] or list(ERROR_CATALOG)
    for i in range(n_neg):
        victim = rng.choice(pairs)
        first = rng.randrange(len(categories))
        corrupted = None
        for offset in range(len(categories)):
            category = categories[(first + offset) % len(categories)]
            corrupted = _corrupt(victim.sql, category, schema, rng)
            if corrupted is not None and corrupted[0] != victim.sql:
                break
            corrupted = None
        if corrupted is None:
            corrupted = (victim.sql.rstrip().rstrip(";") + " LIMIT 0", categories[first])
        sql, category = corrupted
        out.append(
            QuerySQLPair(
                question=victim.question,
                sql=sql,
                source="negative",
                error_category=category,
                pair_id=hashlib.sha1(
                    f"neg\x1f{victim.pair_id}\x1f{i}\x1f{sql}".encode("utf-8")
                ).hexdigest()[:12],
            )
        )
    return out


@dataclass
class PipelineInputs:
    sql_log: list[str] = field(default_factory=list)
    knowledge_lines: list[str] = field(default_factory=list)
    demonstrations: list[str] = field(default_factory=list)
    veto_ids: set[str] = field(default_factory=set)


def run_pipeline(
    config: PipelineConfig,
    inputs: PipelineInputs,
    schema: Schema,
    gateway: Gateway,
    translate: Callable[[str], str],
    out_path: str | Path,
    report_path: str | Path | None = None,
) -> PipelineReport:
    """Full preparation run; the dataset JSONL and a stage report are written."""
    report = PipelineReport()

    reversed_pairs, skipped = reverse_engineer(
        inputs.sql_log, schema, inputs.knowledge_lines, gateway, inputs.demonstrations
    )
    report.skipped.extend(skipped)
    report.stage_counts["reverse_engineered"] = len(reversed_pairs)

    schema_pairs: list[QuerySQLPair] = []
    if schema.tables:
        try:
            schema_pairs = generate_from_schema(schema, gateway, translate)
        except Exception as exc:
            report.skipped.append(f"schema generation failed: {exc}")
    report.stage_counts["schema_generated"] = len(schema_pairs)

    candidates = reversed_pairs + schema_pairs
    filtered, flagged = quality_filter(candidates, gateway, config.quality_floor, inputs.veto_ids)
    report.flagged.extend(flagged)
    report.stage_counts["quality_filtered"] = len(filtered)

    expanded = augment(filtered, config.augment_factor, gateway, schema)
    new_pairs = expanded[len(filtered):]
    if new_pairs:
        kept_new, flagged_new = quality_filter(
            new_pairs, gateway, config.quality_floor, inputs.veto_ids
        )
        report.flagged.extend(flagged_new)
        expanded = expanded[: len(filtered)] + kept_new
    report.stage_counts["augmented"] = len(expanded)

    final = inject_negatives(expanded, config, schema)
    report.stage_counts["negatives"] = sum(1 for p in final if p.source == "negative")
    report.stage_counts["total"] = len(final)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        for pair in final:
            fh.write(json.dumps(pair.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
    if report_path is not None:
        Path(report_path).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
    return report
