"""Shared fixture environments: the income case-study and multi-round replays.

Each environment is a directory holding config.json, schema.json, a SQLite
database, knowledge JSONL, and a stub script wiring every pipeline stage, so
an Engine can be constructed offline and driven deterministically.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from convbi.config import load_config
from convbi.database import connect
from convbi.engine import Engine

CASE_SQL = (
    "SELECT SUM(shouldincome_after) AS total_income FROM revenue_by_quarter "
    "WHERE YEAR(ftime) = 2024 AND cname = 'Company A'"
)
CASE_QUESTION = "What is the income of the Company A in 2024?"
INSIGHT_QUESTION = "Perform dimension attribution analysis on the revenue of Company A in 2024"

CASE_BASE_INSIGHT_SQL = (
    "SELECT region, SUM(shouldincome_after) AS revenue FROM revenue_by_quarter "
    "WHERE YEAR(ftime) = 2024 AND cname = 'Company A' GROUP BY region"
)
CASE_BEFORE_SQL = (
    "SELECT region, SUM(shouldincome_after) AS revenue FROM revenue_by_quarter "
    "WHERE YEAR(ftime) = 2023 AND cname = 'Company A' GROUP BY region"
)
CASE_AFTER_SQL = CASE_BASE_INSIGHT_SQL

REWRITTEN_INCOME = (
    "Total income after tax ( shouldincome_after ) of company ( cname ) "
    "'Company A' in 2024 from revenue_by_quarter"
)
REWRITTEN_INSIGHT = (
    "Compare revenue ( shouldincome_after ) of Company A by region ( region ) "
    "between 2023 and 2024 in revenue_by_quarter for dimension attribution"
)


def rule(tag: str, contains: str | None, response) -> dict:
    if not isinstance(response, str):
        response = json.dumps(response)
    return {"tag": tag, "contains": contains, "response": response}


def sir_reply(rewritten: str, metric: str = "shouldincome_after") -> dict:
    return {
        "Key Components": {"Metric": metric, "Time Range": "2024"},
        "Knowledge Mapping": [f"income maps to column {metric}"],
        "Query Understanding": rewritten,
        "Rewritten Query": rewritten,
    }


def case_study_rules() -> list[dict]:
    """Stub rules for the income-ambiguity replay plus the attribution insight.

    Patterns anchor on prompt lines that are unique to their stage (history
    entries mirrored into the knowledge store may echo earlier texts inside
    later prompts, so bare substrings would cross-fire).
    """
    resumed_question = f"Question: {CASE_QUESTION} [clarified:"
    prepare_2023 = "revenue by region for Company A in 2023"
    prepare_2024 = "revenue by region for Company A in 2024"
    rewritten_2023 = (
        "Revenue ( shouldincome_after ) by region for cname 'Company A' "
        "in year 2023 from revenue_by_quarter"
    )
    rewritten_2024 = (
        "Revenue ( shouldincome_after ) by region for cname 'Company A' "
        "in year 2024 from revenue_by_quarter"
    )
    return [
        # integrity extraction
        rule("integrity_extract", CASE_QUESTION,
             {"metrics": ["income"], "dimensions": ["2024"]}),
        rule("integrity_extract", "dimension attribution",
             {"metrics": ["revenue"], "dimensions": ["2024", "region"]}),
        rule("integrity_extract", "joke", {"metrics": [], "dimensions": []}),
        rule("integrity_extract", "How about", {"metrics": [], "dimensions": ["Los Angeles"]}),
        # intent classification
        rule("intent_classify", "joke", "0"),
        rule("intent_classify", "Los Angeles", "1"),
        rule("intent_classify", None, "2"),
        # clarification: resumed round first (first rule wins)
        rule("intent_clarify", resumed_question,
             {"outcome": "rewritten", "text": REWRITTEN_INCOME}),
        rule("intent_clarify", "dimension attribution",
             {"outcome": "rewritten", "text": REWRITTEN_INSIGHT}),
        rule("intent_clarify", "income",
             {
                 "outcome": "needs_user",
                 "question": "Does income mean the tax-inclusive or the after-tax column?",
                 "options": [
                     {"id": "shouldincome", "label": "shouldincome",
                      "description": "income including tax"},
                     {"id": "shouldincome_after", "label": "shouldincome_after",
                      "description": "income after tax"},
                 ],
                 "allows_free_text": True,
             }),
        # keyword extraction for table selection
        rule("keyword_extract", "dimension attribution",
             {"keywords": ["revenue", "region", "Company A", "revenue_by_quarter"]}),
        rule("keyword_extract", "shouldincome_after",
             {"keywords": ["shouldincome_after", "Company A", "2024", "revenue_by_quarter"]}),
        rule("keyword_extract", "revenue by region",
             {"keywords": ["revenue", "region", "Company A", "revenue_by_quarter"]}),
        # intermediate representation: most specific question lines first
        rule("sir_build", f"Question: {prepare_2023}", sir_reply(rewritten_2023)),
        rule("sir_build", f"Question: {prepare_2024}", sir_reply(rewritten_2024)),
        rule("sir_build", "dimension attribution", sir_reply(REWRITTEN_INSIGHT)),
        rule("sir_build", "shouldincome_after", sir_reply(REWRITTEN_INCOME)),
        # SQL generation (prompts carry only the rewritten request plus schema)
        rule("sql_generate", "dimension attribution", CASE_BASE_INSIGHT_SQL),
        rule("sql_generate", "in year 2023", CASE_BEFORE_SQL),
        rule("sql_generate", "in year 2024", CASE_AFTER_SQL),
        rule("sql_generate", "shouldincome_after", CASE_SQL),
        # insight planner
        rule("planner", "steps_taken: 0",
             {"kind": "prepare_data", "instruction": prepare_2023,
              "args": {"store_as": "before"}}),
        rule("planner", "steps_taken: 1",
             {"kind": "prepare_data", "instruction": prepare_2024,
              "args": {"store_as": "after"}}),
        rule("planner", "steps_taken: 2",
             {"kind": "run_tool", "instruction": "attribute the revenue change",
              "tool_name": "attribution",
              "args": {"before": "before", "after": "after",
                       "dimension": "region", "metric": "revenue"}}),
        rule("planner", "steps_taken: 3", {"kind": "finalize", "instruction": "summarize"}),
        rule("narrative", None,
             "Company A's 2024 revenue grew; the east region contributed the largest share."),
        # retrieval column filter keeps every candidate
        rule("column_filter", None, {"drop": []}),
        # data pipeline
        rule("schema_questions", None,
             {"questions": ["total income after tax of Company A in 2024"]}),
        rule("reverse_engineer", None, "What did Company A earn after tax?"),
        rule("quality_judge", None, "0.9"),
        rule("augment", None, {"rewrites": []}),
        # judge
        rule("uex_judge", None, "aligned"),
    ]


def case_study_knowledge() -> list[dict]:
    return [
        {"id": "k-term-company", "label": "term", "name": "company",
         "description": "by default, without special instructions, refers to Tencent",
         "demonstration": "What is gross profit of the company in 2023?"},
        {"id": "k-col-should", "label": "column", "name": "shouldincome",
         "description": "income including tax",
         "anc_label": "table", "anc_name": "revenue_by_quarter"},
        {"id": "k-col-after", "label": "column", "name": "shouldincome_after",
         "description": "income after tax",
         "anc_label": "table", "anc_name": "revenue_by_quarter"},
        {"id": "k-col-region", "label": "column", "name": "region",
         "description": "sales region",
         "anc_label": "table", "anc_name": "revenue_by_quarter"},
        {"id": "k-table-revenue", "label": "table", "name": "revenue_by_quarter",
         "description": "quarterly revenue facts per company"},
    ]


def case_study_schema() -> dict:
    return {
        "tables": [
            {
                "name": "revenue_by_quarter",
                "heat": 5,
                "columns": [
                    {"name": "ftime", "type": "TEXT", "comment": "quarter end date"},
                    {"name": "cname", "type": "TEXT", "comment": "company name"},
                    {"name": "region", "type": "TEXT", "comment": "sales region"},
                    {"name": "shouldincome", "type": "REAL", "comment": "income incl tax"},
                    {"name": "shouldincome_after", "type": "REAL", "comment": "income after tax"},
                ],
            },
            {
                "name": "hr_headcount",
                "heat": 1,
                "columns": [
                    {"name": "dept", "type": "TEXT"},
                    {"name": "year", "type": "INT"},
                    {"name": "heads", "type": "INT"},
                ],
            },
        ]
    }


def build_case_db(path: Path) -> None:
    conn = connect(path)
    conn.execute(
        "CREATE TABLE revenue_by_quarter (ftime TEXT, cname TEXT, region TEXT, "
        "shouldincome REAL, shouldincome_after REAL)"
    )
    conn.executemany(
        "INSERT INTO revenue_by_quarter VALUES (?, ?, ?, ?, ?)",
        [
            ("2023-03-31", "Company A", "east", 100.0, 90.0),
            ("2023-06-30", "Company A", "west", 110.0, 95.0),
            ("2024-03-31", "Company A", "east", 130.0, 120.0),
            ("2024-06-30", "Company A", "west", 140.0, 125.0),
            ("2024-03-31", "Company B", "east", 70.0, 60.0),
        ],
    )
    conn.execute("CREATE TABLE hr_headcount (dept TEXT, year INT, heads INT)")
    conn.execute("INSERT INTO hr_headcount VALUES ('data', 2024, 12)")
    conn.commit()
    conn.close()


def write_env(
    root: Path,
    rules: list[dict],
    knowledge: list[dict],
    schema: dict,
    build_db,
    config_extra: dict | None = None,
    stub_default: str = "0",
) -> Path:
    """Materialize a full engine environment under ``root``; returns the
    config path."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "stubs").mkdir(exist_ok=True)
    (root / "knowledge").mkdir(exist_ok=True)
    (root / "dbs").mkdir(exist_ok=True)

    (root / "stubs" / "chat.json").write_text(
        json.dumps({"rules": rules, "default": stub_default}, indent=2), encoding="utf-8"
    )
    (root / "knowledge" / "base.jsonl").write_text(
        "\n".join(json.dumps(entry, ensure_ascii=False) for entry in knowledge),
        encoding="utf-8",
    )
    (root / "schema.json").write_text(json.dumps(schema, indent=2), encoding="utf-8")
    build_db(root / "dbs" / "main.sqlite")

    config = {
        "listen": "127.0.0.1:8080",
        "knowledge_dir": "knowledge",
        "schema_file": "schema.json",
        "database_dir": "dbs",
        "database": "main.sqlite",
        "sessions_dir": "sessions",
        "providers": {
            "chat": {"kind": "stub", "script": "stubs/chat.json"},
            "embed": {"kind": "stub"},
            "rerank": {"kind": "stub"},
            "judge": {"kind": "stub", "script": "stubs/chat.json"},
        },
        "scoring": {"candidate_n": 2},
        "strategy": {"n_labeled": 0},
        "max_clarify_rounds": 3,
        "max_steps": 8,
    }
    config.update(config_extra or {})
    (root / "config.json").write_text(json.dumps(config, indent=2), encoding="utf-8")
    return root / "config.json"


@pytest.fixture
def case_env(tmp_path) -> Path:
    """Config path for the income case-study environment."""
    return write_env(
        tmp_path / "case",
        case_study_rules(),
        case_study_knowledge(),
        case_study_schema(),
        build_case_db,
    )


@pytest.fixture
def case_engine(case_env) -> Engine:
    return Engine(load_config(case_env))


# -- multi-round environment ---------------------------------------------------


def mrd_dialogue_specs(n: int) -> list[dict]:
    """n two-round dialogues: round 2 omits the year stated in round 1."""
    specs = []
    for i in range(n):
        metric = f"metric_{i}"
        category = f"cat_{i}"
        specs.append(
            {
                "metric": metric,
                "category": category,
                "r1_text": f"total {metric} across all categories in 2023",
                "r2_text": f"How about {category}?",
                "completed_r2": f"total {metric} for {category} in 2023",
                "r1_gold": (
                    f"SELECT SUM(val) FROM facts WHERE metric = '{metric}' AND year = 2023"
                ),
                "r2_gold": (
                    f"SELECT SUM(val) FROM facts WHERE metric = '{metric}' "
                    f"AND category = '{category}' AND year = 2023"
                ),
                "r2_wrong": (
                    f"SELECT SUM(val) FROM facts WHERE metric = '{metric}' "
                    f"AND category = '{category}'"
                ),
            }
        )
    return specs


def mrd_rules(specs: list[dict]) -> list[dict]:
    """Per-dialogue rules, anchored on the prompt's Question line so history
    entries echoing earlier turns cannot cross-fire between dialogues."""
    rules: list[dict] = []
    for s in specs:
        r1_rewritten = f"{s['r1_text']} [schema: facts]"
        r2_rewritten = f"{s['completed_r2']} [schema: facts]"
        r2_raw_rewritten = f"{s['r2_text']} {s['category']} [schema: facts]"
        rules += [
            rule("integrity_extract", s["r1_text"],
                 {"metrics": [s["metric"]], "dimensions": ["2023"]}),
            rule("integrity_extract", s["r2_text"],
                 {"metrics": [], "dimensions": [s["category"]]}),
            rule("history_complete", s["r2_text"], s["completed_r2"]),
            rule("intent_clarify", f"Question: {s['completed_r2']}",
                 {"outcome": "rewritten", "text": r2_rewritten}),
            rule("intent_clarify", f"Question: {s['r1_text']}",
                 {"outcome": "rewritten", "text": r1_rewritten}),
            rule("keyword_extract", s["metric"],
                 {"keywords": [s["metric"], "facts"]}),
            # the r1 anchor matches both the raw and the clarified question line,
            # which produce the same rewrite
            rule("sir_build", f"Question: {r2_rewritten}", sir_reply(r2_rewritten, metric="val")),
            rule("sir_build", f"Question: {s['r1_text']}", sir_reply(r1_rewritten, metric="val")),
            rule("sir_build", f"Question: {s['r2_text']}",
                 sir_reply(r2_raw_rewritten, metric="val")),
            rule("sql_generate", r2_rewritten, s["r2_gold"]),
            rule("sql_generate", r1_rewritten, s["r1_gold"]),
            rule("sql_generate", r2_raw_rewritten, s["r2_wrong"]),
        ]
    rules.append(rule("intent_classify", None, "2"))
    return rules


def mrd_schema() -> dict:
    return {
        "tables": [
            {
                "name": "facts",
                "columns": [
                    {"name": "metric", "type": "TEXT"},
                    {"name": "category", "type": "TEXT"},
                    {"name": "year", "type": "INT"},
                    {"name": "val", "type": "REAL"},
                ],
            }
        ]
    }


def build_mrd_db(path: Path, specs: list[dict]) -> None:
    conn = connect(path)
    conn.execute("CREATE TABLE facts (metric TEXT, category TEXT, year INT, val REAL)")
    rows = []
    for i, s in enumerate(specs):
        for year, base in ((2022, 10.0), (2023, 20.0), (2024, 40.0)):
            rows.append((s["metric"], s["category"], year, base + i))
            rows.append((s["metric"], "other", year, base * 2 + i))
    conn.executemany("INSERT INTO facts VALUES (?, ?, ?, ?)", rows)
    conn.commit()
    conn.close()


def write_mrd_env(root: Path, n_dialogues: int, features: dict | None = None) -> tuple[Path, list[dict]]:
    specs = mrd_dialogue_specs(n_dialogues)
    config_path = write_env(
        root,
        mrd_rules(specs),
        knowledge=[],
        schema=mrd_schema(),
        build_db=lambda p: build_mrd_db(p, specs),
        config_extra={"features": features or {}, "scoring": {"candidate_n": 1}},
    )
    return config_path, specs


def mrd_dataset(specs: list[dict], path: Path) -> Path:
    items = [
        {
            "item_id": f"dlg{i}",
            "db_id": "main",
            "mode": "mrd",
            "rounds": [
                {"question": s["r1_text"], "gold_sql": s["r1_gold"]},
                {"question": s["r2_text"], "gold_sql": s["r2_gold"]},
            ],
        }
        for i, s in enumerate(specs)
    ]
    path.write_text(json.dumps(items), encoding="utf-8")
    return path
