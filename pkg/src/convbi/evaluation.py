"""
Dataset loaders and the metric engine for single- and multi-round replay.

Execution accuracy (EX) compares the result multisets of the predicted and
gold statements on the item's database: row order matters only when the
gold query carries a top-level ORDER BY, numeric cells compare at 1e-6
relative tolerance, and NULL equals NULL. The efficiency score (VES) weights
each EX-correct item by sqrt(t_gold / t_pred) with the time ratio clipped to
[0, 2]; timings are medians over repeated runs and can be injected from a
recording for deterministic tests. Useful execution accuracy (UEX)
short-circuits to true on EX and otherwise asks a judge model whether the
two queries' intents align.

Multi-round items replay their rounds in order through one engine session
(self-conditioned: the engine sees its own prior turns); an item counts as
correct only when every round is correct, and per-round accuracy is also
reported.
"""

from __future__ import annotations

import json
import re
import sqlite3
import statistics
import time
from dataclasses import dataclass, field
from math import isclose, sqrt
from pathlib import Path
from typing import Callable, Protocol

from .database import connect, run_select
from .gateway import Gateway

__all__ = [
    "EvalItem",
    "MetricReport",
    "EngineLike",
    "load_dataset",
    "execution_accuracy",
    "results_equal",
    "ves",
    "uex",
    "recall_at_k",
    "aggregate_recall",
    "run_eval",
]


@dataclass(frozen=True)
class EvalItem:
    item_id: str
    db_id: str
    rounds: tuple[tuple[str, str], ...]  # (question, gold_sql)
    mode: str = "srd"

    def __post_init__(self) -> None:
        if self.mode not in ("srd", "mrd"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "srd" and len(self.rounds) != 1:
            raise ValueError("srd items have exactly one round")
        if self.mode == "mrd" and not 2 <= len(self.rounds) <= 5:
            raise ValueError("mrd items have 2-5 rounds")


@dataclass
class MetricReport:
    ex: float = 0.0
    ves: float = 0.0
    uex: float | None = None
    recall_at_k: dict[int, float] | None = None
    n_items: int = 0
    per_item: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "ex": self.ex,
            "ves": self.ves,
            "n_items": self.n_items,
            "per_item": list(self.per_item),
        }
        if self.uex is not None:
            out["uex"] = self.uex
        if self.recall_at_k is not None:
            out["recall_at_k"] = {str(k): v for k, v in self.recall_at_k.items()}
        return out

    def render_table(self) -> str:
        lines = ["metric  value", "------  -----", f"EX      {self.ex:.4f}"]
        if self.uex is not None:
            lines.append(f"UEX     {self.uex:.4f}")
        if self.ves:
            lines.append(f"VES     {self.ves:.4f}")
        lines.append(f"items   {self.n_items}")
        return "\n".join(lines)


class EngineLike(Protocol):
    """What run_eval needs from a pipeline: sessions and per-message replies."""

    def create_session(self) -> str: ...

    def send(self, session_id: str, text: str) -> dict: ...


def load_dataset(path: str | Path) -> list[EvalItem]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    items = []
    for entry in raw:
        rounds = tuple((r["question"], r["gold_sql"]) for r in entry["rounds"])
        items.append(
            EvalItem(
                item_id=entry["item_id"],
                db_id=entry["db_id"],
                rounds=rounds,
                mode=entry.get("mode", "srd"),
            )
        )
    return items


# -- result comparison --------------------------------------------------------


def _cells_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    a_num = isinstance(a, (int, float)) and not isinstance(a, bool)
    b_num = isinstance(b, (int, float)) and not isinstance(b, bool)
    if a_num and b_num:
        return isclose(float(a), float(b), rel_tol=1e-6, abs_tol=1e-9)
    return a == b


def _rows_equal(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(_cells_equal(x, y) for x, y in zip(a, b))


def _has_top_level_order_by(sql: str) -> bool:
    depth = 0
    in_string: str | None = None
    text = sql
    i = 0
    upper = text.upper()
    while i < len(text):
        ch = text[i]
        if in_string:
            if ch == in_string:
                in_string = None
        elif ch in ("'", '"'):
            in_string = ch
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif depth == 0 and upper.startswith("ORDER", i):
            if re.match(r"ORDER\s+BY\b", upper[i:]):
                return True
        i += 1
    return False


def results_equal(pred_rows: list[tuple], gold_rows: list[tuple], ordered: bool) -> bool:
    if len(pred_rows) != len(gold_rows):
        return False
    if ordered:
        return all(_rows_equal(p, g) for p, g in zip(pred_rows, gold_rows))
    used = [False] * len(gold_rows)
    for p in pred_rows:
        for j, g in enumerate(gold_rows):
            if not used[j] and _rows_equal(p, g):
                used[j] = True
                break
        else:
            return False
    return True


def execution_accuracy(pred_sql: str, gold_sql: str, conn: sqlite3.Connection) -> bool:
    """Both statements run; the gold must succeed, the pred failing is False."""
    gold = run_select(conn, gold_sql)  # propagate: a broken gold is a bad item
    try:
        pred = run_select(conn, pred_sql)
    except Exception:
        return False
    return results_equal(pred.rows, gold.rows, ordered=_has_top_level_order_by(gold_sql))


# -- efficiency ---------------------------------------------------------------


def _median_time(conn: sqlite3.Connection, sql: str, runs: int) -> float:
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        run_select(conn, sql)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def ves(
    scored_items: list[dict],
    conn_for: Callable[[str], sqlite3.Connection],
    runs_per_query: int = 3,
    recorded_timings: dict[str, tuple[float, float]] | None = None,
) -> float:
    """Mean over items of 1(EX) * sqrt(clip(t_gold / t_pred, 0, 2)).

    ``scored_items`` carry item_id, db_id, pred_sql, gold_sql, and ex.
    ``recorded_timings`` maps item_id to (t_gold, t_pred) and bypasses the
    wall clock entirely (deterministic replays).
    """
    if runs_per_query < 3:
        raise ValueError("runs_per_query must be >= 3 for a stable median")
    if not scored_items:
        return 0.0
    total = 0.0
    for item in scored_items:
        if not item.get("ex"):
            continue
        if recorded_timings is not None and item["item_id"] in recorded_timings:
            t_gold, t_pred = recorded_timings[item["item_id"]]
        else:
            try:
                conn = conn_for(item["db_id"])
                t_gold = _median_time(conn, item["gold_sql"], runs_per_query)
                t_pred = _median_time(conn, item["pred_sql"], runs_per_query)
            except Exception:
                item.setdefault("flags", []).append("timing_failed")
                continue
        if t_pred <= 0:
            ratio = 2.0
        else:
            ratio = min(max(t_gold / t_pred, 0.0), 2.0)
        total += sqrt(ratio)
    return total / len(scored_items)


# -- intent alignment -----------------------------------------------------------


def _sample_rows(conn: sqlite3.Connection, sql: str, limit: int = 20) -> str:
    try:
        result = run_select(conn, sql)
    except Exception as exc:
        return f"<execution error: {exc}>"
    return json.dumps(result.rows[:limit], default=str)


def uex(
    pred_sql: str,
    gold_sql: str,
    question: str,
    conn: sqlite3.Connection,
    gateway: Gateway,
) -> tuple[bool, list[str]]:
    """EX short-circuits; otherwise a judge decides intent alignment.

    Returns (verdict, flags); an unparseable judge reply is a conservative
    False with a flag.
    """
    if execution_accuracy(pred_sql, gold_sql, conn):
        return True, []
    prompt = (
        "Do these two SQL queries answer the user's question with the same intent?\n"
        f"Question: {question}\n"
        f"Gold SQL: {gold_sql}\n"
        f"Gold rows: {_sample_rows(conn, gold_sql)}\n"
        f"Predicted SQL: {pred_sql}\n"
        f"Predicted rows: {_sample_rows(conn, pred_sql)}\n"
        "Reply with exactly 'aligned' or 'not aligned'."
    )
    try:
        reply = gateway.judge(prompt, tag="uex_judge").strip().lower()
    except Exception:
        return False, ["judge_unavailable"]
    if reply == "aligned":
        return True, []
    if reply in ("not aligned", "not_aligned"):
        return False, []
    return False, ["judge_unparseable"]


# -- recall ---------------------------------------------------------------------


def recall_at_k(gold_ids: list[str], ranked_ids: list[str], k: int) -> bool:
    """All gold ids inside the top-k of the ranking."""
    if k < 1:
        raise ValueError("k must be >= 1")
    top = set(ranked_ids[:k])
    return all(g in top for g in gold_ids)


def aggregate_recall(queries: list[tuple[list[str], list[str]]], k: int) -> float:
    if not queries:
        return 0.0
    hits = sum(1 for gold, ranked in queries if recall_at_k(gold, ranked, k))
    return hits / len(queries)


# -- replay harness ---------------------------------------------------------------


def run_eval(
    dataset_path: str | Path,
    engine: EngineLike,
    metrics: list[str],
    db_dir: str | Path,
    gateway: Gateway | None = None,
    runs_per_query: int = 3,
    recorded_timings: dict[str, tuple[float, float]] | None = None,
    report_path: str | Path | None = None,
) -> MetricReport:
    """Replay the dataset through the engine and aggregate requested metrics.

    Each item gets a fresh session; multi-round items feed rounds in order
    through that session. Per-item failures are recorded and the run
    continues.
    """
    items = load_dataset(dataset_path)
    db_dir = Path(db_dir)
    want_uex = "uex" in metrics
    want_ves = "ves" in metrics

    connections: dict[str, sqlite3.Connection] = {}

    def conn_for(db_id: str) -> sqlite3.Connection:
        if db_id not in connections:
            connections[db_id] = connect(db_dir / f"{db_id}.sqlite")
        return connections[db_id]

    per_item: list[dict] = []
    scored_rounds_for_ves: list[dict] = []
    for item in items:
        conn = conn_for(item.db_id)
        if hasattr(engine, "use_database"):
            engine.use_database(db_dir / f"{item.db_id}.sqlite")
        record: dict = {"item_id": item.item_id, "mode": item.mode, "rounds": []}
        try:
            session_id = engine.create_session()
            for round_no, (question, gold_sql) in enumerate(item.rounds, start=1):
                response = engine.send(session_id, question)
                pred_sql = response.get("sql") or ""
                round_ex = bool(pred_sql) and execution_accuracy(pred_sql, gold_sql, conn)
                round_record = {
                    "round": round_no,
                    "question": question,
                    "pred_sql": pred_sql,
                    "ex": round_ex,
                }
                if want_uex:
                    verdict, flags = (
                        uex(pred_sql, gold_sql, question, conn, gateway)
                        if pred_sql and gateway is not None
                        else (False, ["no_sql"])
                    )
                    round_record["uex"] = verdict
                    if flags:
                        round_record["flags"] = flags
                record["rounds"].append(round_record)
                ves_key = item.item_id if round_no == 1 else f"{item.item_id}#r{round_no}"
                scored_rounds_for_ves.append(
                    {
                        "item_id": ves_key,
                        "db_id": item.db_id,
                        "pred_sql": pred_sql,
                        "gold_sql": gold_sql,
                        "ex": round_ex,
                    }
                )
        except Exception as exc:
            record["error"] = str(exc)
        record["ex"] = bool(record["rounds"]) and all(r["ex"] for r in record["rounds"])
        if want_uex:
            record["uex"] = bool(record["rounds"]) and all(
                r.get("uex", False) for r in record["rounds"]
            )
        per_item.append(record)

    n = len(per_item)
    report = MetricReport(n_items=n, per_item=per_item)
    if n:
        report.ex = sum(1.0 for r in per_item if r["ex"]) / n
        if want_uex:
            report.uex = sum(1.0 for r in per_item if r.get("uex")) / n
        if want_ves:
            report.ves = ves(
                scored_rounds_for_ves,
                conn_for,
                runs_per_query=runs_per_query,
                recorded_timings=recorded_timings,
            )
    for conn in connections.values():
        conn.close()

    if report_path is not None:
        report_path = Path(report_path)
        report_path.write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
        report_path.with_suffix(".txt").write_text(report.render_table() + "\n", encoding="utf-8")
    return report
