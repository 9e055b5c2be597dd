"""
Multi-agent insight workflow over SQL results.

A planner loop drives three step kinds: ``prepare_data`` (an instruction is
turned into SQL and executed, rows come back as an observation),
``run_tool`` (a registered tool processes previously prepared tables), and
``finalize`` (exactly once, last). After every executed step the observation
is appended to the planner context and the model emits the next step, until
finalize or the step budget truncates the plan.

The attribution tool is deterministic: a metric's change between a before
and an after table is decomposed into per-dimension-value deltas, each with
its share of the total change. Shares are undefined when the total change
is zero; that case raises with the deltas still attached. Forecast and
diagnosis are pluggable; builtin stand-ins return labeled placeholders.
"""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field
from typing import Callable

from .database import ResultTable, run_select
from .gateway import Gateway

__all__ = [
    "InsightRequest",
    "PlannerStep",
    "AttributionResult",
    "InsightReport",
    "InsightRunner",
    "UndefinedShareError",
    "PlannerParseError",
    "ToolDispatchError",
    "attribute",
    "run_tool",
    "finalize",
    "stub_forecast",
    "stub_diagnosis",
]

STEP_KINDS = ("prepare_data", "run_tool", "finalize")


class UndefinedShareError(ValueError):
    """Total delta is zero: per-value shares are undefined (deltas attached)."""

    def __init__(self, deltas: dict):
        super().__init__("total delta is zero; contribution shares are undefined")
        self.deltas = deltas


class PlannerParseError(ValueError):
    """Planner reply did not parse into a valid step."""


class ToolDispatchError(KeyError):
    """run_tool step names a tool that is not registered."""


@dataclass
class InsightRequest:
    user_text: str
    session_id: str
    base_sql: str | None = None
    base_rows: ResultTable | None = None


@dataclass(frozen=True)
class PlannerStep:
    step_id: int
    kind: str
    instruction: str = ""
    tool_name: str | None = None
    args: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in STEP_KINDS:
            raise PlannerParseError(f"unknown step kind {self.kind!r}")
        if self.kind == "run_tool" and not self.tool_name:
            raise PlannerParseError("run_tool steps must carry tool_name")


@dataclass
class AttributionResult:
    dimension: str
    contributions: list[tuple[str, float, float]]  # (value, delta, share)
    total_before: float
    total_after: float

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "contributions": [
                {"value": v, "delta": d, "contribution_share": s}
                for v, d, s in self.contributions
            ],
            "total_before": self.total_before,
            "total_after": self.total_after,
        }


@dataclass
class InsightReport:
    narrative: str
    findings: list[tuple[str, str]]  # (title, evidence attachment id)
    attachments: list[dict]
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "narrative": self.narrative,
            "findings": [{"title": t, "evidence": e} for t, e in self.findings],
            "attachments": list(self.attachments),
            "flags": list(self.flags),
        }


def _totals_by_value(table: ResultTable, dimension: str, metric: str) -> dict[str, float]:
    if dimension not in table.columns or metric not in table.columns:
        raise ValueError(f"table lacks column {dimension!r} or {metric!r}")
    d_idx = table.columns.index(dimension)
    m_idx = table.columns.index(metric)
    totals: dict[str, float] = {}
    for row in table.rows:
        value = str(row[d_idx])
        metric_value = row[m_idx]
        if metric_value is None:
            continue
        totals[value] = totals.get(value, 0.0) + float(metric_value)
    return totals


def attribute(
    before: ResultTable,
    after: ResultTable,
    dimension: str,
    metric: str,
) -> AttributionResult:
    """Decompose the metric change into per-dimension-value contributions.

    Values missing on one side count as 0 there. Contributions are sorted
    by absolute delta, descending.
    """
    before_totals = _totals_by_value(before, dimension, metric)
    after_totals = _totals_by_value(after, dimension, metric)
    total_before = sum(before_totals.values())
    total_after = sum(after_totals.values())
    total_delta = total_after - total_before

    deltas = {
        value: after_totals.get(value, 0.0) - before_totals.get(value, 0.0)
        for value in sorted(set(before_totals) | set(after_totals))
    }
    if total_delta == 0.0:
        raise UndefinedShareError(deltas)

    contributions = [
        (value, delta, delta / total_delta) for value, delta in deltas.items()
    ]
    contributions.sort(key=lambda c: (-abs(c[1]), c[0]))
    return AttributionResult(
        dimension=dimension,
        contributions=contributions,
        total_before=total_before,
        total_after=total_after,
    )


def stub_forecast(tables: dict[str, ResultTable], args: dict) -> dict:
    return {"tool": "forecast", "status": "stub_forecast", "series": []}


def stub_diagnosis(tables: dict[str, ResultTable], args: dict) -> dict:
    return {"tool": "diagnosis", "status": "stub_diagnosis", "findings": []}


def _attribution_tool(tables: dict[str, ResultTable], args: dict) -> dict:
    before = tables[args["before"]]
    after = tables[args["after"]]
    result = attribute(before, after, args["dimension"], args["metric"])
    return {"tool": "attribution", **result.to_dict()}


DEFAULT_TOOLS: dict[str, Callable[[dict, dict], dict]] = {
    "attribution": _attribution_tool,
    "forecast": stub_forecast,
    "diagnosis": stub_diagnosis,
}


def run_tool(
    step: PlannerStep,
    tables: dict[str, ResultTable],
    registry: dict[str, Callable] | None = None,
) -> dict:
    """Dispatch a run_tool step to its registered implementation."""
    registry = registry if registry is not None else DEFAULT_TOOLS
    tool = registry.get(step.tool_name)
    if tool is None:
        raise ToolDispatchError(f"unknown tool {step.tool_name!r}")
    return tool(tables, step.args)


def finalize(observations: list[dict], gateway: Gateway) -> InsightReport:
    """Consolidate observations into a report; the narrative degrades to a
    template when the model is unavailable, never to an empty report."""
    if not observations:
        raise ValueError("finalize needs at least one observation")
    attachments = []
    findings = []
    for obs in observations:
        if obs.get("attachment") is None:
            continue
        att_id = f"att_{len(attachments) + 1}"
        attachment = {"id": att_id, **obs["attachment"]}
        attachments.append(attachment)
        title = attachment.get("tool", attachment.get("kind", "result"))
        findings.append((f"{title} output", att_id))

    summary_lines = [
        f"step {obs['step_id']} ({obs['kind']}): {obs.get('summary', '')}" for obs in observations
    ]
    prompt = (
        "Write a short analyst narrative for these findings:\n"
        + "\n".join(summary_lines)
        + "\nReply with plain text."
    )
    try:
        narrative = gateway.ask(prompt, tag="narrative").strip()
    except Exception:
        narrative = "Automated summary: " + "; ".join(summary_lines)
    return InsightReport(narrative=narrative, findings=findings, attachments=attachments)


class InsightRunner:
    """Drives the plan/execute/observe loop for one insight request."""

    def __init__(
        self,
        gateway: Gateway,
        nl2sql: Callable[[str], str],
        conn: sqlite3.Connection | None,
        max_steps: int = 8,
        tools: dict[str, Callable] | None = None,
    ):
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        self.gateway = gateway
        self.nl2sql = nl2sql
        self.conn = conn
        self.max_steps = max_steps
        self.tools = tools if tools is not None else dict(DEFAULT_TOOLS)

    def run(self, request: InsightRequest, knowledge_text: str = "") -> InsightReport:
        steps, observations, flags = self.plan(request, knowledge_text)
        report = finalize(observations, self.gateway) if observations else InsightReport(
            narrative="No observations were produced.", findings=[], attachments=[]
        )
        report.flags.extend(flags)
        return report

    def plan(
        self, request: InsightRequest, knowledge_text: str = ""
    ) -> tuple[list[PlannerStep], list[dict], list[str]]:
        """The reason/act loop; returns executed steps, observations, flags."""
        steps: list[PlannerStep] = []
        observations: list[dict] = []
        tables: dict[str, ResultTable] = {}
        if request.base_rows is not None:
            tables["base"] = request.base_rows
        flags: list[str] = []

        for step_index in range(1, self.max_steps + 1):
            step = self._next_step(request, knowledge_text, observations, step_index)
            steps.append(step)
            if step.kind == "finalize":
                observations.append(
                    {"step_id": step.step_id, "kind": "finalize",
                     "summary": step.instruction or "consolidate", "attachment": None}
                )
                break
            observations.append(self._execute(step, tables))
        else:
            flags.append("plan_truncated")
        return steps, observations, flags

    def _next_step(
        self,
        request: InsightRequest,
        knowledge_text: str,
        observations: list[dict],
        step_index: int,
    ) -> PlannerStep:
        observation_lines = "\n".join(
            f"- step {o['step_id']} ({o['kind']}): {o.get('summary', '')}" for o in observations
        )
        prompt = (
            "Plan the next analysis step.\n"
            f"Request: {request.user_text}\n"
            + (f"Base SQL: {request.base_sql}\n" if request.base_sql else "")
            + (f"Knowledge:\n{knowledge_text}\n" if knowledge_text else "")
            + f"steps_taken: {step_index - 1}\n"
            + (f"Observations so far:\n{observation_lines}\n" if observation_lines else "")
            + 'Reply with JSON {"kind": "prepare_data"|"run_tool"|"finalize", '
            '"instruction": "...", "tool_name": null|"attribution"|"forecast"|"diagnosis", '
            '"args": {}}.'
        )
        reply = self.gateway.ask(prompt, tag="planner")
        try:
            raw = json.loads(reply)
            return PlannerStep(
                step_id=step_index,
                kind=raw["kind"],
                instruction=str(raw.get("instruction", "")),
                tool_name=raw.get("tool_name"),
                args=dict(raw.get("args") or {}),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise PlannerParseError(f"bad planner reply: {reply[:200]!r} ({exc})") from exc

    def _execute(self, step: PlannerStep, tables: dict[str, ResultTable]) -> dict:
        if step.kind == "prepare_data":
            return self._prepare_data(step, tables)
        try:
            output = run_tool(step, tables, self.tools)
        except ToolDispatchError:
            raise
        except Exception as exc:
            return {"step_id": step.step_id, "kind": "run_tool",
                    "summary": f"tool error: {exc}", "attachment": None}
        return {
            "step_id": step.step_id,
            "kind": "run_tool",
            "summary": f"{step.tool_name} completed",
            "attachment": output,
        }

    def _prepare_data(self, step: PlannerStep, tables: dict[str, ResultTable]) -> dict:
        if self.conn is None:
            return {"step_id": step.step_id, "kind": "prepare_data",
                    "summary": "error: no database attached", "attachment": None}
        try:
            sql = self.nl2sql(step.instruction)
            table = run_select(self.conn, sql)
        except Exception as exc:
            return {"step_id": step.step_id, "kind": "prepare_data",
                    "summary": f"error: {exc}", "attachment": None}
        key = step.args.get("store_as") or f"obs_{step.step_id}"
        tables[key] = table
        return {
            "step_id": step.step_id,
            "kind": "prepare_data",
            "summary": f"{len(table)} rows as {key}",
            "attachment": {"kind": "rows", "table": table.to_dict(), "name": key},
        }
