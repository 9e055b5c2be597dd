"""Insight planning: prepare data, run the attribution tool, build a report.

The planner is scripted to fetch a before/after breakdown and attribute the
change; the attribution itself is exact arithmetic.
"""

import json

from convbi.database import connect
from convbi.gateway import Gateway, StubRule, StubScript
from convbi.insight import InsightRequest, InsightRunner

conn = connect(":memory:")
conn.execute("CREATE TABLE revenue (region TEXT, year INT, revenue REAL)")
conn.executemany("INSERT INTO revenue VALUES (?, ?, ?)", [
    ("east", 2023, 100.0), ("west", 2023, 100.0), ("north", 2023, 80.0),
    ("east", 2024, 130.0), ("west", 2024, 90.0), ("north", 2024, 95.0),
])


def r(tag, contains, response):
    if not isinstance(response, str):
        response = json.dumps(response)
    return StubRule(tag=tag, contains=contains, response=response)


gateway = Gateway.scripted(StubScript(rules=(
    r("planner", "steps_taken: 0",
      {"kind": "prepare_data", "instruction": "revenue by region in 2023",
       "args": {"store_as": "before"}}),
    r("planner", "steps_taken: 1",
      {"kind": "prepare_data", "instruction": "revenue by region in 2024",
       "args": {"store_as": "after"}}),
    r("planner", "steps_taken: 2",
      {"kind": "run_tool", "instruction": "attribute the change",
       "tool_name": "attribution",
       "args": {"before": "before", "after": "after",
                "dimension": "region", "metric": "revenue"}}),
    r("planner", "steps_taken: 3", {"kind": "finalize", "instruction": "summarize"}),
    r("narrative", None,
      "Revenue grew 35; the east region added 30 while the west slipped."),
)))


def nl2sql(instruction: str) -> str:
    year = "2023" if "2023" in instruction else "2024"
    return f"SELECT region, revenue FROM revenue WHERE year = {year}"


runner = InsightRunner(gateway=gateway, nl2sql=nl2sql, conn=conn)
report = runner.run(InsightRequest(user_text="Why did revenue change year over year?",
                                   session_id="demo"))

print("narrative:", report.narrative)
print("\nfindings:")
for title, evidence in report.findings:
    print(f"  - {title} (evidence: {evidence})")

attribution = next(a for a in report.attachments if a.get("tool") == "attribution")
print(f"\nattribution on '{attribution['dimension']}' "
      f"({attribution['total_before']} -> {attribution['total_after']}):")
for c in attribution["contributions"]:
    print(f"  {c['value']:6s} delta {c['delta']:+7.1f}  share {c['contribution_share']:+.3f}")
