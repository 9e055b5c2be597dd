"""Training-data preparation: reverse engineering, filtering, augmentation,
negative injection at the configured ratio."""

import json
import tempfile
from pathlib import Path

from convbi.database import Schema
from convbi.datapipe import PipelineConfig, PipelineInputs, run_pipeline
from convbi.gateway import Gateway, StubRule, StubScript

schema = Schema.from_dict({
    "tables": [{"name": "sales", "columns": [
        {"name": "amount", "type": "REAL"},
        {"name": "region", "type": "TEXT"},
        {"name": "year", "type": "INT"},
    ]}]
})


def r(tag, response):
    if not isinstance(response, str):
        response = json.dumps(response)
    return StubRule(tag=tag, contains=None, response=response)


gateway = Gateway.scripted(StubScript(rules=(
    r("reverse_engineer", "What was the total sales amount per region?"),
    r("schema_questions", {"questions": ["how many sales rows are there?"]}),
    r("quality_judge", "0.8"),
    r("augment", {"rewrites": [
        {"question": "total sales in the east?",
         "sql": "SELECT SUM(amount) FROM sales WHERE region = 'east'"},
    ]}),
)))

inputs = PipelineInputs(sql_log=[
    "SELECT region, SUM(amount) FROM sales GROUP BY region",
    "SELECT broken FROM nowhere",  # skipped with a report line
])

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "dataset.jsonl"
    report = run_pipeline(
        PipelineConfig(negative_ratio=0.2, quality_floor=0.5, augment_factor=1, seed=7),
        inputs, schema, gateway,
        translate=lambda q: "SELECT COUNT(*) FROM sales",
        out_path=out,
    )
    print("stage counts:", json.dumps(report.stage_counts, indent=2, sort_keys=True))
    print("skipped:", report.skipped)
    print("\ndataset lines:")
    for line in out.read_text().splitlines():
        pair = json.loads(line)
        tag = f"[{pair['source']}]"
        extra = f" ({pair['error_category']})" if pair.get("error_category") else ""
        print(f"  {tag:20s} {pair['sql']}{extra}")
