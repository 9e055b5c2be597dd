"""Metrics: execution accuracy, efficiency weighting, intent-aligned accuracy.

A tiny scripted engine answers a toy dataset; the report aggregates EX, UEX
(judge says the near-miss is aligned), and VES from recorded timings.
"""

import json
import tempfile
from pathlib import Path

from convbi.database import connect
from convbi.evaluation import run_eval
from convbi.gateway import Gateway, StubRule, StubScript

GOLD = {
    "q0": "SELECT amount FROM sales WHERE year = 2023",
    "q1": "SELECT region, amount FROM sales WHERE year = 2024",
    "q2": "SELECT SUM(amount) FROM sales",
}
PRED = {
    "q0": GOLD["q0"],                                       # exact
    "q1": "SELECT region, amount FROM sales WHERE year = 2024 ORDER BY region",  # same rows
    "q2": "SELECT SUM(amount) FROM sales WHERE year >= 2023",  # judge calls it aligned
}


class ScriptedEngine:
    def create_session(self):
        return "s"

    def send(self, session_id, text):
        return {"kind": "answer", "sql": PRED[text]}


with tempfile.TemporaryDirectory() as tmp:
    db_dir = Path(tmp)
    conn = connect(db_dir / "shop.sqlite")
    conn.execute("CREATE TABLE sales (region TEXT, year INT, amount REAL)")
    conn.executemany("INSERT INTO sales VALUES (?, ?, ?)", [
        ("east", 2022, 40.0), ("east", 2023, 100.0),
        ("west", 2023, 50.0), ("east", 2024, 130.0),
    ])
    conn.commit()
    conn.close()

    dataset = db_dir / "toy.json"
    dataset.write_text(json.dumps([
        {"item_id": item_id, "db_id": "shop", "mode": "srd",
         "rounds": [{"question": item_id, "gold_sql": gold}]}
        for item_id, gold in GOLD.items()
    ]))

    judge = Gateway.scripted(StubScript(
        rules=(StubRule(tag="uex_judge", contains=None, response="aligned"),)))
    report = run_eval(
        dataset, ScriptedEngine(), ["ex", "uex", "ves"], db_dir, gateway=judge,
        recorded_timings={item_id: (0.01, 0.01) for item_id in GOLD},
    )

    print(report.render_table())
    print("\nper item:")
    for item in report.per_item:
        r = item["rounds"][0]
        print(f"  {item['item_id']}: ex={r['ex']} uex={r['uex']}")
    print("\nq1 shows EX is order-insensitive without a gold ORDER BY;")
    print("q2 shows UEX catching an intent match that EX misses.")
