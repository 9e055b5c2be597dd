"""End-to-end replay of the income case study against the bundled fixture.

The ambiguous question produces clarification options; picking the after-tax
column yields validated SQL executed on the fixture database; a follow-up
request triggers the attribution insight.
"""

import sys
from pathlib import Path

FIXTURE = Path(__file__).resolve().parent.parent / "fixtures" / "case_study"
sys.path.insert(0, str(FIXTURE))

import build_db  # noqa: E402  (fixture-local helper)

from convbi.config import load_config  # noqa: E402
from convbi.engine import Engine  # noqa: E402

build_db.build()
engine = Engine(load_config(FIXTURE / "config.json"))
session = engine.create_session()

question = "What is the income of the Company A in 2024?"
print(f"user: {question}")
first = engine.send(session, question)
print(f"engine [{first['kind']}]: {first['message']}")
for opt in first["options"]:
    print(f"  option {opt['option_id']}: {opt['description']}")

choice = "shouldincome_after"
print(f"\nuser picks: {choice}")
second = engine.send(session, choice)
print(f"engine [{second['kind']}]:")
print(f"  sql:  {second['sql']}")
print(f"  rows: {second['rows']}")

followup = "Perform dimension attribution analysis on the revenue of Company A in 2024"
print(f"\nuser: {followup}")
third = engine.send(session, followup)
print(f"engine [{third['kind']}]: rows {third['rows']}")
attribution = next(a for a in third["insight"]["attachments"] if a.get("tool") == "attribution")
print(f"  narrative: {third['insight']['narrative']}")
for c in attribution["contributions"]:
    print(f"  {c['value']:5s} delta {c['delta']:+7.1f} share {c['contribution_share']:+.2f}")

print("\ntranscript so far:")
for turn in engine.transcript(session).turns:
    print(f"  turn {turn.turn_id}: {turn.user_text!r} -> {turn.system_reply_kind}")
