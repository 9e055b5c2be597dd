"""Multi-round dialogue analysis: completion from history and clarification.

Round 2 omits the year stated in round 1; the dialogue layer detects the
missing dimension, completes the question from history, and a scripted
clarifier shows how ambiguity turns into user-facing options.
"""

import json

from convbi.dialogue import (
    DialogueTurn,
    SessionState,
    assess_integrity,
    clarify_intent,
    classify_intent,
    complete_from_history,
    route_intent,
)
from convbi.gateway import Gateway, StubRule, StubScript


def r(tag, contains, response):
    if not isinstance(response, str):
        response = json.dumps(response)
    return StubRule(tag=tag, contains=contains, response=response)


gateway = Gateway.scripted(StubScript(rules=(
    r("integrity_extract", "revenue of every product in 2023",
      {"metrics": ["revenue"], "dimensions": ["2023"]}),
    r("integrity_extract", "What about gross profit?",
      {"metrics": ["gross profit"], "dimensions": []}),
    r("history_complete", "What about gross profit?",
      "gross profit of every product in 2023"),
    r("intent_classify", None, "2"),
    r("intent_clarify", "income",
      {"outcome": "needs_user",
       "question": "Which income column do you mean?",
       "options": [
           {"id": "shouldincome", "label": "shouldincome", "description": "incl. tax"},
           {"id": "shouldincome_after", "label": "shouldincome_after", "description": "after tax"},
       ],
       "allows_free_text": True}),
)))

session = SessionState(session_id="demo")
round1 = "revenue of every product in 2023"
a1 = assess_integrity(round1, gateway)
print(f"round 1: {round1!r}")
print(f"  metrics={list(a1.metrics)} dimensions={list(a1.dimensions)} complete={a1.complete}")
session.append_turn(DialogueTurn(
    turn_id=1, user_text=round1, detected_metrics=list(a1.metrics),
    detected_dimensions=list(a1.dimensions), completed_text=round1, intent=2,
    system_reply_kind="answer",
))

round2 = "What about gross profit?"
a2 = assess_integrity(round2, gateway)
print(f"round 2: {round2!r}")
print(f"  metrics={list(a2.metrics)} dimensions={list(a2.dimensions)} complete={a2.complete}")
completed = complete_from_history(round2, a2, session, gateway)
print(f"  completed from turn {completed.source_turn_id}: {completed.text!r}")

intent = classify_intent(completed.text, gateway)
print(f"  intent class: {intent.value} -> {route_intent(intent, session).kind}")

outcome = clarify_intent("What is the income of Company A in 2024?", [], gateway)
print("\nambiguous 'income' question asks the user to choose:")
for oid, label, desc in outcome.request.options:
    print(f"  [{oid}] {label} - {desc}")
