"""Dialogue tests: integrity extraction, history completion, routing, clarification."""

from __future__ import annotations

import json

import pytest

from convbi.dialogue import (
    Assessment,
    ClarificationExhausted,
    ClarificationRequest,
    ClassificationError,
    DialogueTurn,
    ExtractionError,
    IntentClass,
    SessionState,
    SessionStore,
    assess_integrity,
    classify_intent,
    clarify_intent,
    complete_from_history,
    merge_clarification_answer,
    route_intent,
)
from convbi.gateway import Gateway, StubRule, StubScript
from convbi.knowledge import KnowledgeEntry, KnowledgeStore, RetrievalHit


def gw(rules=(), default=None) -> Gateway:
    return Gateway.scripted(StubScript(rules=tuple(rules), default=default))


def extraction_rule(contains, metrics, dimensions):
    return StubRule(
        tag="integrity_extract",
        contains=contains,
        response=json.dumps({"metrics": metrics, "dimensions": dimensions}),
    )


class TestAssessIntegrity:
    def test_complete_question(self):
        gateway = gw([
            extraction_rule("number of sales", ["number of sales"], ["New York", "last month"]),
        ])
        out = assess_integrity("the number of sales in New York last month", gateway)
        assert out.metrics == ("number of sales",)
        assert out.dimensions == ("New York", "last month")
        assert out.complete

    def test_dimension_only_followup(self):
        gateway = gw([extraction_rule("Los Angeles", [], ["Los Angeles"])])
        out = assess_integrity("How about Los Angeles?", gateway)
        assert out.metrics == ()
        assert out.dimensions == ("Los Angeles",)
        assert not out.complete

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            assess_integrity("   ", gw(default="{}"))

    def test_unparseable_reply_carries_raw(self):
        gateway = gw(default="not json at all")
        with pytest.raises(ExtractionError) as err:
            assess_integrity("anything", gateway)
        assert err.value.raw == "not json at all"


def turn(tid, text, metrics=(), dims=(), completed=None, kind="answer"):
    return DialogueTurn(
        turn_id=tid,
        user_text=text,
        detected_metrics=list(metrics),
        detected_dimensions=list(dims),
        completed_text=completed,
        intent=2 if completed else None,
        system_reply_kind=kind,
    )


class TestCompleteFromHistory:
    def test_round_two_carries_year_forward(self):
        session = SessionState(session_id="s1")
        session.append_turn(
            turn(1, "revenue of every product in 2023", ["revenue"], ["2023"],
                 completed="revenue of every product in 2023")
        )
        gateway = gw([
            StubRule(
                tag="history_complete",
                contains="How about by region?",
                response="revenue of every product by region in 2023",
            )
        ])
        out = complete_from_history(
            "How about by region?", Assessment((), ("region",)), session, gateway
        )
        assert "2023" in out.text
        assert out.source_turn_id == 1

    def test_complete_input_identity(self):
        session = SessionState(session_id="s2")
        out = complete_from_history(
            "sales in 2023", Assessment(("sales",), ("2023",)), session, gw()
        )
        assert out.text == "sales in 2023"
        assert not out.no_history_found

    def test_empty_session_flagged(self):
        out = complete_from_history(
            "How about LA?", Assessment((), ("LA",)), SessionState(session_id="s3"), gw()
        )
        assert out.text == "How about LA?"
        assert out.no_history_found

    def test_picks_most_recent_qualifying_turn(self):
        session = SessionState(session_id="s4")
        session.append_turn(turn(1, "old", ["m"], ["2021"], completed="metric m in 2021"))
        session.append_turn(turn(2, "noise", [], []))
        session.append_turn(turn(3, "new", ["m"], ["2023"], completed="metric m in 2023"))
        captured = {}

        gateway = gw(default="rewritten")
        original = gateway.ask

        def spy(prompt, tag, system=None):
            captured["prompt"] = prompt
            return original(prompt, tag, system)

        gateway.ask = spy
        out = complete_from_history("and by city?", Assessment((), ("city",)), session, gateway)
        assert out.source_turn_id == 3
        assert "metric m in 2023" in captured["prompt"]


class TestClassifyIntent:
    def rules(self):
        return [
            StubRule(tag="intent_classify", contains="sales in New York", response="2"),
            StubRule(tag="intent_classify", contains="How about", response="1"),
            StubRule(tag="intent_classify", contains="joke", response="0"),
        ]

    def test_three_classes(self):
        gateway = gw(self.rules())
        assert classify_intent("sales in New York last month", gateway).value == 2
        assert classify_intent("How about Los Angeles?", gateway).value == 1
        assert classify_intent("tell me a joke", gateway).value == 0

    def test_out_of_range_reply_raises(self):
        with pytest.raises(ClassificationError):
            classify_intent("q", gw(default="7"))
        with pytest.raises(ClassificationError):
            classify_intent("q", gw(default="maybe 2"))

    def test_intent_value_domain(self):
        with pytest.raises(ValueError):
            IntentClass(value=3)


class TestRouteIntent:
    def test_reject_non_bi(self):
        action = route_intent(IntentClass(0), SessionState(session_id="s"))
        assert action.kind == "reject" and action.message

    def test_ask_missing(self):
        action = route_intent(IntentClass(1), SessionState(session_id="s"))
        assert action.kind == "ask_missing" and action.message

    def test_proceed(self):
        assert route_intent(IntentClass(2), SessionState(session_id="s")).kind == "proceed"

    def test_repeated_asks_downgrade_to_reject(self):
        session = SessionState(session_id="s")
        session.append_turn(turn(1, "a", kind="ask_missing"))
        session.append_turn(turn(2, "b", kind="ask_missing"))
        assert route_intent(IntentClass(1), session).kind == "reject"


def income_options_reply():
    return json.dumps(
        {
            "outcome": "needs_user",
            "question": "Which income column do you mean?",
            "options": [
                {"id": "shouldincome", "label": "shouldincome", "description": "income incl. tax"},
                {"id": "shouldincome_after", "label": "shouldincome_after",
                 "description": "income after tax"},
            ],
            "allows_free_text": True,
        }
    )


class TestClarifyIntent:
    def test_ambiguous_income_presents_two_columns(self):
        gateway = gw([StubRule(tag="intent_clarify", contains="income", response=income_options_reply())])
        out = clarify_intent("What is the income of the Company A in 2024?", [], gateway)
        assert out.kind == "needs_user"
        ids = [o[0] for o in out.request.options]
        assert ids == ["shouldincome", "shouldincome_after"]

    def test_term_triplet_guides_rewrite(self):
        store = KnowledgeStore(gw(default="{}"))
        store.ingest([
            KnowledgeEntry(
                id="ytd", label="term", name="YTD",
                description="Year To Date, from the start of the current year to today.",
                demonstration="What is the YTD revenue of the mini-program?",
            )
        ])
        hits = [RetrievalHit(entry=store.get("term", "YTD"))]
        rewritten = json.dumps(
            {"outcome": "rewritten",
             "text": "revenue from the start of the current year to today for the mini-program"}
        )
        gateway = gw([StubRule(tag="intent_clarify", contains="YTD", response=rewritten)])
        out = clarify_intent("YTD revenue of the mini-program", hits, gateway, store=store)
        assert out.kind == "rewritten"
        assert "start of the current year" in out.text

    def test_unambiguous_fixed_point(self):
        echo = json.dumps({"outcome": "rewritten", "text": "sales count in 2024 by region"})
        gateway = gw([StubRule(tag="intent_clarify", contains=None, response=echo)])
        out = clarify_intent("sales count in 2024 by region", [], gateway)
        assert out.text == "sales count in 2024 by region"

    def test_round_budget_exhausted(self):
        with pytest.raises(ClarificationExhausted):
            clarify_intent("q", [], gw(default="{}"), round_index=4, max_rounds=3)

    def test_bad_reply_raises_extraction_error(self):
        with pytest.raises(ExtractionError):
            clarify_intent("q", [], gw(default='{"outcome": "dance"}'))

    def test_merge_answer(self):
        merged = merge_clarification_answer("income of Company A", "shouldincome_after")
        assert "income of Company A" in merged and "shouldincome_after" in merged


class TestSessionState:
    def test_turn_ids_strictly_increase(self):
        session = SessionState(session_id="s")
        session.append_turn(turn(1, "a"))
        with pytest.raises(ValueError):
            session.append_turn(turn(1, "b"))

    def test_completed_requires_intent(self):
        with pytest.raises(ValueError):
            DialogueTurn(turn_id=1, user_text="x", completed_text="y", intent=None)

    def test_clarification_needs_options_or_free_text(self):
        with pytest.raises(ValueError):
            ClarificationRequest(question_text="?", options=(), allows_free_text=False)

    def test_jsonl_persistence_roundtrip(self, tmp_path):
        store = SessionStore(tmp_path)
        session = store.create("abc")
        t1 = turn(1, "hello", ["m"], ["d"], completed="hello completed")
        session.append_turn(t1)
        store.persist_turn(session, t1)
        t2 = turn(2, "again", kind="reject")
        session.append_turn(t2)
        store.persist_turn(session, t2)

        fresh = SessionStore(tmp_path)
        loaded = fresh.get("abc")
        assert loaded is not None
        assert [t.to_dict() for t in loaded.turns] == [t1.to_dict(), t2.to_dict()]

    def test_missing_session_is_none(self, tmp_path):
        assert SessionStore(tmp_path).get("nope") is None
