"""Table-selection tests: profiling, keyword extraction, scoring oracles."""

from __future__ import annotations

import json
import random

import pytest

from convbi.database import Schema
from convbi.gateway import Gateway, StubRule, StubScript
from convbi.tables import (
    KeywordSet,
    ScoringParams,
    TableSelector,
    extract_keywords,
    profile_tables,
    rerank_score,
)


def gateway_with(rules=(), default="{}"):
    return Gateway.scripted(StubScript(rules=tuple(rules), default=default))


def schema_of(*tables) -> Schema:
    """tables: (name, heat, [column names])"""
    return Schema.from_dict(
        {
            "tables": [
                {
                    "name": name,
                    "heat": heat,
                    "columns": [{"name": c, "type": "TEXT"} for c in cols],
                }
                for name, heat, cols in tables
            ]
        }
    )


class TestProfileTables:
    def test_empty_schema(self):
        assert profile_tables(Schema(), gateway_with()) == []

    def test_heat_minmax_normalization(self):
        profiles = profile_tables(
            schema_of(("t1", 10, ["a"]), ("t2", 30, ["b"])), gateway_with()
        )
        heats = {p.table_name: p.heat for p in profiles}
        assert heats == {"t1": 0.0, "t2": 1.0}

    def test_single_table_degenerate_heat(self):
        (profile,) = profile_tables(schema_of(("only", 77, ["x"])), gateway_with())
        assert profile.heat == 0.5

    def test_duplicate_table_names_rejected(self):
        with pytest.raises(ValueError):
            profile_tables(schema_of(("t", 0, ["a"]), ("t", 1, ["b"])), gateway_with())


class TestExtractKeywords:
    def test_scripted_reply(self):
        rules = [
            StubRule(
                tag="keyword_extract",
                contains="revenue of every product in 2023",
                response=json.dumps({"keywords": ["revenue", "2023"]}),
            )
        ]
        ks = extract_keywords("the revenue of every product in 2023", gateway_with(rules))
        assert ks.keywords == ("revenue", "2023")
        assert not ks.degraded

    def test_single_word_query(self):
        rules = [StubRule(tag="keyword_extract", contains=None,
                          response=json.dumps({"keywords": ["churn"]}))]
        assert extract_keywords("churn", gateway_with(rules)).keywords == ("churn",)

    def test_duplicates_deduplicated_first_kept(self):
        rules = [StubRule(tag="keyword_extract", contains=None,
                          response=json.dumps({"keywords": ["a", "b", "a"]}))]
        assert extract_keywords("q", gateway_with(rules)).keywords == ("a", "b")

    def test_gateway_failure_falls_back_to_lexical(self):
        ks = extract_keywords("show me the revenue for Shanghai", gateway_with(default=None))
        assert ks.degraded
        assert "revenue" in ks.keywords and "shanghai" in ks.keywords
        assert "the" not in ks.keywords


class TestCoarseRank:
    def test_single_profile_kept_when_budget_allows(self):
        profiles = profile_tables(schema_of(("sales", 0, ["amount", "region"])), gateway_with())
        selector = TableSelector(profiles, gateway_with())
        hits = selector.coarse_rank(KeywordSet(("sales",)), ScoringParams())
        assert [h.profile.table_name for h in hits] == ["sales"]

    def test_exact_name_table_first_in_200_table_corpus(self):
        rng = random.Random(11)
        tables = [
            (f"tbl_{rng.randrange(10**9):09d}_{i}", 0, [f"col_{i}_{j}" for j in range(3)])
            for i in range(199)
        ]
        tables.append(("quarterly_consumption", 0, ["ftime", "amount", "product"]))
        profiles = profile_tables(schema_of(*tables), gateway_with())
        selector = TableSelector(profiles, gateway_with())
        hits = selector.coarse_rank(KeywordSet(("quarterly_consumption",)), ScoringParams())
        assert hits[0].profile.table_name == "quarterly_consumption"

    def test_budget_exhaustion_empties_output(self):
        profiles = profile_tables(schema_of(("wide", 0, list("abcde"))), gateway_with())
        selector = TableSelector(profiles, gateway_with())
        hits = selector.coarse_rank(
            KeywordSet(("wide",)), ScoringParams(size_budget_k=1, coarse_cap=5, candidate_n=1)
        )
        assert hits == []

    def test_output_capped_at_coarse_cap(self):
        tables = [(f"t{i:03d}", 0, ["shared_col"]) for i in range(150)]
        profiles = profile_tables(schema_of(*tables), gateway_with())
        selector = TableSelector(profiles, gateway_with())
        hits = selector.coarse_rank(KeywordSet(("shared_col",)), ScoringParams())
        assert len(hits) <= 100


class TestTokenSimilarity:
    def make_selector(self, *tables):
        profiles = profile_tables(schema_of(*tables), gateway_with())
        return TableSelector(profiles, gateway_with()), profiles

    def test_empty_keywords_zero(self):
        selector, profiles = self.make_selector(("t", 0, ["alpha", "beta"]))
        assert selector.token_similarity(KeywordSet(()), profiles[0]) == 0.0

    def test_exact_column_match_is_one(self):
        selector, profiles = self.make_selector(("t", 0, ["consumeincome", "ftime"]))
        sim = selector.token_similarity(KeywordSet(("consumeincome",)), profiles[0])
        assert abs(sim - 1.0) <= 1e-9

    def test_matches_bruteforce_double_loop_oracle(self):
        rng = random.Random(3)
        alphabet = "abcdefghijklmnop_"
        columns = ["".join(rng.choices(alphabet, k=rng.randint(3, 12))) for _ in range(8)]
        keywords = ["".join(rng.choices(alphabet, k=rng.randint(3, 10))) for _ in range(5)]
        selector, profiles = self.make_selector(("t", 0, columns))

        oracle = 0.0
        for kw in keywords:  # independent max/sum accumulation
            best = 0.0
            for col in columns:
                best = max(best, selector.text_sim(kw, col))
            oracle += best

        got = selector.token_similarity(KeywordSet(tuple(keywords)), profiles[0])
        assert abs(got - oracle) <= 1e-9

    def test_invariant_under_permutations(self):
        rng = random.Random(8)
        columns = ["amount", "region", "ftime", "cname"]
        keywords = ["amount", "region total", "2023"]
        selector, profiles = self.make_selector(("t", 0, columns))
        base = selector.token_similarity(KeywordSet(tuple(keywords)), profiles[0])

        shuffled_cols = columns[:]
        rng.shuffle(shuffled_cols)
        selector2, profiles2 = self.make_selector(("t", 0, shuffled_cols))
        shuffled_kws = keywords[:]
        rng.shuffle(shuffled_kws)
        assert abs(selector2.token_similarity(KeywordSet(tuple(shuffled_kws)), profiles2[0]                                               ) - base) <= 1e-12

    def test_bounded_by_keyword_count(self):
        rng = random.Random(21)
        columns = ["".join(rng.choices("abcdef", k=6)) for _ in range(5)]
        selector, profiles = self.make_selector(("t", 0, columns))
        for k in (1, 3, 6):
            keywords = tuple("".join(rng.choices("abcdef", k=5)) for _ in range(k))
            sim = selector.token_similarity(KeywordSet(keywords), profiles[0])
            assert 0.0 <= sim <= k + 1e-12


class TestRerankScore:
    def test_degenerate_weights_give_sim(self):
        params = ScoringParams(rerank_alpha=0.0, rerank_beta=0.0)
        assert rerank_score(0.42, 0.9, 0.7, params) == 0.42

    def test_hand_value(self):
        params = ScoringParams(rerank_alpha=0.5, rerank_beta=0.2)
        assert abs(rerank_score(0.5, 0.8, 0.3, params) - 0.96) <= 1e-12

    def test_random_tuples_match_linear_oracle(self):
        rng = random.Random(13)
        for _ in range(100):
            sim, emb, heat = rng.random() * 3, rng.random(), rng.random()
            alpha, beta = rng.random() * 2, rng.random() * 2
            params = ScoringParams(rerank_alpha=alpha, rerank_beta=beta)
            assert rerank_score(sim, emb, heat, params) == sim + alpha * emb + beta * heat


class TestSelectTables:
    def corpus(self, gold_heat=0.0):
        rng = random.Random(17)
        tables = [
            (
                f"noise_{i:02d}",
                0.0,
                ["".join(rng.choices("qrstuvwxyz", k=8)) for _ in range(4)],
            )
            for i in range(30)
        ]
        tables.append(("gold_orders", gold_heat, ["revenue", "quarter", "region"]))
        return tables

    def keyword_rules(self):
        return [
            StubRule(
                tag="keyword_extract",
                contains=None,
                response=json.dumps({"keywords": ["revenue", "quarter", "region"]}),
            )
        ]

    def test_gold_table_in_top5(self):
        gw = gateway_with(self.keyword_rules())
        profiles = profile_tables(schema_of(*self.corpus()), gw)
        selector = TableSelector(profiles, gw)
        out = selector.select_tables("revenue by quarter and region", ScoringParams())
        assert "gold_orders" in [s.profile.table_name for s in out[:5]]

    def test_heat_never_worsens_rank(self):
        gw = gateway_with(self.keyword_rules())
        params = ScoringParams(rerank_beta=0.5)

        def gold_rank(gold_heat):
            profiles = profile_tables(schema_of(*self.corpus(gold_heat)), gw)
            out = TableSelector(profiles, gw).select_tables("q", params)
            names = [s.profile.table_name for s in out]
            return names.index("gold_orders") if "gold_orders" in names else len(names)

        assert gold_rank(1.0) <= gold_rank(0.0)

    def test_equal_scores_tie_break_by_name(self):
        gw = gateway_with(self.keyword_rules())
        profiles = profile_tables(
            schema_of(("zz_dup", 0, ["revenue"]), ("aa_dup", 0, ["revenue"])), gw
        )
        selector = TableSelector(profiles, gw)
        out = selector.select_for_keywords(
            KeywordSet(("revenue",)), ScoringParams(rerank_alpha=0.0, rerank_beta=0.0)
        )
        assert [s.profile.table_name for s in out] == ["aa_dup", "zz_dup"]
        assert out[0].score == out[1].score

    def test_empty_coarse_returns_empty(self):
        gw = gateway_with(self.keyword_rules())
        profiles = profile_tables(schema_of(("wide", 0, list("abcdefgh"))), gw)
        selector = TableSelector(profiles, gw)
        out = selector.select_for_keywords(
            KeywordSet(("x",)), ScoringParams(size_budget_k=1, coarse_cap=5, candidate_n=1)
        )
        assert out == []

    def test_tags_filter_restricts_pool(self):
        gw = gateway_with(self.keyword_rules())
        schema = Schema.from_dict({
            "tables": [
                {"name": "fin_orders", "tags": ["finance"],
                 "columns": [{"name": "revenue"}]},
                {"name": "ads_orders", "tags": ["ads"],
                 "columns": [{"name": "revenue"}]},
            ]
        })
        selector = TableSelector(profile_tables(schema, gw), gw)
        out = selector.select_for_keywords(
            KeywordSet(("revenue",)), ScoringParams(), tags=["finance"]
        )
        assert [s.profile.table_name for s in out] == ["fin_orders"]
