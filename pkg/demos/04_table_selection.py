"""Table selection: coarse semantic recall, then the combined re-rank.

score(t) = sim(t) + alpha * embed(t) + beta * heat(t) — the demo prints each
component so the heat term's tie-breaking is visible.
"""

from convbi.database import Schema
from convbi.gateway import Gateway, StubScript
from convbi.tables import KeywordSet, ScoringParams, TableSelector, profile_tables

gateway = Gateway.scripted(StubScript(default="{}"))

schema = Schema.from_dict({
    "tables": [
        {"name": "revenue_by_quarter", "heat": 30,
         "columns": [{"name": "ftime"}, {"name": "cname"},
                     {"name": "revenue"}, {"name": "region"}]},
        {"name": "revenue_archive", "heat": 2,
         "columns": [{"name": "ftime"}, {"name": "cname"},
                     {"name": "revenue"}, {"name": "region"}]},
        {"name": "hr_headcount", "heat": 10,
         "columns": [{"name": "dept"}, {"name": "heads"}]},
    ]
})

profiles = profile_tables(schema, gateway)
print("normalized heats:", {p.table_name: round(p.heat, 2) for p in profiles})

selector = TableSelector(profiles, gateway)
keywords = KeywordSet(("revenue", "region", "2024"))
params = ScoringParams(rerank_alpha=0.5, rerank_beta=0.2, candidate_n=3)

print(f"\nkeywords: {list(keywords.keywords)}")
print(f"{'table':22s} {'sim':>6s} {'embed':>6s} {'heat':>5s} {'score':>6s}")
for scored in selector.select_for_keywords(keywords, params):
    p = scored.profile
    print(f"{p.table_name:22s} {scored.sim:6.3f} {scored.embed_score:6.3f} "
          f"{p.heat:5.2f} {scored.score:6.3f}")

print("\nwith beta=0 the identical twins tie and sort by name; "
      "heat breaks the tie when beta>0")
for beta in (0.0, 0.2):
    out = selector.select_for_keywords(keywords, ScoringParams(rerank_alpha=0.0,
                                                               rerank_beta=beta,
                                                               candidate_n=2))
    print(f"  beta={beta}: {[s.profile.table_name for s in out]}")
