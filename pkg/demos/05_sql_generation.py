"""SQL generation: strategy rule, intermediate representation, validation.

Shows the decision rule on data conditions, a two-step generation with one
self-repair round, and the validator catching schema violations.
"""

import json

from convbi.database import Schema
from convbi.gateway import Gateway, StubRule, StubScript
from convbi.sqlgen import (
    DomainProfile,
    StrategyThresholds,
    build_sir,
    domain_similarity,
    generate_sql_two_step,
    select_strategy,
    validate_sql,
)
from convbi.tables import profile_tables

thresholds = StrategyThresholds()  # 500 labeled pairs, 0.7 similarity
for n, s in ((600, 0.8), (600, 0.6), (100, 0.9), (500, 0.7)):
    print(f"n_labeled={n:4d} s_domain={s:.2f} -> {select_strategy(n, s, thresholds)}")

gateway = Gateway.scripted(StubScript(default="0"))
finance = DomainProfile("finance", ("revenue", "quarterly report"))
ads = DomainProfile("ads", ("impressions", "click rate"))
print(f"\ndomain similarity finance vs finance: "
      f"{domain_similarity(finance, finance, gateway):.3f}")
print(f"domain similarity finance vs ads:     "
      f"{domain_similarity(finance, ads, gateway):.3f}")

schema = Schema.from_dict({
    "tables": [{"name": "revenue_by_quarter", "columns": [
        {"name": "ftime"}, {"name": "cname"}, {"name": "shouldincome_after"},
    ]}]
})
good_sql = ("SELECT SUM(shouldincome_after) AS total_income FROM revenue_by_quarter "
            "WHERE YEAR(ftime) = 2024 AND cname = 'Company A'")
sir_reply = json.dumps({
    "Key Components": {"Metric": "shouldincome_after", "Time Range": 2024},
    "Knowledge Mapping": ["income maps to shouldincome_after"],
    "Query Understanding": "after-tax income of Company A in 2024",
    "Rewritten Query": "Total after-tax income (shouldincome_after) of Company A in 2024",
})
scripted = Gateway.scripted(StubScript(rules=(
    StubRule(tag="sir_build", contains=None, response=sir_reply),
    StubRule(tag="sql_generate", contains=None,
             response="SELECT SUM(wrong_col) FROM revenue_by_quarter"),
    StubRule(tag="sql_repair", contains="unknown column", response=good_sql),
)))

sir = build_sir("income of Company A in 2024", [], [], scripted)
print("\nintermediate form, rewritten query:")
print(" ", sir.rewritten_query)

generated = generate_sql_two_step(sir, profile_tables(schema, scripted), scripted)
print("first attempt referenced wrong_col; the repair round produced:")
print(" ", generated.sql_text)
print("tables used:", generated.tables_used)

report = validate_sql("SELECT nope FROM revenue_by_quarter", schema)
print("\nvalidator on a bad statement:", report.violations)
