"""Two-phase knowledge retrieval with ancestor expansion.

A hit on a leaf entry drags in its whole ancestor chain: value -> column ->
column -> table, stopping when the next ancestor is not in the store.
"""

from convbi.gateway import Gateway, StubScript
from convbi.knowledge import KnowledgeEntry, KnowledgeStore

store = KnowledgeStore(Gateway.scripted(StubScript(default="{}")))
store.ingest([
    KnowledgeEntry(id="k1", label="value", name="Campus Hiring",
                   description="a recruitment channel value",
                   anc_label="column", anc_name="Campus Recruitment"),
    KnowledgeEntry(id="k2", label="column", name="Campus Recruitment",
                   description="per-channel recruitment counts",
                   anc_label="column", anc_name="Recruitment Channels"),
    KnowledgeEntry(id="k3", label="column", name="Recruitment Channels",
                   description="channel taxonomy",
                   anc_label="table", anc_name="Personnel Table"),
    KnowledgeEntry(id="k4", label="table", name="Personnel Table",
                   description="employee records",
                   anc_label="table", anc_name="Company HR Database"),  # absent on purpose
    KnowledgeEntry(id="k5", label="term", name="YTD",
                   description="Year To Date, from the start of the year to today",
                   demonstration="What is the YTD revenue of the mini-program?"),
])

seed = store.get("value", "Campus Hiring")
print("ancestor closure from 'Campus Hiring':")
for entry in store.ancestor_closure(seed):
    print("  ->", entry.name)
print("(stops because 'Company HR Database' is not stored)\n")

result = store.retrieve("Campus Hiring", k=5, n=10)
print("retrieve('Campus Hiring') ranked hits:")
for hit in result.hits:
    print(f"  {hit.rank}. [{hit.phase:7s}] {hit.entry.name}  "
          f"(lex {hit.lexical_score:.3f}, sem {hit.semantic_score:.3f})")

print("\nexport is JSONL sorted by (label, name):")
print("\n".join(store.export_jsonl().splitlines()[:2]), "...")
