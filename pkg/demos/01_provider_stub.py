"""Scripted providers: deterministic chat, hashing embeddings, re-ranking.

Every downstream pipeline stage talks to providers through one gateway, so
swapping the production endpoints for this stub script makes the whole
engine replayable offline.
"""

from convbi.gateway import (
    ChatRequest,
    Gateway,
    ProviderConfig,
    StubRule,
    StubScript,
    chat,
    cosine,
    stub_embed_text,
)

script = StubScript(
    rules=(
        StubRule(tag="intent_classify", contains="Los Angeles", response="1"),
        StubRule(tag="intent_classify", contains=None, response="2"),
    ),
    default="(no rule matched)",
)
config = ProviderConfig(kind="stub", stub=script)

request = ChatRequest.of("How about Los Angeles?", tag="intent_classify")
print("chat reply:", chat(request, config).text)
print("replay is identical:", chat(request, config) == chat(request, config))

gateway = Gateway.scripted(script)
a = gateway.embed_one("quarterly revenue")
b = gateway.embed_one("quarterly revenue")
c = gateway.embed_one("employee headcount")
print(f"embedding norm: {a.norm:.12f}")
print("same text, same vector:", (a.values == b.values).all())
print(f"cosine(revenue, revenue)  = {cosine(a, b):.6f}")
print(f"cosine(revenue, headcount)= {cosine(a, c):.6f}")

ranked = gateway.rerank("revenue by quarter", ["employee list", "revenue by quarter", "costs"])
print("rerank puts the exact match first:", ranked[0])

empty = stub_embed_text("")
print("empty text embeds to the zero vector:", empty.is_zero())
