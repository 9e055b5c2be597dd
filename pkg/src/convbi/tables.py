"""
Candidate-table selection for SQL generation.

Offline, every table is profiled: its rendered text
(``name | column names | comments``) is embedded, and its popularity heat
is min-max normalized over the batch. Online, keywords extracted from the
query drive a coarse embedding-cosine ranking under a size budget, and the
survivors are re-scored with

    score(t) = sim(t) + alpha * embed(t) + beta * heat(t)

where ``embed(t)`` is the best per-keyword cosine from the coarse phase and
``sim(t)`` sums, over keywords, the best column-level text similarity. The
column-level similarity is a TF-IDF-weighted character-trigram cosine in
[0, 1]; IDF statistics come from the column-name corpus of the profiled
tables, so identifiers with rare substrings match sharply.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .database import Schema
from .gateway import EmbeddingVector, Gateway, trigrams

__all__ = [
    "TableProfile",
    "ScoringParams",
    "KeywordSet",
    "CoarseHit",
    "ScoredTable",
    "TableSelector",
    "profile_tables",
    "extract_keywords",
    "rerank_score",
]

FALLBACK_STOPWORDS = frozenset(
    "a an and are by for from how in is me of on or show tell the to what which with".split()
)


@dataclass(frozen=True)
class TableProfile:
    table_name: str
    columns: tuple[tuple[str, str, str], ...]  # (name, type, comment)
    embedding: EmbeddingVector
    heat: float = 0.0
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.columns:
            raise ValueError(f"table {self.table_name!r} must have columns")
        if not 0.0 <= self.heat <= 1.0:
            raise ValueError("heat must be in [0, 1] after normalization")

    @property
    def field_count(self) -> int:
        return len(self.columns)

    def column_names(self) -> list[str]:
        return [c[0] for c in self.columns]

    def render(self) -> str:
        names = " ".join(c[0] for c in self.columns)
        comments = " ".join(c[2] for c in self.columns if c[2])
        return f"{self.table_name} | {names} | {comments}".rstrip(" |")


@dataclass(frozen=True)
class ScoringParams:
    rerank_alpha: float = 0.5
    rerank_beta: float = 0.2
    coarse_cap: int = 100
    size_budget_k: int = 2000  # per-keyword base; effective budget scales with keyword count
    candidate_n: int = 5

    def __post_init__(self) -> None:
        if self.rerank_alpha < 0 or self.rerank_beta < 0:
            raise ValueError("rerank weights must be non-negative")
        if self.coarse_cap < self.candidate_n:
            raise ValueError("coarse_cap must be >= candidate_n")
        if self.size_budget_k <= 0 or self.candidate_n <= 0:
            raise ValueError("size_budget_k and candidate_n must be positive")


@dataclass(frozen=True)
class KeywordSet:
    keywords: tuple[str, ...]
    degraded: bool = False  # true when the provider failed and lexical fallback was used

    def __len__(self) -> int:
        return len(self.keywords)


@dataclass(frozen=True)
class CoarseHit:
    """Coarse-phase survivor carrying its semantic recall score."""

    profile: TableProfile
    embed_score: float


@dataclass(frozen=True)
class ScoredTable:
    profile: TableProfile
    score: float
    sim: float
    embed_score: float


def profile_tables(schema: Schema, gateway: Gateway) -> list[TableProfile]:
    """One profile per table; heats min-max normalized (all-equal maps to 0.5)."""
    if not schema.tables:
        return []
    names = [t.name for t in schema.tables]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate table names: {dupes}")

    heats = [t.heat for t in schema.tables]
    lo, hi = min(heats), max(heats)
    if hi == lo:
        normalized = [0.5] * len(heats)
    else:
        normalized = [(h - lo) / (hi - lo) for h in heats]

    rendered = []
    profiles_raw = []
    for table, heat in zip(schema.tables, normalized):
        columns = tuple((c.name, c.type, c.comment) for c in table.columns)
        profiles_raw.append((table.name, columns, heat, table.tags))
        col_names = " ".join(c.name for c in table.columns)
        comments = " ".join(c.comment for c in table.columns if c.comment)
        rendered.append(f"{table.name} | {col_names} | {comments}".rstrip(" |"))

    embeddings = gateway.embed(rendered)
    return [
        TableProfile(table_name=name, columns=columns, embedding=emb, heat=heat, tags=tags)
        for (name, columns, heat, tags), emb in zip(profiles_raw, embeddings)
    ]


def extract_keywords(query: str, gateway: Gateway) -> KeywordSet:
    """LLM keyword extraction with a lexical fallback when the provider fails."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    prompt = (
        "Extract the search keywords (metrics, entities, filters, time ranges) "
        f"from this analytics question:\n{query}\n"
        'Reply with JSON {"keywords": ["..."]}.'
    )
    try:
        reply = gateway.ask(prompt, tag="keyword_extract")
        raw = json.loads(reply)["keywords"]
        if not isinstance(raw, list) or not all(isinstance(k, str) for k in raw):
            raise ValueError("keywords must be a list of strings")
        keywords = _dedupe(k.strip() for k in raw if k.strip())
        return KeywordSet(keywords=tuple(keywords))
    except Exception:
        tokens = _dedupe(t for t in query.lower().split() if _strip_punct(t) not in FALLBACK_STOPWORDS)
        return KeywordSet(keywords=tuple(_strip_punct(t) for t in tokens if _strip_punct(t)),
                          degraded=True)


def _strip_punct(token: str) -> str:
    return token.strip(".,;:!?'\"()")


def _dedupe(items) -> list[str]:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def rerank_score(sim: float, embed_score: float, heat: float, params: ScoringParams) -> float:
    """The combined linear score: sim + alpha * embed + beta * heat."""
    return sim + params.rerank_alpha * embed_score + params.rerank_beta * heat


class TableSelector:
    """Holds the profiled tables plus the trigram-IDF stats used by sim()."""

    def __init__(self, profiles: list[TableProfile], gateway: Gateway):
        self.profiles = list(profiles)
        self.gateway = gateway
        self._matrix = (
            np.stack([p.embedding.values for p in self.profiles]) if self.profiles else None
        )
        corpus = [name for p in self.profiles for name in p.column_names()]
        self._idf = TrigramIdf(corpus)
        self._column_vecs = {
            name: _tfidf_vector(name, self._idf)
            for p in self.profiles
            for name in p.column_names()
        }

    # -- column-level text similarity ----------------------------------------

    def text_sim(self, a: str, b: str) -> float:
        """TF-IDF-weighted trigram cosine in [0, 1]."""
        va = _tfidf_vector(a, self._idf)
        vb = self._column_vecs.get(b) or _tfidf_vector(b, self._idf)
        return _sparse_cosine(va, vb)

    def token_similarity(self, keywords: KeywordSet, table: TableProfile) -> float:
        """Sum over keywords of the best column match for this table."""
        if not table.columns:
            raise ValueError("table must have at least one column")
        total = 0.0
        for keyword in keywords.keywords:
            total += max(self.text_sim(keyword, col) for col in table.column_names())
        return total

    # -- coarse phase ---------------------------------------------------------

    def coarse_rank(
        self,
        keywords: KeywordSet,
        params: ScoringParams,
        tags: list[str] | None = None,
    ) -> list[CoarseHit]:
        """Per-keyword semantic recall, unioned, capped, then budget-trimmed.

        The size budget is ``size_budget_k * max(1, len(keywords))``; tables
        are kept greedily by score while
        (total field count) x (kept table count) stays within it.
        """
        pool = self.profiles
        if tags:
            wanted = set(tags)
            pool = [p for p in pool if wanted & set(p.tags)]
        if not pool or not keywords.keywords:
            return []

        matrix = np.stack([p.embedding.values for p in pool])
        kw_vectors = self.gateway.embed(list(keywords.keywords))
        sims = np.stack([matrix @ v.values for v in kw_vectors])  # keywords x tables
        best = sims.max(axis=0)

        union: set[int] = set()
        for row in sims:
            top = sorted(range(len(pool)), key=lambda i: (-row[i], pool[i].table_name))
            union.update(top[: params.coarse_cap])

        ordered = sorted(union, key=lambda i: (-best[i], pool[i].table_name))
        ordered = ordered[: params.coarse_cap]

        budget = params.size_budget_k * max(1, len(keywords))
        kept: list[CoarseHit] = []
        total_fields = 0
        for i in ordered:
            fields = total_fields + pool[i].field_count
            if fields * (len(kept) + 1) > budget:
                break
            total_fields = fields
            kept.append(CoarseHit(profile=pool[i], embed_score=float(best[i])))
        return kept

    # -- full pipeline ----------------------------------------------------------

    def select_tables(
        self,
        query: str,
        params: ScoringParams,
        tags: list[str] | None = None,
    ) -> list[ScoredTable]:
        """Keyword extraction, coarse ranking, then the combined re-rank."""
        keywords = extract_keywords(query, self.gateway)
        return self.select_for_keywords(keywords, params, tags=tags)

    def select_for_keywords(
        self,
        keywords: KeywordSet,
        params: ScoringParams,
        tags: list[str] | None = None,
    ) -> list[ScoredTable]:
        coarse = self.coarse_rank(keywords, params, tags=tags)
        scored = []
        for hit in coarse:
            sim = self.token_similarity(keywords, hit.profile)
            score = rerank_score(sim, hit.embed_score, hit.profile.heat, params)
            scored.append(
                ScoredTable(profile=hit.profile, score=score, sim=sim, embed_score=hit.embed_score)
            )
        scored.sort(key=lambda s: (-s.score, s.profile.table_name))
        return scored[: params.candidate_n]


class TrigramIdf:
    """Smoothed IDF over the trigram sets of the column-name corpus.

    ``weight(g) = ln((1 + n_docs) / (1 + df(g))) + 1``; unseen trigrams get
    the df=0 weight (maximally rare).
    """

    def __init__(self, column_names: list[str]):
        self.n_docs = len(column_names)
        df: Counter = Counter()
        for name in column_names:
            df.update(set(trigrams(name)))
        self._weights = {
            g: math.log((1 + self.n_docs) / (1 + d)) + 1.0 for g, d in df.items()
        }
        self._unseen = math.log(1.0 + self.n_docs) + 1.0

    def weight(self, trigram: str) -> float:
        return self._weights.get(trigram, self._unseen)


def _tfidf_vector(text: str, idf: TrigramIdf) -> dict[str, float]:
    return {g: count * idf.weight(g) for g, count in Counter(trigrams(text)).items()}


def _sparse_cosine(a: dict[str, float], b: dict[str, float]) -> float:
    if not a or not b:
        return 0.0
    dot = sum(w * b[g] for g, w in a.items() if g in b)
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)
