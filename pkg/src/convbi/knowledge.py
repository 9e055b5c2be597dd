"""
Knowledge base with hybrid lexical/semantic retrieval and ancestor links.

Entries carry an optional (anc_label, anc_name) pointer to a parent entry;
retrieval expands every hit with the transitive closure of those links, so
a hit on a leaf term drags in the column/table/database context it hangs
off. Retrieval runs in two phases: a recall-oriented coarse phase (BM25
union semantic top-k) and a precision-oriented fine phase (re-rank, plus an
optional column-filter chat call in SQL-generation context).

Lexical scoring is in-process BM25 (k1=1.2, b=0.75) with
``idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`` over tokens produced by
:func:`tokenize`: lowercase alphanumeric runs plus, for runs longer than
three characters, their intra-run character trigrams (keeps unsegmented
CJK queries matchable). Semantic scoring is cosine over the entry-name
embedding. Ingest swaps the whole index atomically; readers never observe
a half-built state.
"""

from __future__ import annotations

import json
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gateway import Gateway

__all__ = [
    "LABELS",
    "KnowledgeEntry",
    "KnowledgeTriplet",
    "RetrievalHit",
    "RetrievalResult",
    "KnowledgeStore",
    "ValidationError",
    "tokenize",
    "Bm25Index",
]

LABELS = ("table", "column", "value", "term", "udf", "alias", "task", "history")

_ENTRY_FIELDS = ("id", "label", "name", "description", "demonstration", "anc_label", "anc_name")
_REQUIRED_FIELDS = ("id", "label", "name", "description")

BM25_K1 = 1.2
BM25_B = 0.75

_WORD_RE = re.compile(r"[0-9a-z]+", re.UNICODE)


class ValidationError(ValueError):
    """Entry or import-line rejected; carries the offending ids/lines."""

    def __init__(self, message: str, offenders: list[str] | None = None):
        super().__init__(message)
        self.offenders = offenders or []


@dataclass(frozen=True)
class KnowledgeEntry:
    id: str
    label: str
    name: str
    description: str = ""
    demonstration: str | None = None
    anc_label: str | None = None
    anc_name: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("entry id must be non-empty")
        if self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r}", [self.id])
        if not self.name:
            raise ValidationError("entry name must be non-empty", [self.id])
        if (self.anc_label is None) != (self.anc_name is None):
            raise ValidationError(
                "anc_label and anc_name must be set together", [self.id]
            )
        if self.anc_label is not None and self.anc_label not in LABELS:
            raise ValidationError(f"unknown anc_label {self.anc_label!r}", [self.id])

    @property
    def key(self) -> tuple[str, str]:
        return (self.label, self.name)

    def search_text(self) -> str:
        parts = [self.name, self.description]
        if self.demonstration:
            parts.append(self.demonstration)
        return " ".join(parts)

    def render(self) -> str:
        """Candidate text shown to the re-ranker and downstream prompts."""
        return f"{self.name}: {self.description}" if self.description else self.name

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "label": self.label, "name": self.name,
                     "description": self.description}
        if self.demonstration is not None:
            out["demonstration"] = self.demonstration
        if self.anc_label is not None:
            out["anc_label"] = self.anc_label
            out["anc_name"] = self.anc_name
        return out


@dataclass(frozen=True)
class KnowledgeTriplet:
    """(term, definition, demonstration) rendering of a term entry."""

    term: str
    definition: str
    demonstration: str

    def __post_init__(self) -> None:
        if not (self.term and self.definition and self.demonstration):
            raise ValidationError("triplet fields must all be non-empty")


@dataclass
class RetrievalHit:
    entry: KnowledgeEntry
    lexical_score: float = 0.0
    semantic_score: float = 0.0
    phase: str = "coarse"  # coarse | closure | fine
    rank: int = 1


@dataclass
class RetrievalResult:
    hits: list[RetrievalHit] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def entries(self) -> list[KnowledgeEntry]:
        return [h.entry for h in self.hits]


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric runs plus intra-run trigrams for runs > 3 chars."""
    tokens: list[str] = []
    for run in _WORD_RE.findall(text.lower()):
        tokens.append(run)
        if len(run) > 3:
            tokens.extend(run[i : i + 3] for i in range(len(run) - 2))
    return tokens


class Bm25Index:
    """Plain in-memory BM25 over pre-tokenized documents."""

    def __init__(self, documents: list[str], k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self.term_freqs = [Counter(tokenize(doc)) for doc in documents]
        self.doc_lens = [sum(tf.values()) for tf in self.term_freqs]
        self.n_docs = len(documents)
        self.avg_len = (sum(self.doc_lens) / self.n_docs) if self.n_docs else 0.0
        df: Counter = Counter()
        for tf in self.term_freqs:
            df.update(tf.keys())
        self.idf = {
            t: math.log(1.0 + (self.n_docs - n + 0.5) / (n + 0.5)) for t, n in df.items()
        }

    def scores(self, query: str) -> list[float]:
        q_tokens = tokenize(query)
        out = []
        for tf, dl in zip(self.term_freqs, self.doc_lens):
            norm = self.k1 * (1.0 - self.b + self.b * dl / self.avg_len) if self.avg_len else 0.0
            s = 0.0
            for t in q_tokens:
                f = tf.get(t, 0)
                if f:
                    s += self.idf[t] * f * (self.k1 + 1.0) / (f + norm)
            out.append(s)
        return out


@dataclass(frozen=True)
class _State:
    """Immutable index snapshot; ingest builds a new one and swaps it in."""

    order: tuple[str, ...] = ()  # entry ids in ingest order
    by_id: dict = field(default_factory=dict)
    by_key: dict = field(default_factory=dict)
    bm25: Bm25Index | None = None
    name_vectors: np.ndarray | None = None  # row i embeds order[i]'s name


class KnowledgeStore:
    """Ingest, export, and two-phase retrieval over knowledge entries."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway
        self._lock = threading.Lock()
        self._state = _State()

    def __len__(self) -> int:
        return len(self._state.order)

    # -- storage ------------------------------------------------------------

    def ingest(self, entries: list[KnowledgeEntry]) -> int:
        """Upsert a batch; duplicate (label, name) or id replaces the prior
        version. The index rebuild is atomic per batch."""
        bad = [e.id for e in entries if (e.anc_label is None) != (e.anc_name is None)]
        if bad:
            raise ValidationError("anc_label without anc_name", bad)
        with self._lock:
            by_id = dict(self._state.by_id)
            order = list(self._state.order)
            for entry in entries:
                old_same_key = self._find_key_owner(by_id, entry.key)
                if old_same_key is not None and old_same_key != entry.id:
                    by_id.pop(old_same_key)
                    order.remove(old_same_key)
                if entry.id not in by_id:
                    order.append(entry.id)
                by_id[entry.id] = entry
            self._state = self._build_state(order, by_id)
        return len(entries)

    @staticmethod
    def _find_key_owner(by_id: dict, key: tuple[str, str]) -> str | None:
        for eid, entry in by_id.items():
            if entry.key == key:
                return eid
        return None

    def _build_state(self, order: list[str], by_id: dict) -> _State:
        entries = [by_id[eid] for eid in order]
        bm25 = Bm25Index([e.search_text() for e in entries]) if entries else None
        vectors = None
        if entries:
            embedded = self.gateway.embed([e.name for e in entries])
            vectors = np.stack([v.values for v in embedded])
        by_key = {e.key: e.id for e in entries}
        return _State(order=tuple(order), by_id=by_id, by_key=by_key,
                      bm25=bm25, name_vectors=vectors)

    def get(self, label: str, name: str) -> KnowledgeEntry | None:
        state = self._state
        eid = state.by_key.get((label, name))
        return state.by_id.get(eid) if eid else None

    def get_by_id(self, entry_id: str) -> KnowledgeEntry | None:
        return self._state.by_id.get(entry_id)

    def entries(self) -> list[KnowledgeEntry]:
        state = self._state
        return [state.by_id[eid] for eid in state.order]

    # -- retrieval ----------------------------------------------------------

    def coarse_retrieve(self, query: str, k: int) -> list[RetrievalHit]:
        """Recall phase: union of BM25 top-k and name-embedding top-k."""
        if not query:
            raise ValidationError("query must be non-empty")
        if k < 1:
            raise ValidationError("k must be >= 1")
        state = self._state
        if not state.order:
            return []
        entries = [state.by_id[eid] for eid in state.order]

        lex_scores = state.bm25.scores(query)
        lex_top = sorted(
            (i for i, s in enumerate(lex_scores) if s > 0.0),
            key=lambda i: (-lex_scores[i], i),
        )[:k]

        query_vec = self.gateway.embed_one(query).values
        sem_scores = state.name_vectors @ query_vec
        sem_scores = np.clip(sem_scores, 0.0, 1.0)
        sem_top = sorted(
            (i for i in range(len(entries)) if sem_scores[i] > 0.0),
            key=lambda i: (-sem_scores[i], i),
        )[:k]

        merged: dict[int, RetrievalHit] = {}
        for i in lex_top:
            merged[i] = RetrievalHit(entry=entries[i], lexical_score=lex_scores[i])
        for i in sem_top:
            hit = merged.get(i)
            if hit is None:
                merged[i] = RetrievalHit(entry=entries[i], semantic_score=float(sem_scores[i]))
            else:
                hit.semantic_score = float(sem_scores[i])

        hits = sorted(
            merged.values(),
            key=lambda h: (-h.semantic_score, -h.lexical_score, h.entry.id),
        )
        for rank, hit in enumerate(hits, start=1):
            hit.rank = rank
        return hits

    def ancestor_closure(self, seed: KnowledgeEntry) -> list[KnowledgeEntry]:
        """Walk anc links until an ancestor is absent or already collected."""
        collected: list[KnowledgeEntry] = []
        seen = {seed.id}
        current = seed
        while current.anc_name is not None:
            ancestor = self.get(current.anc_label, current.anc_name)
            if ancestor is None or ancestor.id in seen:
                break
            collected.append(ancestor)
            seen.add(ancestor.id)
            current = ancestor
        return collected

    def fine_retrieve(
        self,
        query: str,
        coarse: list[RetrievalHit],
        n: int,
        sql_context: bool = False,
    ) -> RetrievalResult:
        """Precision phase: optional column filter, then re-rank to top-n.

        Provider failure degrades to the input order (availability over
        precision) and is flagged rather than raised.
        """
        if n < 1:
            raise ValidationError("n must be >= 1")
        flags: list[str] = []
        candidates = list(coarse)

        if sql_context and candidates:
            try:
                candidates = self._filter_columns(query, candidates)
            except Exception:
                flags.append("column_filter_skipped")

        if not candidates:
            return RetrievalResult(hits=[], flags=flags)

        try:
            ranked = self.gateway.rerank(query, [h.entry.render() for h in candidates])
        except Exception:
            flags.append("rerank_skipped")
            hits = [replace_rank(h, rank) for rank, h in enumerate(candidates[:n], start=1)]
            return RetrievalResult(hits=hits, flags=flags)

        hits = []
        for rank, (idx, score) in enumerate(ranked[:n], start=1):
            hit = candidates[idx]
            phase = hit.phase if hit.phase == "closure" else "fine"
            hits.append(
                RetrievalHit(
                    entry=hit.entry,
                    lexical_score=hit.lexical_score,
                    semantic_score=float(score),
                    phase=phase,
                    rank=rank,
                )
            )
        return RetrievalResult(hits=hits, flags=flags)

    def _filter_columns(self, query: str, candidates: list[RetrievalHit]) -> list[RetrievalHit]:
        columns = [h.entry.name for h in candidates if h.entry.label == "column"]
        if not columns:
            return candidates
        prompt = (
            "Question:\n"
            f"{query}\n\n"
            "Candidate columns:\n"
            + "\n".join(f"- {name}" for name in columns)
            + '\n\nReply with JSON {"drop": [<column names irrelevant to the question>]}.'
        )
        reply = self.gateway.ask(prompt, tag="column_filter")
        drop = set(json.loads(reply).get("drop", []))
        return [
            h for h in candidates
            if not (h.entry.label == "column" and h.entry.name in drop)
        ]

    def retrieve(self, query: str, k: int, n: int, sql_context: bool = False) -> RetrievalResult:
        """Coarse retrieval, ancestor expansion of every hit, then fine."""
        coarse = self.coarse_retrieve(query, k)
        seen = {h.entry.id for h in coarse}
        expanded = list(coarse)
        for hit in coarse:
            for ancestor in self.ancestor_closure(hit.entry):
                if ancestor.id not in seen:
                    seen.add(ancestor.id)
                    expanded.append(RetrievalHit(entry=ancestor, phase="closure"))
        return self.fine_retrieve(query, expanded, n, sql_context=sql_context)

    # -- import/export ------------------------------------------------------

    def import_jsonl(self, source: str | Path) -> int:
        """Load entries from a JSONL file; unknown fields reject the line."""
        text = Path(source).read_text(encoding="utf-8")
        return self.import_jsonl_text(text)

    def import_jsonl_text(self, text: str) -> int:
        entries = []
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {line_no}: invalid JSON ({exc})")
            unknown = set(raw) - set(_ENTRY_FIELDS)
            if unknown:
                raise ValidationError(
                    f"line {line_no}: unknown fields {sorted(unknown)}"
                )
            missing = [f for f in _REQUIRED_FIELDS if f not in raw]
            if missing:
                raise ValidationError(f"line {line_no}: missing fields {missing}")
            entries.append(KnowledgeEntry(**raw))
        return self.ingest(entries)

    def export_jsonl(self) -> str:
        """Entries as JSONL, sorted by (label, name)."""
        ordered = sorted(self.entries(), key=lambda e: e.key)
        return "\n".join(json.dumps(e.to_dict(), ensure_ascii=False) for e in ordered)

    def triplets(self, hits: list[RetrievalHit]) -> list[KnowledgeTriplet]:
        """Term hits rendered as (term, definition, demonstration) triplets."""
        out = []
        for hit in hits:
            e = hit.entry
            if e.label == "term" and e.description and e.demonstration:
                out.append(KnowledgeTriplet(e.name, e.description, e.demonstration))
        return out


def replace_rank(hit: RetrievalHit, rank: int) -> RetrievalHit:
    return RetrievalHit(
        entry=hit.entry,
        lexical_score=hit.lexical_score,
        semantic_score=hit.semantic_score,
        phase=hit.phase,
        rank=rank,
    )
