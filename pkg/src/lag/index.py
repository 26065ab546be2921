"""Corpus ingestion, chunking, and flat cosine-similarity retrieval."""

from __future__ import annotations

import heapq
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import Passage, RetrievalHit
from .errors import CorpusParseError, DimensionMismatchError, EmptyCorpusError, LagError, ZeroVectorError

log = logging.getLogger(__name__)

INDEX_MAGIC = "LAGIDX1"


@dataclass(frozen=True)
class CorpusDocument:
    id: str
    title: str
    text: str

    def to_dict(self) -> dict[str, str]:
        return {"id": self.id, "title": self.title, "text": self.text}


def load_corpus(path: str | Path) -> list[CorpusDocument]:
    """Read a JSON Lines corpus; blank lines are ignored."""
    docs: list[CorpusDocument] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusParseError(path, lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusParseError(path, lineno, "expected a JSON object")
            missing = [f for f in ("id", "title", "text") if f not in obj]
            if missing:
                raise CorpusParseError(path, lineno, f"missing field(s) {missing}")
            doc_id = str(obj["id"])
            if doc_id in seen:
                raise CorpusParseError(path, lineno, f"duplicate document id {doc_id!r}")
            seen.add(doc_id)
            docs.append(CorpusDocument(doc_id, str(obj["title"]), str(obj["text"])))
    return docs


def window_starts(n_tokens: int, chunk_size: int, overlap: int) -> list[int]:
    if not chunk_size > overlap >= 0:
        raise ValueError("need chunk_size > overlap >= 0")
    return list(range(0, max(n_tokens, 1), chunk_size - overlap))


def chunk_text(text: str, chunk_size: int, overlap: int) -> list[str]:
    """Split ``text`` into whitespace-token windows of at most ``chunk_size``."""
    tokens = text.split()
    return [" ".join(tokens[s:s + chunk_size]) for s in window_starts(len(tokens), chunk_size, overlap)]


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatchError(f"cannot compare shapes {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


class VectorIndex:
    """Immutable set of embedded passages searched by exhaustive scan."""

    def __init__(self, dimension: int, passages: Iterable[Passage], stats: dict[str, Any] | None = None):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.passages: tuple[Passage, ...] = tuple(passages)
        ids = [p.id for p in self.passages]
        if len(set(ids)) != len(ids):
            raise ValueError("passage ids must be unique")
        for p in self.passages:
            if len(p.embedding) != dimension:
                raise DimensionMismatchError(f"passage {p.id} has dimension {len(p.embedding)}, index has {dimension}")
        self._matrix = np.array([p.embedding for p in self.passages], dtype=np.float64).reshape(-1, dimension)
        self._norms = np.sqrt((self._matrix * self._matrix).sum(axis=1))
        if np.any(self._norms == 0.0):
            raise ZeroVectorError("index contains a zero embedding")
        self._by_id = {p.id: p for p in self.passages}
        self.stats = dict(stats or {})
        self.stats.setdefault("passages", len(self.passages))
        self.stats.setdefault("documents", len({p.source_doc for p in self.passages}))

    def __len__(self) -> int:
        return len(self.passages)

    def __getitem__(self, passage_id: str) -> Passage:
        return self._by_id[passage_id]

    def scores(self, query_vector) -> np.ndarray:
        q = np.asarray(query_vector, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise DimensionMismatchError(f"query has shape {q.shape}, index dimension is {self.dimension}")
        qn = np.sqrt((q * q).sum())
        if qn == 0.0:
            raise ZeroVectorError("query vector is zero")
        # row-wise reduction keeps identical rows bit-identical (stable tie-breaks)
        return np.clip((self._matrix * q).sum(axis=1) / (self._norms * qn), -1.0, 1.0)

    # persistence

    def to_dict(self) -> dict[str, Any]:
        return {
            "dimension": self.dimension,
            "stats": self.stats,
            "passages": [p.to_dict() for p in self.passages],
        }

    def save(self, path: str | Path) -> None:
        body = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        Path(path).write_text(f"{INDEX_MAGIC}\n{body}\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> VectorIndex:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != INDEX_MAGIC:
                raise ValueError(f"{path} is not an index file (header {header[:16]!r})")
            doc = json.loads(fh.read())
        return cls(doc["dimension"], (Passage.from_dict(p) for p in doc["passages"]), doc.get("stats"))


def ingest(
    docs: Sequence[CorpusDocument],
    embedder,
    chunk_size: int = 200,
    overlap: int = 40,
    workers: int = 4,
    timestamp: str | None = None,
) -> VectorIndex:
    """Chunk, embed and index a corpus.

    Each chunk's stored text is ``"<title>\\n<chunk>"``; that same string is
    what gets embedded. Passage ids are ``<doc id>:<chunk ordinal>`` and
    ``source_doc`` holds the document title.
    """
    if not docs:
        raise EmptyCorpusError("corpus is empty")
    pending: list[tuple[str, str, str]] = []
    for doc in docs:
        for ordinal, chunk in enumerate(chunk_text(doc.text, chunk_size, overlap)):
            text = f"{doc.title}\n{chunk}" if doc.title else chunk
            pending.append((f"{doc.id}:{ordinal}", doc.title or doc.id, text))

    def _embed(item):
        pid, _, text = item
        try:
            return np.asarray(embedder.embed(text), dtype=np.float64)
        except (LagError, ValueError) as exc:
            raise type(exc)(f"embedding {pid}: {exc}") from exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        vectors = list(pool.map(_embed, pending))

    dimension = vectors[0].shape[0]
    for (pid, _, _), vec in zip(pending, vectors):
        if vec.shape != (dimension,):
            raise DimensionMismatchError(f"passage {pid} embedded to shape {vec.shape}, expected ({dimension},)")
    passages = [Passage(pid, src, text, tuple(vec.tolist())) for (pid, src, text), vec in zip(pending, vectors)]
    stats = {
        "documents": len(docs),
        "passages": len(passages),
        "chunk_size": chunk_size,
        "overlap": overlap,
        "ingested_at": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    log.info("indexed %d passages from %d documents", len(passages), len(docs))
    return VectorIndex(dimension, passages, stats)


def retrieve(index: VectorIndex, query_vector, k: int) -> list[RetrievalHit]:
    """Top-``k`` passages by cosine, descending; ties by ascending passage id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        if np.shape(query_vector) != (index.dimension,):
            raise DimensionMismatchError(f"query has shape {np.shape(query_vector)}, index dimension is {index.dimension}")
        return []
    scores = index.scores(query_vector)
    ids = [p.id for p in index.passages]
    best = heapq.nsmallest(k, range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [RetrievalHit(index.passages[i], float(scores[i])) for i in best]
