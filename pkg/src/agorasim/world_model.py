"""Per-scenario world models: chunked corpora plus two retrieval tools.

A world model is built once per scenario instance from plain-text documents.
Text is normalized (Unicode NFC, whitespace runs collapsed, stripped) before
chunking into fixed word windows with overlap; every chunk carries a SHA-256
digest of its normalized text so corpora are content-addressable.

Two tools are exposed to agents: a free keyword lookup, and a justification-
gated web search that debits the persona's search budget only after the
justification gate passes and always before the backend is contacted.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

from .errors import BackendError, EmptyCorpus, EmptyText, InvalidField, RejectedUnjustified
from .hashing import sha256_hex

DEFAULT_WINDOW_WORDS = 512
DEFAULT_OVERLAP_WORDS = 64
DEFAULT_MIN_JUSTIFICATION_WORDS = 5


def normalize_text(text: str) -> str:
    """Unicode NFC, collapse whitespace runs to single spaces, strip ends."""
    return " ".join(unicodedata.normalize("NFC", text).split())


def text_digest(text: str) -> str:
    """Lowercase-hex SHA-256 of the normalized text."""
    return sha256_hex(normalize_text(text))


@dataclass(frozen=True)
class Chunk:
    id: str
    text: str          # normalized
    digest: str        # sha256 of the normalized text
    source_id: str
    position: int      # word offset within the source (append index for appended chunks)


@dataclass(frozen=True)
class ChunkingConfig:
    window_words: int = DEFAULT_WINDOW_WORDS
    overlap_words: int = DEFAULT_OVERLAP_WORDS

    def __post_init__(self):
        if self.overlap_words < 0 or self.window_words <= self.overlap_words:
            raise InvalidField("chunking requires window_words > overlap_words >= 0")


@dataclass
class WorldModelInstance:
    """One scenario's private corpus; instances never share chunk lists."""

    instance_id: str
    chunks: list = field(default_factory=list)
    appended: list = field(default_factory=list)

    def all_chunks(self) -> list:
        return self.chunks + self.appended

    def content_hash(self) -> str:
        """Order-independent hash over the multiset of chunk digests."""
        return sha256_hex("\n".join(sorted(c.digest for c in self.all_chunks())))


def chunk_document(source_id: str, text: str, cfg: ChunkingConfig) -> list:
    """Split one document into overlapping word windows.

    Window starts advance by (window - overlap) words; the final window is
    emitted as soon as it covers the end of the document. Empty documents
    yield no chunks.
    """
    words = normalize_text(text).split()
    if not words:
        return []
    stride = cfg.window_words - cfg.overlap_words
    chunks = []
    start = 0
    while True:
        piece = " ".join(words[start:start + cfg.window_words])
        chunks.append(Chunk(
            id=f"{source_id}#{start}",
            text=piece,
            digest=sha256_hex(piece),
            source_id=source_id,
            position=start,
        ))
        if start + cfg.window_words >= len(words):
            break
        start += stride
    return chunks


def ingest(documents, chunking: ChunkingConfig | None = None, *,
           instance_id: str = "wm-0", allow_empty: bool = False) -> WorldModelInstance:
    """Build a world model from (source_id, text) pairs."""
    cfg = chunking or ChunkingConfig()
    docs = list(documents)
    if not docs and not allow_empty:
        raise EmptyCorpus("no documents to ingest")
    seen_sources = set()
    chunks = []
    for source_id, text in docs:
        if source_id in seen_sources:
            raise InvalidField(f"duplicate source_id {source_id!r}")
        seen_sources.add(source_id)
        chunks.extend(chunk_document(source_id, text, cfg))
    return WorldModelInstance(instance_id=instance_id, chunks=chunks)


# -- keyword lookup (free of charge) -----------------------------------------


def rank_chunks(chunks, terms, k: int) -> list:
    """Rank chunks by how many of the query terms they contain.

    Case-insensitive token match; each distinct term counts once per chunk.
    Zero-score chunks are omitted; ties break by (source_id, position).
    """
    wanted = {t.lower() for t in terms if t}
    if not wanted or k <= 0:
        return []
    scored = []
    for chunk in chunks:
        tokens = set(chunk.text.lower().split())
        score = sum(1 for t in wanted if t in tokens)
        if score > 0:
            scored.append((-score, chunk.source_id, chunk.position, chunk))
    scored.sort(key=lambda item: item[:3])
    return [item[3] for item in scored[:k]]


def keyword_lookup(instance: WorldModelInstance, terms, k: int) -> list:
    """Free lookup over every chunk of the instance, appended content included."""
    return rank_chunks(instance.all_chunks(), terms, k)


# -- justification-gated web search -------------------------------------------


@dataclass(frozen=True)
class SearchRequest:
    query: str
    justification: str | None = None

    def is_justified(self, min_words: int = DEFAULT_MIN_JUSTIFICATION_WORDS) -> bool:
        if self.justification is None:
            return False
        return len(self.justification.split()) >= min_words


class StubSearchBackend:
    """Deterministic, network-free search backend derived from a seed."""

    def __init__(self, seed: int = 0, results_per_query: int = 3):
        self.seed = seed
        self.results_per_query = results_per_query
        self.calls = 0

    def search(self, query: str) -> list:
        self.calls += 1
        out = []
        for i in range(self.results_per_query):
            h = sha256_hex(f"{self.seed}:{query}:{i}")
            out.append({
                "title": f"result {i} for {normalize_text(query)[:40]}",
                "url": f"https://search.invalid/{h[:16]}",
                "snippet": f"snippet {h[:24]}",
            })
        return out


def justified_search(instance: WorldModelInstance, request: SearchRequest,
                     ledger, persona, backend, *,
                     min_justification_words: int = DEFAULT_MIN_JUSTIFICATION_WORDS,
                     step: int = 0, recorder=None) -> list:
    """Run a budget-gated external search on behalf of a persona.

    Order of effects is load-bearing: the justification gate runs before any
    debit (a rejected request leaves the ledger untouched); the debit lands
    before the backend is contacted (backend failures still consume budget,
    and budget exhaustion prevents any backend call); the accepted
    (query, justification) pair is recorded before the backend call so the
    run record always matches the ledger's search count.
    """
    from .persona import debit_search  # local import keeps module deps one-way

    if not request.is_justified(min_justification_words):
        raise RejectedUnjustified(
            f"search requires a justification of >= {min_justification_words} words"
        )
    debit_search(ledger, persona, step, reason=f"web-search: {request.query[:48]}")
    if recorder is not None:
        recorder(request.query, request.justification)
    try:
        return backend.search(request.query)
    except Exception as err:  # noqa: BLE001 - backend contract is opaque
        raise BackendError(f"search backend failed: {err!r}") from err


# -- agent-authored content ---------------------------------------------------


def append_content(instance: WorldModelInstance, text: str,
                   author_persona_id: str) -> Chunk:
    """Append agent-authored text as a single new chunk.

    Appended chunks use source_id "agent:<author>" and a global append index
    as their position, so (source_id, position) stays unique.
    """
    normalized = normalize_text(text)
    if not normalized:
        raise EmptyText("appended content is empty after normalization")
    position = len(instance.appended)
    source_id = f"agent:{author_persona_id}"
    chunk = Chunk(
        id=f"{source_id}#{position}",
        text=normalized,
        digest=sha256_hex(normalized),
        source_id=source_id,
        position=position,
    )
    instance.appended.append(chunk)
    return chunk
