"""Common-sense knowledge integration.

Loads Numberbatch-style word vectors, expands words to related concepts from
an offline edge dump (CSV) or the public ConceptNet REST API, and stacks the
concept vectors into matrices for the similarity features. Offline sources
are primary; the REST client is an optional convenience with a mandatory
on-disk cache so repeated runs never depend on the network.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, RetriableError

DEFAULT_RELATIONS = ("HasProperty", "IsA", "RelatedTo", "Synonym", "UsedFor")
DEFAULT_CONCEPT_K = 5
DEFAULT_CONCEPT_DIM = 300

# Small english stopword list: words excluded from concept expansion.
STOPWORDS = frozenset(
    """a an and are as at be been but by for from had has have he her his i if in
    is it its me my no not of on or our she so that the their them they this to
    was we were what when which who will with you your""".split()
)


def normalize_word(word: str) -> str:
    """ConceptNet URI convention: lowercase, trimmed, spaces to underscores."""
    return word.strip().lower().replace(" ", "_")


@dataclass
class EmbeddingTable:
    """Word -> fixed-dimension vector map with case-folded lookups."""

    vectors: dict[str, np.ndarray]
    dim: int = DEFAULT_CONCEPT_DIM
    language: str = "en"

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, word: str) -> bool:
        return normalize_word(word) in self.vectors

    def vector(self, word: str) -> np.ndarray | None:
        return self.vectors.get(normalize_word(word))


@dataclass(frozen=True)
class ConceptEdge:
    start: str
    relation: str
    end: str
    weight: float


@dataclass
class ConceptSet:
    """A word plus its related concepts, ordered by weight (ties lexicographic).

    Entry 0 is always the source word itself, carrying a sentinel weight of
    (max neighbor weight + 1) so it sorts first. ``vectors`` row i matches
    entries[i] when attached by the cache builder.
    """

    word: str
    entries: list[tuple[str, float]]
    vectors: np.ndarray | None = None
    oov: bool = False

    @property
    def concepts(self) -> list[str]:
        return [c for c, _ in self.entries]


def load_numberbatch(path, language: str = "en", expected_dim: int = DEFAULT_CONCEPT_DIM) -> EmbeddingTable:
    """Load a Numberbatch-style text embedding file.

    Lines are ``/c/<lang>/<word> v1 ... vdim`` or bare ``<word> v1 ... vdim``;
    an optional ``<count> <dim>`` header is skipped. Only entries matching the
    language filter are kept (bare words always match). Every vector must
    have ``expected_dim`` values.
    """
    vectors: dict[str, np.ndarray] = {}
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    start = 0
    if lines:
        head = lines[0].split()
        if len(head) == 2:
            try:
                int(head[0]), int(head[1])
                start = 1
            except ValueError:
                start = 0
    for lineno in range(start, len(lines)):
        line = lines[lineno]
        if not line.strip():
            continue
        parts = line.split()
        key = parts[0]
        if key.startswith("/c/"):
            pieces = key.split("/")
            if len(pieces) < 4 or not pieces[3]:
                raise FormatError(f"{path}:{lineno + 1}: malformed concept uri {key!r}")
            lang, word = pieces[2], "/".join(pieces[3:])
            if lang != language:
                continue
        else:
            word = key
        try:
            values = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno + 1}: {exc}") from exc
        if values.size != expected_dim:
            raise FormatError(
                f"{path}:{lineno + 1}: expected {expected_dim} values, found {values.size}"
            )
        vectors[normalize_word(word)] = values
    return EmbeddingTable(vectors, dim=expected_dim, language=language)


def load_edges(path) -> list[ConceptEdge]:
    """Load a concept edge dump: CSV ``start,relation,end,weight`` with a header row."""
    import csv

    edges: list[ConceptEdge] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return edges
        if [h.strip().lower() for h in header] != ["start", "relation", "end", "weight"]:
            raise FormatError(f"{path}:1: expected header start,relation,end,weight")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns, found {len(row)}")
            start, relation, end, weight_s = row
            start, end = normalize_word(start), normalize_word(end)
            if not start or not end:
                raise FormatError(f"{path}:{lineno}: empty concept after normalization")
            try:
                weight = float(weight_s)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad weight {weight_s!r}") from exc
            if weight < 0:
                raise FormatError(f"{path}:{lineno}: negative weight {weight}")
            edges.append(ConceptEdge(start, relation.strip(), end, weight))
    return edges


def index_edges(edges: Iterable[ConceptEdge]) -> dict[str, list[ConceptEdge]]:
    """Map each endpoint to the edges touching it, preserving input order."""
    index: dict[str, list[ConceptEdge]] = {}
    for edge in edges:
        index.setdefault(edge.start, []).append(edge)
        if edge.end != edge.start:
            index.setdefault(edge.end, []).append(edge)
    return index


def expand_concepts(
    word: str,
    edges: Sequence[ConceptEdge] | Mapping[str, Sequence[ConceptEdge]],
    k: int = DEFAULT_CONCEPT_K,
    relation_filter: Iterable[str] | None = DEFAULT_RELATIONS,
) -> ConceptSet:
    """Top-k related concepts of ``word`` by edge weight.

    Neighbors are edges whose start or end equals the normalized word and
    whose relation passes the filter; duplicates keep their maximum weight.
    Ordering is weight-descending with lexicographic tie-break, so the result
    is identical across runs and platforms. Unknown words yield a set holding
    only the word itself.
    """
    if k < 0:
        raise ValueError(f"k must be nonnegative, got {k}")
    norm = normalize_word(word)
    candidates = edges.get(norm, ()) if isinstance(edges, Mapping) else edges
    allowed = None if relation_filter is None else frozenset(relation_filter)
    best: dict[str, float] = {}
    for edge in candidates:
        if allowed is not None and edge.relation not in allowed:
            continue
        if edge.start == norm and edge.end != norm:
            neighbor = edge.end
        elif edge.end == norm and edge.start != norm:
            neighbor = edge.start
        else:
            continue
        if neighbor not in best or edge.weight > best[neighbor]:
            best[neighbor] = edge.weight
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    sentinel = (ranked[0][1] if ranked else 0.0) + 1.0
    return ConceptSet(word=norm, entries=[(norm, sentinel)] + ranked)


def embed_concept_set(cs: ConceptSet, table: EmbeddingTable) -> tuple[np.ndarray, bool]:
    """Stack the table vectors of the concepts found in the table.

    Concepts missing from the table are dropped; if every concept is missing
    the result is a single zero row flagged out-of-vocabulary.
    """
    rows = [table.vector(c) for c in cs.concepts]
    rows = [r for r in rows if r is not None]
    if not rows:
        return np.zeros((1, table.dim)), True
    return np.stack(rows, axis=0), False


@dataclass
class ConceptNetClient:
    """REST client for the public ConceptNet API with a persistent byte cache.

    The cache stores one file per normalized term (raw response bytes); a
    cache hit never touches the transport. Rate-limit responses back off and
    retry up to ``max_retries`` times before surfacing a RetriableError.
    """

    cache_dir: Path
    endpoint: str = "https://api.conceptnet.io"
    language: str = "en"
    timeout_ms: int = 5000
    max_retries: int = 3
    backoff_s: float = 0.5
    transport: Callable[[str, float], tuple[int, bytes]] | None = None
    sleep: Callable[[float], None] = field(default=time.sleep)

    def __post_init__(self):
        self.cache_dir = Path(self.cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _cache_path(self, term: str) -> Path:
        return self.cache_dir / term

    def _fetch(self, url: str) -> tuple[int, bytes]:
        if self.transport is not None:
            return self.transport(url, self.timeout_ms / 1000.0)
        import httpx

        try:
            resp = httpx.get(url, timeout=self.timeout_ms / 1000.0)
        except httpx.HTTPError as exc:
            raise RetriableError(f"conceptnet request failed: {exc}") from exc
        return resp.status_code, resp.content

    def query(self, term: str) -> list[ConceptEdge]:
        """Edges for ``term``, from cache if present, else from the API."""
        if not term or not term.strip():
            raise ValueError("term must be non-empty")
        norm = normalize_word(term)
        cache_path = self._cache_path(norm)
        if cache_path.exists():
            return parse_api_response(cache_path.read_bytes())
        url = f"{self.endpoint.rstrip('/')}/c/{self.language}/{norm}"
        body = None
        for attempt in range(self.max_retries + 1):
            status, payload = self._fetch(url)
            if status == 429:
                if attempt < self.max_retries:
                    self.sleep(self.backoff_s * (2**attempt))
                    continue
                raise RetriableError(f"conceptnet rate limit persisted for {norm!r}")
            if status != 200:
                raise RetriableError(f"conceptnet returned status {status} for {norm!r}")
            body = payload
            break
        edges = parse_api_response(body)
        cache_path.write_bytes(body)
        return edges


def _term_of(node: object, what: str) -> str:
    if not isinstance(node, dict):
        raise FormatError(f"conceptnet response: {what} node is not an object")
    uri = node.get("term") or node.get("@id")
    if isinstance(uri, str) and uri.startswith("/c/"):
        pieces = uri.split("/")
        if len(pieces) >= 4 and pieces[3]:
            return normalize_word("/".join(pieces[3:]))
    label = node.get("label")
    if isinstance(label, str) and label.strip():
        return normalize_word(label)
    raise FormatError(f"conceptnet response: {what} node has no usable term")


def parse_api_response(body: bytes) -> list[ConceptEdge]:
    """Parse a raw ConceptNet API response into edges."""
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"conceptnet response is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError("conceptnet response is not a JSON object")
    edges = []
    for i, raw in enumerate(doc.get("edges", [])):
        if not isinstance(raw, dict):
            raise FormatError(f"conceptnet response: edge {i} is not an object")
        rel = raw.get("rel", {})
        relation = rel.get("label") if isinstance(rel, dict) else None
        if not isinstance(relation, str) or not relation:
            raise FormatError(f"conceptnet response: edge {i} has no relation label")
        weight = raw.get("weight", 1.0)
        if not isinstance(weight, (int, float)) or weight < 0:
            raise FormatError(f"conceptnet response: edge {i} has bad weight {weight!r}")
        edges.append(
            ConceptEdge(
                start=_term_of(raw.get("start"), f"edge {i} start"),
                relation=relation,
                end=_term_of(raw.get("end"), f"edge {i} end"),
                weight=float(weight),
            )
        )
    return edges


class ConceptCache:
    """Per-word concept sets with embedded matrices, persisted as canonical JSON."""

    def __init__(self, dim: int = DEFAULT_CONCEPT_DIM, words: dict[str, ConceptSet] | None = None):
        self.dim = dim
        self.words: dict[str, ConceptSet] = words or {}

    def __len__(self):
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return normalize_word(word) in self.words

    def get(self, word: str) -> ConceptSet | None:
        return self.words.get(normalize_word(word))

    @classmethod
    def build(
        cls,
        vocab_words: Iterable[str],
        table: EmbeddingTable,
        edges: Sequence[ConceptEdge] | Mapping[str, Sequence[ConceptEdge]],
        k: int = DEFAULT_CONCEPT_K,
        relation_filter: Iterable[str] | None = DEFAULT_RELATIONS,
    ) -> "ConceptCache":
        if not isinstance(edges, Mapping):
            edges = index_edges(edges)
        cache = cls(dim=table.dim)
        for word in sorted({normalize_word(w) for w in vocab_words}):
            cs = expand_concepts(word, edges, k=k, relation_filter=relation_filter)
            cs.vectors, cs.oov = embed_concept_set(cs, table)
            cache.words[word] = cs
        return cache

    def save(self, path) -> None:
        doc = {
            "dim": self.dim,
            "words": {
                w: {
                    "concepts": [[c, wt] for c, wt in cs.entries],
                    "vectors": cs.vectors.tolist() if cs.vectors is not None else None,
                    "oov": cs.oov,
                }
                for w, cs in self.words.items()
            },
        }
        Path(path).write_text(
            json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path) -> "ConceptCache":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or "dim" not in doc or "words" not in doc:
            raise FormatError(f"{path}: missing dim/words keys")
        cache = cls(dim=int(doc["dim"]))
        for word, rec in doc["words"].items():
            vectors = rec.get("vectors")
            cache.words[word] = ConceptSet(
                word=word,
                entries=[(c, float(wt)) for c, wt in rec["concepts"]],
                vectors=None if vectors is None else np.asarray(vectors, dtype=np.float64),
                oov=bool(rec.get("oov", False)),
            )
        return cache
