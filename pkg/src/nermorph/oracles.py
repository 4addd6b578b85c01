"""Interfaces to the learned components the pipeline consults, plus scripted replays.

Every model (masked LM, contextual embedder, phrase-similarity lookup, POS tagger,
naturalness scorer, constituency parser) sits behind a small protocol so the testing
and repair algorithms run unchanged against real adapters or canned responses.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .core import Sentence, tokenize
from .errors import DimensionMismatch, EmptySpan, NerMorphError, TreeError, UnscriptedQuery, ZeroNorm
from .syntax import ConstituencyTree, parse_bracketed

MASK = "[MASK]"


@dataclass(frozen=True)
class MaskCandidate:
    word: str
    logit: float

    def __post_init__(self) -> None:
        if not self.word:
            raise ValueError("mask candidate word is empty")
        if not math.isfinite(self.logit):
            raise ValueError(f"logit for {self.word!r} is not finite")


@dataclass(frozen=True)
class WordPiece:
    """One maskable unit of an entity surface; offsets are relative to the surface."""

    text: str
    start: int
    end: int
    is_subword: bool = False


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.values)
        if not values:
            raise ValueError("embedding has zero dimensions")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("embedding contains NaN or Inf")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @classmethod
    def of(cls, values: Iterable[float]) -> EmbeddingVector:
        return cls(tuple(values))


def sort_candidates(candidates: Iterable[MaskCandidate]) -> list[MaskCandidate]:
    """Descending logit, ties broken by word."""
    return sorted(candidates, key=lambda c: (-c.logit, c.word))


class MaskedLM(Protocol):
    def fill(self, masked_text: str, top_k: int) -> list[MaskCandidate]: ...

    def pieces(self, surface: str) -> list[WordPiece]: ...


class Embedder(Protocol):
    def embed(self, sentence: Sentence, start: int, end: int) -> EmbeddingVector: ...


class PhraseSimilarity(Protocol):
    def similar(self, phrase: str) -> list[str]: ...


class PosTagger(Protocol):
    def tag(self, sentence: Sentence) -> list[str]: ...


class NaturalnessScorer(Protocol):
    def score(self, text: str) -> float: ...


class Parser(Protocol):
    def parse(self, sentence: Sentence) -> ConstituencyTree: ...


@dataclass(frozen=True)
class OracleSuite:
    masked_lm: MaskedLM
    embedder: Embedder
    phrase_sim: PhraseSimilarity
    pos_tagger: PosTagger
    naturalness: NaturalnessScorer
    parser: Parser
    # True when the members must not be queried from several threads at once
    serial: bool = False

    def __post_init__(self) -> None:
        for name in ("masked_lm", "embedder", "phrase_sim", "pos_tagger", "naturalness", "parser"):
            if getattr(self, name) is None:
                raise ValueError(f"oracle suite is missing {name}")


def cosine_similarity(h: EmbeddingVector, h2: EmbeddingVector) -> float:
    if h.dim != h2.dim:
        raise DimensionMismatch(f"{h.dim} != {h2.dim}")
    a, b = h.as_array(), h2.as_array()
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroNorm("cosine similarity of a zero vector")
    return float(np.dot(a, b)) / (na * nb)


def phrase_embedding(sentence: Sentence, span: tuple[int, int], embedder: Embedder) -> EmbeddingVector:
    """Mean of the contextual embeddings of the tokens inside ``span``."""
    indices = sentence.token_indices_in(*span)
    if not indices:
        raise EmptySpan(f"span {span} covers no whole token of {sentence.text!r}")
    vectors = [embedder.embed(sentence, sentence.tokens[i].start, sentence.tokens[i].end) for i in indices]
    if len(vectors) == 1:
        return vectors[0]
    dims = {v.dim for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"embedder returned mixed dimensions {sorted(dims)}")
    return EmbeddingVector.of(np.mean([v.as_array() for v in vectors], axis=0))


def default_pieces(surface: str) -> list[WordPiece]:
    """Whole-word pieces using the core tokenizer (no subword splitting)."""
    if not surface.strip():
        return []
    return [WordPiece(t.surface, t.start, t.end, False) for t in tokenize(surface).tokens]


def pieces_from_wordpiece(surface: str, pieces: Sequence[str]) -> list[WordPiece]:
    """Align BERT-style pieces (``"Me", "##kel", "##le"``) back onto ``surface``."""
    out = []
    pos = 0
    for piece in pieces:
        is_sub = piece.startswith("##")
        text = piece[2:] if is_sub else piece
        while pos < len(surface) and surface[pos].isspace():
            pos += 1
        if surface[pos:pos + len(text)] != text:
            raise ValueError(f"piece {piece!r} does not align with {surface!r} at {pos}")
        out.append(WordPiece(text, pos, pos + len(text), is_sub))
        pos += len(text)
    return out


# -- scripted replay ---------------------------------------------------------------

ORACLE_NAMES = ("masked_lm", "mlm_pieces", "embedder", "phrase_sim", "pos_tagger", "naturalness", "parser")


def query_key(query: Any) -> str:
    if isinstance(query, str):
        return query
    return json.dumps(query, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def embed_query(sentence: Sentence, start: int, end: int) -> dict:
    return {"text": sentence.text, "start": start, "end": end}


class _Script:
    def __init__(self, table: Mapping[str, Mapping[str, Any]]):
        unknown = set(table) - set(ORACLE_NAMES)
        if unknown:
            raise ValueError(f"unknown oracle names in script: {sorted(unknown)}")
        self.table = {name: {query_key(q): r for q, r in table.get(name, {}).items()} for name in ORACLE_NAMES}

    def lookup(self, oracle: str, query: Any) -> Any:
        key = query_key(query)
        try:
            return self.table[oracle][key]
        except KeyError:
            raise UnscriptedQuery(oracle, query) from None

    def has(self, oracle: str, query: Any) -> bool:
        return query_key(query) in self.table[oracle]


class ScriptedMaskedLM:
    def __init__(self, script: _Script):
        self._script = script

    def fill(self, masked_text: str, top_k: int) -> list[MaskCandidate]:
        raw = self._script.lookup("masked_lm", masked_text)
        return sort_candidates(MaskCandidate(w, float(p)) for w, p in raw)[:top_k]

    def pieces(self, surface: str) -> list[WordPiece]:
        if self._script.has("mlm_pieces", surface):
            return pieces_from_wordpiece(surface, self._script.lookup("mlm_pieces", surface))
        return default_pieces(surface)


class ScriptedEmbedder:
    """Looks up ``{"text", "start", "end"}`` first, then the bare word (context-free)."""

    def __init__(self, script: _Script):
        self._script = script

    def embed(self, sentence: Sentence, start: int, end: int) -> EmbeddingVector:
        query = embed_query(sentence, start, end)
        if self._script.has("embedder", query):
            return EmbeddingVector.of(self._script.lookup("embedder", query))
        word = sentence.text[start:end]
        if self._script.has("embedder", word):
            return EmbeddingVector.of(self._script.lookup("embedder", word))
        raise UnscriptedQuery("embedder", query)


class ScriptedPhraseSimilarity:
    def __init__(self, script: _Script):
        self._script = script

    def similar(self, phrase: str) -> list[str]:
        return list(self._script.lookup("phrase_sim", phrase))


class ScriptedPosTagger:
    def __init__(self, script: _Script):
        self._script = script

    def tag(self, sentence: Sentence) -> list[str]:
        tags = list(self._script.lookup("pos_tagger", sentence.text))
        if len(tags) != len(sentence.tokens):
            raise ValueError(f"scripted tags for {sentence.text!r} do not match its {len(sentence.tokens)} tokens")
        return tags


class ScriptedNaturalness:
    def __init__(self, script: _Script):
        self._script = script

    def score(self, text: str) -> float:
        return float(self._script.lookup("naturalness", text))


class ScriptedParser:
    def __init__(self, script: _Script):
        self._script = script

    def parse(self, sentence: Sentence) -> ConstituencyTree:
        bracketed = self._script.lookup("parser", sentence.text)
        if bracketed is None:
            raise TreeError(f"scripted parse failure for {sentence.text!r}")
        return parse_bracketed(bracketed, sentence)


def scripted_oracle_suite(tables: Mapping[str, Mapping[str, Any]], seed: int = 0) -> OracleSuite:
    """Suite that replays canned responses; any unscripted query raises :class:`UnscriptedQuery`.

    ``tables`` maps oracle name to a ``{query: response}`` table.  ``seed`` is accepted for
    interface parity with sampling adapters; replay is deterministic regardless.
    """
    script = _Script(tables)
    return OracleSuite(
        masked_lm=ScriptedMaskedLM(script),
        embedder=ScriptedEmbedder(script),
        phrase_sim=ScriptedPhraseSimilarity(script),
        pos_tagger=ScriptedPosTagger(script),
        naturalness=ScriptedNaturalness(script),
        parser=ScriptedParser(script),
    )


def load_script(path: str | Path) -> dict[str, dict[str, Any]]:
    """Read a JSONL script: one ``{"oracle", "query", "response"}`` object per line."""
    table: dict[str, dict[str, Any]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                oracle, query, response = row["oracle"], row["query"], row["response"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed script line") from exc
            table.setdefault(oracle, {})[query_key(query)] = response
    return table


def load_scripted_suite(path: str | Path, seed: int = 0) -> OracleSuite:
    return scripted_oracle_suite(load_script(path), seed)


# -- recording ---------------------------------------------------------------------


@dataclass
class Recorder:
    """Collects every query/response pair seen by a wrapped suite."""

    rows: dict[tuple[str, str], tuple[Any, Any]] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, oracle: str, query: Any, response: Any) -> None:
        with self.lock:
            self.rows.setdefault((oracle, query_key(query)), (query, response))

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (oracle, key), (query, response) in sorted(self.rows.items()):
                fh.write(json.dumps({"oracle": oracle, "query": query, "response": response},
                                    ensure_ascii=False, sort_keys=True) + "\n")


class _RecMLM:
    def __init__(self, inner: MaskedLM, rec: Recorder):
        self.inner, self.rec = inner, rec

    def fill(self, masked_text: str, top_k: int) -> list[MaskCandidate]:
        out = self.inner.fill(masked_text, top_k)
        # record the full list so replays with a smaller top_k still agree
        self.rec.add("masked_lm", masked_text, [[c.word, c.logit] for c in out])
        return out

    def pieces(self, surface: str) -> list[WordPiece]:
        out = self.inner.pieces(surface)
        self.rec.add("mlm_pieces", surface, [("##" if p.is_subword else "") + p.text for p in out])
        return out


class _RecEmbedder:
    def __init__(self, inner: Embedder, rec: Recorder):
        self.inner, self.rec = inner, rec

    def embed(self, sentence: Sentence, start: int, end: int) -> EmbeddingVector:
        out = self.inner.embed(sentence, start, end)
        self.rec.add("embedder", embed_query(sentence, start, end), list(out.values))
        return out


class _RecPhrase:
    def __init__(self, inner: PhraseSimilarity, rec: Recorder):
        self.inner, self.rec = inner, rec

    def similar(self, phrase: str) -> list[str]:
        out = self.inner.similar(phrase)
        self.rec.add("phrase_sim", phrase, list(out))
        return out


class _RecTagger:
    def __init__(self, inner: PosTagger, rec: Recorder):
        self.inner, self.rec = inner, rec

    def tag(self, sentence: Sentence) -> list[str]:
        out = self.inner.tag(sentence)
        self.rec.add("pos_tagger", sentence.text, list(out))
        return out


class _RecNaturalness:
    def __init__(self, inner: NaturalnessScorer, rec: Recorder):
        self.inner, self.rec = inner, rec

    def score(self, text: str) -> float:
        out = self.inner.score(text)
        self.rec.add("naturalness", text, out)
        return out


class _RecParser:
    def __init__(self, inner: Parser, rec: Recorder):
        self.inner, self.rec = inner, rec

    def parse(self, sentence: Sentence) -> ConstituencyTree:
        try:
            out = self.inner.parse(sentence)
        except NerMorphError:
            self.rec.add("parser", sentence.text, None)
            raise
        self.rec.add("parser", sentence.text, out.to_bracket())
        return out


def recording_suite(inner: OracleSuite, recorder: Recorder) -> OracleSuite:
    """Wrap ``inner`` so every answered query lands in ``recorder`` (for later replay)."""
    return OracleSuite(
        masked_lm=_RecMLM(inner.masked_lm, recorder),
        embedder=_RecEmbedder(inner.embedder, recorder),
        phrase_sim=_RecPhrase(inner.phrase_sim, recorder),
        pos_tagger=_RecTagger(inner.pos_tagger, recorder),
        naturalness=_RecNaturalness(inner.naturalness, recorder),
        parser=_RecParser(inner.parser, recorder),
        serial=inner.serial,
    )
