"""Bundled offline demo: a small news corpus, a dictionary NER mock and heuristic oracles.

The heuristic oracles stand in for the learned models so the whole pipeline runs with no
network and no model weights.  They are deterministic but crude:

* POS tags come from a word table, with capitalised unknowns as proper nouns.
* The parser is a chunker over those tags: subject noun phrase, verb phrase, final punctuation.
* The masked LM proposes alternatives for the words it saw in the corpus, keyed by the
  neighbouring words of the masked slot.
* Embeddings are hashed per semantic group plus a smaller per-word component, so words of
  one group are close and unrelated words are near-orthogonal.
* Naturalness is a constant minus a penalty per known-awkward word.
"""

from __future__ import annotations

import hashlib
import json
import re
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .backend import DictionaryMockBackend, FaultRule
from .core import Sentence, tokenize
from .errors import TreeError
from .oracles import MASK, EmbeddingVector, MaskCandidate, OracleSuite, WordPiece, default_pieces, sort_candidates
from .syntax import ConstituencyTree, parse_bracketed

_WORD_RE = re.compile(r"\w+|[^\w\s]")
_SENTENCE_END = {".", "?", "!"}


@lru_cache(maxsize=None)
def _load(name: str) -> Any:
    with resources.files("nermorph.data").joinpath(name).open(encoding="utf-8") as fh:
        return json.load(fh)


def demo_data() -> dict:
    return _load("demo.json")


def demo_corpus() -> list[Sentence]:
    return [tokenize(row["text"], row["id"]) for row in demo_data()["corpus"]]


def demo_faults() -> list[FaultRule]:
    return [FaultRule.from_json(raw) for raw in _load("demo_faults.json")]


def demo_backend(with_faults: bool = False) -> DictionaryMockBackend:
    return DictionaryMockBackend(demo_data()["lexicon"], demo_faults() if with_faults else ())


# -- POS tagging and chunk parsing -------------------------------------------------

class LexiconTagger:
    def __init__(self, table: Mapping[str, str]):
        self.table = dict(table)

    def tag_word(self, word: str) -> str:
        if word in self.table:
            return self.table[word]
        if word.lower() in self.table:
            return self.table[word.lower()]
        if not any(ch.isalnum() for ch in word):
            return word
        if word.isdigit():
            return "CD"
        return "NNP" if word[0].isupper() else "NN"

    def tag(self, sentence: Sentence) -> list[str]:
        return [self.tag_word(t.surface) for t in sentence.tokens]


_NOMINAL = {"DT", "PDT", "PRP$", "PRP", "JJ", "JJR", "JJS", "NN", "NNS", "NNP", "NNPS", "CD", "POS"}
_AUXILIARIES = {"be", "am", "is", "are", "was", "were", "been", "being", "has", "have", "had",
                "do", "does", "did"}
_ESCAPES = {"(": "-LRB-", ")": "-RRB-", "[": "-LSB-", "]": "-RSB-", "{": "-LCB-", "}": "-RCB-"}


def _is_verb(tag: str) -> bool:
    return tag.startswith("VB") or tag == "MD"


class ChunkParser:
    """Shallow constituency parser: ``(S NP (VP verb ...) .)`` with flat noun phrases."""

    def __init__(self, tagger: LexiconTagger):
        self.tagger = tagger

    def parse(self, sentence: Sentence) -> ConstituencyTree:
        words = sentence.words
        tags = self.tagger.tag(sentence)
        end = len(words)
        tail = []
        if words[-1] in _SENTENCE_END:
            end -= 1
            tail = [self._leaf(tags[end], words[end])]
        verb = next((i for i in range(end) if _is_verb(tags[i])), None)
        if verb is None or verb == 0:
            raise TreeError(f"no subject-verb split in {sentence.text!r}")
        subject = self._chunks(words, tags, 0, verb)
        if subject[0].startswith("(NP ") and all(c.startswith(("(NP ", "(PP ", "(CC ")) for c in subject):
            subject = [subject[0] if len(subject) == 1 else "(NP " + " ".join(subject) + ")"]
        body = subject + [self._vp(words, tags, verb, end)] + tail
        return parse_bracketed("(S " + " ".join(body) + ")", sentence)

    @staticmethod
    def _leaf(tag: str, word: str) -> str:
        return f"({_ESCAPES.get(tag, tag)} {_ESCAPES.get(word, word)})"

    def _vp(self, words: list[str], tags: list[str], i: int, end: int) -> str:
        parts = [self._leaf(tags[i], words[i])]
        j = i + 1
        while j < end and tags[j].startswith("RB"):
            parts.append(self._leaf(tags[j], words[j]))
            j += 1
        if (tags[i] == "MD" or words[i].lower() in _AUXILIARIES) and j < end and _is_verb(tags[j]):
            parts.append(self._vp(words, tags, j, end))
        else:
            parts.extend(self._chunks(words, tags, j, end))
        return "(VP " + " ".join(parts) + ")"

    def _chunks(self, words: list[str], tags: list[str], i: int, end: int) -> list[str]:
        out = []
        while i < end:
            if tags[i] in ("IN", "TO"):
                j = self._nominal_end(tags, i + 1, end)
                if j > i + 1:
                    out.append(f"(PP {self._leaf(tags[i], words[i])} {self._np(words, tags, i + 1, j)})")
                    i = j
                    continue
            j = self._nominal_end(tags, i, end)
            if j > i:
                out.append(self._np(words, tags, i, j))
                i = j
            else:
                out.append(self._leaf(tags[i], words[i]))
                i += 1
        return out

    @staticmethod
    def _nominal_end(tags: list[str], i: int, end: int) -> int:
        while i < end and tags[i] in _NOMINAL:
            i += 1
        return i

    def _np(self, words: list[str], tags: list[str], i: int, j: int) -> str:
        return "(NP " + " ".join(self._leaf(tags[k], words[k]) for k in range(i, j)) + ")"


# -- masked LM ---------------------------------------------------------------------

def _context_word(token: str | None, edge: str) -> str:
    if token is None:
        return edge
    return "<p>" if token in _SENTENCE_END else token.lower()


class ContextTableLM:
    """Masked-slot filler keyed by the slot's neighbours.

    Every corpus position holding a word with known alternatives registers those
    alternatives under (left, right), (left, *) and (*, right).  A query uses the exact
    pair when present and otherwise merges both one-sided keys.
    """

    def __init__(self, corpus: Iterable[str], alternatives: Mapping[str, Sequence[Sequence[Any]]]):
        self.table: dict[tuple[str, str], dict[str, float]] = {}
        for text in corpus:
            tokens = _WORD_RE.findall(text)
            for i, tok in enumerate(tokens):
                alts = alternatives.get(tok)
                if not alts:
                    continue
                left = _context_word(tokens[i - 1] if i else None, "<s>")
                right = _context_word(tokens[i + 1] if i + 1 < len(tokens) else None, "</s>")
                for key in ((left, right), (left, "*"), ("*", right)):
                    slot = self.table.setdefault(key, {})
                    for word, logit in alts:
                        slot[word] = max(float(logit), slot.get(word, float("-inf")))

    def fill(self, masked_text: str, top_k: int) -> list[MaskCandidate]:
        idx = masked_text.find(MASK)
        if idx < 0:
            return []
        before = _WORD_RE.findall(masked_text[:idx])
        after = _WORD_RE.findall(masked_text[idx + len(MASK):])
        left = _context_word(before[-1] if before else None, "<s>")
        right = _context_word(after[0] if after else None, "</s>")
        found = dict(self.table.get((left, right), {}))
        if not found:
            for key in ((left, "*"), ("*", right)):
                for word, logit in self.table.get(key, {}).items():
                    found[word] = max(logit, found.get(word, float("-inf")))
        return sort_candidates(MaskCandidate(w, p) for w, p in found.items())[:top_k]

    def pieces(self, surface: str) -> list[WordPiece]:
        return default_pieces(surface)


# -- embeddings, phrase similarity, naturalness ------------------------------------

def _hashed_unit(key: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


class GroupHashEmbedder:
    """Context-free word vectors: group direction plus ``spread`` times a per-word direction."""

    def __init__(self, groups: Mapping[str, Sequence[str]], dim: int = 48, spread: float = 0.3):
        self.group_of = {w.lower(): g for g, words in groups.items() for w in words}
        self.dim = dim
        self.spread = spread
        self._cache: dict[str, EmbeddingVector] = {}

    def vector(self, word: str) -> EmbeddingVector:
        key = word.lower()
        if key not in self._cache:
            group = self.group_of.get(key, "word:" + key)
            v = _hashed_unit("group:" + group, self.dim) + self.spread * _hashed_unit("word:" + key, self.dim)
            self._cache[key] = EmbeddingVector.of(v)
        return self._cache[key]

    def embed(self, sentence: Sentence, start: int, end: int) -> EmbeddingVector:
        return self.vector(sentence.text[start:end])


class TablePhraseSimilarity:
    def __init__(self, table: Mapping[str, Sequence[str]]):
        self.table = {k: list(v) for k, v in table.items()}

    def similar(self, phrase: str) -> list[str]:
        return list(self.table.get(phrase, self.table.get(phrase.lower(), [])))


class PenaltyNaturalness:
    def __init__(self, awkward: Iterable[str], base: float = 0.9, penalty: float = 0.03):
        self.awkward = {w.lower() for w in awkward}
        self.base = base
        self.penalty = penalty

    def score(self, text: str) -> float:
        hits = sum(1 for tok in _WORD_RE.findall(text) if tok.lower() in self.awkward)
        return self.base - self.penalty * hits


def demo_oracle_suite() -> OracleSuite:
    data = demo_data()
    tagger = LexiconTagger(data["pos"])
    return OracleSuite(
        masked_lm=ContextTableLM((row["text"] for row in data["corpus"]), data["alternatives"]),
        embedder=GroupHashEmbedder(data["groups"]),
        phrase_sim=TablePhraseSimilarity(data["phrase_sim"]),
        pos_tagger=tagger,
        naturalness=PenaltyNaturalness(data["awkward"]),
        parser=ChunkParser(tagger),
    )
