"""Mutant sentence generation.

Four schemes, all of which leave the entities predicted for the original sentence intact:
single-token substitution of verbs/adjectives via a masked LM, substitution of a minimal
noun phrase with a similar phrase, declarative-to-question rewriting, and shuffling
entities of the same category among their own positions.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import NerOutput, NerPrediction, PipelineConfig, Sentence, TransformKind, tokenize
from .errors import NerMorphError, NoRewrite
from .oracles import MASK, OracleSuite
from .syntax import ConstituencyTree, declarative_to_interrogative, find_minimal_np_nodes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MutantPair:
    original: Sentence
    mutant: Sentence
    kind: TransformKind
    # token/phrase substitution: replaced span of the original and its replacement
    span: tuple[int, int] | None = None
    replacement: str | None = None
    # structural: (rule, fronted word); shuffle: ((label, permutation), ...)
    detail: tuple = ()
    provenance: float | None = None

    def __post_init__(self) -> None:
        if self.original.text == self.mutant.text:
            raise ValueError("mutant text is identical to the original")

    @property
    def replaced_text(self) -> str | None:
        return None if self.span is None else self.original.text[self.span[0]:self.span[1]]

    @property
    def mutant_span(self) -> tuple[int, int] | None:
        if self.span is None:
            return None
        return self.span[0], self.span[0] + len(self.replacement)

    @property
    def digest(self) -> str:
        blob = "\x1f".join([self.kind.value, self.original.text, self.mutant.text])
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> dict:
        out = {
            "kind": self.kind.value,
            "original": {"id": self.original.id, "text": self.original.text},
            "mutant": {"id": self.mutant.id, "text": self.mutant.text},
        }
        if self.span is not None:
            out["span"] = list(self.span)
            out["replacement"] = self.replacement
        if self.detail:
            out["detail"] = _jsonable(self.detail)
        if self.provenance is not None:
            out["provenance"] = self.provenance
        return out

    @classmethod
    def from_json(cls, raw: dict) -> MutantPair:
        return cls(
            original=tokenize(raw["original"]["text"], raw["original"]["id"]),
            mutant=tokenize(raw["mutant"]["text"], raw["mutant"]["id"]),
            kind=TransformKind.parse(raw["kind"]),
            span=tuple(raw["span"]) if "span" in raw else None,
            replacement=raw.get("replacement"),
            detail=_tupled(raw.get("detail", ())),
            provenance=raw.get("provenance"),
        )


def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    return value


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _coarse_pos(tag: str) -> str | None:
    if tag.startswith("VB"):
        return "VB"
    if tag.startswith("JJ"):
        return "JJ"
    return None


def _overlaps_entity(start: int, end: int, n_s: NerOutput) -> bool:
    return any(p.overlaps(start, end) for p in n_s)


def _splice(text: str, start: int, end: int, replacement: str) -> str:
    return text[:start] + replacement + text[end:]


def _mutant_id(s: Sentence, kind: TransformKind, n: int) -> str:
    return f"{s.id}~{kind.value}{n}"


def token_level_mutants(s: Sentence, n_s: NerOutput, oracles: OracleSuite,
                        config: PipelineConfig) -> list[MutantPair]:
    """Mask each non-entity verb/adjective in turn and substitute masked-LM candidates."""
    tags = oracles.pos_tagger.tag(s)
    out: list[MutantPair] = []
    seen: set[str] = set()
    for i, tok in enumerate(s.tokens):
        coarse = _coarse_pos(tags[i])
        if coarse is None or _overlaps_entity(tok.start, tok.end, n_s):
            continue
        masked = _splice(s.text, tok.start, tok.end, MASK)
        for cand in oracles.masked_lm.fill(masked, config.top_k_testing):
            word = cand.word
            if word == tok.surface:
                continue
            text = _splice(s.text, tok.start, tok.end, word)
            if text in seen:
                continue
            mutant = tokenize(text, _mutant_id(s, TransformKind.TOKEN_SUBST, len(out)))
            # the candidate must stay a single token at the same position
            if len(mutant.tokens) != len(s.tokens) or mutant.tokens[i].surface != word:
                continue
            if _coarse_pos(oracles.pos_tagger.tag(mutant)[i]) != coarse:
                continue
            seen.add(text)
            out.append(MutantPair(s, mutant, TransformKind.TOKEN_SUBST, (tok.start, tok.end), word,
                                  provenance=cand.logit))
    return out


def phrase_level_mutants(s: Sentence, n_s: NerOutput, tree: ConstituencyTree, oracles: OracleSuite,
                         config: PipelineConfig) -> list[MutantPair]:
    """Replace one entity-free minimal noun phrase at a time with a similar phrase."""
    out: list[MutantPair] = []
    seen: set[str] = set()
    for node in find_minimal_np_nodes(tree):
        start, end = tree.char_span(node)
        if _overlaps_entity(start, end, n_s):
            continue
        phrase = s.text[start:end]
        for rank, replacement in enumerate(oracles.phrase_sim.similar(phrase)[:config.top_k_testing]):
            if not replacement.strip() or replacement == phrase:
                continue
            text = _splice(s.text, start, end, replacement)
            if text in seen:
                continue
            seen.add(text)
            mutant = tokenize(text, _mutant_id(s, TransformKind.PHRASE_SUBST, len(out)))
            out.append(MutantPair(s, mutant, TransformKind.PHRASE_SUBST, (start, end), replacement,
                                  provenance=float(rank)))
    return out


def structural_mutants(s: Sentence, n_s: NerOutput, tree: ConstituencyTree | None) -> list[MutantPair]:
    try:
        result = declarative_to_interrogative(s, tree, n_s)
    except NoRewrite as exc:
        log.debug("no structural mutant for %s: %s", s.id, exc)
        return []
    mutant = tokenize(result.mutant_text, _mutant_id(s, TransformKind.STRUCTURAL, 0))
    return [MutantPair(s, mutant, TransformKind.STRUCTURAL,
                       detail=(result.rule_applied.value, result.moved_or_inserted))]


def _group_by_label(n_s: NerOutput) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for idx, pred in enumerate(n_s.predictions):
        groups.setdefault(pred.label, []).append(idx)
    return groups


def placeholder_template(s: Sentence, n_s: NerOutput) -> list[str | NerPrediction]:
    """Sentence as literal segments interleaved with entity slots."""
    parts: list[str | NerPrediction] = []
    cursor = 0
    for pred in n_s.predictions:
        parts.append(s.text[cursor:pred.start])
        parts.append(pred)
        cursor = pred.end
    parts.append(s.text[cursor:])
    return parts


def render_placeholders(template: Sequence[str | NerPrediction]) -> str:
    return "".join(p if isinstance(p, str) else f"<{p.label}>" for p in template)


def _fill(template: Sequence[str | NerPrediction], n_s: NerOutput,
          perms: dict[str, Sequence[int]], groups: dict[str, list[int]]) -> str:
    position = {idx: (label, j) for label, members in groups.items() for j, idx in enumerate(members)}
    preds = n_s.predictions
    out = []
    slot = 0
    for part in template:
        if isinstance(part, str):
            out.append(part)
            continue
        label, j = position[slot]
        source = groups[label][perms[label][j]] if label in perms else slot
        out.append(preds[source].surface)
        slot += 1
    return "".join(out)


def entity_shuffle_mutants(s: Sentence, n_s: NerOutput, rng_seed: int, config: PipelineConfig,
                           exhaustive: bool = False) -> list[MutantPair]:
    """Permute same-category entities among their own slots.

    Draws ``config.shuffle_attempts`` random permutations (or, with ``exhaustive``, every
    combination), keeping only those that change the text, without duplicates.
    """
    groups = _group_by_label(n_s)
    shufflable = [label for label, members in groups.items() if len(members) >= 2]
    if not shufflable:
        return []
    template = placeholder_template(s, n_s)

    def draws() -> Iterable[dict[str, tuple[int, ...]]]:
        if exhaustive:
            sizes = [len(groups[label]) for label in shufflable]
            if math.prod(math.factorial(n) for n in sizes) <= 5040:
                for combo in itertools.product(*(itertools.permutations(range(n)) for n in sizes)):
                    yield dict(zip(shufflable, combo))
                return
        rng = random.Random(rng_seed)
        for _ in range(config.shuffle_attempts):
            perms = {}
            for label in shufflable:
                order = list(range(len(groups[label])))
                rng.shuffle(order)
                perms[label] = tuple(order)
            yield perms

    out: list[MutantPair] = []
    seen = {s.text}
    for perms in draws():
        text = _fill(template, n_s, perms, groups)
        if text in seen:
            continue
        seen.add(text)
        mutant = tokenize(text, _mutant_id(s, TransformKind.ENTITY_SHUFFLE, len(out)))
        detail = tuple((label, perms[label]) for label in shufflable)
        out.append(MutantPair(s, mutant, TransformKind.ENTITY_SHUFFLE, detail=detail))
    return out


def sentence_seed(root_seed: int, sentence_id: str) -> int:
    """Per-sentence seed, independent of scheduling order."""
    digest = hashlib.sha256(f"{root_seed}\x1f{sentence_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


ALL_SCHEMES = (TransformKind.TOKEN_SUBST, TransformKind.PHRASE_SUBST,
               TransformKind.STRUCTURAL, TransformKind.ENTITY_SHUFFLE)


def generate_mutants(s: Sentence, n_s: NerOutput, oracles: OracleSuite, config: PipelineConfig,
                     schemes: Sequence[TransformKind] = ALL_SCHEMES) -> list[MutantPair]:
    """All mutants of ``s`` under the enabled schemes, in scheme order."""
    out: list[MutantPair] = []
    tree = None
    if TransformKind.PHRASE_SUBST in schemes or TransformKind.STRUCTURAL in schemes:
        try:
            tree = oracles.parser.parse(s)
        except NerMorphError as exc:
            log.info("parser failed on %s: %s", s.id, exc)
    for kind in ALL_SCHEMES:
        if kind not in schemes:
            continue
        if kind is TransformKind.TOKEN_SUBST:
            out.extend(token_level_mutants(s, n_s, oracles, config))
        elif kind is TransformKind.PHRASE_SUBST and tree is not None:
            out.extend(phrase_level_mutants(s, n_s, tree, oracles, config))
        elif kind is TransformKind.STRUCTURAL and tree is not None:
            out.extend(structural_mutants(s, n_s, tree))
        elif kind is TransformKind.ENTITY_SHUFFLE:
            out.extend(entity_shuffle_mutants(s, n_s, sentence_seed(config.seed, s.id), config))
    if config.max_mutants_per_sentence is not None:
        out = out[:config.max_mutants_per_sentence]
    return out
