"""Black-box repair of suspicious issues.

Each suspicious entity is relabeled by a vote: mask its words one at a time, let the
masked LM propose replacements, keep the plausible ones, ask the NER backend what it
calls each resulting mutant entity, and accumulate a weighted score per category (with
a synthetic NULL category meaning "not an entity").  Relabeled entities whose ranges
collide are arbitrated by their winning score.
"""

from __future__ import annotations

import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .backend import NerBackend, ResponseCache, predict
from .core import (NULL, EntityCategory, NerOutput, NerPrediction, PipelineConfig, Sentence, category,
                   find_occurrences, predictions_multiset, tokenize)
from .errors import NerMorphError
from .mrcheck import SuspiciousIssue, shared_surfaces
from .oracles import MASK, OracleSuite, WordPiece, cosine_similarity, phrase_embedding

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SuspiciousEntity:
    """A surface present in both sentences whose label multisets differ (absence counts)."""

    surface: str
    labels_s: Counter
    labels_s2: Counter
    occurrences_s: tuple[tuple[int, int], ...]
    occurrences_s2: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.occurrences_s or not self.occurrences_s2:
            raise ValueError(f"{self.surface!r} must occur in both sentences")
        if self.labels_s == self.labels_s2:
            raise ValueError(f"{self.surface!r} is labeled identically in both sentences")

    @staticmethod
    def _dominant(labels: Counter) -> EntityCategory:
        if not labels:
            return NULL
        return category(min(labels, key=lambda lab: (-labels[lab], lab)))

    @property
    def label_in_s(self) -> EntityCategory:
        return self._dominant(self.labels_s)

    @property
    def label_in_s2(self) -> EntityCategory:
        return self._dominant(self.labels_s2)

    def to_json(self) -> dict:
        return {"surface": self.surface, "labels_s": dict(sorted(self.labels_s.items())),
                "labels_s2": dict(sorted(self.labels_s2.items())),
                "occurrences_s": [list(o) for o in self.occurrences_s],
                "occurrences_s2": [list(o) for o in self.occurrences_s2]}


def locate_suspicious_entities(issue: SuspiciousIssue) -> list[SuspiciousEntity]:
    ti = issue.test_input
    out = []
    for surface in shared_surfaces(ti):
        labels_s = ti.output_original.labels_for(surface)
        labels_s2 = ti.output_mutant.labels_for(surface)
        if labels_s == labels_s2:
            continue
        out.append(SuspiciousEntity(surface, labels_s, labels_s2,
                                    tuple(find_occurrences(surface, ti.pair.original.text)),
                                    tuple(find_occurrences(surface, ti.pair.mutant.text))))
    return out


def evaluate_F(p: float, sim: float, is_null: bool, is_subword: bool, config: PipelineConfig) -> float:
    """Score contributed by one mutant entity: logit weighted by exp(k * similarity)."""
    score = p * math.exp(config.k_balance * sim)
    if is_null:
        score *= config.alpha
    if is_subword:
        score *= config.lambda_
    return score


class Status(str, enum.Enum):
    RELABELED = "RELABELED"
    ABSTAINED = "ABSTAINED"
    DEPRECATED_BY_CONFLICT = "DEPRECATED_BY_CONFLICT"


@dataclass(frozen=True)
class Contribution:
    mutant_entity: str
    mutant_text: str
    masked_piece: str
    is_subword: bool
    category: EntityCategory
    logit: float
    sim: float
    score: float

    def to_json(self) -> dict:
        return {"mutant_entity": self.mutant_entity, "mutant_text": self.mutant_text,
                "masked_piece": self.masked_piece, "is_subword": self.is_subword,
                "label": self.category.label, "logit": self.logit, "sim": self.sim, "F": self.score}


@dataclass
class ScoreTable:
    """Per-category vote totals; logit totals break score ties."""

    scores: dict[EntityCategory, float] = field(default_factory=dict)
    logits: dict[EntityCategory, float] = field(default_factory=dict)

    def add(self, cat: EntityCategory, score: float, logit: float) -> None:
        self.scores[cat] = self.scores.get(cat, 0.0) + score
        self.logits[cat] = self.logits.get(cat, 0.0) + logit

    def __bool__(self) -> bool:
        return bool(self.scores)

    def argmax(self) -> tuple[EntityCategory, float]:
        best = min(self.scores, key=lambda c: (-self.scores[c], -self.logits[c], c.label))
        return best, self.scores[best]

    def to_json(self) -> dict:
        return {c.label: self.scores[c] for c in sorted(self.scores, key=lambda c: c.label)}


@dataclass(frozen=True)
class RepairOutcome:
    entity: SuspiciousEntity
    side: str  # "s" (original) or "s2" (mutant)
    spans: tuple[tuple[int, int], ...]
    status: Status
    relabeled: EntityCategory | None = None
    p_score: float = 0.0
    contributing: tuple[Contribution, ...] = ()
    table: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    def __post_init__(self) -> None:
        if self.status is not Status.ABSTAINED and self.relabeled is None:
            raise ValueError("a relabeled outcome needs a category")

    @property
    def surface(self) -> str:
        return self.entity.surface

    def overlaps(self, other: RepairOutcome) -> bool:
        return any(a < d and c < b for a, b in self.spans for c, d in other.spans)

    def deprecated(self) -> RepairOutcome:
        return RepairOutcome(self.entity, self.side, self.spans, Status.DEPRECATED_BY_CONFLICT, self.relabeled,
                             self.p_score, self.contributing, self.table, self.error)

    def to_json(self) -> dict:
        return {"surface": self.surface, "side": self.side, "spans": [list(s) for s in self.spans],
                "status": self.status.value,
                "relabeled": None if self.relabeled is None else self.relabeled.label,
                "p_score": self.p_score, "scores": self.table,
                "contributing": [c.to_json() for c in self.contributing], "error": self.error}


def format_consistent(original: str, candidate: str) -> bool:
    """Candidate keeps the first-letter case and all-caps-ness, and stays a single token."""
    if not candidate or any(ch.isspace() for ch in candidate):
        return False
    if original[0].isupper() != candidate[0].isupper():
        return False
    if original.isupper() != candidate.isupper():
        return False
    return True


def covering_label(output: NerOutput, start: int, end: int, min_coverage: float) -> EntityCategory:
    """Category of the prediction covering the most of [start, end), or NULL below ``min_coverage``."""
    best, best_cover = None, 0
    for pred in output:
        cover = min(end, pred.end) - max(start, pred.start)
        if cover > best_cover:
            best, best_cover = pred, cover
    if best is None or best_cover < min_coverage * (end - start):
        return NULL
    return category(best.label)


def _mask_candidates(s: Sentence, span: tuple[int, int], piece: WordPiece, oracles: OracleSuite,
                     config: PipelineConfig):
    lo = span[0] + piece.start
    hi = span[0] + piece.end
    masked = s.text[:lo] + MASK + s.text[hi:]
    return oracles.masked_lm.fill(masked, config.top_k_repair)


def relabel(s: Sentence, e_s: SuspiciousEntity | str, backend: NerBackend, oracles: OracleSuite,
            config: PipelineConfig, cache: ResponseCache | None = None, side: str = "s") -> RepairOutcome:
    """Vote on a new category for ``e_s`` as it appears in ``s``.

    The first occurrence is the one masked; the resulting category applies to every
    occurrence.  Candidate-level oracle or backend failures skip that candidate.
    """
    entity = e_s if isinstance(e_s, SuspiciousEntity) else None
    surface = e_s.surface if entity is not None else e_s
    spans = tuple(find_occurrences(surface, s.text))
    if not spans:
        raise ValueError(f"{surface!r} does not occur in {s.text!r}")
    if entity is None:
        entity = _standalone_entity(surface, spans)
    span = spans[0]
    h_s = phrase_embedding(s, span, oracles.embedder)

    table = ScoreTable()
    contributions: list[Contribution] = []
    for piece in oracles.masked_lm.pieces(surface):
        try:
            candidates = _mask_candidates(s, span, piece, oracles, config)
        except NerMorphError as exc:
            log.warning("masked LM failed for %r in %s: %s", piece.text, s.id, exc)
            continue
        for cand in candidates:
            if cand.word == piece.text or not format_consistent(piece.text, cand.word):
                continue
            if cand.logit < config.p_threshold:
                continue
            e_m = surface[:piece.start] + cand.word + surface[piece.end:]
            m_span = (span[0], span[0] + len(e_m))
            s_m = tokenize(s.text[:span[0]] + e_m + s.text[span[1]:], f"{s.id}#{len(contributions)}")
            try:
                sim = cosine_similarity(h_s, phrase_embedding(s_m, m_span, oracles.embedder))
                if sim < config.s_threshold_repair:
                    continue
                n_m = predict(backend, s_m, cache)
            except NerMorphError as exc:
                log.warning("skipping candidate %r for %r: %s", cand.word, surface, exc)
                continue
            cat = covering_label(n_m, *m_span, config.null_coverage)
            score = evaluate_F(cand.logit, sim, cat.is_null, piece.is_subword, config)
            table.add(cat, score, cand.logit)
            contributions.append(Contribution(e_m, s_m.text, piece.text, piece.is_subword, cat,
                                              cand.logit, sim, score))
    if not table:
        return RepairOutcome(entity, side, spans, Status.ABSTAINED)
    best, p_score = table.argmax()
    return RepairOutcome(entity, side, spans, Status.RELABELED, best, p_score, tuple(contributions),
                         table.to_json())


def _standalone_entity(surface: str, spans: tuple[tuple[int, int], ...]) -> SuspiciousEntity:
    # relabel() may be called on a bare surface outside an issue
    return SuspiciousEntity(surface, Counter(), Counter({"?": 1}), spans, spans)


def _conflict_key(o: RepairOutcome) -> tuple:
    # higher p_score wins; on a tie the longer span wins; then the earlier one
    return (o.p_score, len(o.surface), -o.spans[0][0])


def resolve_range_conflicts(outcomes: Sequence[RepairOutcome], within: Sentence | None = None
                            ) -> list[RepairOutcome]:
    """Deprecate the weaker member of every overlapping pair of relabeled entities.

    Every pair is examined, including pairs whose members were already deprecated, so
    the result does not depend on input order.  NULL outcomes remove rather than add a
    range and take no part.
    """
    live = [i for i, o in enumerate(outcomes) if o.status is Status.RELABELED and not o.relabeled.is_null]
    losers: set[int] = set()
    for x, i in enumerate(live):
        for j in live[x + 1:]:
            if outcomes[i].overlaps(outcomes[j]):
                losers.add(i if _conflict_key(outcomes[i]) < _conflict_key(outcomes[j]) else j)
    return [o.deprecated() if i in losers else o for i, o in enumerate(outcomes)]


def merge_outcomes(output: NerOutput, outcomes: Iterable[RepairOutcome]) -> NerOutput:
    """Apply surviving relabels to ``output``: NULL removes, a category replaces what it overlaps."""
    preds = list(output.predictions)
    surviving = [o for o in outcomes if o.status is Status.RELABELED]
    for o in surviving:
        if o.relabeled.is_null:
            removed = set(o.spans)
            preds = [p for p in preds if (p.start, p.end) not in removed]
    for o in surviving:
        if o.relabeled.is_null:
            continue
        preds = [p for p in preds if not any(p.overlaps(a, b) for a, b in o.spans)]
        preds.extend(NerPrediction(a, b, o.surface, o.relabeled.label) for a, b in o.spans)
    return NerOutput(output.sentence_id, tuple(sorted(preds)))


def repair_attempted(before: NerOutput, after: NerOutput) -> bool:
    return predictions_multiset(before) != predictions_multiset(after)


class RepairResult(NamedTuple):
    r_s: NerOutput
    r_s2: NerOutput
    outcomes: list[RepairOutcome]


def _repair_side(sentence: Sentence, output: NerOutput, entities: Sequence[SuspiciousEntity], side: str,
                 backend: NerBackend, oracles: OracleSuite, config: PipelineConfig,
                 cache: ResponseCache | None) -> tuple[NerOutput, list[RepairOutcome]]:
    outcomes = []
    for entity in entities:
        spans = entity.occurrences_s if side == "s" else entity.occurrences_s2
        try:
            outcomes.append(relabel(sentence, entity, backend, oracles, config, cache, side))
        except NerMorphError as exc:
            log.warning("relabel of %r in %s failed: %s", entity.surface, sentence.id, exc)
            outcomes.append(RepairOutcome(entity, side, spans, Status.ABSTAINED, error=str(exc)))
    outcomes = resolve_range_conflicts(outcomes, sentence)
    return merge_outcomes(output, outcomes), outcomes


def repair_issue(issue: SuspiciousIssue, backend: NerBackend, oracles: OracleSuite, config: PipelineConfig,
                 cache: ResponseCache | None = None) -> RepairResult:
    """Fixed outputs for both sentences of ``issue`` plus every per-entity outcome."""
    ti = issue.test_input
    entities = locate_suspicious_entities(issue)
    r_s, out_s = _repair_side(ti.pair.original, ti.output_original, entities, "s", backend, oracles, config,
                              cache)
    r_s2, out_s2 = _repair_side(ti.pair.mutant, ti.output_mutant, entities, "s2", backend, oracles, config,
                                cache)
    return RepairResult(r_s, r_s2, out_s + out_s2)


def repair_report(issue: SuspiciousIssue, result: RepairResult) -> dict:
    ti = issue.test_input
    return {
        "issue_id": issue.id,
        "mr": issue.violated_mr.value,
        "kind": issue.kind.value,
        "original": {"id": ti.pair.original.id, "text": ti.pair.original.text},
        "mutant": {"id": ti.pair.mutant.id, "text": ti.pair.mutant.text},
        "before_s": ti.output_original.to_json(),
        "before_s2": ti.output_mutant.to_json(),
        "after_s": result.r_s.to_json(),
        "after_s2": result.r_s2.to_json(),
        "attempted_s": repair_attempted(ti.output_original, result.r_s),
        "attempted_s2": repair_attempted(ti.output_mutant, result.r_s2),
        "outcomes": [o.to_json() for o in result.outcomes],
    }
