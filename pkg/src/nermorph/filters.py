"""Quality gates for mutants: semantic similarity of the edit and naturalness drop."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .core import PipelineConfig, TransformKind
from .mutation import MutantPair
from .oracles import OracleSuite, cosine_similarity, phrase_embedding


class Reason(str, enum.Enum):
    OK = "OK"
    SEMANTIC_BELOW = "SEMANTIC_BELOW"
    SYNTACTIC_ABOVE = "SYNTACTIC_ABOVE"
    NOT_APPLICABLE = "NOT_APPLICABLE"


@dataclass(frozen=True)
class FilterVerdict:
    passed: bool
    reason: Reason
    semantic_sim: float | None = None
    syntactic_delta: float | None = None

    def __post_init__(self) -> None:
        if self.passed != (self.reason is Reason.OK):
            raise ValueError("passed must agree with reason")

    def to_json(self) -> dict:
        return {"passed": self.passed, "reason": self.reason.value,
                "semantic_sim": self.semantic_sim, "syntactic_delta": self.syntactic_delta}


_SUBSTITUTIONS = (TransformKind.TOKEN_SUBST, TransformKind.PHRASE_SUBST)


def edit_similarity(pair: MutantPair, oracles: OracleSuite) -> float:
    """Cosine similarity between the replaced span (in s) and its replacement (in s')."""
    h = phrase_embedding(pair.original, pair.span, oracles.embedder)
    h2 = phrase_embedding(pair.mutant, pair.mutant_span, oracles.embedder)
    return cosine_similarity(h, h2)


def semantic_filter(pair: MutantPair, oracles: OracleSuite, config: PipelineConfig) -> FilterVerdict:
    if pair.kind not in _SUBSTITUTIONS:
        return FilterVerdict(True, Reason.OK)
    sim = edit_similarity(pair, oracles)
    if sim < config.s_threshold_testing:
        return FilterVerdict(False, Reason.SEMANTIC_BELOW, semantic_sim=sim)
    return FilterVerdict(True, Reason.OK, semantic_sim=sim)


def naturalness_drop(original: str, mutant: str, oracles: OracleSuite) -> float:
    return oracles.naturalness.score(original) - oracles.naturalness.score(mutant)


def syntactic_filter(pair: MutantPair, oracles: OracleSuite, config: PipelineConfig) -> FilterVerdict:
    delta = naturalness_drop(pair.original.text, pair.mutant.text, oracles)
    if delta > config.syn_threshold_for(pair.kind):
        return FilterVerdict(False, Reason.SYNTACTIC_ABOVE, syntactic_delta=delta)
    return FilterVerdict(True, Reason.OK, syntactic_delta=delta)


def combined_verdict(pair: MutantPair, oracles: OracleSuite, config: PipelineConfig) -> FilterVerdict:
    """Semantic gate first, then syntactic; the first failure names the reason."""
    sem = semantic_filter(pair, oracles, config)
    if not sem.passed:
        return sem
    syn = syntactic_filter(pair, oracles, config)
    if not syn.passed:
        return FilterVerdict(False, syn.reason, sem.semantic_sim, syn.syntactic_delta)
    return FilterVerdict(True, Reason.OK, sem.semantic_sim, syn.syntactic_delta)


def apply_filters(pairs: Sequence[MutantPair], oracles: OracleSuite, config: PipelineConfig
                  ) -> tuple[list[MutantPair], list[tuple[MutantPair, FilterVerdict]]]:
    kept, rejected = [], []
    for pair in pairs:
        verdict = combined_verdict(pair, oracles, config)
        if verdict.passed:
            kept.append(pair)
        else:
            rejected.append((pair, verdict))
    return kept, rejected


def write_audit_log(path: str | Path, rows: Iterable[tuple[MutantPair, FilterVerdict]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair, verdict in rows:
            fh.write(json.dumps({"pair": pair.digest, "kind": pair.kind.value, "mutant_id": pair.mutant.id,
                                 **verdict.to_json()}, ensure_ascii=False) + "\n")
