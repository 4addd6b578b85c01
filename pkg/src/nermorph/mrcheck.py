"""Metamorphic-relation checks over (original, mutant) prediction pairs.

MR1 (token/phrase substitution): an entity whose text occurs in both sentences keeps the
same labels.  MR2 (structural, shuffle): the position-free prediction multisets agree.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import NerOutput, TransformKind, occurs_in, predictions_multiset
from .errors import WrongKind
from .mutation import MutantPair


class MR(str, enum.Enum):
    MR1 = "MR1"
    MR2 = "MR2"


MR1_KINDS = frozenset({TransformKind.TOKEN_SUBST, TransformKind.PHRASE_SUBST})
MR2_KINDS = frozenset({TransformKind.STRUCTURAL, TransformKind.ENTITY_SHUFFLE})


@dataclass(frozen=True)
class TestInput:
    __test__ = False  # not a pytest class

    pair: MutantPair
    output_original: NerOutput
    output_mutant: NerOutput

    @property
    def issue_id(self) -> str:
        return f"{self.pair.original.id}:{self.pair.mutant.id}"


@dataclass(frozen=True)
class Disagreement:
    surface: str
    label_in_s: str | None
    label_in_s2: str | None

    def to_json(self) -> list:
        return [self.surface, self.label_in_s, self.label_in_s2]


@dataclass(frozen=True)
class SuspiciousIssue:
    test_input: TestInput
    violated_mr: MR
    disagreements: tuple[Disagreement, ...]

    def __post_init__(self) -> None:
        if not self.disagreements:
            raise ValueError("a suspicious issue needs at least one disagreement")

    @property
    def id(self) -> str:
        return self.test_input.issue_id

    @property
    def kind(self) -> TransformKind:
        return self.test_input.pair.kind

    def to_json(self) -> dict:
        ti = self.test_input
        return {
            "issue_id": self.id,
            "mr": self.violated_mr.value,
            "pair": ti.pair.to_json(),
            "output_original": ti.output_original.to_json(),
            "output_mutant": ti.output_mutant.to_json(),
            "disagreements": [d.to_json() for d in self.disagreements],
        }

    @classmethod
    def from_json(cls, raw: dict) -> SuspiciousIssue:
        ti = TestInput(MutantPair.from_json(raw["pair"]), NerOutput.from_json(raw["output_original"]),
                       NerOutput.from_json(raw["output_mutant"]))
        return cls(ti, MR(raw["mr"]), tuple(Disagreement(*d) for d in raw["disagreements"]))


def _counter_diff(a: Counter, b: Counter) -> tuple[list[str], list[str]]:
    only_a = sorted((a - b).elements())
    only_b = sorted((b - a).elements())
    return only_a, only_b


def _label_disagreements(surface: str, labels_s: Counter, labels_s2: Counter) -> list[Disagreement]:
    only_s, only_s2 = _counter_diff(labels_s, labels_s2)
    out = []
    # pair up leftovers so a relabel reads as (surface, old, new)
    for i in range(max(len(only_s), len(only_s2))):
        out.append(Disagreement(surface, only_s[i] if i < len(only_s) else None,
                                only_s2[i] if i < len(only_s2) else None))
    return out


def shared_surfaces(ti: TestInput) -> list[str]:
    """Predicted surfaces (from either output) whose text occurs in both sentences, by first appearance."""
    seen: dict[str, None] = {}
    for pred in list(ti.output_original) + list(ti.output_mutant):
        seen.setdefault(pred.surface, None)
    return [s for s in seen
            if occurs_in(s, ti.pair.original.text) and occurs_in(s, ti.pair.mutant.text)]


def check_mr1(ti: TestInput) -> SuspiciousIssue | None:
    if ti.pair.kind not in MR1_KINDS:
        raise WrongKind(f"MR1 does not apply to {ti.pair.kind.value} mutants")
    found: list[Disagreement] = []
    for surface in shared_surfaces(ti):
        found.extend(_label_disagreements(surface, ti.output_original.labels_for(surface),
                                          ti.output_mutant.labels_for(surface)))
    return SuspiciousIssue(ti, MR.MR1, tuple(found)) if found else None


def check_mr2(ti: TestInput) -> SuspiciousIssue | None:
    if ti.pair.kind not in MR2_KINDS:
        raise WrongKind(f"MR2 does not apply to {ti.pair.kind.value} mutants")
    a = predictions_multiset(ti.output_original)
    b = predictions_multiset(ti.output_mutant)
    if a == b:
        return None
    found: list[Disagreement] = []
    surfaces = sorted({s for s, _ in (a - b)} | {s for s, _ in (b - a)})
    for surface in surfaces:
        labels_a = Counter({lab: n for (s, lab), n in a.items() if s == surface})
        labels_b = Counter({lab: n for (s, lab), n in b.items() if s == surface})
        found.extend(_label_disagreements(surface, labels_a, labels_b))
    return SuspiciousIssue(ti, MR.MR2, tuple(found))


def check(ti: TestInput) -> SuspiciousIssue | None:
    if ti.pair.kind in MR1_KINDS:
        return check_mr1(ti)
    return check_mr2(ti)


def detect_suspicious_issues(inputs: Iterable[TestInput]) -> list[SuspiciousIssue]:
    return [issue for issue in map(check, inputs) if issue is not None]
