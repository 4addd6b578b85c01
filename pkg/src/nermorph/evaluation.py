"""Metrics over testing and repair results: precision, repair transition ratios, error classes."""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .core import NerOutput, NerPrediction
from .errors import EmptySample, IdMismatch, NoChange, ZeroDenominator


class ErrorCategory(str, enum.Enum):
    OMISSION = "OMISSION"
    OVER_LABELING = "OVER_LABELING"
    INCORRECT_CATEGORY = "INCORRECT_CATEGORY"
    RANGE_ERROR = "RANGE_ERROR"


@dataclass(frozen=True)
class ConfusionCounts:
    """Transitions of suspicious-entity predictions under repair.

    The first letter is correctness before repair, the second after:
    ``tf`` counts correct predictions the repair broke, ``ft`` errors it fixed.
    """

    tt: int = 0
    tf: int = 0
    ft: int = 0
    ff: int = 0

    def __post_init__(self) -> None:
        for name in ("tt", "tf", "ft", "ff"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a non-negative int, got {value!r}")

    @property
    def num_error(self) -> int:
        return self.ft + self.ff

    @property
    def num_correct(self) -> int:
        return self.tt + self.tf

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tt + other.tt, self.tf + other.tf, self.ft + other.ft, self.ff + other.ff)

    def record(self, correct_before: bool, correct_after: bool) -> ConfusionCounts:
        key = ("t" if correct_before else "f") + ("t" if correct_after else "f")
        return self + ConfusionCounts(**{key: 1})

    def to_json(self) -> dict:
        return {"tt": self.tt, "tf": self.tf, "ft": self.ft, "ff": self.ff}


@dataclass(frozen=True)
class HumanVerdict:
    issue_id: str
    is_erroneous: bool
    error_category: ErrorCategory | None = None
    annotator: str = ""

    def __post_init__(self) -> None:
        if self.is_erroneous != (self.error_category is not None):
            raise ValueError(f"{self.issue_id}: error_category must be given iff the issue is erroneous")


_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def read_verdicts(path: str | Path) -> list[HumanVerdict]:
    """CSV with header ``issue_id,is_erroneous,error_category,annotator``."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            cat = (row.get("error_category") or "").strip()
            out.append(HumanVerdict(row["issue_id"].strip(), _parse_bool(row["is_erroneous"]),
                                    ErrorCategory(cat.upper()) if cat else None,
                                    (row.get("annotator") or "").strip()))
    return out


def precision(verdicts: Sequence[HumanVerdict]) -> float:
    """Share of reported issues judged to be real NER errors."""
    if not verdicts:
        raise EmptySample("precision of an empty verdict sample")
    return sum(v.is_erroneous for v in verdicts) / len(verdicts)


def repair_metrics(c: ConfusionCounts) -> tuple[float, float, float]:
    """(err2cor, cor2err, error_reduce)."""
    if c.num_error == 0:
        raise ZeroDenominator("NumError")
    if c.num_correct == 0:
        raise ZeroDenominator("NumCorrect")
    err2cor = c.ft / c.num_error
    cor2err = c.tf / c.num_correct
    error_reduce = (c.ft - c.tf) / c.num_error
    return err2cor, cor2err, error_reduce


def _region(before: NerOutput, after: NerOutput, surface: str) -> list[tuple[int, int]]:
    return sorted({(p.start, p.end) for p in list(before) + list(after) if p.surface == surface})


def _touching(output: NerOutput, region: Iterable[tuple[int, int]]) -> set[NerPrediction]:
    region = list(region)
    return {p for p in output if any(p.overlaps(a, b) for a, b in region)}


def classify_change(before: NerOutput, after: NerOutput, entity_surface: str) -> ErrorCategory:
    """Which error class a before/after change at ``entity_surface`` corrects."""
    region = _region(before, after, entity_surface)
    b = _touching(before, region)
    a = _touching(after, region)
    if b == a:
        raise NoChange(f"no change at {entity_surface!r}")
    if not b:
        return ErrorCategory.OMISSION
    if not a:
        return ErrorCategory.OVER_LABELING
    if {(p.start, p.end) for p in b} == {(p.start, p.end) for p in a}:
        return ErrorCategory.INCORRECT_CATEGORY
    return ErrorCategory.RANGE_ERROR


def category_distribution(categories: Iterable[ErrorCategory]) -> dict[ErrorCategory, float]:
    counts = Counter(categories)
    total = sum(counts.values())
    if total == 0:
        raise EmptySample("distribution of an empty sample")
    return {cat: counts[cat] / total for cat in ErrorCategory}


# -- per-scheme precision ----------------------------------------------------------

@dataclass(frozen=True)
class SchemeRow:
    erroneous: int
    total: int

    @property
    def precision(self) -> float:
        if self.total == 0:
            raise EmptySample("no issues for this scheme")
        return self.erroneous / self.total

    def to_json(self) -> dict:
        return {"erroneous": self.erroneous, "total": self.total,
                "precision": self.precision if self.total else None}


def precision_table(kinds: Mapping[str, str], verdicts: Sequence[HumanVerdict]) -> dict[str, SchemeRow]:
    """Per-scheme and overall precision; ``kinds`` maps issue id to scheme name."""
    unknown = [v.issue_id for v in verdicts if v.issue_id not in kinds]
    if unknown:
        raise IdMismatch(unknown)
    err: Counter = Counter()
    tot: Counter = Counter()
    for v in verdicts:
        kind = kinds[v.issue_id]
        tot[kind] += 1
        err[kind] += v.is_erroneous
    rows = {kind: SchemeRow(err[kind], tot[kind]) for kind in sorted(tot)}
    rows["overall"] = SchemeRow(sum(err.values()), sum(tot.values()))
    return rows


# -- ground truth from a reference labeller ----------------------------------------

Labeller = Callable[[str], Sequence[NerPrediction]]


def _labels(preds: Iterable[NerPrediction], surface: str) -> Counter:
    return Counter(p.label for p in preds if p.surface == surface)


def oracle_verdicts(reports: Sequence[Mapping], truth: Labeller) -> list[HumanVerdict]:
    """Machine verdicts: an issue is erroneous when either side disagrees with ``truth``."""
    out = []
    for rep in reports:
        bad_cat = None
        for text_key, out_key in (("original", "before_s"), ("mutant", "before_s2")):
            before = NerOutput.from_json(rep[out_key])
            gold = NerOutput(before.sentence_id, tuple(sorted(truth(rep[text_key]["text"]))))
            if predictions_differ(before, gold):
                bad_cat = _first_change(gold, before)
                break
        out.append(HumanVerdict(rep["issue_id"], bad_cat is not None, bad_cat, "ground-truth"))
    return out


def predictions_differ(a: NerOutput, b: NerOutput) -> bool:
    return set(a.predictions) != set(b.predictions)


def _first_change(gold: NerOutput, predicted: NerOutput) -> ErrorCategory:
    # the error class is named from the fix's point of view: predicted -> gold
    for surface in sorted({p.surface for p in list(gold) + list(predicted)}):
        try:
            return classify_change(predicted, gold, surface)
        except NoChange:
            continue
    raise NoChange("outputs differ only outside every predicted surface")


def oracle_confusion(reports: Sequence[Mapping], truth: Labeller) -> ConfusionCounts:
    """Before/after correctness of every repaired (entity, sentence) against ``truth``."""
    counts = ConfusionCounts()
    for rep in reports:
        seen: set[tuple[str, str]] = set()
        for outcome in rep["outcomes"]:
            side = outcome["side"]
            key = (outcome["surface"], side)
            if key in seen:
                continue
            seen.add(key)
            text = rep["original" if side == "s" else "mutant"]["text"]
            gold = _labels(truth(text), outcome["surface"])
            before = NerOutput.from_json(rep["before_s" if side == "s" else "before_s2"])
            after = NerOutput.from_json(rep["after_s" if side == "s" else "after_s2"])
            counts = counts.record(before.labels_for(outcome["surface"]) == gold,
                                   after.labels_for(outcome["surface"]) == gold)
    return counts
