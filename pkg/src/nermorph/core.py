"""Domain types shared by every stage: sentences, entity spans, NER outputs, config."""

from __future__ import annotations

import configparser
import enum
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import ConfigError, EmptyText, InvalidOutput

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

NULL_LABEL = "NULL"


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise EmptyText("sentence text is empty")
        prev_end = 0
        for tok in self.tokens:
            if tok.start < prev_end or tok.end <= tok.start:
                raise ValueError(f"token {tok!r} out of order or empty")
            if self.text[tok.start:tok.end] != tok.surface:
                raise ValueError(f"token {tok!r} does not match text slice")
            prev_end = tok.end

    @property
    def words(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def gap_before(self, index: int) -> str:
        """Whitespace between token ``index`` and its predecessor (or text start)."""
        start = self.tokens[index - 1].end if index > 0 else 0
        return self.text[start:self.tokens[index].start]

    def token_indices_in(self, start: int, end: int) -> list[int]:
        """Indices of tokens lying entirely inside ``[start, end)``."""
        return [i for i, t in enumerate(self.tokens) if t.start >= start and t.end <= end]


def tokenize(text: str, sentence_id: str = "") -> Sentence:
    """Split on whitespace; every punctuation character becomes its own token."""
    if not text.strip():
        raise EmptyText("cannot tokenize empty text")
    tokens = tuple(Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text))
    return Sentence(sentence_id, text, tokens)


def detokenize(sentence: Sentence) -> str:
    parts = []
    for i, tok in enumerate(sentence.tokens):
        parts.append(sentence.gap_before(i))
        parts.append(tok.surface)
    parts.append(sentence.text[sentence.tokens[-1].end:] if sentence.tokens else sentence.text)
    return "".join(parts)


@dataclass(frozen=True)
class EntityCategory:
    label: str
    is_null: bool = False

    def __post_init__(self) -> None:
        label = self.label.strip()
        object.__setattr__(self, "label", label)
        if self.is_null != (label == NULL_LABEL):
            raise ValueError("only the synthetic NULL category may be labelled 'NULL'")

    def __str__(self) -> str:
        return self.label


NULL = EntityCategory(NULL_LABEL, is_null=True)


def category(label: str) -> EntityCategory:
    label = label.strip()
    return NULL if label == NULL_LABEL else EntityCategory(label)


@dataclass(frozen=True, order=True)
class NerPrediction:
    start: int
    end: int
    surface: str
    label: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "label", self.label.strip())
        if not self.start < self.end:
            raise InvalidOutput(f"empty or reversed span ({self.start}, {self.end})")
        if len(self.surface) != self.end - self.start:
            raise InvalidOutput(f"surface {self.surface!r} does not fit span ({self.start}, {self.end})")
        if self.label == NULL_LABEL:
            raise InvalidOutput("NULL is reserved for the repair scorer")

    @classmethod
    def at(cls, text: str, start: int, end: int, label: str) -> NerPrediction:
        return cls(start, end, text[start:end], label)

    def overlaps(self, start: int, end: int) -> bool:
        return self.start < end and start < self.end

    def to_json(self) -> dict:
        return {"text": self.surface, "start": self.start, "end": self.end, "label": self.label}

    @classmethod
    def from_json(cls, raw: Mapping) -> NerPrediction:
        return cls(int(raw["start"]), int(raw["end"]), raw["text"], raw["label"])


@dataclass(frozen=True)
class NerOutput:
    sentence_id: str
    predictions: tuple[NerPrediction, ...] = ()

    def __post_init__(self) -> None:
        preds = tuple(sorted(self.predictions))
        for a, b in zip(preds, preds[1:]):
            if b.start < a.end:
                raise InvalidOutput(f"overlapping predictions {a.surface!r} and {b.surface!r}")
        object.__setattr__(self, "predictions", preds)

    def __iter__(self) -> Iterator[NerPrediction]:
        return iter(self.predictions)

    def __len__(self) -> int:
        return len(self.predictions)

    def check_text(self, text: str) -> None:
        for p in self.predictions:
            if p.end > len(text) or text[p.start:p.end] != p.surface:
                raise InvalidOutput(f"prediction {p.surface!r} does not match text at ({p.start}, {p.end})")

    def labels_for(self, surface: str) -> Counter:
        """Surface-keyed view: multiset of labels predicted for ``surface``."""
        return Counter(p.label for p in self.predictions if p.surface == surface)

    def at_span(self, start: int, end: int) -> NerPrediction | None:
        """Span-keyed view: the prediction with exactly this span."""
        for p in self.predictions:
            if p.start == start and p.end == end:
                return p
        return None

    def to_json(self) -> dict:
        return {"sentence_id": self.sentence_id, "predictions": [p.to_json() for p in self.predictions]}

    @classmethod
    def from_json(cls, raw: Mapping) -> NerOutput:
        return cls(raw["sentence_id"], tuple(NerPrediction.from_json(p) for p in raw["predictions"]))


def predictions_multiset(output: NerOutput | Iterable[NerPrediction]) -> Counter:
    """Position-free multiset of ``(surface, label)`` pairs."""
    return Counter((p.surface, p.label) for p in output)


def find_occurrences(surface: str, text: str) -> list[tuple[int, int]]:
    """Word-boundary-aware occurrences of ``surface`` in ``text``.

    ``"ESA"`` is not found inside ``"Measles"``; overlapping occurrences are not reported.
    """
    if not surface:
        return []
    pattern = re.compile(r"(?<!\w)" + re.escape(surface) + r"(?!\w)")
    return [(m.start(), m.end()) for m in pattern.finditer(text)]


def occurs_in(surface: str, text: str) -> bool:
    return bool(find_occurrences(surface, text))


class TransformKind(str, enum.Enum):
    TOKEN_SUBST = "token"
    PHRASE_SUBST = "phrase"
    STRUCTURAL = "structural"
    ENTITY_SHUFFLE = "shuffle"

    @classmethod
    def parse(cls, value: str) -> TransformKind:
        for kind in cls:
            if value in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown transformation kind {value!r}")


FOUR_CATEGORY_SYN_THRESHOLDS = {
    TransformKind.STRUCTURAL: 0.02,
    TransformKind.TOKEN_SUBST: 0.01,
    TransformKind.PHRASE_SUBST: 0.01,
    TransformKind.ENTITY_SHUFFLE: 0.01,
}


def default_syn_thresholds(n_categories: int) -> dict[TransformKind, float]:
    # coarse label sets tolerate a looser gate; fine-grained ones are filtered strictly
    if n_categories == 4:
        return dict(FOUR_CATEGORY_SYN_THRESHOLDS)
    return {kind: 0.0 for kind in TransformKind}


@dataclass(frozen=True)
class PipelineConfig:
    s_threshold_testing: float = 0.65
    syn_threshold: Mapping[TransformKind, float] | None = None
    p_threshold: float = 5.5
    s_threshold_repair: float = 0.45
    k_balance: float = 2.5
    alpha: float = 0.2
    lambda_: float = 0.5
    top_k_testing: int = 10
    top_k_repair: int = 20
    shuffle_attempts: int = 3
    parallelism: int = 1
    seed: int = 0
    category_count: int = 4
    null_coverage: float = 0.5
    max_mutants_per_sentence: int | None = None

    def __post_init__(self) -> None:
        for name in ("alpha", "lambda_"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {value}")
        for name in ("s_threshold_testing", "p_threshold", "s_threshold_repair", "k_balance", "null_coverage"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if not -1 <= self.s_threshold_testing <= 1:
            raise ConfigError("s_threshold_testing must lie in [-1, 1]")
        for name in ("top_k_testing", "top_k_repair", "shuffle_attempts", "parallelism"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_mutants_per_sentence is not None and self.max_mutants_per_sentence < 1:
            raise ConfigError("max_mutants_per_sentence must be >= 1")
        if self.syn_threshold is not None:
            table = {TransformKind.parse(k) if isinstance(k, str) else k: float(v)
                     for k, v in self.syn_threshold.items()}
            if not all(math.isfinite(v) for v in table.values()):
                raise ConfigError("syn_threshold values must be finite")
            object.__setattr__(self, "syn_threshold", table)

    def syn_threshold_for(self, kind: TransformKind) -> float:
        table = default_syn_thresholds(self.category_count)
        if self.syn_threshold:
            table.update(self.syn_threshold)
        return table[kind]

    def with_(self, **changes) -> PipelineConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["syn_threshold"] = {k.value: self.syn_threshold_for(k) for k in TransformKind}
        return out

    @classmethod
    def from_ini(cls, path: str | Path, **overrides) -> PipelineConfig:
        """Load ``key = value`` pairs; sections only group keys and are otherwise ignored.

        ``syn_threshold.<kind>`` keys fill the per-transformation table.
        """
        parser = configparser.ConfigParser()
        parser.optionxform = str
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        known = {f.name: f for f in fields(cls)}
        values: dict = {}
        syn: dict[TransformKind, float] = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                key = key.strip()
                if key.startswith("syn_threshold."):
                    syn[TransformKind.parse(key.split(".", 1)[1])] = float(raw)
                    continue
                name = "lambda_" if key == "lambda" else key
                if name not in known or name == "syn_threshold":
                    raise ConfigError(f"unknown config key {key!r} in [{section}]")
                values[name] = _coerce(name, raw)
        if syn:
            values["syn_threshold"] = syn
        values.update(overrides)
        return cls(**values)


_INT_FIELDS = {"top_k_testing", "top_k_repair", "shuffle_attempts", "parallelism", "seed",
               "category_count", "max_mutants_per_sentence"}


def _coerce(name: str, raw: str):
    raw = raw.strip()
    if name == "max_mutants_per_sentence" and raw.lower() in ("", "none", "unlimited"):
        return None
    try:
        return int(raw) if name in _INT_FIELDS else float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
