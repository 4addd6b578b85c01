"""Stage drivers behind the CLI: test a corpus, repair its issues, evaluate the repairs.

Each stage reads and writes plain JSONL so expensive backend calls can be replayed.
Sentences (or issues) are processed by a bounded thread pool; results are consumed in
input order so every output file is deterministic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence, TypeVar

from .backend import NerBackend, ResponseCache, predict
from .core import PipelineConfig, Sentence, TransformKind, tokenize
from .errors import NerMorphError
from .evaluation import (ConfusionCounts, HumanVerdict, Labeller, category_distribution, oracle_confusion,
                         oracle_verdicts, precision_table, repair_metrics)
from .filters import FilterVerdict, combined_verdict
from .mrcheck import SuspiciousIssue, TestInput, check
from .mutation import ALL_SCHEMES, MutantPair, generate_mutants
from .oracles import OracleSuite
from .repair import RepairResult, repair_attempted, repair_issue, repair_report

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


# -- corpus and JSONL helpers --------------------------------------------------------

def read_corpus(path: str | Path) -> list[Sentence]:
    """JSONL ``{"id", "text"}`` rows, or plain text with one sentence per line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    out = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if line.lstrip().startswith("{"):
            row = json.loads(line)
            out.append(tokenize(row["text"], str(row["id"])))
        else:
            out.append(tokenize(line.strip(), f"line{n}"))
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate sentence ids")
    return out


def corpus_digest(sentences: Iterable[Sentence]) -> str:
    h = hashlib.sha256()
    for s in sentences:
        h.update(f"{s.id}\x1f{s.text}\x1e".encode("utf-8"))
    return h.hexdigest()[:16]


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def ordered_map(fn: Callable[[T], R], items: Sequence[T], parallelism: int) -> Iterator[R]:
    """``map`` over a bounded pool, yielding results in input order."""
    if parallelism <= 1:
        yield from map(fn, items)
        return
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        yield from pool.map(fn, items)


class _Locked:
    def __init__(self, inner: Any, lock: threading.Lock):
        self._inner = inner
        self._lock = lock

    def __getattr__(self, name: str) -> Any:
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr

        def call(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)
        return call


def serialized(oracles: OracleSuite) -> OracleSuite:
    """Funnel every oracle call through one lock (for adapters that are not thread-safe)."""
    if not oracles.serial:
        return oracles
    lock = threading.Lock()
    return OracleSuite(*(_Locked(getattr(oracles, n), lock) for n in
                         ("masked_lm", "embedder", "phrase_sim", "pos_tagger", "naturalness", "parser")),
                       serial=True)


# -- manifest ----------------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    run_id: str
    stage: str
    config: dict
    backend: dict
    input_digest: str
    checkpoints: dict[str, int] = field(default_factory=dict)
    timestamps: dict[str, str] = field(default_factory=dict)

    def advance(self, name: str, value: int) -> None:
        if value < self.checkpoints.get(name, 0):
            raise ValueError(f"checkpoint {name} would decrease")
        self.checkpoints[name] = value

    def to_json(self) -> dict:
        return {"run_id": self.run_id, "stage": self.stage, "config": self.config, "backend": self.backend,
                "input_digest": self.input_digest, "checkpoints": self.checkpoints,
                "timestamps": self.timestamps}

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def new_manifest(stage: str, config: PipelineConfig, backend: NerBackend, input_digest: str) -> RunManifest:
    snapshot = config.to_dict()
    blob = json.dumps([stage, snapshot, backend.name, backend.version, input_digest], sort_keys=True)
    run_id = hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]
    return RunManifest(run_id, stage, snapshot, {"name": backend.name, "version": backend.version},
                       input_digest, timestamps={"started": _now()})


# -- test stage --------------------------------------------------------------------

@dataclass
class SentenceOutcome:
    sentence_id: str
    verdicts: list[tuple[MutantPair, FilterVerdict]] = field(default_factory=list)
    tested: int = 0
    issues: list[SuspiciousIssue] = field(default_factory=list)
    error: str | None = None


@dataclass
class TestRun:
    __test__ = False  # not a pytest class

    outcomes: list[SentenceOutcome]

    @property
    def issues(self) -> list[SuspiciousIssue]:
        return [i for o in self.outcomes for i in o.issues]

    @property
    def verdicts(self) -> list[tuple[MutantPair, FilterVerdict]]:
        return [v for o in self.outcomes for v in o.verdicts]

    def counts(self) -> dict[str, int]:
        verdicts = self.verdicts
        return {
            "sentences": len(self.outcomes),
            "failed_sentences": sum(o.error is not None for o in self.outcomes),
            "generated": len(verdicts),
            "filtered": sum(v.passed for _, v in verdicts),
            "tested": sum(o.tested for o in self.outcomes),
            "issues": len(self.issues),
        }


def run_tests_on_sentence(s: Sentence, backend: NerBackend, oracles: OracleSuite, config: PipelineConfig,
                  schemes: Sequence[TransformKind] = ALL_SCHEMES, cache: ResponseCache | None = None
                  ) -> SentenceOutcome:
    """Predict, mutate, filter, predict mutants and check the relations for one sentence."""
    out = SentenceOutcome(s.id)
    try:
        n_s = predict(backend, s, cache)
        pairs = generate_mutants(s, n_s, oracles, config, schemes)
        out.verdicts = [(pair, combined_verdict(pair, oracles, config)) for pair in pairs]
        for pair, verdict in out.verdicts:
            if not verdict.passed:
                continue
            n_m = predict(backend, pair.mutant, cache)
            out.tested += 1
            issue = check(TestInput(pair, n_s, n_m))
            if issue is not None:
                out.issues.append(issue)
    except NerMorphError as exc:
        log.warning("sentence %s skipped: %s", s.id, exc)
        out.error = f"{type(exc).__name__}: {exc}"
    return out


def run_tests_on_corpus(sentences: Sequence[Sentence], backend: NerBackend, oracles: OracleSuite,
                config: PipelineConfig, schemes: Sequence[TransformKind] = ALL_SCHEMES,
                cache: ResponseCache | None = None) -> TestRun:
    oracles = serialized(oracles)
    job = lambda s: run_tests_on_sentence(s, backend, oracles, config, schemes, cache)  # noqa: E731
    return TestRun(list(ordered_map(job, sentences, config.parallelism)))


def audit_rows(run: TestRun) -> Iterator[dict]:
    for pair, verdict in run.verdicts:
        yield {"pair": pair.digest, "kind": pair.kind.value, "sentence_id": pair.original.id,
               "mutant_id": pair.mutant.id, "mutant": pair.mutant.text, **verdict.to_json()}


# -- repair stage ------------------------------------------------------------------

@dataclass
class IssueRepair:
    issue: SuspiciousIssue
    result: RepairResult | None
    error: str | None = None

    def report(self) -> dict:
        if self.result is None:
            return {"issue_id": self.issue.id, "error": self.error}
        return repair_report(self.issue, self.result)


def repair_issues(issues: Sequence[SuspiciousIssue], backend: NerBackend, oracles: OracleSuite,
                  config: PipelineConfig, cache: ResponseCache | None = None) -> list[IssueRepair]:
    oracles = serialized(oracles)

    def job(issue: SuspiciousIssue) -> IssueRepair:
        try:
            return IssueRepair(issue, repair_issue(issue, backend, oracles, config, cache))
        except NerMorphError as exc:
            log.warning("issue %s not repaired: %s", issue.id, exc)
            return IssueRepair(issue, None, f"{type(exc).__name__}: {exc}")

    return list(ordered_map(job, issues, config.parallelism))


def repair_counts(repairs: Sequence[IssueRepair]) -> dict[str, int]:
    done = [r for r in repairs if r.result is not None]
    attempted = sum(
        repair_attempted(r.issue.test_input.output_original, r.result.r_s)
        or repair_attempted(r.issue.test_input.output_mutant, r.result.r_s2)
        for r in done)
    return {"issues": len(repairs), "repaired": len(done), "failed": len(repairs) - len(done),
            "attempted": attempted}


# -- evaluation stage --------------------------------------------------------------

def metrics_from_counts(counts: ConfusionCounts) -> dict:
    """Repair ratios; a ratio whose denominator is empty is reported as null."""
    out: dict[str, Any] = {"counts": counts.to_json(), "num_error": counts.num_error,
                           "num_correct": counts.num_correct}
    if counts.num_error and counts.num_correct:
        err2cor, cor2err, reduce = repair_metrics(counts)
        out.update(err2cor=err2cor, cor2err=cor2err, error_reduce=reduce)
    else:
        out.update(err2cor=None, cor2err=None, error_reduce=None)
        if counts.num_error:
            out["err2cor"] = counts.ft / counts.num_error
            out["error_reduce"] = (counts.ft - counts.tf) / counts.num_error
        if counts.num_correct:
            out["cor2err"] = counts.tf / counts.num_correct
    return out


def evaluate(reports: Sequence[Mapping], verdicts: Sequence[HumanVerdict] | None = None,
             truth: Labeller | None = None, counts: ConfusionCounts | None = None) -> dict:
    """Metrics report: per-scheme precision plus repair ratios when counts are available."""
    kinds = {r["issue_id"]: r.get("kind", "unknown") for r in reports}
    out: dict[str, Any] = {"issues": len(reports),
                           "repair_attempted": sum(bool(r.get("attempted_s") or r.get("attempted_s2"))
                                                   for r in reports)}
    if truth is not None:
        scored = [r for r in reports if "outcomes" in r]
        verdicts = oracle_verdicts(scored, truth)
        out["verdict_source"] = "ground-truth"
        if counts is None:
            counts = oracle_confusion(scored, truth)
    elif verdicts is not None:
        out["verdict_source"] = "human"
    if verdicts is not None:
        table = precision_table(kinds, verdicts) if verdicts else {}
        out["precision"] = {kind: row.to_json() for kind, row in table.items()}
        cats = [v.error_category for v in verdicts if v.error_category is not None]
        if cats:
            out["error_categories"] = {c.value: share for c, share in category_distribution(cats).items()}
    if counts is not None:
        out["repair"] = metrics_from_counts(counts)
    return out
