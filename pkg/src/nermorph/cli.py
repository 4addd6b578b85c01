"""Command line: ``nermorph test | repair | eval``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import demo
from .backend import (DictionaryMockBackend, EndpointConfig, NerBackend, ResponseCache, load_faults,
                      remote_adapter)
from .core import PipelineConfig, TransformKind, tokenize
from .errors import NerMorphError
from .evaluation import ConfusionCounts, read_verdicts
from .mrcheck import SuspiciousIssue
from .mutation import ALL_SCHEMES
from .oracles import OracleSuite, Recorder, load_scripted_suite, recording_suite
from .pipeline import (audit_rows, corpus_digest, evaluate, new_manifest, read_corpus, read_jsonl,
                       repair_counts, repair_issues, run_tests_on_corpus, write_jsonl, _now)

log = logging.getLogger("nermorph")

MOCK_BACKENDS = ("mock",)


def _config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "parallelism", None) is not None:
        overrides["parallelism"] = args.parallelism
    if getattr(args, "max_mutants_per_sentence", None) is not None:
        overrides["max_mutants_per_sentence"] = args.max_mutants_per_sentence
    if args.config:
        return PipelineConfig.from_ini(args.config, **overrides)
    return PipelineConfig(**overrides)


def _backend(args: argparse.Namespace) -> NerBackend:
    if args.backend in MOCK_BACKENDS:
        if args.lexicon:
            lexicon = json.loads(Path(args.lexicon).read_text(encoding="utf-8"))
        else:
            lexicon = demo.demo_data()["lexicon"]
        if args.faults == "demo":
            faults = demo.demo_faults()
        elif args.faults:
            faults = load_faults(args.faults)
        else:
            faults = []
        return DictionaryMockBackend(lexicon, faults)
    return remote_adapter(EndpointConfig.from_env(args.backend, args.provider))


def _oracles(args: argparse.Namespace) -> tuple[OracleSuite, Recorder | None]:
    suite = demo.demo_oracle_suite() if args.oracles == "demo" else load_scripted_suite(args.oracles)
    if args.record:
        recorder = Recorder()
        return recording_suite(suite, recorder), recorder
    return suite, None


def _cache(args: argparse.Namespace, default: Path) -> ResponseCache:
    if args.cache == "none":
        return ResponseCache()
    return ResponseCache(args.cache or default)


def _schemes(raw: str | None) -> tuple[TransformKind, ...]:
    if not raw:
        return ALL_SCHEMES
    return tuple(TransformKind.parse(part.strip()) for part in raw.split(",") if part.strip())


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def cmd_test(args: argparse.Namespace) -> int:
    config = _config(args)
    sentences = demo.demo_corpus() if args.corpus == "demo" else read_corpus(args.corpus)
    backend = _backend(args)
    oracles, recorder = _oracles(args)
    out = Path(args.out)
    cache = _cache(args, _sibling(out, ".cache.jsonl"))
    manifest = new_manifest("test", config, backend, corpus_digest(sentences))
    manifest.advance("sentences", len(sentences))

    run = run_tests_on_corpus(sentences, backend, oracles, config, _schemes(args.schemes), cache)
    counts = run.counts()
    for name in ("generated", "filtered", "tested", "issues"):
        manifest.advance(name, counts[name])
    write_jsonl(out, (issue.to_json() for issue in run.issues))
    write_jsonl(args.audit or _sibling(out, ".audit.jsonl"), audit_rows(run))
    if recorder is not None:
        recorder.dump(args.record)
    manifest.timestamps["finished"] = _now()
    manifest.write(args.manifest or _sibling(out, ".manifest.json"))
    print(json.dumps(counts, sort_keys=True))
    return 0


def cmd_repair(args: argparse.Namespace) -> int:
    config = _config(args)
    issues = [SuspiciousIssue.from_json(raw) for raw in read_jsonl(args.issues)]
    backend = _backend(args)
    oracles, recorder = _oracles(args)
    out = Path(args.out)
    cache = _cache(args, _sibling(out, ".cache.jsonl"))
    digest = corpus_digest(tokenize(i.test_input.pair.mutant.text, i.id) for i in issues)
    manifest = new_manifest("repair", config, backend, digest)

    repairs = repair_issues(issues, backend, oracles, config, cache)
    counts = repair_counts(repairs)
    for name in ("issues", "repaired", "attempted"):
        manifest.advance(name, counts[name])
    write_jsonl(out, (r.report() for r in repairs))
    if recorder is not None:
        recorder.dump(args.record)
    manifest.timestamps["finished"] = _now()
    manifest.write(args.manifest or _sibling(out, ".manifest.json"))
    print(json.dumps(counts, sort_keys=True))
    return 1 if repairs and counts["repaired"] == 0 else 0


def _truth(path: str):
    lexicon = demo.demo_data()["lexicon"] if path == "demo" else json.loads(Path(path).read_text(encoding="utf-8"))
    return DictionaryMockBackend(lexicon).lexicon_predictions


def cmd_eval(args: argparse.Namespace) -> int:
    reports = read_jsonl(args.repairs)
    counts = None
    if args.counts:
        raw = json.loads(Path(args.counts).read_text(encoding="utf-8"))
        counts = ConfusionCounts(**{k: int(raw[k]) for k in ("tt", "tf", "ft", "ff")})
    verdicts = read_verdicts(args.verdicts) if args.verdicts else None
    truth = _truth(args.ground_truth) if args.ground_truth else None
    metrics = evaluate(reports, verdicts=verdicts, truth=truth, counts=counts)
    Path(args.out).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", required=True, help="'mock' or the name of a remote endpoint")
    p.add_argument("--provider", help="remote provider (azure, aws, ...); defaults to the backend name")
    p.add_argument("--lexicon", help="JSON surface->label map for the mock (default: bundled demo lexicon)")
    p.add_argument("--faults", help="JSON list of fault rules for the mock, or 'demo'")
    p.add_argument("--oracles", default="demo", help="'demo' or a scripted-oracle JSONL file")
    p.add_argument("--record", help="write every oracle query and response to this JSONL file")
    p.add_argument("--cache", help="response cache path, or 'none' (default: next to --out)")
    p.add_argument("--config", help="INI file of pipeline settings")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--manifest", help="manifest path (default: next to --out)")
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nermorph", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="generate mutants and report suspicious issues")
    p.add_argument("--corpus", required=True, help="JSONL or plain-text corpus, or 'demo'")
    p.add_argument("--schemes", help="comma list of token,phrase,structural,shuffle")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-mutants-per-sentence", type=int)
    p.add_argument("--audit", help="filter audit log path (default: next to --out)")
    _add_common(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("repair", help="repair the issues of a test run")
    p.add_argument("--issues", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("eval", help="compute precision and repair metrics")
    p.add_argument("--repairs", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--verdicts", help="CSV issue_id,is_erroneous,error_category,annotator")
    group.add_argument("--ground-truth", help="JSON lexicon of the true labels, or 'demo'")
    p.add_argument("--counts", help="JSON with tt, tf, ft, ff transition counts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, NerMorphError, ValueError) as exc:
        print(f"nermorph: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
