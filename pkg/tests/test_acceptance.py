"""End-to-end acceptance checks, one marked test group per criterion.

Each group prints a PASS/FAIL line in the "acceptance criteria" summary section.
"""

import math
import random
import re
import time
from collections import Counter

import pytest

from nermorph import demo
from nermorph.backend import DictionaryMockBackend
from nermorph.cli import main
from nermorph.core import NerOutput, PipelineConfig, TransformKind, category, predictions_multiset, tokenize
from nermorph.errors import NoChange
from nermorph.evaluation import (ConfusionCounts, ErrorCategory, HumanVerdict, classify_change, precision_table,
                                 repair_metrics)
from nermorph.filters import combined_verdict
from nermorph.mutation import MutantPair, entity_shuffle_mutants, sentence_seed
from nermorph.oracles import Recorder, load_scripted_suite, recording_suite, scripted_oracle_suite
from nermorph.pipeline import read_jsonl, repair_issues, run_tests_on_corpus
from nermorph.repair import Status, evaluate_F, relabel, resolve_range_conflicts
from nermorph.syntax import RewriteRule, declarative_to_interrogative, parse_bracketed
from support import brute_force, elimination_oracle, outcome, random_case

criterion = pytest.mark.criterion


class Clock:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.2f}s, limit {self.limit}s"


# -- 1: metric golden values ---------------------------------------------------------

REPAIR_ROWS = [((286, 48, 192, 164), (53.9, 14.4, 40.4)),
               ((483, 117, 264, 285), (48.1, 19.5, 26.8)),
               ((456, 63, 275, 223), (55.2, 12.1, 42.6)),
               ((413, 85, 325, 149), (68.6, 17.1, 50.6))]
PRECISION_ROWS = [([(43, 50), (45, 50), (33, 36), (40, 50)], 86.6),
                  ([(41, 50), (45, 50), (45, 50), (39, 50)], 85.0),
                  ([(45, 50), (46, 50), (49, 50), (46, 50)], 93.0),
                  ([(48, 50), (48, 50), (45, 48), (44, 50)], 93.4)]


@criterion(1)
def test_metric_golden_values():
    with Clock(1.0):
        for counts, published in REPAIR_ROWS:
            got = repair_metrics(ConfusionCounts(*counts))
            for value, pct in zip(got, published):
                assert abs(100 * value - pct) <= 0.1
        for rows, overall in PRECISION_ROWS:
            kinds, verdicts = {}, []
            for scheme, (err, total) in zip(("token", "phrase", "structural", "shuffle"), rows):
                for i in range(total):
                    kinds[f"{scheme}{i}"] = scheme
                    verdicts.append(HumanVerdict(f"{scheme}{i}", i < err,
                                                 ErrorCategory.OMISSION if i < err else None))
            assert abs(100 * precision_table(kinds, verdicts)["overall"].precision - overall) <= 0.1


# -- 2: structural goldens -----------------------------------------------------------

@criterion(2)
@pytest.mark.parametrize("text,tree,expected,rule", [
    ("Twitter was the obvious solution.",
     "(S (NP (NNP Twitter)) (VP (VBD was) (NP (DT the) (JJ obvious) (NN solution))) (. .))",
     "Was twitter the obvious solution?", RewriteRule.BE_MAIN_VERB),
    ("He has faced floods.",
     "(S (NP (PRP He)) (VP (VBZ has) (VP (VBN faced) (NP (NNS floods)))) (. .))",
     "Has he faced floods?", RewriteRule.AUX_FRONTING),
])
def test_structural_goldens(text, tree, expected, rule):
    with Clock(1.0):
        s = tokenize(text)
        r = declarative_to_interrogative(s, parse_bracketed(tree, s))
        assert r.mutant_text == expected and r.rule_applied is rule


@criterion(2)
@pytest.mark.parametrize("text,tree,expected", [
    ("She eats a burger.", "(S (NP (PRP She)) (VP (VBZ eats) (NP (DT a) (NN burger))) (. .))",
     "Does she eat a burger?"),
    ("Doctors gave emergency care.", "(S (NP (NNS Doctors)) (VP (VBD gave) (NP (NN emergency) (NN care))) (. .))",
     "Did doctors give emergency care?"),
])
def test_auxiliary_inserted_question(text, tree, expected):
    with Clock(1.0):
        s = tokenize(text)
        r = declarative_to_interrogative(s, parse_bracketed(tree, s))
        assert r.rule_applied is RewriteRule.NORMAL_VERB_AUX_INSERT
        assert r.mutant_text == expected and r.mutant_text.endswith("?")


# -- 3: shuffle property suite -------------------------------------------------------

NAMES = {
    "PER": ["Ada Byron", "Bram Stoker", "Cleo Park", "Dev Patel", "Esme Varga", "Farid Khan"],
    "ORG": ["Acme Corp", "Bolt Labs", "Crane Group", "Delta Bank", "Ember Ltd"],
    "LOC": ["Oslo", "Lima", "Quito", "Perth", "Tunis", "Riga"],
    "MISC": ["Olympics", "Eurovision", "Diwali"],
}
FILLERS = [" met ", ", ", " and ", " visited ", " spoke with ", " near ", " before ", " then left for "]


def _planted(rng):
    """Random sentence of literal fillers around distinct entities; returns text, fillers, slots."""
    n = rng.randint(2, 6)
    labels = [rng.choice(list(NAMES)) for _ in range(n)]
    used = {lab: rng.sample(NAMES[lab], min(len(NAMES[lab]), labels.count(lab))) for lab in set(labels)}
    slots, taken = [], Counter()
    for lab in labels:
        if taken[lab] < len(used[lab]):
            slots.append((used[lab][taken[lab]], lab))
            taken[lab] += 1
    fillers = ["Reportedly "] + [rng.choice(FILLERS) for _ in range(len(slots) - 1)] + ["."]
    text = "".join(f + s for f, (s, _) in zip(fillers, slots)) + fillers[-1]
    return text, fillers, slots


def _read_slots(mutant, fillers, slots):
    """Parse ``mutant`` against the original skeleton; None if the literal text moved."""
    pool = {lab: [s for s, l in slots if l == lab] for _, lab in slots}
    pos, got = 0, []
    for i, (_, lab) in enumerate(slots):
        if not mutant.startswith(fillers[i], pos):
            return None
        pos += len(fillers[i])
        hit = [s for s in pool[lab] if mutant.startswith(s, pos)]
        if len(hit) != 1:
            return None
        got.append((hit[0], lab))
        pos += len(hit[0])
    return got if mutant[pos:] == fillers[-1] else None


@criterion(3)
def test_shuffle_property_suite():
    rng = random.Random(2024)
    config = PipelineConfig()
    violations, mutants = [], 0
    with Clock(30.0):
        for n in range(1000):
            text, fillers, slots = _planted(rng)
            backend = DictionaryMockBackend({s: lab for s, lab in slots})
            s = tokenize(text, f"p{n}")
            n_s = NerOutput(s.id, tuple(backend.lexicon_predictions(text)))
            assert [(p.surface, p.label) for p in n_s] == slots
            for pair in entity_shuffle_mutants(s, n_s, sentence_seed(config.seed, s.id), config):
                mutants += 1
                got = _read_slots(pair.mutant.text, fillers, slots)
                n_m = NerOutput(pair.mutant.id, tuple(backend.lexicon_predictions(pair.mutant.text)))
                ok = (got is not None and Counter(got) == Counter(slots) and got != slots
                      and predictions_multiset(n_m) == predictions_multiset(n_s)
                      and pair.mutant.text != text)
                if not ok:
                    violations.append(pair.mutant.text)
    assert mutants > 1000
    assert violations == []


# -- 4: MR soundness and completeness ----------------------------------------------

@pytest.fixture(scope="module")
def scripted_demo(tmp_path_factory):
    """The demo oracles recorded once, then replayed as a scripted suite."""
    recorder = Recorder()
    suite = recording_suite(demo.demo_oracle_suite(), recorder)
    sentences = demo.demo_corpus()
    for faulty in (False, True):
        run = run_tests_on_corpus(sentences, demo.demo_backend(faulty), suite, PipelineConfig())
        repair_issues(run.issues, demo.demo_backend(faulty), suite, PipelineConfig())
    path = tmp_path_factory.mktemp("script") / "oracles.jsonl"
    recorder.dump(path)
    return path


def _word_in(surface, text):
    return re.search(r"(?<!\w)" + re.escape(surface) + r"(?!\w)", text) is not None


@criterion(4)
def test_mr_soundness_and_completeness(scripted_demo):
    sentences = demo.demo_corpus()
    assert len(sentences) == 50
    with Clock(120.0):
        suite = load_scripted_suite(scripted_demo)
        clean = run_tests_on_corpus(sentences, demo.demo_backend(False), suite, PipelineConfig())
        faulty_backend = demo.demo_backend(True)
        faulty = run_tests_on_corpus(sentences, faulty_backend, suite, PipelineConfig())

    assert clean.counts()["tested"] > 0 and clean.issues == []
    assert all(o.error is None for o in clean.outcomes + faulty.outcomes)

    reported = {i.test_input.pair.digest: i for i in faulty.issues}
    fired_anywhere = set()
    required = 0
    # completeness: a fault firing on one side of a tested pair over a shared surface is reported
    for pair, verdict in faulty.verdicts:
        if not verdict.passed:
            continue
        on_s = {r.name for r in faulty_backend.fired_rules(pair.original.text)}
        on_m = {r.name for r in faulty_backend.fired_rules(pair.mutant.text)}
        fired_anywhere |= on_s | on_m
        for rule in faulty_backend.faults:
            if (rule.name in on_s) == (rule.name in on_m):
                continue
            shared = [x for x in rule.touched_surfaces
                      if _word_in(x, pair.original.text) and _word_in(x, pair.mutant.text)]
            if shared or pair.kind in (TransformKind.STRUCTURAL, TransformKind.ENTITY_SHUFFLE):
                required += 1
                assert pair.digest in reported, (rule.name, pair.mutant.text)
    assert fired_anywhere == {r.name for r in demo.demo_faults()}
    assert required >= len(fired_anywhere)

    # soundness: every issue traces to a fault that fired on one of its texts
    for issue in faulty.issues:
        pair = issue.test_input.pair
        names = {r.name for t in (pair.original.text, pair.mutant.text) for r in faulty_backend.fired_rules(t)}
        touched = {x for r in faulty_backend.faults if r.name in names for x in r.touched_surfaces}
        assert names, pair.mutant.text
        assert {d.surface for d in issue.disagreements} <= touched


# -- 5: relabel against a brute-force score table ----------------------------------

@criterion(5)
def test_relabel_oracle_equivalence():
    rng = random.Random(505)
    compared = decided = 0
    with Clock(60.0):
        for _ in range(250):
            text, surface, span, pieces, script, backend, config = random_case(rng)
            expected = brute_force(text, surface, span, pieces, script, backend, config)
            got = relabel(tokenize(text), surface, backend, scripted_oracle_suite(script), config)
            compared += 1
            if expected[0] is None:
                assert got.status is Status.ABSTAINED and got.relabeled is None
                continue
            decided += 1
            assert got.relabeled.label == expected[0]
            assert math.isclose(got.p_score, expected[1], rel_tol=1e-9)
            assert got.table.keys() == expected[2].keys()
            for label, score in expected[2].items():
                assert math.isclose(got.table[label], score, rel_tol=1e-9)
    assert compared >= 200 and decided >= 100


# -- 6: scoring function point values ----------------------------------------------

@criterion(6)
def test_score_point_values():
    config = PipelineConfig()
    assert evaluate_F(1.0, 0.0, False, False, config) == 1.0
    assert abs(evaluate_F(2.0, 1.0, True, False, config) - 4.8730) <= 1e-3
    assert abs(evaluate_F(5.5, 0.45, True, True, config) - 1.6941) <= 1e-3


# -- 7: range conflicts ------------------------------------------------------------

@criterion(7)
def test_range_conflict_golden():
    text = "Cricket South Africa named the squad."
    csa = outcome(text, "Cricket South Africa", 0, 0.911)
    sa = outcome(text, "South Africa", 8, 0.503, "LOC")
    for order in ([csa, sa], [sa, csa]):
        resolved = resolve_range_conflicts(order, tokenize(text))
        status = {o.surface: o.status for o in resolved}
        assert status == {"Cricket South Africa": Status.RELABELED, "South Africa": Status.DEPRECATED_BY_CONFLICT}


@criterion(7)
def test_range_conflicts_overlap_free():
    rng = random.Random(77)
    for _ in range(1000):
        outs = [outcome("", "x" * rng.randint(1, 10), rng.randint(0, 30), rng.choice([1.0, rng.random() * 10]))
                for _ in range(rng.randint(1, 8))]
        resolved = resolve_range_conflicts(outs)
        alive = [o for o in resolved if o.status is Status.RELABELED]
        assert all(not a.overlaps(b) for i, a in enumerate(alive) for b in alive[i + 1:])
        assert {i for i, o in enumerate(resolved) if o.status is Status.RELABELED} == elimination_oracle(outs)


# -- 8: worked-example repairs -----------------------------------------------------

@criterion(8)
def test_bbc_news_relabel():
    text = "BBC News is an operational business division of the BBC."
    tail = " is an operational business division of the BBC."
    suite = scripted_oracle_suite({
        "masked_lm": {"[MASK] News" + tail: [["CNN", 9.0], ["Fox", 8.0], ["the", 7.0], ["BBC", 6.8]],
                      "BBC [MASK]" + tail: [["Newspaper", 6.0], ["news", 8.5], ["Report", 2.0]]},
        "embedder": {"BBC": [1.0, 0.2, 0.0], "CNN": [0.9, 0.3, 0.1], "Fox": [0.8, 0.1, 0.3],
                     "News": [0.0, 1.0, 0.2], "Newspaper": [0.1, 0.9, 0.5]},
    })
    backend = DictionaryMockBackend({"CNN News": "ORG", "Fox News": "ORG", "BBC Newspaper": "MISC"})
    got = relabel(tokenize(text), "BBC News", backend, suite, PipelineConfig())
    assert got.status is Status.RELABELED and got.relabeled == category("ORG")
    assert got.table["ORG"] > got.table["MISC"]


@criterion(8)
def test_four_fix_patterns_end_to_end(scripted_demo):
    suite = load_scripted_suite(scripted_demo)
    backend = demo.demo_backend(True)
    issues = run_tests_on_corpus(demo.demo_corpus(), backend, suite, PipelineConfig()).issues
    truth = demo.demo_backend(False)
    fixed = set()
    for r in repair_issues(issues, backend, suite, PipelineConfig()):
        ti = r.issue.test_input
        for before, after, sentence in ((ti.output_original, r.result.r_s, ti.pair.original),
                                        (ti.output_mutant, r.result.r_s2, ti.pair.mutant)):
            if before == after:
                continue
            assert after == NerOutput(after.sentence_id, tuple(truth.lexicon_predictions(sentence.text)))
            for d in r.issue.disagreements:
                try:
                    fixed.add(classify_change(before, after, d.surface))
                except NoChange:
                    pass
    assert fixed == set(ErrorCategory)


# -- 9: determinism ----------------------------------------------------------------

@criterion(9)
def test_full_runs_are_byte_identical(scripted_demo, tmp_path):
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        common = ["--backend", "mock", "--faults", "demo", "--oracles", str(scripted_demo)]
        assert main(["test", "--corpus", "demo", "--seed", "13", "--out", str(d / "issues.jsonl"), *common]) == 0
        assert main(["repair", "--issues", str(d / "issues.jsonl"), "--out", str(d / "repairs.jsonl"), *common]) == 0
        outputs.append(((d / "issues.jsonl").read_bytes(), (d / "repairs.jsonl").read_bytes()))
    assert outputs[0] == outputs[1]
    assert outputs[0][0] and outputs[0][1]
    assert len(read_jsonl(tmp_path / "a" / "repairs.jsonl")) == len(read_jsonl(tmp_path / "a" / "issues.jsonl"))


# -- 10: filter boundaries ---------------------------------------------------------

def _token_pair(n, sim, nat_s, nat_m):
    original = tokenize(f"Prices stayed w{n} today.", f"f{n}")
    mutant = tokenize(f"Prices stayed r{n} today.", f"f{n}~m")
    pair = MutantPair(original, mutant, TransformKind.TOKEN_SUBST, (14, 14 + len(f"w{n}")), f"r{n}")
    script = {"embedder": {f"w{n}": [1.0, 0.0], f"r{n}": [sim, math.sqrt(1 - sim * sim)]},
              "naturalness": {original.text: nat_s, mutant.text: nat_m}}
    return pair, script


@criterion(10)
def test_filter_boundaries():
    config = PipelineConfig()
    pair, script = _token_pair(1, 0.65, 0.5, 0.5)
    assert combined_verdict(pair, scripted_oracle_suite(script), config).passed
    # drop of exactly the threshold, using values whose float difference is exact
    threshold = 0.25
    pair, script = _token_pair(2, 0.9, 0.75, 0.5)
    v = combined_verdict(pair, scripted_oracle_suite(script),
                         config.with_(syn_threshold={TransformKind.TOKEN_SUBST: threshold}))
    assert v.syntactic_delta == threshold and v.passed


@criterion(10)
def test_filter_monotonicity():
    rng = random.Random(10)
    base = PipelineConfig()
    for n in range(500):
        pair, script = _token_pair(n, rng.uniform(0.3, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.4, 1.0))
        suite = scripted_oracle_suite(script)
        s_lo, s_hi = sorted(rng.uniform(0.3, 1.0) for _ in range(2))
        e_lo, e_hi = sorted(rng.uniform(0.0, 0.3) for _ in range(2))
        strict = base.with_(s_threshold_testing=s_hi, syn_threshold={TransformKind.TOKEN_SUBST: e_lo})
        loose = base.with_(s_threshold_testing=s_lo, syn_threshold={TransformKind.TOKEN_SUBST: e_hi})
        if combined_verdict(pair, suite, strict).passed:
            assert combined_verdict(pair, suite, loose).passed
