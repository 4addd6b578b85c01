import difflib
import itertools
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from nermorph.core import NerOutput, NerPrediction, PipelineConfig, TransformKind, find_occurrences, tokenize
from nermorph.mutation import (MutantPair, entity_shuffle_mutants, generate_mutants, phrase_level_mutants,
                               sentence_seed, structural_mutants, token_level_mutants)
from nermorph.oracles import scripted_oracle_suite
from nermorph.syntax import parse_bracketed

PAUL = "Sir Paul's command of the stage is so casual."
PAUL_TAGS = ["NNP", "NNP", "POS", "POS", "NN", "IN", "DT", "NN", "VBZ", "RB", "JJ", "."]


def _output(text, entities):
    preds = []
    for surface, label in entities:
        for start, end in find_occurrences(surface, text):
            preds.append(NerPrediction(start, end, surface, label))
    return NerOutput("s", tuple(preds))


def _paul_suite(candidates):
    tags = {PAUL: PAUL_TAGS}
    for word, _ in candidates:
        tags[PAUL.replace("casual", word)] = PAUL_TAGS
    return scripted_oracle_suite({
        "pos_tagger": tags,
        "masked_lm": {"Sir Paul's command of the stage is so [MASK].": candidates,
                      "Sir Paul's command of the stage [MASK] so casual.": []},
    })


def test_token_mutants_keep_entities():
    s = tokenize(PAUL, "s")
    n_s = _output(PAUL, [("Paul", "PER")])
    suite = _paul_suite([["relaxed", 9.0], ["effortless", 8.0], ["casual", 7.5]])
    pairs = token_level_mutants(s, n_s, suite, PipelineConfig())
    assert [p.replacement for p in pairs] == ["relaxed", "effortless"]
    assert all("Paul" in p.mutant.text and p.kind is TransformKind.TOKEN_SUBST for p in pairs)
    assert pairs[0].mutant.text == "Sir Paul's command of the stage is so relaxed."


def test_token_mutants_require_same_coarse_tag():
    s = tokenize(PAUL, "s")
    suite = _paul_suite([["relaxed", 9.0], ["quickly", 8.0]])
    suite.pos_tagger._script.table["pos_tagger"][PAUL.replace("casual", "quickly")] = PAUL_TAGS[:10] + ["RB", "."]
    pairs = token_level_mutants(s, _output(PAUL, [("Paul", "PER")]), suite, PipelineConfig())
    assert [p.replacement for p in pairs] == ["relaxed"]


def test_token_mutants_skip_verbs_inside_entities():
    text = "Spirited Away won."
    s = tokenize(text, "s")
    suite = scripted_oracle_suite({"pos_tagger": {text: ["VBN", "RB", "VBD", "."]},
                                   "masked_lm": {"Spirited Away [MASK].": []}})
    pairs = token_level_mutants(s, _output(text, [("Spirited Away", "MISC")]), suite, PipelineConfig())
    assert pairs == []
    suite = scripted_oracle_suite({"pos_tagger": {"Spirited Away.": ["VBN", "RB", "."]}})
    assert token_level_mutants(tokenize("Spirited Away.", "s"), _output("Spirited Away.", [("Spirited Away", "MISC")]),
                               suite, PipelineConfig()) == []


CARE = "Doctors gave emergency care to Alice."
CARE_TREE = ("(S (NP (NNS Doctors)) (VP (VBD gave) (NP (NN emergency) (NN care)) "
             "(PP (TO to) (NP (NNP Alice)))) (. .))")


def test_phrase_mutants():
    s = tokenize(CARE, "s")
    tree = parse_bracketed(CARE_TREE, s)
    suite = scripted_oracle_suite({"phrase_sim": {"Doctors": ["Nurses"],
                                                  "emergency care": ["medical care", "emergency care", " "]}})
    pairs = phrase_level_mutants(s, _output(CARE, [("Alice", "PER")]), tree, suite, PipelineConfig())
    assert [p.mutant.text for p in pairs] == ["Nurses gave emergency care to Alice.",
                                              "Doctors gave medical care to Alice."]
    assert pairs[1].replaced_text == "emergency care" and pairs[1].mutant_span == (13, 25)


def test_phrase_mutants_protect_entities():
    text = "Alice met Bob."
    s = tokenize(text, "s")
    tree = parse_bracketed("(S (NP (NNP Alice)) (VP (VBD met) (NP (NNP Bob))) (. .))", s)
    suite = scripted_oracle_suite({"phrase_sim": {}})
    assert phrase_level_mutants(s, _output(text, [("Alice", "PER"), ("Bob", "PER")]), tree, suite,
                                PipelineConfig()) == []


def test_structural_mutants():
    s = tokenize("He has faced floods.", "s")
    tree = parse_bracketed("(S (NP (PRP He)) (VP (VBZ has) (VP (VBN faced) (NP (NNS floods)))) (. .))", s)
    (pair,) = structural_mutants(s, NerOutput("s"), tree)
    assert pair.kind is TransformKind.STRUCTURAL and pair.mutant.text == "Has he faced floods?"
    assert pair.detail[1] == "Has"
    s = tokenize("Twitter was the obvious solution.", "t")
    tree = parse_bracketed("(S (NP (NNP Twitter)) (VP (VBD was) (NP (DT the) (JJ obvious) (NN solution))) (. .))", s)
    assert [p.mutant.text for p in structural_mutants(s, NerOutput("t"), tree)] == ["Was twitter the obvious solution?"]
    assert structural_mutants(tokenize("Stop.", "u"), NerOutput("u"), None) == []


MUSIC = ("Spotify, Apple Music, and Deezer reported streams for Ed Sheeran, Drake, and Taylor Swift.")
MUSIC_ENTITIES = [("Spotify", "ORG"), ("Apple Music", "ORG"), ("Deezer", "ORG"),
                  ("Ed Sheeran", "PER"), ("Drake", "PER"), ("Taylor Swift", "PER")]


def test_shuffle_worked_example():
    s = tokenize(MUSIC, "m")
    n_s = _output(MUSIC, MUSIC_ENTITIES)
    pairs = entity_shuffle_mutants(s, n_s, 0, PipelineConfig(), exhaustive=True)
    texts = {p.mutant.text for p in pairs}
    assert ("Apple Music, Spotify, and Deezer reported streams for Ed Sheeran, Taylor Swift, and Drake."
            in texts)
    assert len(texts) == len(pairs) == 6 * 6 - 1


def test_shuffle_needs_two_of_a_category():
    text = "Alice joined Acme."
    assert entity_shuffle_mutants(tokenize(text), _output(text, [("Alice", "PER"), ("Acme", "ORG")]), 0,
                                  PipelineConfig()) == []


def test_shuffle_three_entities_exhaustive():
    text = "Spotify, Apple Music, and Deezer grew."
    n_s = _output(text, MUSIC_ENTITIES[:3])
    pairs = entity_shuffle_mutants(tokenize(text), n_s, 0, PipelineConfig(), exhaustive=True)
    # brute force: every ordering of the three surfaces except the original one
    surfaces = ["Spotify", "Apple Music", "Deezer"]
    expected = {f"{a}, {b}, and {c} grew." for a, b, c in itertools.permutations(surfaces)} - {text}
    assert {p.mutant.text for p in pairs} == expected and len(pairs) == 5


def test_shuffle_skips_repeated_surfaces():
    text = "Paris and Paris."
    n_s = _output(text, [("Paris", "LOC")])
    assert entity_shuffle_mutants(tokenize(text), n_s, 0, PipelineConfig(), exhaustive=True) == []


def test_shuffle_determinism():
    s = tokenize(MUSIC, "m")
    n_s = _output(MUSIC, MUSIC_ENTITIES)
    seed = sentence_seed(7, "m")
    a = entity_shuffle_mutants(s, n_s, seed, PipelineConfig())
    b = entity_shuffle_mutants(s, n_s, seed, PipelineConfig())
    assert [p.mutant.text for p in a] == [p.mutant.text for p in b]
    assert 1 <= len(a) <= 3
    assert sentence_seed(7, "m") != sentence_seed(8, "m") != sentence_seed(7, "n")


def _single_edit(original, mutant):
    ops = [op for op in difflib.SequenceMatcher(a=original, b=mutant, autojunk=False).get_opcodes()
           if op[0] != "equal"]
    if not ops:
        return False
    lo, hi = ops[0][1], ops[-1][2]
    lo2, hi2 = ops[0][3], ops[-1][4]
    return original[:lo] + mutant[lo2:hi2] + original[hi:] == mutant


@given(st.sampled_from(["relaxed", "effortless", "calm", "easy", "informal"]))
def test_substitution_is_a_single_edit(word):
    s = tokenize(PAUL, "s")
    suite = _paul_suite([[word, 9.0]])
    (pair,) = token_level_mutants(s, _output(PAUL, [("Paul", "PER")]), suite, PipelineConfig())
    assert _single_edit(PAUL, pair.mutant.text)
    start, end = pair.span
    assert pair.mutant.text[:start] == PAUL[:start] and pair.mutant.text[pair.mutant_span[1]:] == PAUL[end:]


def test_generate_mutants_routing_and_cap():
    s = tokenize(CARE, "s")
    tags = ["NNS", "VBD", "NN", "NN", "TO", "NNP", "."]
    suite = scripted_oracle_suite({
        "parser": {CARE: CARE_TREE},
        "pos_tagger": {CARE: tags, CARE.replace("gave", "offered"): tags},
        "masked_lm": {"Doctors [MASK] emergency care to Alice.": [["offered", 7.0]]},
        "phrase_sim": {"Doctors": [], "emergency care": ["medical care"]},
    })
    n_s = _output(CARE, [("Alice", "PER")])
    pairs = generate_mutants(s, n_s, suite, PipelineConfig())
    assert [p.kind.value for p in pairs] == ["token", "phrase", "structural"]
    assert pairs[2].mutant.text == "Did doctors give emergency care to Alice?"
    assert generate_mutants(s, n_s, suite, PipelineConfig(max_mutants_per_sentence=1)) == pairs[:1]
    assert generate_mutants(s, n_s, suite, PipelineConfig()) == pairs


def test_mutant_pair_json_round_trip():
    s = tokenize(MUSIC, "m")
    for pair in entity_shuffle_mutants(s, _output(MUSIC, MUSIC_ENTITIES), 1, PipelineConfig()):
        assert MutantPair.from_json(pair.to_json()) == pair
    with pytest.raises(ValueError):
        MutantPair(s, s, TransformKind.STRUCTURAL)
