"""Constituency trees and the declarative-to-interrogative rewrite.

Trees are read from and written to bracketed s-expressions::

    (S (NP (NNP Twitter)) (VP (VBD was) (NP (DT the) (JJ obvious) (NN solution))) (. .))

A preterminal such as ``(NNP Twitter)`` owns exactly one terminal child; terminals carry
the index of the sentence token they stand for.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field
from typing import Iterator

from .core import NerOutput, Sentence
from .errors import NoRewrite, TreeError

log = logging.getLogger(__name__)

_PTB_ESCAPES = {"-LRB-": "(", "-RRB-": ")", "-LSB-": "[", "-RSB-": "]", "-LCB-": "{", "-RCB-": "}"}
_BRACKET_TOKEN_RE = re.compile(r"\(|\)|[^\s()]+")


@dataclass(eq=False)
class Node:
    label: str
    children: list[Node] = field(default_factory=list)
    token_index: int | None = None
    parent: Node | None = field(default=None, repr=False)

    @property
    def is_terminal(self) -> bool:
        return self.token_index is not None

    @property
    def is_preterminal(self) -> bool:
        return len(self.children) == 1 and self.children[0].is_terminal

    @property
    def base_label(self) -> str:
        """Label without function tags or indices (``NP-SBJ-1`` -> ``NP``)."""
        if self.is_terminal or self.label.startswith("-") or not self.label:
            return self.label
        return re.split(r"[-=]", self.label, maxsplit=1)[0]

    @property
    def is_punctuation(self) -> bool:
        return not any(ch.isalpha() for ch in self.base_label)

    def preorder(self) -> Iterator[Node]:
        yield self
        for child in self.children:
            yield from child.preorder()

    def terminals(self) -> list[Node]:
        return [n for n in self.preorder() if n.is_terminal]

    def span(self) -> tuple[int, int]:
        """Half-open token-index range covered by this node."""
        leaves = self.terminals()
        return leaves[0].token_index, leaves[-1].token_index + 1

    def to_bracket(self) -> str:
        if self.is_terminal:
            return self.label
        return "(" + " ".join([self.label] + [c.to_bracket() for c in self.children]) + ")"


@dataclass(eq=False)
class ConstituencyTree:
    root: Node
    sentence: Sentence

    def __post_init__(self) -> None:
        leaves = self.root.terminals()
        words = [_PTB_ESCAPES.get(leaf.label, leaf.label) for leaf in leaves]
        if words != self.sentence.words:
            raise TreeError(f"tree yield {words} does not reproduce sentence tokens {self.sentence.words}")
        for node in self.root.preorder():
            if not node.is_terminal and not node.children:
                raise TreeError(f"non-terminal {node.label!r} has no children")

    def nodes(self) -> Iterator[Node]:
        return self.root.preorder()

    def char_span(self, node: Node) -> tuple[int, int]:
        first, last = node.span()
        return self.sentence.tokens[first].start, self.sentence.tokens[last - 1].end

    def text_of(self, node: Node) -> str:
        start, end = self.char_span(node)
        return self.sentence.text[start:end]

    def to_bracket(self) -> str:
        return self.root.to_bracket()


def parse_bracketed(text: str, sentence: Sentence) -> ConstituencyTree:
    """Read an s-expression tree and bind its terminals to ``sentence`` tokens."""
    tokens = _BRACKET_TOKEN_RE.findall(text)
    if not tokens:
        raise TreeError("empty tree")
    pos = 0
    counter = 0

    def read() -> Node:
        nonlocal pos, counter
        if tokens[pos] != "(":
            leaf = Node(tokens[pos], token_index=counter)
            counter += 1
            pos += 1
            return leaf
        pos += 1
        label = ""
        if pos < len(tokens) and tokens[pos] not in "()":
            label = tokens[pos]
            pos += 1
        node = Node(label)
        while pos < len(tokens) and tokens[pos] != ")":
            child = read()
            child.parent = node
            node.children.append(child)
        if pos >= len(tokens):
            raise TreeError("unbalanced parentheses")
        pos += 1
        return node

    try:
        root = read()
    except IndexError as exc:
        raise TreeError("truncated tree") from exc
    if pos != len(tokens):
        raise TreeError("trailing material after tree")
    # unwrap an unlabelled ROOT wrapper: "( (S ...))"
    while root.label in ("", "ROOT", "TOP") and len(root.children) == 1 and not root.children[0].is_terminal:
        root = root.children[0]
        root.parent = None
    return ConstituencyTree(root, sentence)


def find_minimal_np_nodes(tree: ConstituencyTree) -> list[Node]:
    """NP nodes with no NP below them, left to right."""
    out = []
    for node in tree.nodes():
        if node.is_terminal or node.base_label != "NP":
            continue
        if not any(d is not node and not d.is_terminal and d.base_label == "NP" for d in node.preorder()):
            out.append(node)
    return out


def _relevant_children(node: Node) -> list[Node]:
    return [c for c in node.children if not c.is_terminal and not c.is_punctuation]


def match_s_np_vp(tree: ConstituencyTree) -> tuple[Node, Node, Node] | None:
    """Top-most, left-most ``S -> NP VP`` match (punctuation children are skipped)."""
    for node in tree.nodes():
        if node.is_terminal or node.base_label != "S":
            continue
        kids = _relevant_children(node)
        if len(kids) >= 2 and kids[0].base_label == "NP" and kids[1].base_label == "VP":
            return node, kids[0], kids[1]
    return None


class RewriteRule(str, enum.Enum):
    BE_MAIN_VERB = "BE_MAIN_VERB"
    NORMAL_VERB_AUX_INSERT = "NORMAL_VERB_AUX_INSERT"
    AUX_FRONTING = "AUX_FRONTING"


@dataclass(frozen=True)
class RewriteResult:
    mutant_text: str
    rule_applied: RewriteRule
    moved_or_inserted: str


BE_FORMS = frozenset({"am", "is", "are", "was", "were"})
AUX_CANDIDATES = frozenset({"has", "have", "had", "do", "does", "did"})

_IRREGULAR_BASE = {
    "has": "have", "had": "have", "does": "do", "did": "do", "went": "go", "goes": "go",
    "ate": "eat", "said": "say", "says": "say", "made": "make", "took": "take", "gave": "give",
    "saw": "see", "came": "come", "got": "get", "knew": "know", "thought": "think",
    "told": "tell", "found": "find", "left": "leave", "felt": "feel", "kept": "keep",
    "brought": "bring", "bought": "buy", "began": "begin", "ran": "run", "won": "win",
    "wrote": "write", "spoke": "speak", "held": "hold", "met": "meet", "paid": "pay",
    "sold": "sell", "sent": "send", "built": "build", "led": "lead", "lost": "lose",
    "became": "become", "stood": "stand", "heard": "hear", "meant": "mean", "rose": "rise",
    "fell": "fall", "drove": "drive", "chose": "choose", "grew": "grow", "drew": "draw",
    "cried": "cry", "tried": "try", "added": "add", "put": "put", "set": "set", "cut": "cut", "hit": "hit",
}
# stems whose past form dropped a silent "e"
_E_RESTORE = ("rat", "cat", "gat", "lat", "nat", "pat", "vat", "iat", "uat", "iz", "is", "us", "uc", "ac",
              "ic", "rc", "nc", "iv", "av", "ov", "ir", "ur", "ag", "ang", "rg", "dg", "lv", "rv", "ut",
              "ud", "ot", "ps", "rs", "com", "tl", "bl", "dl", "gl", "kl", "pl", "zl")
# endings that keep their "e" even after a vowel pair
_E_RESTORE_AFTER_VOWELS = ("eas", "aus", "ais", "uir", "creat")
_VOWELS = "aeiou"


def _needs_silent_e(stem: str) -> bool:
    if stem.endswith(_E_RESTORE_AFTER_VOWELS):
        return True
    if len(stem) >= 3 and stem[-2] in _VOWELS and stem[-3] in _VOWELS:
        return False
    if stem.endswith(_E_RESTORE):
        return True
    # one-syllable consonant-vowel-consonant stems: closed, fined, scored
    syllables = len(re.findall(r"[aeiou]+", stem))
    return (syllables == 1 and len(stem) >= 3 and stem[-1] not in _VOWELS + "wxy"
            and stem[-2] in _VOWELS and stem[-3] not in _VOWELS)


def base_form(verb: str, tag: str) -> str:
    """Best-effort lemma of an inflected verb; wrong guesses are caught by the syntactic filter."""
    lower = verb.lower()
    if lower in _IRREGULAR_BASE:
        return _IRREGULAR_BASE[lower]
    if tag == "VBZ":
        if lower.endswith("ies") and len(lower) > 4:
            return lower[:-3] + "y"
        if lower.endswith(("ches", "shes", "sses", "xes", "zes", "oes")):
            return lower[:-2]
        if lower.endswith("s") and not lower.endswith("ss"):
            return lower[:-1]
        return lower
    if tag in ("VBD", "VBN") and lower.endswith("ed") and len(lower) > 3:
        if lower.endswith("ied"):
            return lower[:-3] + "y"
        stem = lower[:-2]
        if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in "lsfz":
            return stem[:-1]
        if lower.endswith("eed"):
            return lower[:-1]
        if _needs_silent_e(stem):
            return stem + "e"
        return stem
    return lower


def _aux_for(tag: str) -> str:
    if tag == "VBZ":
        return "Does"
    if tag == "VBD":
        return "Did"
    return "Do"


def _capitalize(word: str) -> str:
    return word[:1].upper() + word[1:]


def _inside_entity(sentence: Sentence, index: int, ner_output: NerOutput | None) -> bool:
    if ner_output is None:
        return False
    tok = sentence.tokens[index]
    return any(p.overlaps(tok.start, tok.end) for p in ner_output)


def declarative_to_interrogative(
    sentence: Sentence, tree: ConstituencyTree | None, ner_output: NerOutput | None = None
) -> RewriteResult:
    """Turn a declarative sentence ending in ``.`` into a yes/no question.

    Be-verbs and auxiliaries (including modals) are fronted; any other main verb gets a
    do-support auxiliary in front of the subject and is reduced to its base form.
    Raises :class:`NoRewrite` when the pattern is absent.
    """
    if tree is None:
        raise NoRewrite("no parse tree")
    if not sentence.tokens or sentence.tokens[-1].surface != ".":
        raise NoRewrite("sentence does not end with '.'")
    match = match_s_np_vp(tree)
    if match is None:
        raise NoRewrite("no S -> NP VP pattern")
    _, np_node, vp_node = match

    verb_node = next(
        (c for c in vp_node.children
         if c.is_preterminal and (c.base_label.startswith("VB") or c.base_label == "MD")),
        None,
    )
    if verb_node is None:
        raise NoRewrite("VP has no verb child")
    subj_first, subj_end = np_node.span()
    verb_index = verb_node.children[0].token_index
    if verb_index < subj_end:
        raise NoRewrite("verb precedes the end of the subject")
    if _inside_entity(sentence, verb_index, ner_output):
        raise NoRewrite("verb lies inside a predicted entity")
    verb = sentence.tokens[verb_index].surface
    if not verb.isalpha():
        raise NoRewrite(f"cannot rewrite verb {verb!r}")

    tag = verb_node.base_label
    lower = verb.lower()
    after_verb = vp_node.children[vp_node.children.index(verb_node) + 1:]
    has_vp_complement = any(c.base_label == "VP" for c in after_verb)
    if tag == "MD":
        rule = RewriteRule.AUX_FRONTING
    elif lower in BE_FORMS:
        rule = RewriteRule.AUX_FRONTING if has_vp_complement else RewriteRule.BE_MAIN_VERB
    elif lower in AUX_CANDIDATES and has_vp_complement:
        rule = RewriteRule.AUX_FRONTING
    else:
        rule = RewriteRule.NORMAL_VERB_AUX_INSERT

    n = len(sentence.tokens)
    words = sentence.words
    gaps = [sentence.gap_before(i) for i in range(n)]
    # each entry is (surface, gap before it)
    seq: list[tuple[str, str]] = [(words[i], gaps[i]) for i in range(subj_first)]
    if rule is RewriteRule.NORMAL_VERB_AUX_INSERT:
        fronted = _aux_for(tag)
    else:
        fronted = verb
    seq.append((fronted, gaps[subj_first]))
    for i in range(subj_first, n):
        gap = " " if i == subj_first else gaps[i]
        if i == verb_index:
            if rule is RewriteRule.NORMAL_VERB_AUX_INSERT:
                seq.append((base_form(verb, tag), gap))
            continue
        seq.append((words[i], gap))

    if subj_first == 0:
        seq[0] = (_capitalize(seq[0][0]), seq[0][1])
        old_first = words[0]
        keep_case = (
            old_first == "I"
            or (len(old_first) > 1 and old_first.isupper())
            or _inside_entity(sentence, 0, ner_output)
        )
        if not keep_case:
            seq[1] = (old_first[:1].lower() + old_first[1:], seq[1][1])
    last_surface, last_gap = seq[-1]
    seq[-1] = ("?", last_gap)
    trailing = sentence.text[sentence.tokens[-1].end:]
    mutant = "".join(gap + word for word, gap in seq) + trailing
    return RewriteResult(mutant, rule, seq[subj_first][0])
