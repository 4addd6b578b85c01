"""Independent reference implementations shared by the repair and acceptance tests."""

import math
import random
from collections import Counter

import numpy as np

from nermorph.backend import DictionaryMockBackend
from nermorph.core import PipelineConfig, category
from nermorph.repair import RepairOutcome, Status, SuspiciousEntity

POOL = ["Alder", "Birch", "Cedar", "Dover", "Elgin", "Fenwick", "Garth", "Hollis", "Ives", "Jarrow"]
CANDIDATES = ["Kestrel", "Linden", "Marlow", "Norton", "Oakley", "Penrith", "Quarry", "Rowan", "Selby",
              "Thorne", "UNESCO", "ACME", "lower", "New York"]
FRAGMENTS = ["dium", "ster", "ton", "Ham", "ber"]
LABELS = ["PER", "ORG", "LOC", "MISC"]


def random_case(rng):
    n_words = rng.randint(1, 3)
    words = rng.sample(POOL, n_words)
    surface = " ".join(words)
    text = f"Reports said {surface} expanded quickly."
    span = (13, 13 + len(surface))
    pieces_script = {}
    split_word = None
    if rng.random() < 0.4:
        split_word = rng.choice(words)
        k = rng.randint(1, len(split_word) - 1)
        if n_words == 1:
            pieces_script[surface] = [split_word[:k], "##" + split_word[k:]]
    # only single-word entities take the scripted split; others use whole words
    pieces = []
    cursor = 0
    if pieces_script:
        head, tail = pieces_script[surface][0], pieces_script[surface][1][2:]
        pieces = [(head, 0, len(head), False), (tail, len(head), len(surface), True)]
    else:
        for w in words:
            start = surface.index(w, cursor)
            pieces.append((w, start, start + len(w), False))
            cursor = start + len(w)

    masked_lm, vectors, lexicon = {}, {}, {}
    dim = 4
    for w in POOL + CANDIDATES + FRAGMENTS:
        vectors[w] = [rng.uniform(-1, 1) for _ in range(dim)]
    for piece, a, b, is_sub in pieces:
        masked = text[:span[0] + a] + "[MASK]" + text[span[0] + b:]
        pool = FRAGMENTS if is_sub else CANDIDATES + [piece]
        cands = [[w, round(rng.uniform(0, 12), 3)] for w in rng.sample(pool, rng.randint(0, min(6, len(pool))))]
        masked_lm[masked] = cands
        for w, _ in cands:
            e_m = surface[:a] + w + surface[b:]
            for token in e_m.split():
                vectors.setdefault(token, [rng.uniform(-1, 1) for _ in range(dim)])
            roll = rng.random()
            if roll < 0.5:
                lexicon[e_m] = rng.choice(LABELS)
            elif roll < 0.7 and " " in e_m:
                lexicon[e_m.split()[0]] = rng.choice(LABELS)
    script = {"masked_lm": masked_lm, "embedder": vectors, "mlm_pieces": pieces_script}
    config = PipelineConfig(p_threshold=rng.choice([5.5, 3.0, 0.0]), s_threshold_repair=rng.choice([0.45, 0.0, -1.0]))
    return text, surface, span, pieces, script, DictionaryMockBackend(lexicon), config


def mean_vector(vectors, phrase):
    return np.mean([vectors[w] for w in phrase.split()], axis=0)


def brute_force(text, surface, span, pieces, script, backend, config):
    """Independent re-derivation of the vote for the first occurrence of ``surface``."""
    vectors = script["embedder"]
    h = mean_vector(vectors, surface)
    scores, logits = Counter(), Counter()
    for piece, a, b, is_sub in pieces:
        masked = text[:span[0] + a] + "[MASK]" + text[span[0] + b:]
        ranked = sorted(script["masked_lm"][masked], key=lambda c: (-c[1], c[0]))[:config.top_k_repair]
        for word, logit in ranked:
            if word == piece or " " in word:
                continue
            if word[0].isupper() != piece[0].isupper() or word.isupper() != piece.isupper():
                continue
            if logit < config.p_threshold:
                continue
            e_m = surface[:a] + word + surface[b:]
            h2 = mean_vector(vectors, e_m)
            sim = float(h @ h2) / (np.linalg.norm(h) * np.linalg.norm(h2))
            if sim < config.s_threshold_repair:
                continue
            mutant = text[:span[0]] + e_m + text[span[1]:]
            lo, hi = span[0], span[0] + len(e_m)
            best, best_cover = "NULL", 0
            for ent in sorted(backend.invoke(mutant), key=lambda e: e.start):
                cover = min(hi, ent.end) - max(lo, ent.start)
                if cover > best_cover:
                    best, best_cover = ent.label, cover
            if best_cover < 0.5 * (hi - lo):
                best = "NULL"
            f = logit * math.exp(2.5 * sim)
            if best == "NULL":
                f *= 0.2
            if is_sub:
                f *= 0.5
            scores[best] += f
            logits[best] += logit
    if not scores:
        return None, 0.0
    label = sorted(scores, key=lambda lab: (-scores[lab], -logits[lab], lab))[0]
    return label, scores[label], dict(scores)


def outcome(text, surface, start, p_score, label="ORG"):
    span = ((start, start + len(surface)),)
    entity = SuspiciousEntity(surface, Counter({label: 1}), Counter(), span, span)
    return RepairOutcome(entity, "s", span, Status.RELABELED, category(label), p_score)


def elimination_oracle(outcomes):
    """Index set of outcomes that no overlapping rival beats (full ties go to the earlier one)."""
    def key(i):
        o = outcomes[i]
        return (o.p_score, len(o.surface), -o.spans[0][0], -i)

    def clash(x, y):
        return x.spans[0][0] < y.spans[0][1] and y.spans[0][0] < x.spans[0][1]

    return {i for i, o in enumerate(outcomes)
            if not any(j != i and clash(o, r) and key(j) > key(i) for j, r in enumerate(outcomes))}
