"""Randomized invariant checks behind ``forge selfcheck``.

The oracles here are deliberately naive (subsequence enumeration, exhaustive
assignment) so they share no code with the paths they check.
"""
from __future__ import annotations

import itertools
import random

import numpy as np

from .align import AnnotatedDocument, MentionAnnotation, RelationTripletAnnotation
from .kernels import (encode_pair, greedy_assignment, greedy_assignment_numpy, lcs_length,
                      lcs_length_numpy)
from .linearize import parse_and_validate, project, serialize
from .metrics import carb_scores, rouge_l_f1, triplet_score_matrix
from .ontology import EntityProfile

WORDS = ["atp", "tour", "2023", "tennis", "city", "berlin", "club", "of", "the", "open",
         "men", "s", "circuit", "fc", "barcelona", "camp", "nou", "home", "venue"]


def brute_force_lcs(a, b) -> int:
    """Longest common subsequence by enumerating subsequences of the shorter list."""
    if len(a) > len(b):
        a, b = b, a
    for size in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), size):
            it = iter(b)
            if all(any(x == y for y in it) for x in (a[i] for i in idx)):
                return size
    return 0


def brute_force_rouge_f1(cand, ref) -> float:
    if not cand or not ref:
        return 0.0
    lcs = brute_force_lcs(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


def optimal_assignment_total(scores: np.ndarray) -> float:
    """Best total score over all one-to-one partial assignments (exhaustive)."""
    n, m = scores.shape
    if n == 0 or m == 0:
        return 0.0
    best = 0.0
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            best = max(best, sum(max(scores[i, c], 0.0) for i, c in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n), m):
            best = max(best, sum(max(scores[r, j], 0.0) for j, r in enumerate(rows)))
    return best


def greedy_total(scores: np.ndarray) -> float:
    _, col_to_row = greedy_assignment(scores, 0.0)
    return float(sum(scores[r, j] for j, r in enumerate(col_to_row) if r >= 0))


def random_tokens(rng: random.Random, max_len: int = 8, vocab: int = 6):
    return [rng.choice(WORDS[:vocab]) for _ in range(rng.randint(0, max_len))]


def random_text(rng, lo=1, hi=3):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def random_document(rng: random.Random, max_mentions: int = 6, doc_id: str = "d") -> AnnotatedDocument:
    """A synthetic, internally consistent annotated document."""
    n = rng.randint(0, max_mentions)
    pieces, mentions, pos = [], [], 0
    pool = [f"Q{rng.randint(1, 12)}" for _ in range(n)]
    for i in range(n):
        filler = random_text(rng, 0, 2) + " "
        pieces.append(filler)
        pos += len(filler)
        surface = random_text(rng).title() + ("é" if rng.random() < 0.2 else "")
        qid = pool[i]
        ntypes = rng.randint(0, 2)
        profile = EntityProfile(
            qid=qid,
            title=random_text(rng).title(),
            types=[random_text(rng, 1, 2) for _ in range(ntypes)],
            type_qids=[f"Q{100 + rng.randint(0, 5)}" for _ in range(ntypes)],
            description=random_text(rng, 1, 4) if rng.random() < 0.7 else None,
            aliases=[random_text(rng, 1, 2) for _ in range(rng.randint(0, 2))],
        )
        mentions.append(MentionAnnotation((pos, pos + len(surface)), surface, profile))
        pieces.append(surface)
        pos += len(surface)
    pieces.append(" end.")
    triplets = []
    for h in range(n):
        for t in range(n):
            if h != t and rng.random() < 0.25:
                triplets.append(RelationTripletAnnotation(
                    h, t, list(dict.fromkeys(random_text(rng, 1, 2) for _ in range(rng.randint(1, 2))))))
    return AnnotatedDocument(doc_id, "".join(pieces), mentions, triplets)


def run_selfcheck(seed: int = 0, instances: int = 2000):
    rng = random.Random(seed)
    results = []

    bad = 0
    for _ in range(instances):
        a, b = random_tokens(rng), random_tokens(rng)
        if abs(rouge_l_f1(a, b) - brute_force_rouge_f1(a, b)) > 1e-12:
            bad += 1
    results.append(("rouge-l vs brute-force LCS", bad == 0, f"{bad} mismatches / {instances}"))

    bad = 0
    for _ in range(instances):
        a, b = encode_pair(random_tokens(rng, 12), random_tokens(rng, 12))
        rows, cols = rng.randint(0, 5), rng.randint(0, 5)
        # coarse rounding produces many ties, which exercises the tie-break order
        s = np.round(np.array([[rng.random() for _ in range(cols)] for _ in range(rows)]), 1)
        s = s.reshape(rows, cols)
        if lcs_length(a, b) != lcs_length_numpy(a, b):
            bad += 1
        if not all(np.array_equal(x, y) for x, y in
                              zip(greedy_assignment(s), greedy_assignment_numpy(s))):
            bad += 1
    results.append(("numba kernels vs numpy kernels", bad == 0, f"{bad} mismatches"))

    bad = 0
    for i in range(max(1, instances // 2)):
        doc = random_document(rng, doc_id=f"r{i}")
        outcome = parse_and_validate(serialize(doc))
        if not outcome.ok or outcome.target != project(doc):
            bad += 1
    results.append(("serialize/parse round trip", bad == 0, f"{bad} failures"))

    deviations = 0
    checked = 0
    for _ in range(max(1, instances // 4)):
        gold = [tuple(random_text(rng, 1, 2) for _ in range(3)) for _ in range(rng.randint(0, 4))]
        pred = [tuple(random_text(rng, 1, 2) for _ in range(3)) for _ in range(rng.randint(0, 4))]
        scores = triplet_score_matrix(pred, gold)
        checked += 1
        if abs(greedy_total(scores) - optimal_assignment_total(scores)) > 1e-9:
            deviations += 1
        carb_scores(pred, gold)
    # Greedy is the CaRB recall rule and is not optimal in general; deviations are reported.
    results.append(("greedy vs optimal recall assignment (random <=4x4)", True,
                    f"{deviations} deviations / {checked} (informational)"))
    return results
