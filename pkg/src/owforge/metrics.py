"""Per-sample scoring of the six extraction subtasks.

Every scorer returns a :class:`TaskScore`: a credit in [0, 1] for each
predicted item and each gold item. Precision and recall are mean credits, so
sample-level and corpus-level (micro) numbers come out of the same structure.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .align import AnnotatedDocument
from .kernels import encode_pair, greedy_assignment, lcs_length
from .linearize import TargetObject, project

_ALNUM = re.compile(r"[^\W_]+")
_WS = re.compile(r"\s+")


def tokenize(text: str | None) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    if not text:
        return []
    return _ALNUM.findall(text.lower())


def rouge_l(candidate: list[str], reference: list[str]) -> tuple[float, float, float]:
    """ROUGE-L precision, recall and F1 between two token lists."""
    if not candidate or not reference:
        return 0.0, 0.0, 0.0
    if candidate == reference:
        return 1.0, 1.0, 1.0
    lcs = lcs_length(*encode_pair(candidate, reference))
    if lcs == 0:
        return 0.0, 0.0, 0.0
    # 2L/(m+n) is the harmonic mean of L/m and L/n with a single rounding
    return lcs / len(candidate), lcs / len(reference), 2 * lcs / (len(candidate) + len(reference))


def rouge_l_f1(candidate: list[str], reference: list[str]) -> float:
    return rouge_l(candidate, reference)[2]


def f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class TaskScore:
    pred_credit: list[float] = field(default_factory=list)
    gold_credit: list[float] = field(default_factory=list)
    gold_owners: list[tuple[int, ...]] = field(default_factory=list)
    invalid: bool = False

    def prf(self) -> tuple[float, float, float]:
        """Precision, recall, F1. Nothing predicted for nothing expected counts as perfect."""
        if self.invalid:
            return 0.0, 0.0, 0.0
        if not self.pred_credit and not self.gold_credit:
            return 1.0, 1.0, 1.0
        p = sum(self.pred_credit) / len(self.pred_credit) if self.pred_credit else 0.0
        r = sum(self.gold_credit) / len(self.gold_credit) if self.gold_credit else 0.0
        return p, r, f1(p, r)

    @property
    def mean(self) -> float | None:
        """Average gold credit; used for description generation."""
        if not self.gold_credit:
            return None
        return sum(self.gold_credit) / len(self.gold_credit)

    @classmethod
    def merge(cls, scores) -> "TaskScore":
        out = cls()
        for s in scores:
            out.pred_credit.extend(s.pred_credit)
            out.gold_credit.extend(s.gold_credit)
            out.gold_owners.extend(s.gold_owners)
        return out


def _gold(gold) -> TargetObject:
    return project(gold) if isinstance(gold, AnnotatedDocument) else gold


def _norm(text: str) -> str:
    return _WS.sub(" ", text).strip().casefold()


def match_mentions(pred: TargetObject, gold: TargetObject) -> list[tuple[int, int]]:
    """Greedy one-to-one exact matching of mention strings, in prediction order."""
    free: dict[str, list[int]] = {}
    for j, e in enumerate(gold.entities):
        free.setdefault(e.mention, []).append(j)
    pairs = []
    for i, e in enumerate(pred.entities):
        slots = free.get(e.mention)
        if slots:
            pairs.append((i, slots.pop(0)))
    return pairs


def _invalid(gold: TargetObject, items) -> TaskScore:
    return TaskScore([], [0.0] * len(items), list(items), invalid=True)


def score_mention_detection(pred: TargetObject | None, gold) -> TaskScore:
    gold = _gold(gold)
    owners = [(j,) for j in range(len(gold.entities))]
    if pred is None:
        return _invalid(gold, owners)
    pairs = match_mentions(pred, gold)
    pc = [0.0] * len(pred.entities)
    gc = [0.0] * len(gold.entities)
    for i, j in pairs:
        pc[i] = gc[j] = 1.0
    return TaskScore(pc, gc, owners)


def score_entity_linking(pred: TargetObject | None, gold, threshold: float = 1.0) -> TaskScore:
    """Mention must match exactly and the title's ROUGE-L F1 must reach ``threshold``."""
    gold = _gold(gold)
    owners = [(j,) for j in range(len(gold.entities))]
    if pred is None:
        return _invalid(gold, owners)
    n, m = len(pred.entities), len(gold.entities)
    scores = np.full((n, m), -1.0)
    gold_titles = [tokenize(e.title) for e in gold.entities]
    for i, pe in enumerate(pred.entities):
        pt = tokenize(pe.title)
        for j, ge in enumerate(gold.entities):
            if pe.mention == ge.mention:
                scores[i, j] = rouge_l_f1(pt, gold_titles[j])
    row_to_col, col_to_row = greedy_assignment(scores, threshold)
    pc = [1.0 if c >= 0 else 0.0 for c in row_to_col]
    gc = [1.0 if r >= 0 else 0.0 for r in col_to_row]
    return TaskScore(pc, gc, owners)


def _pair_sets(pred, gold, field_name):
    """Micro credits over (mention, string) pairs with normalized exact matching."""
    gold_sets = [list(dict.fromkeys(_norm(x) for x in getattr(e, field_name))) for e in gold.entities]
    pred_sets = [list(dict.fromkeys(_norm(x) for x in getattr(e, field_name))) for e in pred.entities]
    matched_gold = {i: j for i, j in match_mentions(pred, gold)}
    matched_pred = {j: i for i, j in matched_gold.items()}
    pc = []
    for i, items in enumerate(pred_sets):
        ref = set(gold_sets[matched_gold[i]]) if i in matched_gold else set()
        pc.extend(1.0 if x in ref else 0.0 for x in items)
    gc, owners = [], []
    for j, items in enumerate(gold_sets):
        hyp = set(pred_sets[matched_pred[j]]) if j in matched_pred else set()
        gc.extend(1.0 if x in hyp else 0.0 for x in items)
        owners.extend((j,) for _ in items)
    return TaskScore(pc, gc, owners)


def _pair_owners(gold, field_name):
    return [(j,) for j, e in enumerate(gold.entities)
            for _ in dict.fromkeys(_norm(x) for x in getattr(e, field_name))]


def score_entity_typing(pred: TargetObject | None, gold) -> TaskScore:
    gold = _gold(gold)
    if pred is None:
        return _invalid(gold, _pair_owners(gold, "type"))
    return _pair_sets(pred, gold, "type")


def score_aliases(pred: TargetObject | None, gold) -> TaskScore:
    gold = _gold(gold)
    if pred is None:
        return _invalid(gold, _pair_owners(gold, "aliases"))
    return _pair_sets(pred, gold, "aliases")


def score_description(pred: TargetObject | None, gold) -> TaskScore:
    """Mean ROUGE-L F1 over gold mentions that have a description.

    Unmatched gold mentions contribute zero; :attr:`TaskScore.mean` is None
    when no gold mention has a description.
    """
    gold = _gold(gold)
    owners = [(j,) for j, e in enumerate(gold.entities) if e.description is not None]
    if pred is None:
        return _invalid(gold, owners)
    matched = {j: i for i, j in match_mentions(pred, gold)}
    gc = []
    for (j,) in owners:
        if j in matched:
            gc.append(rouge_l_f1(tokenize(pred.entities[matched[j]].description),
                                 tokenize(gold.entities[j].description)))
        else:
            gc.append(0.0)
    return TaskScore([], gc, owners)


def flatten_triplets(target: TargetObject):
    """One (head, relation, tail) tuple per relation name."""
    return [(t.head, rel, t.tail) for t in target.triplets for rel in t.relations]


def _gold_triplet_owners(gold):
    if isinstance(gold, AnnotatedDocument):
        return [(t.head_idx, t.tail_idx) for t in gold.triplets for _ in t.relations]
    first = {}
    for j, e in enumerate(gold.entities):
        first.setdefault(e.mention, j)
    owners = []
    for t in gold.triplets:
        ends = tuple(first[x] for x in (t.head, t.tail) if x in first)
        owners.extend(ends for _ in t.relations)
    return owners


def triplet_score_matrix(pred_triplets, gold_triplets) -> np.ndarray:
    """Pairwise mean of per-slot ROUGE-L F1 over head, relation and tail."""
    scores = np.zeros((len(pred_triplets), len(gold_triplets)))
    gold_tok = [[tokenize(x) for x in g] for g in gold_triplets]
    for i, p in enumerate(pred_triplets):
        pt = [tokenize(x) for x in p]
        for j, gt in enumerate(gold_tok):
            scores[i, j] = sum(rouge_l_f1(a, b) for a, b in zip(pt, gt)) / 3.0
    return scores


def carb_scores(pred_triplets, gold_triplets, match_threshold: float = 0.0):
    """Precision credits (best gold per prediction) and recall credits (greedy one-to-one)."""
    scores = triplet_score_matrix(pred_triplets, gold_triplets)
    if match_threshold > 0:
        scores[scores < match_threshold] = 0.0
    if scores.size:
        pc = scores.max(axis=1).tolist()
    else:
        pc = [0.0] * len(pred_triplets)
    _, col_to_row = greedy_assignment(scores, 0.0)
    gc = [float(scores[r, j]) if r >= 0 else 0.0 for j, r in enumerate(col_to_row)]
    return pc, gc


def score_open_re(pred: TargetObject | None, gold, match_threshold: float = 0.0) -> TaskScore:
    owners = _gold_triplet_owners(gold)
    gold = _gold(gold)
    if pred is None:
        return _invalid(gold, owners)
    pc, gc = carb_scores(flatten_triplets(pred), flatten_triplets(gold), match_threshold)
    return TaskScore(pc, gc, owners)
