"""Weak supervision of mentions from anchors and distant supervision of relations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable

from .ontology import EntityProfile, Ontology, resolve_entity_profile
from .wikipedia import Paragraph

logger = logging.getLogger(__name__)


@dataclass
class MentionAnnotation:
    span: tuple[int, int]
    surface: str
    profile: EntityProfile

    @property
    def qid(self) -> str:
        return self.profile.qid

    def to_dict(self) -> dict:
        return {"span": list(self.span), "surface": self.surface, "profile": self.profile.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "MentionAnnotation":
        return cls(tuple(d["span"]), d["surface"], EntityProfile.from_dict(d["profile"]))


@dataclass
class RelationTripletAnnotation:
    head_idx: int
    tail_idx: int
    relations: list[str]

    def __post_init__(self):
        if self.head_idx == self.tail_idx:
            raise ValueError("triplet endpoints must differ")
        if not self.relations:
            raise ValueError("triplet needs at least one relation")
        self.relations = list(dict.fromkeys(self.relations))

    def to_dict(self) -> dict:
        return {"head": self.head_idx, "tail": self.tail_idx, "relations": list(self.relations)}

    @classmethod
    def from_dict(cls, d: dict) -> "RelationTripletAnnotation":
        return cls(d["head"], d["tail"], list(d["relations"]))


@dataclass
class AnnotatedDocument:
    doc_id: str
    text: str
    mentions: list[MentionAnnotation] = field(default_factory=list)
    triplets: list[RelationTripletAnnotation] = field(default_factory=list)
    dropped_mentions: int = 0
    flags: list[str] = field(default_factory=list)

    def check(self) -> None:
        prev = (-1, -1)
        for m in self.mentions:
            start, end = m.span
            if not (0 <= start < end <= len(self.text)) or self.text[start:end] != m.surface:
                raise ValueError(f"{self.doc_id}: bad mention span {m.span}")
            if m.span < prev:
                raise ValueError(f"{self.doc_id}: mentions not sorted")
            prev = m.span
        for t in self.triplets:
            if not (0 <= t.head_idx < len(self.mentions) and 0 <= t.tail_idx < len(self.mentions)):
                raise ValueError(f"{self.doc_id}: triplet index out of range")

    def to_dict(self) -> dict:
        d = {
            "doc_id": self.doc_id,
            "text": self.text,
            "mentions": [m.to_dict() for m in self.mentions],
            "triplets": [t.to_dict() for t in self.triplets],
        }
        if self.dropped_mentions:
            d["dropped_mentions"] = self.dropped_mentions
        if self.flags:
            d["flags"] = list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotatedDocument":
        return cls(
            doc_id=str(d["doc_id"]),
            text=d["text"],
            mentions=[MentionAnnotation.from_dict(m) for m in d.get("mentions", [])],
            triplets=[RelationTripletAnnotation.from_dict(t) for t in d.get("triplets", [])],
            dropped_mentions=int(d.get("dropped_mentions", 0)),
            flags=list(d.get("flags", [])),
        )


def weak_supervise(paragraph: Paragraph, ontology: Ontology) -> AnnotatedDocument:
    """One mention per resolved anchor, profiled from the ontology."""
    mentions = []
    dropped = 0
    for anchor in paragraph.anchors:
        rec = ontology.entities.get(anchor.qid) if anchor.qid else None
        if rec is None or not rec.title:
            dropped += 1
            continue
        mentions.append(MentionAnnotation(
            (anchor.char_start, anchor.char_end), anchor.surface,
            resolve_entity_profile(anchor.qid, ontology)))
    if dropped:
        logger.debug("%s: %d anchors without a titled entity", paragraph.doc_id, dropped)
    return AnnotatedDocument(paragraph.doc_id, paragraph.text, mentions, [], dropped)


def distant_supervise_relations(document: AnnotatedDocument, ontology: Ontology) -> AnnotatedDocument:
    """Attach every KB claim whose subject and object are both mentioned.

    Entities mentioned more than once are represented by their first mention.
    Several properties linking the same ordered pair merge into one triplet,
    relations ordered by numeric property id.
    """
    first: dict[str, int] = {}
    for idx, m in enumerate(document.mentions):
        first.setdefault(m.qid, idx)
    by_pair: dict[tuple[int, int], set[str]] = {}
    for head_qid, head_idx in first.items():
        rec = ontology.entities.get(head_qid)
        if rec is None:
            continue
        for pid, obj in rec.claims:
            tail_idx = first.get(obj)
            if tail_idx is None or obj == head_qid:
                continue
            if pid not in ontology.properties:
                logger.debug("claim %s %s %s: property unknown", head_qid, pid, obj)
                continue
            by_pair.setdefault((head_idx, tail_idx), set()).add(pid)
    if not by_pair:
        return document
    triplets = []
    for (h, t), pids in sorted(by_pair.items()):
        labels = [ontology.properties[p].label for p in sorted(pids, key=lambda p: int(p[1:]))]
        triplets.append(RelationTripletAnnotation(h, t, labels))
    return replace(document, triplets=document.triplets + triplets)


@dataclass
class DatasetStats:
    articles: int = 0
    mentions: int = 0
    triplets: int = 0
    entities: int = 0
    aliases: int = 0
    relations: int = 0
    types: int = 0
    pct_description: float = 0.0
    pct_aliases: float = 0.0
    pct_types: float = 0.0
    unseen_mentions: int | None = None
    unseen_entities: int | None = None

    COLUMNS = ("#Article", "#Mention", "#Triplets", "#Ent.", "#Aliases", "#Rel.",
               "#Types", "%Desc.", "%Aliases", "%Types")

    def row(self) -> list[str]:
        mention = str(self.mentions)
        ents = str(self.entities)
        if self.unseen_mentions is not None:
            mention += f" (unseen:{self.unseen_mentions})"
            ents += f" (unseen:{self.unseen_entities})"
        return [str(self.articles), mention, str(self.triplets), ents, str(self.aliases),
                str(self.relations), str(self.types), f"{self.pct_description:.1f}",
                f"{self.pct_aliases:.1f}", f"{self.pct_types:.1f}"]

    def to_tsv(self, split: str = "Corpus") -> str:
        header = "\t".join(("Split",) + self.COLUMNS)
        return header + "\n" + "\t".join([split] + self.row()) + "\n"


def density_stats(corpus: Iterable[AnnotatedDocument], train_qids=None) -> DatasetStats:
    """Corpus, ontology and entity-information-density counts.

    Percentages are over mentions. ``train_qids`` (any container) enables the
    unseen-mention/entity counts.
    """
    st = DatasetStats()
    entities: dict[str, EntityProfile] = {}
    relations = set()
    with_desc = with_alias = with_types = unseen = 0
    for doc in corpus:
        st.articles += 1
        st.mentions += len(doc.mentions)
        st.triplets += len(doc.triplets)
        for m in doc.mentions:
            p = m.profile
            entities.setdefault(p.qid, p)
            with_desc += p.description is not None and p.description != ""
            with_alias += bool(p.aliases)
            with_types += bool(p.types)
            if train_qids is not None and p.qid not in train_qids:
                unseen += 1
        for t in doc.triplets:
            relations.update(t.relations)
    st.entities = len(entities)
    st.aliases = len({a for p in entities.values() for a in p.aliases})
    st.types = len({t for p in entities.values() for t in p.types})
    st.relations = len(relations)
    if st.mentions:
        st.pct_description = 100.0 * with_desc / st.mentions
        st.pct_aliases = 100.0 * with_alias / st.mentions
        st.pct_types = 100.0 * with_types / st.mentions
    if train_qids is not None:
        st.unseen_mentions = unseen
        st.unseen_entities = sum(q not in train_qids for q in entities)
    return st
