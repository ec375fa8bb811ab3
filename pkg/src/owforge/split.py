"""Open-world evaluation split from dump time differences, and seen/unseen labels."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

from .instructions import Category, InstructionSpec
from .wikipedia import ArticleRecord


class Partition(str, Enum):
    SEEN = "seen"
    UNSEEN = "unseen"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SplitConfig:
    train_wikidata_date: dt.date
    train_wikipedia_date: dt.date
    eval_wikipedia_date: dt.date
    eval_wikidata_date: dt.date

    def __post_init__(self):
        latest_train = max(self.train_wikidata_date, self.train_wikipedia_date)
        if not latest_train < min(self.eval_wikipedia_date, self.eval_wikidata_date):
            raise ValueError("training dumps must strictly precede evaluation dumps")


# Dump dates of the reference dataset (train: Wikidata 2022-05-30, Wikipedia
# 2022-06-20; evaluation: both dumps of 2023-03-01).
REFERENCE_SPLIT = SplitConfig(dt.date(2022, 5, 30), dt.date(2022, 6, 20),
                              dt.date(2023, 3, 1), dt.date(2023, 3, 1))


def build_open_world_corpus(train_article_ids: Iterable[int],
                            eval_articles: Iterable[ArticleRecord]) -> Iterator[ArticleRecord]:
    """Evaluation articles whose page id never occurs in the training dump."""
    known = set(int(i) for i in train_article_ids)
    for article in eval_articles:
        if article.page_id not in known:
            yield article


def label_entity_partition(qid: str, train_ontology) -> Partition:
    """``unseen`` iff ``qid`` is absent from the training ontology (or qid set)."""
    return Partition.SEEN if qid in train_ontology else Partition.UNSEEN


@dataclass
class ParamInventory:
    """Type labels and description strings used by training instructions."""

    types: set[str] = field(default_factory=set)
    descriptions: set[str] = field(default_factory=set)

    def add(self, spec: InstructionSpec) -> None:
        self.types.update(spec.types or ())
        self.descriptions.update(spec.descriptions or ())

    @classmethod
    def from_specs(cls, specs: Iterable[InstructionSpec]) -> "ParamInventory":
        inv = cls()
        for spec in specs:
            inv.add(spec)
        return inv


def label_instruction_partition(spec: InstructionSpec, inventory: ParamInventory) -> Partition:
    if spec.category in (Category.DEFAULT, Category.NUMBER, Category.IMPORTANCE):
        return Partition.SEEN
    if any(t not in inventory.types for t in spec.types or ()):
        return Partition.UNSEEN
    if any(d not in inventory.descriptions for d in spec.descriptions or ()):
        return Partition.UNSEEN
    return Partition.SEEN


@dataclass
class SampleLabels:
    sample_id: str
    instruction_partition: Partition
    entity_partitions: list[Partition]

    def to_dict(self) -> dict:
        return {"sample_id": self.sample_id,
                "instruction_partition": self.instruction_partition.value,
                "entity_partitions": [p.value for p in self.entity_partitions]}

    @classmethod
    def from_dict(cls, d: dict) -> "SampleLabels":
        return cls(d["sample_id"], Partition(d["instruction_partition"]),
                   [Partition(p) for p in d["entity_partitions"]])


def label_sample(sample, train_ontology, inventory: ParamInventory) -> SampleLabels:
    """Both partition labels for an :class:`~owforge.instructions.InstructedSample`."""
    return SampleLabels(
        sample.sample_id,
        label_instruction_partition(sample.spec, inventory),
        [label_entity_partition(m.qid, train_ontology) for m in sample.target.mentions],
    )
