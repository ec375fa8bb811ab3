"""Instruction templates, constraint filtering and instruction augmentation."""
from __future__ import annotations

import csv
import json
import logging
import os
import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources

from .align import AnnotatedDocument, RelationTripletAnnotation
from .linearize import serialize
from .ontology import Ontology, importance_rank

logger = logging.getLogger(__name__)


class Category(str, Enum):
    DEFAULT = "Default"
    BASE_TYPE = "BaseType"
    ABSTRACT_TYPE = "AbstractType"
    DESCRIPTION = "Description"
    IMPORTANCE = "Importance"
    NUMBER = "Number"
    NUMBER_BASE_TYPE = "NumberBaseType"
    NUMBER_ABSTRACT_TYPE = "NumberAbstractType"

    def __str__(self) -> str:
        return self.value


TRAINING_EXTRA = (Category.BASE_TYPE, Category.ABSTRACT_TYPE, Category.DESCRIPTION,
                  Category.IMPORTANCE, Category.NUMBER)
CROSS = (Category.NUMBER_BASE_TYPE, Category.NUMBER_ABSTRACT_TYPE)
NUMBERED = {Category.IMPORTANCE, Category.NUMBER, *CROSS}
TYPED = {Category.BASE_TYPE, Category.ABSTRACT_TYPE, *CROSS}
ABSTRACT = {Category.ABSTRACT_TYPE, Category.NUMBER_ABSTRACT_TYPE}

_PARAMS = {
    Category.DEFAULT: frozenset(),
    Category.BASE_TYPE: frozenset({"types"}),
    Category.ABSTRACT_TYPE: frozenset({"types"}),
    Category.DESCRIPTION: frozenset({"descriptions"}),
    Category.IMPORTANCE: frozenset({"num"}),
    Category.NUMBER: frozenset({"num"}),
    Category.NUMBER_BASE_TYPE: frozenset({"num", "types"}),
    Category.NUMBER_ABSTRACT_TYPE: frozenset({"num", "types"}),
}
_PLACEHOLDER = re.compile(r"\{(\w+)\}")
_ALIASES = {"number": "num"}


class TemplateError(ValueError):
    pass


class AugmentationError(RuntimeError):
    pass


def placeholders(text: str) -> set[str]:
    return {_ALIASES.get(name, name) for name in _PLACEHOLDER.findall(text)}


@dataclass(frozen=True)
class InstructionTemplate:
    category: Category
    text_singular: str
    text_plural: str
    origin: str = "manual"

    def __post_init__(self):
        need = _PARAMS[self.category]
        for text in (self.text_singular, self.text_plural):
            found = placeholders(text)
            if found != need:
                raise TemplateError(
                    f"{self.category} template {text!r} has placeholders {sorted(found)}, "
                    f"expected {sorted(need)}")
        if self.origin not in ("manual", "rephrased"):
            raise TemplateError(f"unknown template origin {self.origin!r}")


@dataclass
class InstructionSpec:
    category: Category
    types: list[str] | None = None
    descriptions: list[str] | None = None
    k: int | None = None
    type_qids: list[str] | None = None

    def __post_init__(self):
        self.category = Category(self.category)
        need = _PARAMS[self.category]
        if ("types" in need) != bool(self.types):
            raise ValueError(f"{self.category}: types given iff required")
        if ("descriptions" in need) != bool(self.descriptions):
            raise ValueError(f"{self.category}: descriptions given iff required")
        if ("num" in need) != (self.k is not None):
            raise ValueError(f"{self.category}: k given iff required")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.type_qids is not None and len(self.type_qids) != len(self.types or ()):
            raise ValueError("type_qids must align with types")

    def to_dict(self) -> dict:
        d = {"category": self.category.value}
        for key in ("types", "descriptions", "k", "type_qids"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstructionSpec":
        return cls(Category(d["category"]), d.get("types"), d.get("descriptions"),
                   d.get("k"), d.get("type_qids"))


class TemplatePool(dict):
    """Templates keyed by :class:`Category`."""

    def counts(self) -> dict[str, int]:
        return {c.value: len(self.get(c, ())) for c in Category}

    def add(self, template: InstructionTemplate) -> None:
        self.setdefault(template.category, []).append(template)


def _template_rows(path):
    if os.fspath(path).endswith(".jsonl"):
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                if line.strip():
                    yield line_no, json.loads(line)
    else:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
            for row in reader:
                yield reader.line_num, row


def load_templates(path=None) -> TemplatePool:
    """Read a template file (TSV or JSONL with category/singular/plural/origin).

    Without a path, the bundled seed templates are loaded.
    """
    if path is None:
        path = resources.files("owforge") / "data" / "templates.tsv"
    pool = TemplatePool()
    for line_no, row in _template_rows(path):
        try:
            category = Category(row["category"])
        except (KeyError, ValueError):
            raise TemplateError(f"{path}:{line_no}: unknown category {row.get('category')!r}") from None
        singular = row.get("singular") or row.get("text_singular")
        plural = row.get("plural") or row.get("text_plural") or singular
        if not singular:
            raise TemplateError(f"{path}:{line_no}: empty template text")
        try:
            pool.add(InstructionTemplate(category, singular, plural, row.get("origin") or "manual"))
        except TemplateError as exc:
            raise TemplateError(f"{path}:{line_no}: {exc}") from None
    logger.info("loaded templates: %s", pool.counts())
    return pool


def join_items(items: list[str]) -> str:
    if len(items) == 1:
        return items[0]
    return ", ".join(items[:-1]) + " and " + items[-1]


def instantiate(template: InstructionTemplate, spec: InstructionSpec) -> str:
    """Fill a template's placeholders from ``spec``.

    The singular text is used when the governing quantity is one: ``k`` for
    numbered categories, otherwise the length of the list parameter.
    """
    if template.category != spec.category:
        raise TemplateError(f"template is {template.category}, spec is {spec.category}")
    if spec.k is not None:
        singular = spec.k == 1
    else:
        items = spec.types or spec.descriptions
        singular = items is not None and len(items) == 1
    text = template.text_singular if singular else template.text_plural
    values = {}
    if spec.types:
        values["types"] = join_items(spec.types)
    if spec.descriptions:
        values["descriptions"] = join_items(spec.descriptions)
    if spec.k is not None:
        values["num"] = str(spec.k)

    def fill(m):
        name = _ALIASES.get(m.group(1), m.group(1))
        if name not in values:
            raise TemplateError(f"no value for placeholder {{{m.group(1)}}}")
        return values[name]

    return _PLACEHOLDER.sub(fill, text)


# ---------------------------------------------------------------------------
# filtering


def _parent_qids(mention, ontology: Ontology) -> list[str]:
    out = []
    for tq in mention.profile.type_qids:
        rec = ontology.entities.get(tq)
        if rec is not None:
            out.extend(rec.subclass_of)
    return out


def _type_match(mention, spec: InstructionSpec, ontology: Ontology) -> bool:
    if spec.category in ABSTRACT:
        qids = _parent_qids(mention, ontology)
        if spec.type_qids is not None:
            return bool(set(qids) & set(spec.type_qids))
        labels = {ontology.entities[q].label for q in qids if q in ontology.entities}
        return bool(labels & set(spec.types))
    if spec.type_qids is not None:
        return bool(set(mention.profile.type_qids) & set(spec.type_qids))
    return bool(set(mention.profile.types) & set(spec.types))


def restrict(document: AnnotatedDocument, keep: list[int], flags=()) -> AnnotatedDocument:
    """Keep the mentions at sorted indices ``keep`` and the triplets between them."""
    remap = {old: new for new, old in enumerate(keep)}
    triplets = [RelationTripletAnnotation(remap[t.head_idx], remap[t.tail_idx], list(t.relations))
                for t in document.triplets if t.head_idx in remap and t.tail_idx in remap]
    return replace(document, mentions=[document.mentions[i] for i in keep],
                   triplets=triplets, flags=list(document.flags) + list(flags))


def filter_by_instruction(document: AnnotatedDocument, spec: InstructionSpec,
                          ontology: Ontology) -> AnnotatedDocument:
    """Gold target for ``document`` under the constraint expressed by ``spec``.

    Surviving mentions keep document order; triplets with a removed endpoint
    are dropped and the rest reindexed. When ``k`` exceeds the candidates the
    result carries the ``k_exceeds_candidates`` flag.
    """
    cat = spec.category
    idx = list(range(len(document.mentions)))
    if cat is Category.DEFAULT:
        return restrict(document, idx)
    if cat in TYPED:
        idx = [i for i in idx if _type_match(document.mentions[i], spec, ontology)]
    elif cat is Category.DESCRIPTION:
        wanted = set(spec.descriptions)
        idx = [i for i in idx if document.mentions[i].profile.description in wanted]
    flags = []
    if spec.k is not None:
        if spec.k > len(idx):
            flags.append("k_exceeds_candidates")
        if cat is Category.IMPORTANCE:
            ranked = importance_rank([document.mentions[i].qid for i in idx], ontology)
            pos = {}
            for r, q in enumerate(ranked):
                pos.setdefault(q, r)
            idx = sorted(sorted(idx, key=lambda i: (pos[document.mentions[i].qid], i))[:spec.k])
        else:
            idx = idx[:spec.k]
    return restrict(document, idx, flags)


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class InstructedSample:
    sample_id: str
    instruction_text: str
    input_text: str
    target: AnnotatedDocument
    spec: InstructionSpec
    template_origin: str
    rephrasings: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        rec = {
            "sample_id": self.sample_id,
            "instruction": self.instruction_text,
            "input": self.input_text,
            "output": serialize(self.target),
            "category": self.spec.category.value,
            "spec": self.spec.to_dict(),
            "template_origin": self.template_origin,
            "document": self.target.to_dict(),
        }
        if self.rephrasings:
            rec["rephrasings"] = list(self.rephrasings)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "InstructedSample":
        return cls(rec["sample_id"], rec["instruction"], rec["input"],
                   AnnotatedDocument.from_dict(rec["document"]),
                   InstructionSpec.from_dict(rec["spec"]), rec.get("template_origin", "manual"),
                   list(rec.get("rephrasings", [])))


def document_rng(seed: int, doc_id: str) -> random.Random:
    """Per-document RNG so parallel workers reproduce the sequential output."""
    return random.Random(f"{seed}:{doc_id}")


def _distinct(items):
    return list(dict.fromkeys(items))


def _base_types(document):
    return _distinct((q, l) for m in document.mentions
                     for q, l in zip(m.profile.type_qids, m.profile.types))


def _abstract_candidates(document, ontology):
    out = []
    for q, _ in _base_types(document):
        parents = [p for p in ontology.entities[q].subclass_of
                   if p in ontology.entities and ontology.entities[p].label] if q in ontology.entities else []
        if parents:
            out.append((q, parents))
    return out


def feasible(category: Category, document: AnnotatedDocument, ontology: Ontology) -> bool:
    if not document.mentions:
        return category is Category.DEFAULT
    if category in ABSTRACT:
        return bool(_abstract_candidates(document, ontology))
    if category in TYPED:
        return bool(_base_types(document))
    if category is Category.DESCRIPTION:
        return any(m.profile.description for m in document.mentions)
    return True


def _sample_some(rng, items, max_arity):
    n = rng.randint(1, min(max_arity, len(items)))
    return rng.sample(items, n)


def draw_spec(category: Category, document: AnnotatedDocument, ontology: Ontology,
              rng: random.Random, max_arity: int = 3) -> InstructionSpec:
    """Sample instruction parameters from the document's own gold annotations."""
    types = type_qids = descriptions = k = None
    if category in ABSTRACT:
        chosen = _sample_some(rng, _abstract_candidates(document, ontology), max_arity)
        parents = _distinct(rng.choice(ps) for _, ps in chosen)
        type_qids = parents
        types = [ontology.entities[p].label for p in parents]
    elif category in TYPED:
        chosen = _sample_some(rng, _base_types(document), max_arity)
        type_qids = [q for q, _ in chosen]
        types = [l for _, l in chosen]
    elif category is Category.DESCRIPTION:
        descs = _distinct(m.profile.description for m in document.mentions if m.profile.description)
        descriptions = _sample_some(rng, descs, max_arity)
    if category in NUMBERED:
        k = rng.randint(1, len(document.mentions))
    return InstructionSpec(category, types, descriptions, k, type_qids)


def _pick_templates(pool, category, rng, count):
    templates = pool.get(category) or []
    if not templates:
        raise AugmentationError(f"no templates for category {category}")
    first = rng.choice(templates)
    rest = [t for t in templates if t is not first]
    extra = rng.sample(rest, min(count - 1, len(rest))) if count > 1 else []
    while len(extra) < count - 1:
        extra.append(rng.choice(templates))
    return [first] + extra


def make_sample(sample_id: str, category: Category, document: AnnotatedDocument,
                pool: TemplatePool, ontology: Ontology, rng: random.Random,
                max_arity: int = 3, rephrasings: int = 1) -> InstructedSample:
    spec = draw_spec(category, document, ontology, rng, max_arity)
    templates = _pick_templates(pool, category, rng, rephrasings)
    texts = [instantiate(t, spec) for t in templates]
    target = filter_by_instruction(document, spec, ontology)
    return InstructedSample(sample_id, texts[0], document.text, target, spec,
                            templates[0].origin, texts if rephrasings > 1 else [])


def augment_document(document: AnnotatedDocument, pool: TemplatePool, ontology: Ontology,
                     rng: random.Random, *, weights: dict | None = None, max_arity: int = 3,
                     rephrasings: int = 1) -> list[InstructedSample]:
    """Training samples for one document: Default plus one drawn category.

    The extra category is drawn (uniformly unless ``weights`` is given) among
    the non-default training categories the document can support.
    """
    samples = [make_sample(f"{document.doc_id}#0", Category.DEFAULT, document, pool, ontology,
                           rng, max_arity, rephrasings)]
    if not document.mentions:
        return samples
    options = [c for c in TRAINING_EXTRA if feasible(c, document, ontology)]
    if weights:
        category = rng.choices(options, weights=[weights.get(c.value, 1.0) for c in options])[0]
    else:
        category = rng.choice(options)
    samples.append(make_sample(f"{document.doc_id}#1", category, document, pool, ontology,
                               rng, max_arity, rephrasings))
    return samples


def make_cross_instruction_samples(document: AnnotatedDocument, pool: TemplatePool,
                                   ontology: Ontology, rng: random.Random, *, max_arity: int = 3,
                                   rephrasings: int = 1) -> list[InstructedSample]:
    """Evaluation-only Number+BaseType / Number+AbstractType samples."""
    out = []
    for category in CROSS:
        if not feasible(category, document, ontology):
            logger.info("%s: no %s sample (no usable types)", document.doc_id, category)
            continue
        out.append(make_sample(f"{document.doc_id}#{category.value}", category, document, pool,
                               ontology, rng, max_arity, rephrasings))
    return out


def make_eval_samples(document: AnnotatedDocument, pool: TemplatePool, ontology: Ontology,
                      rng: random.Random, *, cross: bool = True, max_arity: int = 3,
                      rephrasings: int = 3) -> list[InstructedSample]:
    """One sample per supported category, as used for the evaluation set."""
    out = []
    for category in (Category.DEFAULT,) + TRAINING_EXTRA:
        if feasible(category, document, ontology):
            out.append(make_sample(f"{document.doc_id}#{category.value}", category, document,
                                   pool, ontology, rng, max_arity, rephrasings))
    if cross:
        out.extend(make_cross_instruction_samples(document, pool, ontology, rng,
                                                  max_arity=max_arity, rephrasings=rephrasings))
    return out
