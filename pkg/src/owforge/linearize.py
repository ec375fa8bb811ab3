"""JSON linearization of extraction targets and validation of model outputs.

The byte format is documented in SCHEMA.md at the repository root.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .align import AnnotatedDocument

ENTITY_KEYS = ("mention", "title", "type", "description", "aliases")
TRIPLET_KEYS = ("head", "tail", "relations")
TOP_KEYS = ("entities", "triplets")


@dataclass
class TargetEntity:
    mention: str
    title: str
    type: list[str] = field(default_factory=list)
    description: str | None = None
    aliases: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"mention": self.mention, "title": self.title, "type": list(self.type),
                "description": self.description, "aliases": list(self.aliases)}


@dataclass
class TargetTriplet:
    head: str
    tail: str
    relations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"head": self.head, "tail": self.tail, "relations": list(self.relations)}


@dataclass
class TargetObject:
    entities: list[TargetEntity] = field(default_factory=list)
    triplets: list[TargetTriplet] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"entities": [e.to_dict() for e in self.entities],
                "triplets": [t.to_dict() for t in self.triplets]}


@dataclass
class ParseOutcome:
    """Result of :func:`parse_and_validate`; ``kind`` is ok, decode_error or schema_error."""

    kind: str
    target: TargetObject | None = None
    message: str = ""
    position: int | None = None
    path: str | None = None

    @property
    def ok(self) -> bool:
        return self.kind == "ok"


def project(document: AnnotatedDocument) -> TargetObject:
    """The part of an annotated document a model is asked to generate."""
    ents = [TargetEntity(m.surface, m.profile.title, list(m.profile.types),
                         m.profile.description, list(m.profile.aliases))
            for m in document.mentions]
    trips = [TargetTriplet(document.mentions[t.head_idx].surface,
                           document.mentions[t.tail_idx].surface, list(t.relations))
             for t in document.triplets]
    return TargetObject(ents, trips)


def dumps(target: TargetObject) -> str:
    return json.dumps(target.to_dict(), ensure_ascii=False)


def serialize(document: AnnotatedDocument) -> str:
    return dumps(project(document))


class _SchemaError(Exception):
    def __init__(self, path, message):
        super().__init__(message)
        self.path = path
        self.message = message


def _str_list(value, path):
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise _SchemaError(path, "expected a list of strings")
    return list(value)


def _join(path, key):
    return f"{path}.{key}" if path else key


def _check_keys(obj, required, optional, path, strict):
    if not isinstance(obj, dict):
        raise _SchemaError(path or "$", "expected an object")
    for key in required:
        if key not in obj:
            raise _SchemaError(_join(path, key), "missing key")
    if strict:
        for key in optional:
            if key not in obj:
                raise _SchemaError(_join(path, key), "missing key")
        extra = set(obj) - set(required) - set(optional)
        if extra:
            raise _SchemaError(_join(path, sorted(extra)[0]), "unexpected key")


def _entity(obj, path, strict) -> TargetEntity:
    _check_keys(obj, ("mention", "title", "type"), ("description", "aliases"), path, strict)
    for key in ("mention", "title"):
        if not isinstance(obj[key], str):
            raise _SchemaError(f"{path}.{key}", "expected a string")
    desc = obj.get("description")
    if desc is not None and not isinstance(desc, str):
        raise _SchemaError(f"{path}.description", "expected a string or null")
    return TargetEntity(obj["mention"], obj["title"], _str_list(obj["type"], f"{path}.type"),
                        desc, _str_list(obj.get("aliases", []), f"{path}.aliases"))


def _triplet(obj, path, strict) -> TargetTriplet:
    _check_keys(obj, TRIPLET_KEYS, (), path, strict)
    for key in ("head", "tail"):
        if not isinstance(obj[key], str):
            raise _SchemaError(f"{path}.{key}", "expected a string")
    return TargetTriplet(obj["head"], obj["tail"], _str_list(obj["relations"], f"{path}.relations"))


def parse_and_validate(text: str, strict: bool = True) -> ParseOutcome:
    """Decode a model output and check it against the target schema.

    Strict mode demands exactly the documented keys. Lenient mode tolerates
    extra keys and missing ``description``/``aliases`` (read as null / empty).
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        return ParseOutcome("decode_error", message=exc.msg, position=exc.pos)
    except (TypeError, ValueError) as exc:
        return ParseOutcome("decode_error", message=str(exc), position=0)
    try:
        _check_keys(obj, TOP_KEYS, (), "", strict)
        for key in TOP_KEYS:
            if not isinstance(obj[key], list):
                raise _SchemaError(key, "expected a list")
        entities = [_entity(e, f"entities[{i}]", strict) for i, e in enumerate(obj["entities"])]
        triplets = [_triplet(t, f"triplets[{i}]", strict) for i, t in enumerate(obj["triplets"])]
    except _SchemaError as exc:
        return ParseOutcome("schema_error", message=exc.message, path=exc.path)
    return ParseOutcome("ok", target=TargetObject(entities, triplets))
