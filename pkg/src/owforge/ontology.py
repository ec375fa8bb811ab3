"""Wikidata JSON dump ingestion and entity-profile lookup."""
from __future__ import annotations

import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field
from typing import IO, Iterable

from .textutil import normalize_title

logger = logging.getLogger(__name__)

QID_RE = re.compile(r"Q[0-9]+")
PID_RE = re.compile(r"P[0-9]+")
SNAPSHOT_FORMAT = "owforge-ontology"
_DATE_IN_NAME = re.compile(r"(20\d{2})-?(\d{2})-?(\d{2})")


class IngestError(RuntimeError):
    """The dump could not be read at all."""


class LookupFailure(KeyError):
    """An identifier is not present in the ontology."""


@dataclass
class EntityRecord:
    qid: str
    label: str | None = None
    description: str | None = None
    aliases: list[str] = field(default_factory=list)
    instance_of: list[str] = field(default_factory=list)
    subclass_of: list[str] = field(default_factory=list)
    sitelink_count: int = 0
    claims: list[tuple[str, str]] = field(default_factory=list)
    wiki_title: str | None = None

    def __post_init__(self):
        if not QID_RE.fullmatch(self.qid):
            raise ValueError(f"bad entity id {self.qid!r}")
        if self.sitelink_count < 0:
            raise ValueError("sitelink_count must be non-negative")
        self.instance_of = _dedupe(self.instance_of)
        self.subclass_of = _dedupe(self.subclass_of)
        self.claims = [tuple(c) for c in _dedupe(tuple(c) for c in self.claims)]

    @property
    def title(self) -> str | None:
        return self.label or self.wiki_title

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "label": self.label,
            "description": self.description,
            "aliases": self.aliases,
            "instance_of": self.instance_of,
            "subclass_of": self.subclass_of,
            "sitelink_count": self.sitelink_count,
            "claims": [list(c) for c in self.claims],
            "wiki_title": self.wiki_title,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntityRecord":
        return cls(
            qid=d["qid"],
            label=d.get("label"),
            description=d.get("description"),
            aliases=list(d.get("aliases", [])),
            instance_of=list(d.get("instance_of", [])),
            subclass_of=list(d.get("subclass_of", [])),
            sitelink_count=int(d.get("sitelink_count", 0)),
            claims=[tuple(c) for c in d.get("claims", [])],
            wiki_title=d.get("wiki_title"),
        )


@dataclass
class PropertyRecord:
    pid: str
    label: str

    def __post_init__(self):
        if not PID_RE.fullmatch(self.pid):
            raise ValueError(f"bad property id {self.pid!r}")
        if not self.label:
            raise ValueError(f"property {self.pid} has an empty label")


@dataclass
class EntityProfile:
    qid: str
    title: str
    types: list[str] = field(default_factory=list)
    type_qids: list[str] = field(default_factory=list)
    description: str | None = None
    aliases: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.title:
            raise ValueError("profile title must be non-empty")
        if len(self.types) != len(self.type_qids):
            raise ValueError("types and type_qids must be aligned")

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "title": self.title,
            "types": list(self.types),
            "type_qids": list(self.type_qids),
            "description": self.description,
            "aliases": list(self.aliases),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EntityProfile":
        return cls(
            qid=d["qid"],
            title=d["title"],
            types=list(d.get("types", [])),
            type_qids=list(d.get("type_qids", [])),
            description=d.get("description"),
            aliases=list(d.get("aliases", [])),
        )


@dataclass
class Ontology:
    entities: dict[str, EntityRecord] = field(default_factory=dict)
    properties: dict[str, PropertyRecord] = field(default_factory=dict)
    title_index: dict[str, str] = field(default_factory=dict)
    snapshot_date: dt.date | None = None
    skip_log: list[tuple[int, str]] = field(default_factory=list)

    def __contains__(self, qid) -> bool:
        return qid in self.entities

    def __len__(self) -> int:
        return len(self.entities)

    def entity(self, qid: str) -> EntityRecord:
        try:
            return self.entities[qid]
        except KeyError:
            raise LookupFailure(qid) from None

    def add_entity(self, record: EntityRecord) -> None:
        self.entities[record.qid] = record
        key = record.wiki_title or record.label
        if key:
            self.title_index.setdefault(normalize_title(key), record.qid)

    def property_label(self, pid: str) -> str | None:
        prop = self.properties.get(pid)
        return prop.label if prop else None

    # -- snapshot I/O ---------------------------------------------------

    def write_snapshot(self, fh: IO[str]) -> None:
        header = {
            "format": SNAPSHOT_FORMAT,
            "version": 1,
            "snapshot_date": self.snapshot_date.isoformat() if self.snapshot_date else None,
            "entities": len(self.entities),
            "properties": len(self.properties),
        }
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for prop in self.properties.values():
            fh.write(json.dumps({"kind": "property", "pid": prop.pid, "label": prop.label}, ensure_ascii=False) + "\n")
        for rec in self.entities.values():
            fh.write(json.dumps({"kind": "entity", **rec.to_dict()}, ensure_ascii=False) + "\n")

    @classmethod
    def read_snapshot(cls, fh: Iterable[str]) -> "Ontology":
        it = iter(fh)
        try:
            header = json.loads(next(it))
        except StopIteration:
            raise IngestError("empty ontology snapshot") from None
        if header.get("format") != SNAPSHOT_FORMAT:
            raise IngestError("not an ontology snapshot")
        onto = cls()
        if header.get("snapshot_date"):
            onto.snapshot_date = dt.date.fromisoformat(header["snapshot_date"])
        for line in it:
            row = json.loads(line)
            if row.pop("kind") == "property":
                onto.properties[row["pid"]] = PropertyRecord(row["pid"], row["label"])
            else:
                onto.add_entity(EntityRecord.from_dict(row))
        return onto


def _dedupe(items):
    seen = set()
    out = []
    for x in items:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


def snapshot_date_from_name(name: str) -> dt.date | None:
    """Pull a ``YYYYMMDD`` stamp out of a dump filename, if there is one."""
    m = _DATE_IN_NAME.search(name)
    if not m:
        return None
    try:
        return dt.date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
    except ValueError:
        return None


def _lang_value(slot, language):
    if not isinstance(slot, dict):
        return None
    entry = slot.get(language)
    if isinstance(entry, dict):
        return entry.get("value") or None
    return None


def _entity_target(snak) -> str | None:
    if snak.get("snaktype") != "value":
        return None
    datavalue = snak.get("datavalue") or {}
    if datavalue.get("type") != "wikibase-entityid":
        return None
    value = datavalue.get("value") or {}
    target = value.get("id")
    if target is None and value.get("entity-type") == "item" and "numeric-id" in value:
        target = f"Q{value['numeric-id']}"
    if target and QID_RE.fullmatch(target):
        return target
    return None


def _entity_claims(claims) -> list[tuple[str, str]]:
    out = []
    if not isinstance(claims, dict):
        return out
    for pid, statements in claims.items():
        for statement in statements or ():
            target = _entity_target(statement.get("mainsnak") or {})
            if target is not None:
                out.append((pid, target))
    return out


def record_from_json(obj: dict, language: str = "en", type_property: str = "P31",
                     hierarchy_property: str = "P279") -> EntityRecord:
    """Build an :class:`EntityRecord` from one decoded dump entity."""
    claims = _entity_claims(obj.get("claims"))
    aliases = (obj.get("aliases") or {}).get(language) or []
    sitelinks = obj.get("sitelinks") or {}
    wiki = sitelinks.get(f"{language}wiki") or {}
    return EntityRecord(
        qid=obj["id"],
        label=_lang_value(obj.get("labels"), language),
        description=_lang_value(obj.get("descriptions"), language),
        aliases=_dedupe(a["value"] for a in aliases if a.get("value")),
        instance_of=[q for p, q in claims if p == type_property],
        subclass_of=[q for p, q in claims if p == hierarchy_property],
        sitelink_count=len(sitelinks),
        claims=claims,
        wiki_title=wiki.get("title") or None,
    )


def iter_dump_objects(stream: IO[bytes], skip_log: list):
    """Yield ``(line_no, obj)`` for each decodable entity line in ``stream``.

    Array brackets and trailing commas are tolerated; lines that fail to
    decode are appended to ``skip_log`` and skipped.
    """
    line_no = 0
    try:
        for raw in stream:
            line_no += 1
            raw = raw.strip()
            if raw.endswith(b","):
                raw = raw[:-1].rstrip()
            if not raw or raw in (b"[", b"]"):
                continue
            try:
                obj = json.loads(raw)
            except ValueError as exc:
                skip_log.append((line_no, f"invalid JSON: {exc}"))
                continue
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), str):
                skip_log.append((line_no, "entity object without id"))
                continue
            yield line_no, obj
    except (OSError, EOFError) as exc:
        raise IngestError(f"unreadable dump stream after line {line_no}: {exc}") from exc


def parse_wikidata_dump(stream: IO[bytes], filter: set[str] | None = None, *,
                        snapshot_date: dt.date | None = None, language: str = "en",
                        type_property: str = "P31", hierarchy_property: str = "P279") -> Ontology:
    """Stream-parse a Wikidata JSON dump into an :class:`Ontology`.

    With ``filter`` set, only allowlisted items are materialized, so memory
    stays bounded by the allowlist rather than the dump. Properties are always
    kept; there are only a few thousand of them.
    """
    onto = Ontology(snapshot_date=snapshot_date)
    for line_no, obj in iter_dump_objects(stream, onto.skip_log):
        eid = obj["id"]
        kind = obj.get("type")
        if kind == "property" or PID_RE.fullmatch(eid):
            label = _lang_value(obj.get("labels"), language) or eid
            onto.properties[eid] = PropertyRecord(eid, label)
            continue
        if not QID_RE.fullmatch(eid):
            continue  # lexemes and other entity kinds
        if filter is not None and eid not in filter:
            continue
        try:
            record = record_from_json(obj, language, type_property, hierarchy_property)
        except (ValueError, TypeError, KeyError, AttributeError) as exc:
            onto.skip_log.append((line_no, f"malformed entity {eid}: {exc}"))
            continue
        onto.add_entity(record)
    if onto.skip_log:
        logger.warning("skipped %d malformed dump lines", len(onto.skip_log))
    return onto


def resolve_entity_profile(qid: str, ontology: Ontology) -> EntityProfile:
    """Profile (title, types, description, aliases) of one entity.

    Types are the labels of the entity's instance-of targets; targets missing
    from the ontology or without a label are dropped with a warning.
    """
    rec = ontology.entity(qid)
    types, type_qids = [], []
    for tq in rec.instance_of:
        target = ontology.entities.get(tq)
        if target is None or not target.label:
            logger.warning("%s: type %s not resolvable, dropped", qid, tq)
            continue
        types.append(target.label)
        type_qids.append(tq)
    return EntityProfile(
        qid=qid,
        title=rec.title or qid,
        types=types,
        type_qids=type_qids,
        description=rec.description,
        aliases=list(rec.aliases),
    )


def abstract_types_of(base_type_qid: str, ontology: Ontology) -> list[str]:
    return list(ontology.entity(base_type_qid).subclass_of)


def qid_number(qid: str) -> int:
    return int(qid[1:])


def importance_rank(qids: list[str], ontology: Ontology) -> list[str]:
    """Order entities by sitelink count (descending), then numeric id."""
    keyed = [(-ontology.entity(q).sitelink_count, qid_number(q), q) for q in qids]
    return [q for *_, q in sorted(keyed)]
