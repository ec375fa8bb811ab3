"""MediaWiki XML dump streaming and lead-paragraph extraction with anchor spans."""
from __future__ import annotations

import datetime as dt
import html
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from typing import IO, Iterator

from .textutil import normalize_title

logger = logging.getLogger(__name__)

OFFSET_CONVENTION = "unicode-scalar, half-open"


class WikipediaDumpError(RuntimeError):
    """Raised when the XML stream ends or breaks mid-document."""


@dataclass
class ArticleRecord:
    page_id: int
    title: str
    revision_timestamp: dt.datetime | None
    wikitext: str


@dataclass(frozen=True)
class AnchorSpan:
    surface: str
    target_title: str
    char_start: int
    char_end: int
    qid: str | None = None

    def to_dict(self) -> dict:
        d = {"surface": self.surface, "target": self.target_title,
             "start": self.char_start, "end": self.char_end}
        if self.qid is not None:
            d["qid"] = self.qid
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorSpan":
        return cls(d["surface"], d["target"], d["start"], d["end"], d.get("qid"))


@dataclass
class Paragraph:
    doc_id: str
    source_title: str
    text: str
    anchors: list[AnchorSpan] = field(default_factory=list)
    quality: list[str] = field(default_factory=list)
    dropped_anchors: int = 0

    def check(self) -> None:
        last_end = 0
        for a in self.anchors:
            if not (0 <= a.char_start < a.char_end <= len(self.text)):
                raise ValueError(f"anchor out of range: {a}")
            if self.text[a.char_start:a.char_end] != a.surface:
                raise ValueError(f"anchor surface mismatch: {a}")
            if a.char_start < last_end:
                raise ValueError("anchors overlap or are unsorted")
            last_end = a.char_end

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.source_title,
            "text": self.text,
            "anchors": [a.to_dict() for a in self.anchors],
            "quality": list(self.quality),
            "dropped_anchors": self.dropped_anchors,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Paragraph":
        return cls(
            doc_id=str(d["doc_id"]),
            source_title=d.get("title", ""),
            text=d["text"],
            anchors=[AnchorSpan.from_dict(a) for a in d.get("anchors", [])],
            quality=list(d.get("quality", [])),
            dropped_anchors=int(d.get("dropped_anchors", 0)),
        )


# ---------------------------------------------------------------------------
# XML walk


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_timestamp(value: str | None) -> dt.datetime | None:
    if not value:
        return None
    return dt.datetime.fromisoformat(value.replace("Z", "+00:00"))


_REDIRECT_TEXT = re.compile(r"\s*#redirect", re.IGNORECASE)


def _page_record(page: ET.Element) -> ArticleRecord | None:
    title = ns = page_id = None
    redirect = False
    timestamp = None
    text = ""
    for child in page:
        name = _local(child.tag)
        if name == "title":
            title = child.text or ""
        elif name == "ns":
            ns = (child.text or "").strip()
        elif name == "id":
            page_id = child.text
        elif name == "redirect":
            redirect = True
        elif name == "revision":
            for sub in child:
                sub_name = _local(sub.tag)
                if sub_name == "timestamp":
                    timestamp = sub.text
                elif sub_name == "text":
                    text = sub.text or ""
    if title is None or page_id is None:
        raise ValueError("page without title or id")
    page_id = int(page_id)
    if ns is None:
        # very old exports lack <ns>; fall back on the title prefix
        ns = "0" if ":" not in title else "?"
    if ns != "0" or redirect or _REDIRECT_TEXT.match(text):
        return None
    return ArticleRecord(page_id, title, _parse_timestamp(timestamp), text)


def parse_wikipedia_dump(stream: IO[bytes]) -> Iterator[ArticleRecord]:
    """Yield main-namespace, non-redirect articles in dump order.

    Pages are cleared from the tree as soon as they are consumed. A page whose
    fields cannot be interpreted is skipped with a log line; a stream that
    breaks off raises :class:`WikipediaDumpError` after all complete pages
    have been yielded.
    """
    seen_ids = set()
    root = None
    try:
        for event, elem in ET.iterparse(stream, events=("start", "end")):
            if event == "start":
                if root is None:
                    root = elem
                continue
            if _local(elem.tag) != "page":
                continue
            try:
                record = _page_record(elem)
            except (ValueError, TypeError) as exc:
                logger.warning("skipping malformed page: %s", exc)
                record = None
            elem.clear()
            if root is not None:
                root.clear()
            if record is None:
                continue
            if record.page_id in seen_ids:
                logger.warning("duplicate page id %d skipped", record.page_id)
                continue
            seen_ids.add(record.page_id)
            yield record
    except ET.ParseError as exc:
        raise WikipediaDumpError(f"XML stream broken: {exc}") from exc


# ---------------------------------------------------------------------------
# Wikitext lead extraction

_COMMENT = re.compile(r"<!--.*?(?:-->|\Z)", re.DOTALL)
_HEADING = re.compile(r"^[ \t]*=+[^=\n].*=+[ \t]*$", re.MULTILINE)
_REF_SELF = re.compile(r"<ref\b[^>]*/\s*>", re.IGNORECASE)
_REF_PAIR = re.compile(r"<ref\b[^>]*>.*?</ref\s*>", re.IGNORECASE | re.DOTALL)
_DROP_BLOCKS = re.compile(
    r"<(gallery|math|timeline|score|syntaxhighlight|source|imagemap)\b[^>]*>.*?</\1\s*>",
    re.IGNORECASE | re.DOTALL,
)
_BR = re.compile(r"<br\s*/?\s*>", re.IGNORECASE)
_TAG = re.compile(r"</?[A-Za-z][^>]*>")
_MAGIC = re.compile(r"__[A-Z]+__")
_EXT_LINK = re.compile(r"\[(?:https?:)?//[^\s\]]+(?:\s+([^\]]*))?\]")
_EMPHASIS = re.compile(r"''+")
_LINK_TRAIL = re.compile(r"[a-z]+")
_DROPPED_NAMESPACES = {"file", "image", "media", "category"}
_INTERWIKI = re.compile(r"^[a-z]{2,3}(-[a-z]+)?:")


def _strip_balanced(text: str, open_tok: str, close_tok: str) -> tuple[str, bool]:
    """Remove (possibly nested) ``open_tok ... close_tok`` regions.

    An unclosed region swallows the rest of the text; the second return value
    reports whether that happened.
    """
    out = []
    depth = 0
    i = 0
    start = 0
    n = len(text)
    while i < n:
        if text.startswith(open_tok, i):
            if depth == 0:
                out.append(text[start:i])
            depth += 1
            i += len(open_tok)
        elif depth and text.startswith(close_tok, i):
            depth -= 1
            i += len(close_tok)
            if depth == 0:
                start = i
        else:
            i += 1
    if depth == 0:
        out.append(text[start:])
    return "".join(out), depth > 0


def _find_link_end(text: str, i: int) -> int:
    """Index just past the ``]]`` matching the ``[[`` at ``i``, or -1."""
    depth = 0
    n = len(text)
    while i < n:
        if text.startswith("[[", i):
            depth += 1
            i += 2
        elif text.startswith("]]", i):
            depth -= 1
            i += 2
            if depth == 0:
                return i
        else:
            i += 1
    return -1


def _clean_inline(fragment: str) -> str:
    fragment = _BR.sub(" ", fragment)
    fragment = _TAG.sub("", fragment)
    fragment = _MAGIC.sub("", fragment)
    fragment = _EXT_LINK.sub(lambda m: m.group(1) or "", fragment)
    fragment = _EMPHASIS.sub("", fragment)
    return html.unescape(fragment)


def _segments(text: str):
    """Split cleaned wikitext into (text, target_or_None) pieces."""
    i = 0
    start = 0
    n = len(text)
    while i < n:
        if not text.startswith("[[", i):
            i += 1
            continue
        end = _find_link_end(text, i)
        if end < 0:
            break
        yield _clean_inline(text[start:i]), None
        inner = text[i + 2:end - 2]
        target, sep, surface = inner.partition("|")
        target = target.strip()
        visible = target.startswith(":")
        target = target.lstrip(":").strip()
        ns = target.split(":", 1)[0].strip().lower() if ":" in target else ""
        trail = _LINK_TRAIL.match(text, end)
        if trail:
            end = trail.end()
        if not visible and (ns in _DROPPED_NAMESPACES or _INTERWIKI.match(target)):
            i = start = end
            continue
        if "[[" in surface:
            # nested links only occur in captions; keep the visible text
            surface = re.sub(r"\[\[(?:[^|\]]*\|)?([^\]]*)\]\]", r"\1", surface)
        if not sep or not surface.strip():
            surface = target.replace("_", " ")
        if trail:
            surface += trail.group(0)
        yield _clean_inline(surface).strip(), target
        i = start = end
    yield _clean_inline(text[start:]), None


def _layout(segments) -> tuple[str, list[AnchorSpan]]:
    """Concatenate segments with whitespace collapsed and anchor offsets tracked."""
    chars: list[str] = []
    owners: list[int] = []
    targets: list[str] = []
    pending_ws = None  # None, " " or "\n"
    for piece, target in segments:
        owner = -1
        if target is not None:
            owner = len(targets)
            targets.append(target)
        for ch in piece:
            if ch.isspace():
                if ch == "\n" or pending_ws == "\n":
                    pending_ws = "\n"
                else:
                    pending_ws = " "
                continue
            if pending_ws is not None and chars:
                chars.append(pending_ws)
                # whitespace belongs to an anchor only when inside it
                owners.append(owner if owners and owners[-1] == owner else -1)
            pending_ws = None
            chars.append(ch)
            owners.append(owner)
    text = "".join(chars)
    anchors = []
    i = 0
    n = len(owners)
    while i < n:
        owner = owners[i]
        j = i
        while j < n and owners[j] == owner:
            j += 1
        if owner >= 0:
            anchors.append(AnchorSpan(text[i:j], targets[owner], i, j))
        i = j
    return text, anchors


def extract_leading_paragraph(wikitext: str, doc_id: str = "", source_title: str = "") -> Paragraph:
    """Plain-text lead section of an article with its anchor links as spans.

    The lead is everything before the first ``==`` heading. Templates, tables,
    comments, references and file/category links are removed; internal links
    are inlined as their visible text and recorded as :class:`AnchorSpan`.
    """
    quality = []
    text = _COMMENT.sub("", wikitext)
    heading = _HEADING.search(text)
    if heading:
        text = text[:heading.start()]
    text = _REF_PAIR.sub("", text)
    text = _REF_SELF.sub("", text)
    text = _DROP_BLOCKS.sub("", text)
    text, broken = _strip_balanced(text, "{{", "}}")
    if broken:
        quality.append("unbalanced_template")
    text, broken = _strip_balanced(text, "{|", "|}")
    if broken:
        quality.append("unbalanced_table")
    plain, anchors = _layout(_segments(text))
    para = Paragraph(doc_id=doc_id, source_title=source_title, text=plain,
                     anchors=anchors, quality=quality)
    return para


def paragraph_from_article(article: ArticleRecord) -> Paragraph:
    return extract_leading_paragraph(article.wikitext, str(article.page_id), article.title)


def resolve_anchor_targets(paragraph: Paragraph, title_index: dict[str, str]) -> Paragraph:
    """Attach qids to anchors whose normalized target is indexed; drop the rest."""
    kept = []
    dropped = 0
    for a in paragraph.anchors:
        qid = title_index.get(normalize_title(a.target_title))
        if qid is None:
            dropped += 1
            continue
        kept.append(replace(a, qid=qid))
    return replace(paragraph, anchors=kept, dropped_anchors=paragraph.dropped_anchors + dropped)
