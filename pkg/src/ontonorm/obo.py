"""OBO flat-file parsing and dataset normalization.

Only the subset the pipeline needs is interpreted: the format-version
header, ``[Term]`` stanzas with ``id``, ``name``, ``synonym``, ``is_a``,
``relationship`` and ``is_obsolete`` tags. ``[Typedef]`` and other stanza
kinds are skipped, unrecognized tag lines are logged at debug level.

Normalization applies three dedup rules before anything downstream sees
the data: synonyms equal to their own entity name are dropped, entities
sharing a name keep their edges but lose their synonyms, and a synonym
text mapping to several entities is kept only for the first one in file
order. Comparisons are case-insensitive with whitespace collapsed.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, TextIO, Union

logger = logging.getLogger(__name__)

SYNONYM_SCOPES = ("EXACT", "BROAD", "NARROW", "RELATED")

_SYNONYM_RE = re.compile(r'^"((?:[^"\\]|\\.)*)"\s*(.*)$')
_SCOPE_RE = re.compile(r"^(EXACT|BROAD|NARROW|RELATED)\b")


class MalformedStanza(ValueError):
    """A [Term] stanza without an id."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class BadSynonymQuoting(ValueError):
    """A synonym line whose quoted text never terminates."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass
class TermStanza:
    id: str
    name: str | None = None
    synonyms: list[tuple[str, str]] = field(default_factory=list)
    is_a: list[str] = field(default_factory=list)
    relationships: list[tuple[str, str]] = field(default_factory=list)
    is_obsolete: bool = False


@dataclass
class OboDocument:
    terms: list[TermStanza] = field(default_factory=list)
    format_version: str = ""


@dataclass
class NormalizedDataset:
    entities: list[tuple[str, str]]  # (id, phrase)
    pairs: list[tuple[str, str]]  # (synonym, entity id)
    triples: list[tuple[str, str, str]]  # (head id, relation, tail id)
    warnings: list[str] = field(default_factory=list)


def _strip_comment(value: str) -> str:
    return value.split("!", 1)[0].strip()


def _collapse_ws(text: str) -> str:
    return " ".join(text.split())


def parse_obo(source: Union[str, bytes, TextIO, BinaryIO, Path]) -> OboDocument:
    """Parse an OBO stream into term stanzas, preserving file order."""
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    doc = OboDocument()
    current: TermStanza | None = None
    in_term = False
    term_start_line = 0

    def close_current() -> None:
        nonlocal current
        if in_term:
            if current is None or not current.id:
                raise MalformedStanza(term_start_line, "[Term] stanza has no id")
            doc.terms.append(current)
        current = None

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("["):
            close_current()
            in_term = line == "[Term]"
            term_start_line = line_no
            if in_term:
                current = TermStanza(id="")
            continue
        if ":" not in line:
            logger.debug("line %d: ignoring malformed line %r", line_no, line)
            continue
        tag, _, value = line.partition(":")
        tag = tag.strip()
        value = value.strip()

        if not in_term or current is None:
            if not doc.terms and tag == "format-version":
                doc.format_version = value
            continue

        if tag == "id":
            ident = _strip_comment(value)
            if not ident:
                raise MalformedStanza(line_no, "empty id")
            current.id = ident
        elif tag == "name":
            current.name = _collapse_ws(value)
        elif tag == "synonym":
            match = _SYNONYM_RE.match(value)
            if not match:
                raise BadSynonymQuoting(line_no, f"cannot parse synonym line {value!r}")
            syn_text = _collapse_ws(match.group(1).replace('\\"', '"'))
            scope_match = _SCOPE_RE.match(match.group(2))
            scope = scope_match.group(1) if scope_match else "RELATED"
            if syn_text:
                current.synonyms.append((syn_text, scope))
        elif tag == "is_a":
            target = _strip_comment(value)
            if target:
                current.is_a.append(target)
        elif tag == "relationship":
            parts = _strip_comment(value).split()
            if len(parts) >= 2:
                current.relationships.append((parts[0], parts[1]))
            else:
                logger.debug("line %d: ignoring malformed relationship %r", line_no, value)
        elif tag == "is_obsolete":
            current.is_obsolete = value.lower().startswith("true")
        else:
            logger.debug("line %d: ignoring tag %r", line_no, tag)

    close_current()
    return doc


def serialize_obo(doc: OboDocument) -> str:
    """Re-emit the recognized subset; parse(serialize(doc)) == doc."""
    lines: list[str] = []
    if doc.format_version:
        lines.append(f"format-version: {doc.format_version}")
        lines.append("")
    for term in doc.terms:
        lines.append("[Term]")
        lines.append(f"id: {term.id}")
        if term.name is not None:
            lines.append(f"name: {term.name}")
        for text_, scope in term.synonyms:
            escaped = text_.replace('"', '\\"')
            lines.append(f'synonym: "{escaped}" {scope} []')
        for target in term.is_a:
            lines.append(f"is_a: {target}")
        for rel, target in term.relationships:
            lines.append(f"relationship: {rel} {target}")
        if term.is_obsolete:
            lines.append("is_obsolete: true")
        lines.append("")
    return "\n".join(lines)


def normalize_dataset(doc: OboDocument) -> NormalizedDataset:
    """Apply the dedup rules and emit (entities, pairs, triples)."""
    active = [t for t in doc.terms if not t.is_obsolete]
    named: list[TermStanza] = []
    for t in active:
        if t.name:
            named.append(t)
        else:
            logger.debug("term %s has no name; skipped", t.id)

    entities: list[tuple[str, str]] = []
    seen_ids: set[str] = set()
    for t in named:
        if t.id in seen_ids:
            logger.warning("duplicate term id %s; keeping first", t.id)
            continue
        seen_ids.add(t.id)
        entities.append((t.id, t.name))

    entity_ids = {eid for eid, _ in entities}
    name_key = {eid: _collapse_ws(phrase).lower() for eid, phrase in entities}
    name_counts: dict[str, int] = {}
    for key in name_key.values():
        name_counts[key] = name_counts.get(key, 0) + 1

    pairs: list[tuple[str, str]] = []
    seen_synonyms: set[str] = set()
    kept_terms = [t for t in named if t.id in entity_ids]
    for t in kept_terms:
        own_key = name_key[t.id]
        if name_counts[own_key] > 1:
            continue  # rule (b): shared name, synonyms abandoned
        for syn_text, _scope in t.synonyms:
            key = syn_text.lower()
            if key == own_key:
                continue  # rule (a): synonym equals its entity name
            if key in seen_synonyms:
                continue  # rule (c): first mapping wins
            seen_synonyms.add(key)
            pairs.append((syn_text, t.id))

    triples: list[tuple[str, str, str]] = []
    warnings: list[str] = []
    for t in kept_terms:
        for target in t.is_a:
            if target in entity_ids:
                triples.append((t.id, "is_a", target))
            else:
                warnings.append(f"DanglingEdge: ({t.id}, is_a, {target}) target unknown; dropped")
        for rel, target in t.relationships:
            if target in entity_ids:
                triples.append((t.id, rel, target))
            else:
                warnings.append(f"DanglingEdge: ({t.id}, {rel}, {target}) target unknown; dropped")

    return NormalizedDataset(entities=entities, pairs=pairs, triples=triples, warnings=warnings)


def write_dataset_tsvs(dataset: NormalizedDataset, directory) -> None:
    """Write entities.tsv, pairs.tsv, triples.tsv with the documented columns."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def dump(name: str, rows: Iterable[tuple]) -> None:
        with open(directory / name, "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write("\t".join(row) + "\n")

    dump("entities.tsv", dataset.entities)
    dump("pairs.tsv", dataset.pairs)
    dump("triples.tsv", dataset.triples)
