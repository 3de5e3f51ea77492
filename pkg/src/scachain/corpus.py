"""Specification text ingestion: sanitation, clause segmentation, reference detection.

Sanitation works line by line and is idempotent. Each line is cleaned until it
stops changing:

- leading bullet symbols (dots, bullets, hyphens) are stripped; such lines are
  list fragments and lose their trailing punctuation,
- whitespace runs collapse to one space, empty parentheses are removed,
- code points outside ASCII (plus a few typographic quotes and dashes) are dropped,
- table and figure residue (captions, lines with 3+ column separators) is dropped.

Clause references ("as specified in subclause 5.4", "see clause 6", "TS 24.301
subclause 5.5") always survive sanitation. A residue line carrying a reference
is kept with its separators blanked instead of being dropped.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import MalformedHeading
from .store import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Reference patterns
# ---------------------------------------------------------------------------

# characters the sanitizer treats as line breaks; references never span lines
_BREAKS = "\n\r\f\v\x85\u2028\u2029"
_HS = rf"[^\S{_BREAKS}]"
_SP = rf"{_HS}+"
_NUM = r"[0-9]+(?:\.[0-9]+)*"
# printable characters outside ASCII that survive sanitation
_EXTRA_KEPT = frozenset("‘’“”–—")
# anything sanitation blanks out, plus stray brackets and cell bars, can sit between a
# spec number and its clause without splitting the reference
_GAP = rf"(?:[\[\](),|]|[^\x21-\x7e{''.join(sorted(_EXTRA_KEPT))}{_BREAKS}])"

REFERENCE_RE = re.compile(
    rf"(?<![A-Za-z0-9_])(?:(?:as{_SP}specified{_SP}in|in|see){_SP})?"
    rf"(?:"
    rf"(?:3GPP{_SP})?TS{_SP}(?P<spec>[0-9]{{2}}\.[0-9]{{3}})(?:{_SP}\[[0-9]+\])?"
    rf"(?:{_GAP}*(?:sub)?clause{_SP}(?P<spec_clause>{_NUM}))?"
    rf"|(?:sub)?clause{_SP}(?P<clause>{_NUM})"
    rf")",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class ClauseRef:
    target_clause: str
    target_spec: str | None = None
    source_span: tuple[int, int] = (0, 0)

    @property
    def key(self) -> tuple[str | None, str]:
        return (self.target_spec, self.target_clause)

    def to_dict(self) -> dict:
        return {
            "target_clause": self.target_clause,
            "target_spec": self.target_spec,
            "source_span": list(self.source_span),
        }

    @classmethod
    def from_dict(cls, data: dict) -> ClauseRef:
        return cls(data["target_clause"], data.get("target_spec"), tuple(data["source_span"]))


def detect_references(sentence_text: str) -> list[ClauseRef]:
    """Return every clause reference in ``sentence_text``, left to right.

    A bare "TS nn.nnn" reference has an empty ``target_clause`` (whole document).
    Matches never overlap since they come from a single left-to-right scan.
    """
    refs = []
    for m in REFERENCE_RE.finditer(sentence_text):
        if m.group("spec"):
            spec = f"TS {m.group('spec')}"
            clause = m.group("spec_clause") or ""
        else:
            spec = None
            clause = m.group("clause")
        refs.append(ClauseRef(clause, spec, (m.start(), m.end())))
    return refs


def count_references(text: str) -> int:
    return sum(1 for _ in REFERENCE_RE.finditer(text))


# ---------------------------------------------------------------------------
# Sanitation
# ---------------------------------------------------------------------------

_LEADING_BULLET_RE = re.compile(
    r"^(?:[-*.>•·‣⁃–—▪●◦][^\S\n]*)+"
)
_EMPTY_PARENS_RE = re.compile(r"\(\s*\)|\[\s*\]")
_SPACE_RUN_RE = re.compile(r"[^\S\n]+")
_TRAILING_PUNCT_RE = re.compile(r"[\s,;:.]+$")
_CAPTION_RE = re.compile(r"^(?:Table|Figure)\s+[A-Z]?\d+(?:[.\-]\d+)*", re.IGNORECASE)
_COLUMN_SEPARATORS = "|\t"
_NEWLINES_RE = re.compile(rf"\r\n|[{_BREAKS}]")


def _keep_char(ch: str) -> bool:
    return (" " <= ch <= "~") or ch in _EXTRA_KEPT


def _is_residue(line: str) -> bool:
    if _CAPTION_RE.match(line.strip()):
        return True
    return sum(line.count(sep) for sep in _COLUMN_SEPARATORS) >= 3


def _clean_line_once(line: str) -> str | None:
    if _is_residue(line):
        if not REFERENCE_RE.search(line):
            return None
        for sep in _COLUMN_SEPARATORS:
            line = line.replace(sep, " ")
    # unicode spaces become plain spaces before the code-point filter so words don't merge
    line = "".join(" " if ch.isspace() else ch for ch in line)
    line = line.strip()
    stripped = _LEADING_BULLET_RE.sub("", line)
    is_fragment = stripped != line
    # dropped code points leave a space behind so neighbouring words stay apart
    line = "".join(ch if _keep_char(ch) else " " for ch in stripped)
    prev = None
    while prev != line:
        prev = line
        line = _EMPTY_PARENS_RE.sub(" ", line)
    line = _SPACE_RUN_RE.sub(" ", line).strip()
    if is_fragment:
        line = _TRAILING_PUNCT_RE.sub("", line)
    return line or None


def _clean_line(line: str) -> str | None:
    current: str | None = line
    for _ in range(64):
        cleaned = _clean_line_once(current)
        if cleaned is None or cleaned == current:
            return cleaned
        current = cleaned
    return current


def sanitize(raw_text: str) -> str:
    """Normalize extracted specification text; the result keeps one line per input line."""
    lines = _NEWLINES_RE.sub("\n", raw_text).split("\n")
    kept = (_clean_line(line) for line in lines)
    return "\n".join(line for line in kept if line)


# ---------------------------------------------------------------------------
# Sentence splitting
# ---------------------------------------------------------------------------

ABBREVIATIONS = frozenset(
    {"i.e.", "e.g.", "etc.", "cf.", "vs.", "fig.", "no.", "approx.", "incl.", "resp.", "e.g.,", "i.e.,"}
)
_BOUNDARY_RE = re.compile(r"[.!?]+(?=\s+\S)")
_DOTTED_NUMBER_RE = re.compile(r"^\(?\d+(?:\.\d+)+\.$")
_PLAIN_NUMBER_RE = re.compile(r"^\d+\.$")


def _is_clause_number(text: str, word_start: int, word: str) -> bool:
    if _DOTTED_NUMBER_RE.match(word):
        return True
    if _PLAIN_NUMBER_RE.match(word):
        before = text[:word_start].rstrip().lower()
        return before.endswith("clause")
    return False


def split_sentences(text: str) -> list[str]:
    """Split a single-line paragraph into sentences.

    Never splits after a known abbreviation. After a clause number ("subclause 5.4.")
    it splits only if the next word starts with an uppercase letter.
    """
    sentences = []
    start = 0
    for m in _BOUNDARY_RE.finditer(text):
        end = m.end()
        word_start = text.rfind(" ", 0, m.start()) + 1
        word = text[word_start:end]
        if word.lower() in ABBREVIATIONS:
            continue
        nxt = text[end:].lstrip()[:1]
        if _is_clause_number(text, word_start, word) and not nxt.isupper():
            continue
        sentence = text[start:end].strip()
        if sentence:
            sentences.append(sentence)
        start = end
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


# ---------------------------------------------------------------------------
# Document model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sentence:
    sentence_id: int
    text: str
    references: tuple[ClauseRef, ...] = ()


@dataclass
class Clause:
    clause_id: str
    title: str
    sentences: list[Sentence] = field(default_factory=list)
    children: list[Clause] = field(default_factory=list)


@dataclass
class SpecDocument:
    spec_id: str
    version: str = ""
    clauses: list[Clause] = field(default_factory=list)
    issues: list[MalformedHeading] = field(default_factory=list)

    def iter_clauses(self) -> Iterator[Clause]:
        stack = list(reversed(self.clauses))
        while stack:
            clause = stack.pop()
            yield clause
            stack.extend(reversed(clause.children))

    def clause_ids(self) -> set[str]:
        return {c.clause_id for c in self.iter_clauses()}

    def records(self) -> list[CorpusRecord]:
        out = [
            CorpusRecord(self.spec_id, clause.clause_id, sentence)
            for clause in self.iter_clauses()
            for sentence in clause.sentences
        ]
        out.sort(key=lambda r: r.sentence.sentence_id)
        return out

    def outline(self) -> list[list[str | None]]:
        """Clause tree as ``[clause_id, title, parent_id]`` rows in document order."""
        rows: list[list[str | None]] = []

        def walk(clause: Clause, parent: str | None) -> None:
            rows.append([clause.clause_id, clause.title, parent])
            for child in clause.children:
                walk(child, clause.clause_id)

        for root in self.clauses:
            walk(root, None)
        return rows


@dataclass(frozen=True)
class CorpusRecord:
    """One sentence with its provenance; the unit written to the corpus file."""

    spec_id: str
    clause_id: str
    sentence: Sentence

    def to_dict(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "clause_id": self.clause_id,
            "sentence_id": self.sentence.sentence_id,
            "text": self.sentence.text,
            "references": [r.to_dict() for r in self.sentence.references],
        }

    @classmethod
    def from_dict(cls, data: dict) -> CorpusRecord:
        sentence = Sentence(
            data["sentence_id"],
            data["text"],
            tuple(ClauseRef.from_dict(r) for r in data["references"]),
        )
        return cls(data["spec_id"], data["clause_id"], sentence)


def parent_clause_id(clause_id: str) -> str | None:
    head, sep, _ = clause_id.rpartition(".")
    return head if sep else None


def is_within(clause_id: str, ancestor: str) -> bool:
    """True when ``clause_id`` equals ``ancestor`` or lies below it in the tree."""
    return clause_id == ancestor or clause_id.startswith(ancestor + ".")


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

_HEADING_RE = re.compile(r"^(?P<num>\d+(?:\.\d+)*)\.?[ \t]+(?P<title>[A-Z0-9].*)$")
_PARAGRAPH_START_RE = re.compile(
    r"^\s*(?:[-*•·‣⁃–—▪●◦]|NOTE\b|[a-z0-9]\))"
)
_MAX_TITLE_LEN = 120


def _heading(line: str) -> tuple[str, str] | None:
    m = _HEADING_RE.match(line.strip())
    if not m:
        return None
    title = m.group("title").strip()
    if len(title) > _MAX_TITLE_LEN or title.endswith((".", ";", ",", ":")):
        return None
    return m.group("num"), " ".join(title.split())


def segment(spec_id: str, raw_document: str, version: str = "") -> SpecDocument:
    """Build the clause tree of ``raw_document`` with sanitized, split sentences.

    Headings whose parent is missing are attached to their nearest existing
    ancestor (or the root) and recorded in ``SpecDocument.issues``. Body text
    before the first heading is treated as front matter and skipped.
    """
    doc = SpecDocument(spec_id, version)
    by_id: dict[str, Clause] = {}
    current: Clause | None = None
    paragraph: list[str] = []
    next_id = 1
    front_matter = 0

    def flush() -> None:
        nonlocal next_id, paragraph, front_matter
        if not paragraph:
            return
        raw, paragraph = "\n".join(paragraph), []
        if current is None:
            front_matter += 1
            return
        text = " ".join(sanitize(raw).split("\n"))
        for sentence_text in split_sentences(text):
            refs = tuple(detect_references(sentence_text))
            current.sentences.append(Sentence(next_id, sentence_text, refs))
            next_id += 1

    for line_no, line in enumerate(_NEWLINES_RE.sub("\n", raw_document).split("\n"), start=1):
        heading = _heading(line)
        if heading is not None:
            flush()
            clause_id, title = heading
            if clause_id in by_id:
                err = MalformedHeading(line_no, clause_id, clause_id)
                logger.warning("duplicate heading: %s", err)
                doc.issues.append(err)
                current = by_id[clause_id]
                continue
            clause = Clause(clause_id, title)
            parent = parent_clause_id(clause_id)
            anchor = parent
            while anchor is not None and anchor not in by_id:
                anchor = parent_clause_id(anchor)
            if parent is not None and anchor != parent:
                err = MalformedHeading(line_no, clause_id, anchor)
                logger.warning("%s", err)
                doc.issues.append(err)
            if anchor is None:
                doc.clauses.append(clause)
            else:
                by_id[anchor].children.append(clause)
            by_id[clause_id] = clause
            current = clause
            continue
        if not line.strip():
            flush()
        elif _PARAGRAPH_START_RE.match(line):
            flush()
            paragraph.append(line)
        else:
            paragraph.append(line)
    flush()
    if front_matter:
        logger.info("%s: skipped %d front-matter paragraph(s)", spec_id, front_matter)
    return doc


# ---------------------------------------------------------------------------
# Corpus file
# ---------------------------------------------------------------------------


@dataclass
class Corpus:
    documents: list[SpecDocument]

    def records(self) -> list[CorpusRecord]:
        return [r for doc in self.documents for r in doc.records()]

    def document(self, spec_id: str) -> SpecDocument | None:
        for doc in self.documents:
            if doc.spec_id == spec_id:
                return doc
        return None


def write_corpus(path: Path, documents: Sequence[SpecDocument], meta: dict) -> None:
    header = dict(meta)
    header["documents"] = [
        {"spec_id": d.spec_id, "version": d.version, "clauses": d.outline()} for d in documents
    ]
    write_jsonl(path, (r.to_dict() for d in documents for r in d.records()), header)


def read_corpus(path: Path) -> Corpus:
    meta, rows = read_jsonl(path)
    documents = []
    for info in meta.get("documents", []):
        doc = SpecDocument(info["spec_id"], info.get("version", ""))
        by_id: dict[str, Clause] = {}
        for clause_id, title, parent in info["clauses"]:
            clause = Clause(clause_id, title)
            by_id[clause_id] = clause
            (by_id[parent].children if parent is not None else doc.clauses).append(clause)
        documents.append((doc, by_id))
    lookup = {doc.spec_id: by_id for doc, by_id in documents}
    for row in rows:
        record = CorpusRecord.from_dict(row)
        lookup[record.spec_id][record.clause_id].sentences.append(record.sentence)
    return Corpus([doc for doc, _ in documents])


def flatten(documents: Iterable[SpecDocument]) -> list[CorpusRecord]:
    return [r for doc in documents for r in doc.records()]
