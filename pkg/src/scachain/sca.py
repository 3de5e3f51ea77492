"""State-Condition-Action node model, state canonicalization and completeness."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import ClauseRef, detect_references
from .store import read_jsonl, write_jsonl

SENTINEL = "Not explicitly defined"
# NUL never survives canonicalize(), so no real state can collide with this value
SENTINEL_CANONICAL = "\x00not-explicitly-defined"

FIELDS = ("start_state", "condition", "action", "end_state")

STATE_PREFIXES = ("5GMM", "5GSM", "EMM", "ESM", "GMM", "MM", "RRC")
_STATE_TOKEN_RE = re.compile(
    r"\b(?P<prefix>" + "|".join(STATE_PREFIXES) + r")"
    r"(?P<rest>(?:[-_ ]+[A-Z][A-Z0-9]*)+)\b"
)
_CONTROL_RE = re.compile(r"[\x00-\x1f\x7f]")
_WS_RE = re.compile(r"\s+")
_EDGE_PUNCT = " \t\n.,;:!?\"'()[]{}"


def _join_state_token(m: re.Match) -> str:
    words = [w for w in re.split(r"[-_ ]+", m.group("rest")) if w]
    return "-".join([m.group("prefix"), *words])


def canonicalize(state_raw: str) -> str:
    """Normalize a state description for exact comparison.

    >>> canonicalize("5GMM  IDLE mode.")
    '5gmm-idle mode'
    """
    if state_raw == SENTINEL:
        return SENTINEL_CANONICAL
    text = _CONTROL_RE.sub(" ", state_raw)
    text = _WS_RE.sub(" ", text).strip()
    text = _STATE_TOKEN_RE.sub(_join_state_token, text)
    return text.lower().strip(_EDGE_PUNCT)


def is_sentinel(value: str) -> bool:
    return value == SENTINEL


def _field_value(value: str | None) -> str:
    if value is None:
        return SENTINEL
    value = " ".join(value.split())
    return value or SENTINEL


@dataclass(frozen=True)
class StateText:
    raw: str

    @property
    def canonical(self) -> str:
        return canonicalize(self.raw)

    @property
    def is_sentinel(self) -> bool:
        return self.raw == SENTINEL

    def __str__(self) -> str:
        return self.raw


@dataclass(frozen=True)
class SourceRef:
    spec_id: str
    clause_id: str
    sentence_id: int


@dataclass(frozen=True)
class ScaNode:
    node_id: int
    start_state: StateText
    condition: str
    action: str
    end_state: StateText
    source: SourceRef
    references: tuple[ClauseRef, ...] = field(default=())

    @classmethod
    def build(
        cls,
        node_id: int,
        source: SourceRef,
        *,
        start_state: str | None = None,
        condition: str | None = None,
        action: str | None = None,
        end_state: str | None = None,
        sentence_refs: Iterable[ClauseRef] = (),
    ) -> ScaNode:
        """Create a node, filling missing fields with the sentinel and merging references."""
        node = cls(
            node_id,
            StateText(_field_value(start_state)),
            _field_value(condition),
            _field_value(action),
            StateText(_field_value(end_state)),
            source,
        )
        return node.with_references(merge_references(sentence_refs, node.field_references()))

    def with_references(self, refs: Iterable[ClauseRef]) -> ScaNode:
        return ScaNode(
            self.node_id, self.start_state, self.condition, self.action, self.end_state,
            self.source, tuple(refs),
        )

    def with_id(self, node_id: int) -> ScaNode:
        return ScaNode(
            node_id, self.start_state, self.condition, self.action, self.end_state,
            self.source, self.references,
        )

    def fields(self) -> dict[str, str]:
        return {
            "start_state": self.start_state.raw,
            "condition": self.condition,
            "action": self.action,
            "end_state": self.end_state.raw,
        }

    def text(self) -> str:
        """All non-sentinel fields joined by newlines."""
        return "\n".join(v for v in self.fields().values() if v != SENTINEL)

    def field_references(self) -> list[ClauseRef]:
        return [r for v in self.fields().values() if v != SENTINEL for r in detect_references(v)]

    @property
    def reference_keys(self) -> set[tuple[str | None, str]]:
        return {r.key for r in self.references}

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "spec_id": self.source.spec_id,
            "clause_id": self.source.clause_id,
            "sentence_id": self.source.sentence_id,
            **self.fields(),
            "references": [r.to_dict() for r in self.references],
        }

    @classmethod
    def from_dict(cls, data: dict) -> ScaNode:
        return cls(
            data["node_id"],
            StateText(data["start_state"]),
            data["condition"],
            data["action"],
            StateText(data["end_state"]),
            SourceRef(data["spec_id"], data["clause_id"], data["sentence_id"]),
            tuple(ClauseRef.from_dict(r) for r in data.get("references", [])),
        )


def merge_references(*groups: Iterable[ClauseRef]) -> list[ClauseRef]:
    """Concatenate reference lists, keeping the first occurrence of each target."""
    seen = set()
    out = []
    for group in groups:
        for ref in group:
            if ref.key not in seen:
                seen.add(ref.key)
                out.append(ref)
    return out


@dataclass(frozen=True, order=True)
class CompletenessScore:
    fields_present: int

    def __int__(self) -> int:
        return self.fields_present


def completeness(node: ScaNode) -> CompletenessScore:
    return CompletenessScore(sum(1 for v in node.fields().values() if v != SENTINEL))


def write_nodes(path: Path, nodes: Iterable[ScaNode], meta: dict) -> None:
    write_jsonl(path, (n.to_dict() for n in nodes), meta)


def read_nodes(path: Path) -> list[ScaNode]:
    _, rows = read_jsonl(path)
    return [ScaNode.from_dict(r) for r in rows]
