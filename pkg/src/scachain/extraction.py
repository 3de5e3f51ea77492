"""Sentence-to-SCA-node extraction through pluggable backends."""

from __future__ import annotations

import json
import logging
import re
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .backends import PromptRequest, ServiceClient
from .corpus import CorpusRecord
from .errors import MalformedBackendOutput
from .sca import FIELDS, SENTINEL, STATE_PREFIXES, ScaNode, SourceRef

logger = logging.getLogger(__name__)

Fields = dict[str, str]


class ExtractionBackend(ABC):
    name = "abstract"

    @abstractmethod
    def extract_fields(self, record: CorpusRecord) -> Fields | None:
        """Return the four SCA fields, or ``None`` when the sentence is not a function event."""


# ---------------------------------------------------------------------------
# Response parsing for the service backend
# ---------------------------------------------------------------------------

_LABEL_RE = re.compile(
    r"^\s*[*#\-\s]*(?P<label>start\s*state|condition|action|end\s*state)\s*[*]*\s*:\s*(?P<value>.*)$",
    re.IGNORECASE,
)
_NO_EVENT_RE = re.compile(r"^\s*no[\s_-]*event\b", re.IGNORECASE)


def parse_sca_response(text: str) -> Fields | None:
    """Parse four labeled lines; a missing label yields the sentinel.

    Raises MalformedBackendOutput when no label at all is present.
    """
    if _NO_EVENT_RE.match(text):
        return None
    found: Fields = {}
    for line in text.splitlines():
        m = _LABEL_RE.match(line)
        if not m:
            continue
        key = "_".join(m.group("label").lower().split())
        key = {"start_state": "start_state", "startstate": "start_state",
               "end_state": "end_state", "endstate": "end_state"}.get(key, key)
        value = " ".join(m.group("value").split())
        found.setdefault(key, value or SENTINEL)
    if not found:
        raise MalformedBackendOutput(f"no labeled SCA fields in response: {text[:120]!r}")
    return {f: found.get(f, SENTINEL) for f in FIELDS}


# ---------------------------------------------------------------------------
# Service backend
# ---------------------------------------------------------------------------


def load_icl_examples(path: Path | str | None = None) -> dict[str, list[dict]]:
    if path is None:
        raw = resources.files("scachain.data").joinpath("icl_examples.json").read_text("utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    return json.loads(raw)


def render_examples(examples: Sequence[dict]) -> str:
    blocks = []
    for i, ex in enumerate(examples, start=1):
        blocks.append(
            f"Example {i}\n"
            f"Sentence: {ex['sentence']}\n"
            f"Start State: {ex['start_state']}\n"
            f"Condition: {ex['condition']}\n"
            f"Action: {ex['action']}\n"
            f"End State: {ex['end_state']}\n"
        )
    return "\n".join(blocks)


class ServiceBackend(ExtractionBackend):
    name = "service"

    def __init__(
        self,
        client: ServiceClient,
        examples: dict[str, list[dict]] | None = None,
        examples_per_spec: int = 2,
    ):
        self.client = client
        self.examples = examples if examples is not None else load_icl_examples()
        self.examples_per_spec = examples_per_spec

    def request_for(self, record: CorpusRecord) -> PromptRequest:
        pool = self.examples.get(record.spec_id) or self.examples.get("default", [])
        return PromptRequest(
            "sca_extract",
            {
                "examples": render_examples(pool[: self.examples_per_spec]),
                "spec_id": record.spec_id,
                "sentence": record.sentence.text,
            },
            max_response_chars=4000,
        )

    def extract_fields(self, record: CorpusRecord) -> Fields | None:
        return parse_sca_response(self.client.complete(self.request_for(record)))


# ---------------------------------------------------------------------------
# Deterministic pattern backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatternLexicon:
    state_prefixes: tuple[str, ...] = STATE_PREFIXES
    condition_cues: tuple[str, ...] = (
        "upon receipt of", "upon reception of", "on receipt of", "upon", "if", "when", "after", "once",
    )
    non_event_openers: tuple[str, ...] = (
        "this clause", "this subclause", "the present clause", "the present document",
        "this document", "the purpose of", "in this clause", "in this subclause",
    )

    def state_re(self) -> re.Pattern:
        prefixes = "|".join(sorted(map(re.escape, self.state_prefixes), key=len, reverse=True))
        return re.compile(
            rf"\b(?:{prefixes})(?:[-_][A-Z0-9]+)+(?:\.[A-Z][A-Z0-9-]*)?(?:\s+(?:mode|state))?"
            rf"|\b(?:{prefixes})\s+[A-Z]{{3,}}(?:[-_][A-Z]+)*(?:\s+(?:mode|state))?"
        )


_TRIGGER_RE = re.compile(r"\b(?:shall|enters|enter|initiates|initiate)\b", re.IGNORECASE)
_ENTER_TARGET_TMPL = (
    r"\b(?:enters?|entering|transitions?\s+to|moves?\s+to|returns?\s+to|remains?\s+in|stays?\s+in)"
    r"\s+(?:the\s+)?(?:state\s+)?(?P<state>{state})"
)
_WAITING_RE = re.compile(r"\bwaiting for (?P<what>(?:(?!\bfrom\b)[^,;])+)", re.IGNORECASE)


class PatternBackend(ExtractionBackend):
    """Cue-based extraction; never infers a missing field, the sentinel is used instead."""

    name = "pattern"

    def __init__(self, lexicon: PatternLexicon | None = None):
        self.lexicon = lexicon or PatternLexicon()
        self._state_re = self.lexicon.state_re()
        self._enter_re = re.compile(_ENTER_TARGET_TMPL.format(state=self._state_re.pattern))
        cues = sorted(self.lexicon.condition_cues, key=len, reverse=True)
        self._lead_cue_re = re.compile(r"^(?:" + "|".join(map(re.escape, cues)) + r")\b", re.IGNORECASE)
        self._mid_cue_re = re.compile(r"\s\b(?:" + "|".join(map(re.escape, cues)) + r")\b", re.IGNORECASE)

    def extract_fields(self, record: CorpusRecord) -> Fields | None:
        return self.extract_text(record.sentence.text)

    def extract_text(self, sentence: str) -> Fields | None:
        text = sentence.strip().rstrip(".").strip()
        lowered = text.lower()
        if any(lowered.startswith(opener) for opener in self.lexicon.non_event_openers):
            return None
        trigger = _TRIGGER_RE.search(text)
        if trigger is None:
            return None

        condition = None
        body_start = 0
        lead = self._lead_cue_re.match(text)
        if lead and lead.start() < trigger.start():
            comma = text.find(",", 0, trigger.start())
            if comma > 0:
                condition = text[:comma]
                body_start = comma + 1

        if trigger.group(0).lower() == "shall":
            action_start = trigger.end()
        else:
            action_start = trigger.start()
        action = text[action_start:]
        subject = text[body_start:trigger.start()]
        if condition is None:
            mid = self._mid_cue_re.search(action)
            if mid is not None:
                condition = action[mid.start():].strip()
                action = action[: mid.start()]
        action = re.sub(r"\b(enters?|enter)\s+the\s+state\s+", r"\1 ", action.strip(" ,;"))
        if not action:
            return None

        start_state = None
        for source in (condition or "", subject):
            m = self._state_re.search(source)
            if m:
                start_state = m.group(0)
                break

        end_state = None
        target = self._enter_re.search(action)
        if target:
            end_state = target.group("state")
            waiting = _WAITING_RE.search(text)
            if waiting:
                end_state = f"{end_state}, waiting for {waiting.group('what').strip()}"
            if start_state is None and re.match(r"(?i)remains?|stays?", target.group(0)):
                start_state = target.group("state")

        if condition:
            condition = condition[0].lower() + condition[1:]
        return {
            "start_state": start_state or SENTINEL,
            "condition": condition or SENTINEL,
            "action": action,
            "end_state": end_state or SENTINEL,
        }


# ---------------------------------------------------------------------------
# Batch extraction
# ---------------------------------------------------------------------------


def extract(
    records: Iterable[CorpusRecord],
    backend: ExtractionBackend,
    *,
    jobs: int = 1,
    skipped: list[tuple[CorpusRecord, str]] | None = None,
) -> list[ScaNode]:
    """Extract one node per function-event sentence; ids follow corpus order starting at 1.

    Unparseable responses are logged and skipped; BackendUnavailable propagates.
    """
    records = list(records)

    def run(record: CorpusRecord) -> Fields | None | MalformedBackendOutput:
        try:
            return backend.extract_fields(record)
        except MalformedBackendOutput as exc:
            return exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, records))
    else:
        results = [run(r) for r in records]

    nodes = []
    for record, result in zip(records, results):
        if isinstance(result, MalformedBackendOutput):
            logger.warning(
                "skipping %s sentence %d: %s", record.spec_id, record.sentence.sentence_id, result
            )
            if skipped is not None:
                skipped.append((record, str(result)))
            continue
        if result is None:
            continue
        source = SourceRef(record.spec_id, record.clause_id, record.sentence.sentence_id)
        nodes.append(
            ScaNode.build(len(nodes) + 1, source, sentence_refs=record.sentence.references, **result)
        )
    return nodes
