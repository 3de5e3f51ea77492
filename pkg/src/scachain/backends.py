"""Inference-service client with a replayable response cache, plus deterministic judges.

The service judges and the extraction backend all go through :class:`ServiceClient`.
Every rendered prompt is hashed; the hash keys an on-disk cache so that a run
with a frozen cache never touches the network.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import math
import os
import re
import threading
import time
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable, Mapping

from .errors import BackendUnavailable, MalformedBackendOutput, ResponseTooLarge
from .sca import SENTINEL, ScaNode

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "MODEL_ENDPOINT_URL"
API_KEY_ENV = "MODEL_API_KEY"

# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

TEMPLATES: dict[str, str] = {
    "sca_extract": """\
You read 3GPP technical specifications and extract state transitions.
For the specification sentence below, describe the transition it specifies as
exactly four labeled lines:
Start State: <state before the transition>
Condition: <triggering event or prerequisite>
Action: <operation mandated when the condition holds>
End State: <state after the action>
Keep clause references such as "as specified in subclause X.Y.Z" verbatim in the
most relevant field. Combine several operations of one sentence into one Action
joined by "and". When a field is not stated, infer it from the sentence if you
can; otherwise write "Not explicitly defined".
If the sentence specifies no function event, answer with the single line NO EVENT.

$examples
Specification: $spec_id
Sentence: $sentence
""",
    "semantic_verify": """\
Two state descriptions were extracted from the 3GPP specification $spec_id.
State A (end state of one transition): $state_a
State B (start state of another transition): $state_b
Do A and B denote the same protocol state, so that a transition ending in A can be
followed by a transition starting in B? Consider entailment, contradiction and overlap.
Answer YES or NO on the first line.
""",
    "causal_judge": """\
Transition I from $spec_id:
$node_i
Transition J from $spec_id:
$node_j
Is a state, condition or action of transition I a plausible prerequisite or cause
of the state, condition or action of transition J?
Answer YES or NO on the first line.
""",
    "property_check": """\
Security property: $property
Sub-properties to consider:
$sub_checks
Transition under analysis ($spec_id, clause $clause_id):
$node
Related transitions and specification context:
$context
An attacker applies the attack "$attack" to the messages of this transition.
Can the attacked transition violate the security property?
Answer YES or NO on the first line, then give a short rationale.
""",
}


def template_slots(template: str) -> set[str]:
    slots = set()
    for m in Template.pattern.finditer(template):
        name = m.group("named") or m.group("braced")
        if name:
            slots.add(name)
    return slots


@dataclass(frozen=True)
class PromptRequest:
    template_id: str
    slots: Mapping[str, str]
    max_response_chars: int = 4000

    def __post_init__(self) -> None:
        if self.template_id not in TEMPLATES:
            raise KeyError(f"unknown prompt template {self.template_id!r}")
        missing = template_slots(TEMPLATES[self.template_id]) - set(self.slots)
        if missing:
            raise ValueError(f"template {self.template_id!r} missing slots: {sorted(missing)}")

    def render(self) -> str:
        return Template(TEMPLATES[self.template_id]).substitute(self.slots)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.render().encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CachedResponse:
    request_digest: str
    template_id: str
    response_text: str
    timestamp: str = ""

    def to_dict(self) -> dict:
        return {
            "request_digest": self.request_digest,
            "template_id": self.template_id,
            "response_text": self.response_text,
            "timestamp": self.timestamp,
        }


class ResponseCache:
    """Digest-keyed response store, optionally persisted as one JSON record per line."""

    def __init__(self, path: Path | str | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, CachedResponse] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries.setdefault(
                            rec["request_digest"],
                            CachedResponse(
                                rec["request_digest"], rec.get("template_id", ""),
                                rec["response_text"], rec.get("timestamp", ""),
                            ),
                        )

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, request_digest: str) -> bool:
        return request_digest in self._entries

    def get(self, request_digest: str) -> CachedResponse | None:
        return self._entries.get(request_digest)

    def put_if_absent(self, entry: CachedResponse) -> CachedResponse:
        with self._lock:
            existing = self._entries.get(entry.request_digest)
            if existing is not None:
                return existing
            self._entries[entry.request_digest] = entry
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")
            return entry

    def digest(self) -> str:
        """Content hash of the cache, independent of insertion order and timestamps."""
        h = hashlib.sha256()
        for key in sorted(self._entries):
            h.update(key.encode())
            h.update(b"\0")
            h.update(self._entries[key].response_text.encode("utf-8"))
            h.update(b"\0")
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------

Transport = Callable[[str, str | None, str, int], str]


def http_transport(url: str, api_key: str | None, prompt: str, max_chars: int) -> str:
    """POST the prompt as JSON and pull the completion text out of common response shapes."""
    body = json.dumps({"prompt": prompt, "max_response_chars": max_chars}).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=120) as resp:
        payload = resp.read().decode("utf-8")
    try:
        data = json.loads(payload)
    except json.JSONDecodeError:
        return payload
    if isinstance(data, str):
        return data
    for key in ("text", "response", "completion", "output"):
        if isinstance(data.get(key), str):
            return data[key]
    choices = data.get("choices") or []
    if choices:
        choice = choices[0]
        if isinstance(choice.get("text"), str):
            return choice["text"]
        message = choice.get("message") or {}
        if isinstance(message.get("content"), str):
            return message["content"]
    raise MalformedBackendOutput(f"unrecognised endpoint response: {payload[:200]!r}")


class ServiceClient:
    """Cached, retrying, concurrency-bounded access to the inference endpoint.

    With ``offline=True`` a cache miss raises :class:`BackendUnavailable` without
    attempting the network, which is how frozen-cache replays are run.
    """

    def __init__(
        self,
        cache: ResponseCache | None = None,
        *,
        endpoint: str | None = None,
        api_key: str | None = None,
        transport: Transport = http_transport,
        retry_attempts: int = 3,
        backoff: tuple[float, ...] = (1.0, 2.0, 4.0),
        max_concurrency: int = 4,
        offline: bool = False,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cache = cache if cache is not None else ResponseCache()
        self.endpoint = endpoint
        self.api_key = api_key
        self.transport = transport
        self.retry_attempts = max(1, retry_attempts)
        self.backoff = backoff
        self.offline = offline
        self.sleep = sleep
        self.network_calls = 0
        self._slots = threading.BoundedSemaphore(max(1, max_concurrency))
        self._inflight: dict[str, threading.Lock] = {}
        self._inflight_guard = threading.Lock()

    @classmethod
    def from_env(cls, cache: ResponseCache | None = None, **kwargs) -> ServiceClient:
        kwargs.setdefault("endpoint", os.environ.get(ENDPOINT_ENV) or None)
        kwargs.setdefault("api_key", os.environ.get(API_KEY_ENV) or None)
        return cls(cache, **kwargs)

    def _request_lock(self, request_digest: str) -> threading.Lock:
        with self._inflight_guard:
            return self._inflight.setdefault(request_digest, threading.Lock())

    def complete(self, request: PromptRequest) -> str:
        key = request.digest
        hit = self.cache.get(key)
        if hit is not None:
            return hit.response_text
        # one network call per distinct prompt even when identical requests race
        with self._request_lock(key):
            hit = self.cache.get(key)
            if hit is not None:
                return hit.response_text
            text = self._call(request)
            if len(text) > request.max_response_chars:
                raise ResponseTooLarge(
                    f"{request.template_id}: {len(text)} chars > {request.max_response_chars}"
                )
            stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
            entry = self.cache.put_if_absent(CachedResponse(key, request.template_id, text, stamp))
            return entry.response_text

    def _call(self, request: PromptRequest) -> str:
        if self.offline:
            raise BackendUnavailable(f"offline and no cached response for {request.template_id} {request.digest[:12]}")
        if not self.endpoint:
            raise BackendUnavailable(f"no cached response and {ENDPOINT_ENV} is not set")
        prompt = request.render()
        last_error: Exception | None = None
        for attempt in range(self.retry_attempts):
            try:
                with self._slots:
                    self.network_calls += 1
                    return self.transport(self.endpoint, self.api_key, prompt, request.max_response_chars)
            except (OSError, urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last_error = exc
                logger.warning("endpoint attempt %d/%d failed: %s", attempt + 1, self.retry_attempts, exc)
                if attempt + 1 < self.retry_attempts:
                    self.sleep(self.backoff[min(attempt, len(self.backoff) - 1)])
        raise BackendUnavailable(f"endpoint unreachable after {self.retry_attempts} attempts: {last_error}")


def parse_verdict(response: str) -> tuple[bool, str]:
    """Split a judge response into (verdict, rationale); the first line must be YES or NO."""
    lines = response.strip().splitlines()
    first = lines[0].strip().rstrip(".").upper() if lines else ""
    if first not in ("YES", "NO"):
        raise MalformedBackendOutput(f"expected YES/NO on the first line, got {first[:40]!r}")
    return first == "YES", "\n".join(lines[1:]).strip()


# ---------------------------------------------------------------------------
# Judges
# ---------------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+")


def _term_counts(text: str) -> Counter:
    return Counter(_WORD_RE.findall(text.lower()))


def similarity_fallback(a: str, b: str) -> float:
    """Cosine similarity of term-frequency vectors over lowercased word tokens."""
    if a == SENTINEL or b == SENTINEL:
        return 0.0
    va, vb = _term_counts(a), _term_counts(b)
    if not va or not vb:
        return 0.0
    dot = sum(count * vb[term] for term, count in va.items())
    na = sum(c * c for c in va.values())
    nb = sum(c * c for c in vb.values())
    return min(1.0, dot / math.sqrt(na * nb))


class SimilarityJudge(ABC):
    @abstractmethod
    def score(self, a: str, b: str) -> float:
        ...

    def verify(self, a: str, b: str, spec_id: str = "") -> bool:
        """Second-stage confirmation for pairs that pass the score gate."""
        return True


class CausalJudge(ABC):
    @abstractmethod
    def is_causal(self, n_i: ScaNode, n_j: ScaNode) -> bool:
        ...


class TokenSimilarityJudge(SimilarityJudge):
    def score(self, a: str, b: str) -> float:
        return similarity_fallback(a, b)


class ServiceSimilarityJudge(SimilarityJudge):
    """Cosine gate from the token vectorizer, confirmed by a YES/NO prompt."""

    def __init__(self, client: ServiceClient):
        self.client = client

    def score(self, a: str, b: str) -> float:
        return similarity_fallback(a, b)

    def verify(self, a: str, b: str, spec_id: str = "") -> bool:
        req = PromptRequest("semantic_verify", {"spec_id": spec_id, "state_a": a, "state_b": b}, 400)
        return parse_verdict(self.client.complete(req))[0]


# ---------------------------------------------------------------------------
# Enabling lexicon for the causal fallback
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnablingRule:
    """``enables`` matched in an action establishes what ``requires`` asks for.

    When both patterns define a ``token`` group the captured values must agree
    (e.g. the same timer name).
    """

    name: str
    enables: re.Pattern
    requires: re.Pattern


@dataclass
class EnablingLexicon:
    rules: list[EnablingRule] = field(default_factory=list)

    @classmethod
    def from_dicts(cls, entries: list[dict]) -> EnablingLexicon:
        return cls([
            EnablingRule(e["name"], re.compile(e["enables"], re.I), re.compile(e["requires"], re.I))
            for e in entries
        ])

    @classmethod
    def load(cls, path: Path | str | None = None) -> EnablingLexicon:
        if path is None:
            raw = resources.files("scachain.data").joinpath("enabling_lexicon.json").read_text("utf-8")
        else:
            raw = Path(path).read_text(encoding="utf-8")
        return cls.from_dicts(json.loads(raw)["rules"])


_DEFAULT_LEXICON: EnablingLexicon | None = None


def default_lexicon() -> EnablingLexicon:
    global _DEFAULT_LEXICON
    if _DEFAULT_LEXICON is None:
        _DEFAULT_LEXICON = EnablingLexicon.load()
    return _DEFAULT_LEXICON


def _tokens(pattern: re.Pattern, text: str) -> list[str | None]:
    found = []
    for m in pattern.finditer(text):
        token = next((v for k, v in m.groupdict().items() if k.startswith("token") and v), None)
        found.append(token.lower() if token else None)
    return found


def causal_fallback(n_i: ScaNode, n_j: ScaNode, lexicon: EnablingLexicon | None = None) -> bool:
    """True when the action of ``n_i`` establishes something the start state or condition of ``n_j`` needs."""
    lexicon = lexicon or default_lexicon()
    if n_i.action == SENTINEL:
        return False
    needs = [v for v in (n_j.start_state.raw, n_j.condition) if v != SENTINEL]
    if not needs:
        return False
    for rule in lexicon.rules:
        provided = _tokens(rule.enables, n_i.action)
        if not provided:
            continue
        for text in needs:
            for wanted in _tokens(rule.requires, text):
                if wanted is None or None in provided or wanted in provided:
                    return True
    return False


class LexiconCausalJudge(CausalJudge):
    def __init__(self, lexicon: EnablingLexicon | None = None):
        self.lexicon = lexicon or default_lexicon()

    def is_causal(self, n_i: ScaNode, n_j: ScaNode) -> bool:
        return causal_fallback(n_i, n_j, self.lexicon)


def describe_node(node: ScaNode) -> str:
    return "\n".join(
        f"{label}: {value}"
        for label, value in zip(
            ("Start State", "Condition", "Action", "End State"), node.fields().values()
        )
    )


class ServiceCausalJudge(CausalJudge):
    def __init__(self, client: ServiceClient):
        self.client = client

    def is_causal(self, n_i: ScaNode, n_j: ScaNode) -> bool:
        req = PromptRequest(
            "causal_judge",
            {"spec_id": n_i.source.spec_id, "node_i": describe_node(n_i), "node_j": describe_node(n_j)},
            400,
        )
        return parse_verdict(self.client.complete(req))[0]
