"""Security property sweep over function-chain nodes.

Every (property, chain node, attack action) triple is checked exactly once.
A check whose judge backend is unavailable is recorded as unchecked rather
than passed, so ``checks_executed + unchecked`` always equals the size of the
matrix.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from abc import ABC, abstractmethod
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backends import PromptRequest, ServiceClient, describe_node, parse_verdict
from .chains import FunctionChain
from .corpus import CorpusRecord
from .errors import BackendUnavailable, InvariantViolation, MalformedBackendOutput
from .sca import SENTINEL, ScaNode

logger = logging.getLogger(__name__)


class AttackAction(str, enum.Enum):
    DROP = "drop"
    MODIFY = "modify"
    REJECT = "reject"
    REPLAY = "replay"


@dataclass(frozen=True)
class SubCheck:
    name: str
    description: str


@dataclass(frozen=True)
class SecurityProperty:
    property_id: str
    name: str
    description: str
    sub_checks: tuple[SubCheck, ...] = ()


def _data_text(name: str, path: Path | str | None) -> str:
    if path is None:
        return resources.files("scachain.data").joinpath(name).read_text("utf-8")
    return Path(path).read_text(encoding="utf-8")


def load_properties(path: Path | str | None = None) -> list[SecurityProperty]:
    """Load the property registry; ids must be unique. The bundled registry holds nine."""
    data = json.loads(_data_text("properties.json", path))
    props = [
        SecurityProperty(
            p["property_id"], p["name"], p["description"],
            tuple(SubCheck(s["name"], s["description"]) for s in p.get("sub_checks", [])),
        )
        for p in data["properties"]
    ]
    ids = [p.property_id for p in props]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate property ids in registry: {ids}")
    return sorted(props, key=lambda p: p.property_id)


# ---------------------------------------------------------------------------
# Message lexicon
# ---------------------------------------------------------------------------

MESSAGE_SUFFIXES = (
    "REQUEST", "ACCEPT", "REJECT", "COMPLETE", "COMMAND", "RESPONSE", "FAILURE",
    "INDICATION", "NOTIFICATION", "STATUS", "INFORMATION", "RELEASE", "TRANSPORT",
    "ACKNOWLEDGE", "ACKNOWLEDGEMENT",
)
_MESSAGE_RE = re.compile(
    r"(?<![\w-])(?:[A-Z0-9][A-Z0-9]*(?:-[A-Z0-9]+)* ){1,5}(?:" + "|".join(MESSAGE_SUFFIXES) + r")(?![\w-])"
    r"|\bRRC[A-Z][a-z][A-Za-z]*\b"
)
_GENERIC_MESSAGE_RE = re.compile(r"\bmessages?\b", re.IGNORECASE)
_REQUEST_RESPONSE_RE = re.compile(r"\bREQUEST\b|\brespon(?:d|ds|se|ses)\b")


def detect_messages(text: str) -> list[str]:
    """Specific message names (ALL-CAPS NAS names, RRC camel-case names) in order of appearance."""
    seen: dict[str, None] = {}
    for m in _MESSAGE_RE.finditer(text):
        seen.setdefault(m.group(0), None)
    return list(seen)


def mentions_message(text: str) -> bool:
    return bool(_MESSAGE_RE.search(text) or _GENERIC_MESSAGE_RE.search(text))


def transfer_text(node: ScaNode) -> str:
    """Condition and action text, where message transfer is described."""
    return "\n".join(v for v in (node.condition, node.action) if v != SENTINEL)


def attack_applicable(action: AttackAction, node: ScaNode) -> bool:
    text = transfer_text(node)
    if action is AttackAction.REJECT:
        return bool(_REQUEST_RESPONSE_RE.search(text))
    return mentions_message(text)


# ---------------------------------------------------------------------------
# Rules and judges
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    rule_id: str
    requires: tuple[str, ...]
    violations: Mapping[str, tuple[str, ...]]
    rationale: str


@dataclass(frozen=True)
class RuleTable:
    markers: tuple[re.Pattern, ...]
    rules: tuple[Rule, ...]

    KNOWN_REQUIREMENTS = frozenset({"message_transfer", "unprotected_marker"})

    @classmethod
    def load(cls, path: Path | str | None = None) -> RuleTable:
        data = json.loads(_data_text("rules.json", path))
        rules = []
        for r in data["rules"]:
            unknown = set(r["requires"]) - cls.KNOWN_REQUIREMENTS
            if unknown:
                raise ValueError(f"rule {r['rule_id']}: unknown requirements {sorted(unknown)}")
            rules.append(Rule(
                r["rule_id"], tuple(r["requires"]),
                {AttackAction(k).value: tuple(v) for k, v in r["violations"].items()},
                r.get("rationale", ""),
            ))
        markers = tuple(re.compile(m, re.IGNORECASE) for m in data["unprotected_markers"])
        return cls(markers, tuple(rules))

    def has_marker(self, text: str) -> bool:
        return any(m.search(text) for m in self.markers)

    def covered(self) -> set[tuple[str, str]]:
        """(action_id, property_id) pairs any rule can flag."""
        return {(a, p) for r in self.rules for a, props in r.violations.items() for p in props}


def message_policies(records: Iterable[CorpusRecord], rules: RuleTable) -> dict[str, list[str]]:
    """Corpus sentences that allow a named message to go unprotected, keyed by message."""
    policies: dict[str, list[str]] = {}
    for record in records:
        text = record.sentence.text
        if not rules.has_marker(text):
            continue
        for msg in detect_messages(text):
            policies.setdefault(msg, []).append(text)
    return policies


@dataclass(frozen=True)
class CheckContext:
    neighborhood: tuple[str, ...] = ()
    policy: tuple[str, ...] = ()

    def render(self) -> str:
        lines = list(self.neighborhood) + [f"Specification text: {p}" for p in self.policy]
        return "\n".join(lines) if lines else "none"


class PropertyJudge(ABC):
    @abstractmethod
    def judge(
        self, prop: SecurityProperty, node: ScaNode, action: AttackAction, context: CheckContext
    ) -> str | None:
        """Rationale when the attacked node can break ``prop``, else ``None``."""


class RulePropertyJudge(PropertyJudge):
    """Flags only the (action, property) pairs listed in the rule table."""

    def __init__(self, rules: RuleTable | None = None):
        self.rules = rules or RuleTable.load()

    def judge(self, prop, node, action, context):
        moved = transfer_text(node)
        satisfied = {
            "message_transfer": mentions_message(moved),
            "unprotected_marker": self.rules.has_marker(node.text())
            or any(self.rules.has_marker(p) for p in context.policy),
        }
        for rule in self.rules.rules:
            if prop.property_id not in rule.violations.get(action.value, ()):
                continue
            if all(satisfied[req] for req in rule.requires):
                msgs = detect_messages(moved)
                return rule.rationale.format(
                    message=msgs[0] if msgs else "message", action=action.value, property=prop.name
                ) + f" [rule {rule.rule_id}]"
        return None


class ServicePropertyJudge(PropertyJudge):
    def __init__(self, client: ServiceClient):
        self.client = client

    def judge(self, prop, node, action, context):
        req = PromptRequest(
            "property_check",
            {
                "property": f"{prop.name}: {prop.description}",
                "sub_checks": "\n".join(f"- {s.name}: {s.description}" for s in prop.sub_checks),
                "spec_id": node.source.spec_id,
                "clause_id": node.source.clause_id,
                "node": describe_node(node),
                "context": context.render(),
                "attack": action.value,
            },
            2000,
        )
        verdict, rationale = parse_verdict(self.client.complete(req))
        if not verdict:
            return None
        return rationale or f"model judged {prop.property_id} violated under {action.value}"


# ---------------------------------------------------------------------------
# Checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Violation:
    chain_id: int
    node_id: int
    action_id: str
    property_id: str
    rationale: str = field(compare=False, default="")
    evidence: str = field(compare=False, default="")

    @property
    def key(self) -> tuple[int, int, str, str]:
        return (self.chain_id, self.node_id, self.action_id, self.property_id)

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "node_id": self.node_id,
            "action_id": self.action_id,
            "property_id": self.property_id,
            "rationale": self.rationale,
            "evidence": self.evidence,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Violation:
        return cls(
            data["chain_id"], data["node_id"], data["action_id"], data["property_id"],
            data.get("rationale", ""), data.get("evidence", ""),
        )


@dataclass(frozen=True, order=True)
class UncheckedTriple:
    chain_id: int
    node_id: int
    action_id: str
    property_id: str
    reason: str = field(compare=False, default="")

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "node_id": self.node_id,
            "action_id": self.action_id,
            "property_id": self.property_id,
            "reason": self.reason,
        }


def evidence_for(node: ScaNode) -> str:
    s = node.source
    return f"{s.spec_id} clause {s.clause_id}, sentence {s.sentence_id}"


def check_violation(
    prop: SecurityProperty,
    node: ScaNode,
    action: AttackAction,
    judge: PropertyJudge,
    *,
    chain_id: int = 0,
    context: CheckContext | None = None,
) -> Violation | None:
    if not attack_applicable(action, node):
        return None
    rationale = judge.judge(prop, node, action, context or CheckContext())
    if rationale is None:
        return None
    return Violation(chain_id, node.node_id, action.value, prop.property_id, rationale, evidence_for(node))


def neighborhood(chain: FunctionChain, nodes: Mapping[int, ScaNode], node_id: int, hops: int = 2) -> tuple[str, ...]:
    """Short summaries of predecessors and successors within ``hops`` edges."""
    succ: dict[int, list[int]] = {}
    pred: dict[int, list[int]] = {}
    for e in chain.edges:
        succ.setdefault(e.src, []).append(e.dst)
        pred.setdefault(e.dst, []).append(e.src)

    def walk(adjacency: dict[int, list[int]]) -> list[int]:
        seen = {node_id: 0}
        queue = deque([node_id])
        while queue:
            cur = queue.popleft()
            if seen[cur] == hops:
                continue
            for nxt in sorted(adjacency.get(cur, ())):
                if nxt not in seen:
                    seen[nxt] = seen[cur] + 1
                    queue.append(nxt)
        return sorted(n for n in seen if n != node_id)

    lines = [f"predecessor {n}: {nodes[n].action}" for n in walk(pred)]
    lines += [f"successor {n}: {nodes[n].action}" for n in walk(succ)]
    return tuple(lines)


@dataclass
class CheckMatrixReport:
    checks_executed: int
    violations: list[Violation]
    unchecked: list[UncheckedTriple]
    per_property_counts: dict[str, int]
    per_attack_counts: dict[str, int]
    nodes_checked: int
    property_count: int
    action_count: int

    def to_dict(self, meta: dict | None = None) -> dict:
        return {
            "meta": meta or {},
            "checks_executed": self.checks_executed,
            "unchecked": len(self.unchecked),
            "nodes_checked": self.nodes_checked,
            "per_property_counts": self.per_property_counts,
            "per_attack_counts": self.per_attack_counts,
            "violations": [v.to_dict() for v in self.violations],
            "unchecked_triples": [u.to_dict() for u in self.unchecked],
        }

    def summary(self) -> str:
        """Plain-text property-by-attack violation table."""
        matrix = Counter((v.property_id, v.action_id) for v in self.violations)
        actions = [a.value for a in AttackAction]
        width = max([len("property")] + [len(p) for p in self.per_property_counts])
        lines = [" | ".join(["property".ljust(width), *actions, "total"])]
        for prop in self.per_property_counts:
            cells = [str(matrix.get((prop, a), 0)) for a in actions]
            lines.append(" | ".join([prop.ljust(width), *cells, str(self.per_property_counts[prop])]))
        lines.append(
            f"checks executed: {self.checks_executed}, unchecked: {len(self.unchecked)}, "
            f"violations: {len(self.violations)}"
        )
        return "\n".join(lines)


def sweep(
    chains: Sequence[FunctionChain],
    nodes: Sequence[ScaNode],
    judge: PropertyJudge,
    *,
    properties: Sequence[SecurityProperty] | None = None,
    actions: Sequence[AttackAction] = tuple(AttackAction),
    policies: Mapping[str, Sequence[str]] | None = None,
    jobs: int = 1,
) -> CheckMatrixReport:
    properties = sorted(properties if properties is not None else load_properties(), key=lambda p: p.property_id)
    actions = sorted(actions, key=lambda a: a.value)
    policies = policies or {}
    index = {n.node_id: n for n in nodes}

    for chain in chains:
        missing = sorted(set(chain.node_ids) - index.keys())
        if missing:
            raise InvariantViolation(f"chain {chain.chain_id} lists unknown nodes {missing}")

    tasks = []
    for chain in sorted(chains, key=lambda c: c.chain_id):
        for node_id in sorted(chain.node_ids):
            node = index[node_id]
            policy = tuple(p for msg in detect_messages(transfer_text(node)) for p in policies.get(msg, ()))
            context = CheckContext(neighborhood(chain, index, node_id), policy)
            for prop in properties:
                for action in actions:
                    tasks.append((chain.chain_id, node, prop, action, context))

    def run(task):
        chain_id, node, prop, action, context = task
        try:
            return check_violation(prop, node, action, judge, chain_id=chain_id, context=context)
        except (BackendUnavailable, MalformedBackendOutput) as exc:
            return UncheckedTriple(chain_id, node.node_id, action.value, prop.property_id, str(exc))

    if jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    violations = sorted(r for r in results if isinstance(r, Violation))
    unchecked = sorted(r for r in results if isinstance(r, UncheckedTriple))
    if unchecked:
        logger.warning("%d checks could not be executed", len(unchecked))
    by_prop = Counter(v.property_id for v in violations)
    by_action = Counter(v.action_id for v in violations)
    nodes_checked = sum(len(c.node_ids) for c in chains)
    return CheckMatrixReport(
        checks_executed=len(tasks) - len(unchecked),
        violations=violations,
        unchecked=unchecked,
        per_property_counts={p.property_id: by_prop.get(p.property_id, 0) for p in properties},
        per_attack_counts={a.value: by_action.get(a.value, 0) for a in actions},
        nodes_checked=nodes_checked,
        property_count=len(properties),
        action_count=len(actions),
    )


def read_violations(path: Path) -> tuple[dict, list[Violation]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return data.get("meta", {}), [Violation.from_dict(v) for v in data["violations"]]
