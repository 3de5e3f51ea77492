"""Test-case synthesis from recorded violations.

A case has three phases: setup (preamble plus the violated node's chain
predecessors in topological order), attack injection templated per action,
and a single observation step carrying the Fail verdict.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import networkx as nx

from .chains import FunctionChain
from .errors import DanglingViolation
from .oracle import AttackAction, Violation, detect_messages, transfer_text
from .sca import SENTINEL, ScaNode
from .store import dumps, write_json

logger = logging.getLogger(__name__)

TABLE_HEADER = "Step | Procedure | U–M | Message | Parameter | Verdict"
MAX_SETUP_DEPTH = 6
NONE_CELL = "-"


class Direction(str, enum.Enum):
    UE_TO_NW = "UE→NW"
    NW_TO_UE = "NW→UE"
    NONE = "none"

    @property
    def arrow(self) -> str:
        return {"UE→NW": "→", "NW→UE": "←"}.get(self.value, NONE_CELL)


_NW_SENDER_RE = re.compile(
    r"\b(?:network|AMF|MME|SMF|gNB|eNB)\s+(?:shall\s+)?sends?\b|\bfrom the (?:network|AMF|MME)\b",
    re.IGNORECASE,
)
_UE_SENDER_RE = re.compile(
    r"\bUE\s+(?:shall\s+)?(?:sends?|initiates?)\b|\bby sending\b", re.IGNORECASE
)


def infer_direction(text: str) -> Direction:
    """Sender cue lookup; network cues win because they are the more specific phrasing."""
    if _NW_SENDER_RE.search(text):
        return Direction.NW_TO_UE
    if _UE_SENDER_RE.search(text):
        return Direction.UE_TO_NW
    return Direction.NONE


@dataclass(frozen=True)
class TestStep:
    step_no: int
    procedure: str
    direction: Direction = Direction.NONE
    message: str = NONE_CELL
    parameter: str = NONE_CELL
    verdict: str = NONE_CELL

    __test__ = False

    def to_dict(self) -> dict:
        return {
            "step_no": self.step_no,
            "procedure": self.procedure,
            "direction": self.direction.value,
            "message": self.message,
            "parameter": self.parameter,
            "verdict": self.verdict,
        }

    @classmethod
    def from_dict(cls, data: dict) -> TestStep:
        return cls(
            data["step_no"], data["procedure"], Direction(data["direction"]),
            data["message"], data["parameter"], data["verdict"],
        )


@dataclass(frozen=True)
class TestCase:
    test_id: str
    violation: tuple[int, int, str, str]
    preamble: str
    steps: tuple[TestStep, ...]
    expected_outcome: str

    __test__ = False

    def __post_init__(self) -> None:
        numbers = [s.step_no for s in self.steps]
        if numbers != list(range(1, len(numbers) + 1)):
            raise ValueError(f"{self.test_id}: step numbers must run 1..n, got {numbers}")
        verdicts = [s.verdict != NONE_CELL for s in self.steps]
        if not verdicts or verdicts[-1] is not True or any(verdicts[:-1]):
            raise ValueError(f"{self.test_id}: exactly the final step must carry a verdict")


def test_id_for(v: Violation) -> str:
    return f"TC-{v.chain_id}-{v.node_id}-{v.action_id}-{v.property_id}"


test_id_for.__test__ = False  # keep pytest from collecting the helper


def setup_order(chain: FunctionChain, node_id: int, max_depth: int = MAX_SETUP_DEPTH) -> list[int]:
    """Ancestors of ``node_id`` within ``max_depth`` hops, topologically ordered.

    Cycles are collapsed into strongly connected components; ties break on the
    smallest node id, so the order is fully deterministic.
    """
    g = chain.graph()
    depth = nx.single_source_shortest_path_length(g.reverse(copy=False), node_id, cutoff=max_depth)
    ancestors = sorted(n for n in depth if n != node_id)
    if not ancestors:
        return []
    sub = g.subgraph(ancestors)
    cond = nx.condensation(sub)
    members = cond.graph["mapping"]
    groups = {c: sorted(n for n, comp in members.items() if comp == c) for c in cond.nodes}
    order = nx.lexicographical_topological_sort(cond, key=lambda c: groups[c][0])
    return [n for c in order for n in groups[c]]


def _procedure(node: ScaNode) -> str:
    if node.condition != SENTINEL and node.action != SENTINEL:
        return f"When {node.condition}, {node.action}"
    if node.action != SENTINEL:
        return node.action[0].upper() + node.action[1:]
    if node.condition != SENTINEL:
        return f"Wait until {node.condition}"
    return f"Reach node {node.node_id} (no action text)"


def _message_cell(node: ScaNode) -> str:
    msgs = detect_messages(transfer_text(node))
    return msgs[0] if msgs else NONE_CELL


_ATTACK_VERBS = {
    AttackAction.REPLAY: "replays",
    AttackAction.DROP: "drops",
    AttackAction.MODIFY: "modifies",
    AttackAction.REJECT: "injects reject",
}


def _attack_steps(action: AttackAction, msg: str, direction: Direction) -> list[tuple[str, str, str]]:
    """(procedure, message, parameter) rows for the attack phase."""
    target = f"the {msg} message" if msg != NONE_CELL else "the message"
    if action is AttackAction.REPLAY:
        return [
            (f"Attacker captures {target}", msg, NONE_CELL),
            (f"Attacker replays the captured copy of {target}", msg, NONE_CELL),
        ]
    if action is AttackAction.DROP:
        return [(f"Attacker drops {target}", msg, NONE_CELL)]
    if action is AttackAction.MODIFY:
        return [(f"Attacker modifies the contents of {target}", msg, "contents")]
    return [(f"Attacker injects reject response to {target}", msg, NONE_CELL)]


def _receiver(direction: Direction) -> str:
    return {Direction.UE_TO_NW: "Network", Direction.NW_TO_UE: "UE"}.get(direction, "Receiver")


def _observation(action: AttackAction, msg: str, direction: Direction) -> str:
    who = _receiver(direction)
    what = f"{msg} message" if msg != NONE_CELL else "message"
    return {
        AttackAction.REPLAY: f"{who} processes both the original and the replayed {what}",
        AttackAction.DROP: f"{who} proceeds without the dropped {what} and no recovery is triggered",
        AttackAction.MODIFY: f"{who} accepts the modified {what}",
        AttackAction.REJECT: f"{who} accepts the injected reject response to the {what}",
    }[action]


def synthesize(violation: Violation, chain: FunctionChain, nodes: Mapping[int, ScaNode] | Sequence[ScaNode]) -> TestCase:
    if not isinstance(nodes, Mapping):
        nodes = {n.node_id: n for n in nodes}
    if violation.chain_id != chain.chain_id or violation.node_id not in chain:
        raise DanglingViolation(
            f"violation {violation.key} does not reference a node of chain {chain.chain_id}"
        )
    if violation.node_id not in nodes:
        raise DanglingViolation(f"violation {violation.key} references unknown node {violation.node_id}")
    action = AttackAction(violation.action_id)
    node = nodes[violation.node_id]
    predecessors = [nodes[n] for n in setup_order(chain, node.node_id)]

    first = predecessors[0] if predecessors else node
    initial = first.start_state.raw if not first.start_state.is_sentinel else "unspecified initial state"
    preamble = f"UE switched on and attached to the test network; initial state: {initial}"

    rows: list[tuple[str, Direction, str, str]] = [(preamble, Direction.NONE, NONE_CELL, NONE_CELL)]
    for pred in predecessors:
        rows.append((_procedure(pred), infer_direction(pred.text()), _message_cell(pred), NONE_CELL))

    msg = _message_cell(node)
    direction = infer_direction(node.text())
    for procedure, m, param in _attack_steps(action, msg, direction):
        rows.append((procedure, direction, m, param))

    steps = [
        TestStep(i, procedure, d, m, p) for i, (procedure, d, m, p) in enumerate(rows, start=1)
    ]
    steps.append(
        TestStep(len(steps) + 1, _observation(action, msg, direction), direction, msg, NONE_CELL, "Fail")
    )
    return TestCase(test_id_for(violation), violation.key, preamble, tuple(steps), violation.rationale)


def synthesize_all(
    violations: Sequence[Violation],
    chains: Sequence[FunctionChain],
    nodes: Sequence[ScaNode],
    *,
    jobs: int = 1,
) -> list[TestCase]:
    by_chain = {c.chain_id: c for c in chains}
    index = {n.node_id: n for n in nodes}

    def run(v: Violation) -> TestCase:
        chain = by_chain.get(v.chain_id)
        if chain is None:
            raise DanglingViolation(f"violation {v.key} references unknown chain {v.chain_id}")
        return synthesize(v, chain, index)

    if jobs > 1 and len(violations) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            cases = list(pool.map(run, violations))
    else:
        cases = [run(v) for v in violations]
    return sorted(cases, key=lambda c: c.test_id)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def _cell(text: str) -> str:
    return " ".join(text.replace("|", "/").split()) or NONE_CELL


def render(case: TestCase, fmt: str = "table_text") -> str:
    if fmt == "table_text":
        lines = [TABLE_HEADER]
        for s in case.steps:
            lines.append(" | ".join(
                [str(s.step_no), _cell(s.procedure), s.direction.arrow, _cell(s.message), _cell(s.parameter), s.verdict]
            ))
        return "\n".join(lines) + "\n"
    if fmt == "structured":
        header = {
            "test_id": case.test_id,
            "violation": list(case.violation),
            "preamble": case.preamble,
            "expected_outcome": case.expected_outcome,
        }
        return "".join(dumps(r) + "\n" for r in [header, *(s.to_dict() for s in case.steps)])
    raise ValueError(f"unknown render format {fmt!r}")


def parse_structured(text: str) -> TestCase:
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    header, steps = records[0], records[1:]
    c, n, a, p = header["violation"]
    return TestCase(
        header["test_id"], (int(c), int(n), a, p), header["preamble"],
        tuple(TestStep.from_dict(s) for s in steps), header["expected_outcome"],
    )


def write_bundle(directory: Path, cases: Sequence[TestCase], meta: dict) -> None:
    """One structured file and one table file per case, plus an index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for stale in list(directory.glob("TC-*")):
        stale.unlink()
    entries = []
    for case in cases:
        structured = f"{case.test_id}.jsonl"
        table = f"{case.test_id}.txt"
        (directory / structured).write_text(render(case, "structured"), encoding="utf-8")
        (directory / table).write_text(render(case, "table_text"), encoding="utf-8")
        entries.append({
            "test_id": case.test_id,
            "violation": list(case.violation),
            "structured": structured,
            "table": table,
            "steps": len(case.steps),
        })
    write_json(directory / "index.json", {"meta": meta, "test_cases": entries})


def read_bundle(directory: Path) -> list[TestCase]:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    return [
        parse_structured((directory / e["structured"]).read_text(encoding="utf-8"))
        for e in index["test_cases"]
    ]
