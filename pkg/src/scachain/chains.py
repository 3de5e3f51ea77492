"""Linking SCA nodes into typed edges and assembling function chains.

Edge kinds are checked in precedence order Temporal > Semantic > Causal, so an
ordered pair carries at most one edge. Candidate pairs come from a
:class:`LinkScope`: every ordered pair, pairs within one clause, or pairs within
one clause plus pairs opened up by explicit clause references.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import permutations
from pathlib import Path
from typing import Callable, Collection, Iterable, Iterator, Mapping, Sequence, TypeVar

import networkx as nx

from .backends import CausalJudge, SimilarityJudge
from .corpus import is_within, parent_clause_id
from .errors import InvariantViolation, UnresolvedReference
from .sca import ScaNode
from .store import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)

SECONDS_PER_YEAR = 3600 * 24 * 365
DEFAULT_SECONDS_PER_PAIR = 5.46


class EdgeKind(str, enum.Enum):
    TEMPORAL = "Temporal"
    SEMANTIC = "Semantic"
    CAUSAL = "Causal"


class ScopeMode(str, enum.Enum):
    EXHAUSTIVE = "exhaustive"
    CLAUSE_LOCAL = "clause_local"
    REFERENCE_GUIDED = "reference_guided"


@dataclass(frozen=True, order=True)
class ConnectionEdge:
    src: int
    dst: int
    kind: EdgeKind
    via_reference: bool = False
    score: float | None = None

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise InvariantViolation(f"self edge on node {self.src}")
        if self.kind is EdgeKind.SEMANTIC and self.score is None:
            raise InvariantViolation(f"semantic edge {self.src}->{self.dst} without score")

    @property
    def pair(self) -> tuple[int, int]:
        return (self.src, self.dst)

    def to_dict(self) -> dict:
        return {
            "src": self.src,
            "dst": self.dst,
            "kind": self.kind.value,
            "via_reference": self.via_reference,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ConnectionEdge:
        return cls(data["src"], data["dst"], EdgeKind(data["kind"]), data["via_reference"], data["score"])


@dataclass(frozen=True)
class FunctionChain:
    chain_id: int
    node_ids: tuple[int, ...]
    edges: tuple[ConnectionEdge, ...]

    def __contains__(self, node_id: int) -> bool:
        return node_id in self.node_ids

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.node_ids)
        g.add_edges_from(e.pair for e in self.edges)
        return g

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "node_ids": list(self.node_ids),
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> FunctionChain:
        return cls(
            data["chain_id"],
            tuple(data["node_ids"]),
            tuple(ConnectionEdge.from_dict(e) for e in data["edges"]),
        )


# ---------------------------------------------------------------------------
# Scope
# ---------------------------------------------------------------------------


def _clause_key(clause_id: str, depth: int | None) -> str:
    if depth is None:
        return clause_id
    return ".".join(clause_id.split(".")[:depth])


@dataclass
class LinkScope:
    mode: ScopeMode
    node_ids: tuple[int, ...]
    groups: dict[int, tuple[str, str]] | None = None
    reference_pairs: frozenset[tuple[int, int]] = frozenset()
    unresolved: list[UnresolvedReference] = field(default_factory=list)

    def is_local(self, i: int, j: int) -> bool:
        return self.groups is None or self.groups[i] == self.groups[j]

    def contains(self, i: int, j: int) -> bool:
        return i != j and (self.is_local(i, j) or (i, j) in self.reference_pairs)

    def via_reference(self, i: int, j: int) -> bool:
        return not self.is_local(i, j) and (i, j) in self.reference_pairs

    def pairs(self) -> Iterator[tuple[int, int]]:
        """Every candidate ordered pair exactly once, in ascending (i, j) order."""
        if self.groups is None:
            yield from permutations(self.node_ids, 2)
            return
        members: dict[tuple[str, str], list[int]] = defaultdict(list)
        for nid in self.node_ids:
            members[self.groups[nid]].append(nid)
        found = {p for group in members.values() for p in permutations(group, 2)}
        found |= self.reference_pairs
        yield from sorted(found)

    @property
    def pair_count(self) -> int:
        if self.groups is None:
            n = len(self.node_ids)
            return n * (n - 1)
        sizes = Counter(self.groups.values())
        local = sum(k * (k - 1) for k in sizes.values())
        return local + sum(1 for i, j in self.reference_pairs if not self.is_local(i, j))


def known_clauses(nodes: Iterable[ScaNode]) -> dict[str, set[str]]:
    """Clause ids implied by the nodes themselves (their clauses and all ancestors)."""
    out: dict[str, set[str]] = defaultdict(set)
    for node in nodes:
        cid: str | None = node.source.clause_id
        while cid is not None:
            out[node.source.spec_id].add(cid)
            cid = parent_clause_id(cid)
    return dict(out)


def build_scope(
    nodes: Sequence[ScaNode],
    mode: ScopeMode | str,
    *,
    clauses: Mapping[str, Collection[str]] | None = None,
    clause_depth: int | None = None,
) -> LinkScope:
    """Candidate pairs for linking.

    ``clauses`` maps spec ids to the clause ids present in the corpus and is used
    to resolve references; ``clause_depth`` truncates clause ids for the
    clause-local grouping (``None`` groups by each node's own clause).
    """
    mode = ScopeMode(mode)
    ids = tuple(sorted(n.node_id for n in nodes))
    if len(set(ids)) != len(ids):
        raise InvariantViolation("duplicate node ids")
    if mode is ScopeMode.EXHAUSTIVE:
        return LinkScope(mode, ids)

    groups = {n.node_id: (n.source.spec_id, _clause_key(n.source.clause_id, clause_depth)) for n in nodes}
    if mode is ScopeMode.CLAUSE_LOCAL:
        return LinkScope(mode, ids, groups)

    clauses = clauses if clauses is not None else known_clauses(nodes)
    by_spec: dict[str, list[ScaNode]] = defaultdict(list)
    for n in nodes:
        by_spec[n.source.spec_id].append(n)
    ref_pairs: set[tuple[int, int]] = set()
    unresolved = []
    for n in sorted(nodes, key=lambda x: x.node_id):
        spec = n.source.spec_id
        for target_spec, target_clause in sorted(n.reference_keys, key=lambda k: (k[0] or "", k[1])):
            if target_spec not in (None, spec) or not target_clause:
                continue  # cross-specification references are outside single-spec linking
            if target_clause not in clauses.get(spec, ()):
                err = UnresolvedReference(
                    f"node {n.node_id} references {spec} clause {target_clause}, absent from corpus"
                )
                logger.warning("%s", err)
                unresolved.append(err)
                continue
            for other in by_spec[spec]:
                if other.node_id != n.node_id and is_within(other.source.clause_id, target_clause):
                    ref_pairs.add((n.node_id, other.node_id))
                    ref_pairs.add((other.node_id, n.node_id))
    return LinkScope(mode, ids, groups, frozenset(ref_pairs), unresolved)


# ---------------------------------------------------------------------------
# Edges
# ---------------------------------------------------------------------------

T = TypeVar("T")
R = TypeVar("R")


def _parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (jobs * 4))))


def _by_id(nodes: Iterable[ScaNode]) -> dict[int, ScaNode]:
    return {n.node_id: n for n in nodes}


def _temporal_match(a: ScaNode, b: ScaNode) -> bool:
    return (
        not a.end_state.is_sentinel
        and not b.start_state.is_sentinel
        and a.end_state.canonical == b.start_state.canonical
    )


def temporal_edges(nodes: Sequence[ScaNode], scope: LinkScope) -> list[ConnectionEdge]:
    """Pairs whose canonical end and start states are equal, found through a start-state index."""
    by_start: dict[str, list[int]] = defaultdict(list)
    for n in nodes:
        if not n.start_state.is_sentinel:
            by_start[n.start_state.canonical].append(n.node_id)
    edges = []
    for n in nodes:
        if n.end_state.is_sentinel:
            continue
        for j in by_start.get(n.end_state.canonical, ()):
            if scope.contains(n.node_id, j):
                edges.append(ConnectionEdge(n.node_id, j, EdgeKind.TEMPORAL, scope.via_reference(n.node_id, j)))
    return sorted(edges)


def semantic_edges(
    nodes: Sequence[ScaNode],
    scope: LinkScope,
    judge: SimilarityJudge,
    threshold: float,
    *,
    jobs: int = 1,
) -> list[ConnectionEdge]:
    if not 0 < threshold <= 1:
        raise ValueError(f"semantic threshold must be in (0, 1], got {threshold}")
    index = _by_id(nodes)
    candidates = [
        (i, j) for i, j in scope.pairs()
        if not index[i].end_state.is_sentinel
        and not index[j].start_state.is_sentinel
        and not _temporal_match(index[i], index[j])
    ]

    def judge_pair(pair: tuple[int, int]) -> ConnectionEdge | None:
        a, b = index[pair[0]], index[pair[1]]
        score = judge.score(a.end_state.raw, b.start_state.raw)
        if score < threshold:
            return None
        if not judge.verify(a.end_state.raw, b.start_state.raw, a.source.spec_id):
            return None
        return ConnectionEdge(pair[0], pair[1], EdgeKind.SEMANTIC, scope.via_reference(*pair), score)

    return sorted(e for e in _parallel_map(judge_pair, candidates, jobs) if e is not None)


def causal_edges(
    nodes: Sequence[ScaNode],
    scope: LinkScope,
    judge: CausalJudge,
    *,
    exclude: Collection[tuple[int, int]] = frozenset(),
    jobs: int = 1,
) -> list[ConnectionEdge]:
    """Pairs the judge affirms, skipping pairs already linked by a stronger kind."""
    index = _by_id(nodes)
    excluded = set(exclude)
    candidates = [
        (i, j) for i, j in scope.pairs()
        if (i, j) not in excluded and not _temporal_match(index[i], index[j])
    ]

    def judge_pair(pair: tuple[int, int]) -> ConnectionEdge | None:
        if judge.is_causal(index[pair[0]], index[pair[1]]):
            return ConnectionEdge(pair[0], pair[1], EdgeKind.CAUSAL, scope.via_reference(*pair))
        return None

    return sorted(e for e in _parallel_map(judge_pair, candidates, jobs) if e is not None)


def link(
    nodes: Sequence[ScaNode],
    scope: LinkScope,
    similarity: SimilarityJudge,
    causal: CausalJudge,
    threshold: float,
    *,
    jobs: int = 1,
) -> list[ConnectionEdge]:
    """All three edge kinds with precedence applied, sorted by (src, dst, kind)."""
    temporal = temporal_edges(nodes, scope)
    semantic = semantic_edges(nodes, scope, similarity, threshold, jobs=jobs)
    taken = {e.pair for e in temporal} | {e.pair for e in semantic}
    caused = causal_edges(nodes, scope, causal, exclude=taken, jobs=jobs)
    return sorted(temporal + semantic + caused, key=lambda e: (e.src, e.dst, e.kind.value))


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


def assemble_chains(edges: Iterable[ConnectionEdge], nodes: Iterable[ScaNode]) -> list[FunctionChain]:
    """Weakly connected components of the edge graph; isolated nodes form no chain."""
    known = {n.node_id for n in nodes}
    graph = nx.DiGraph()
    by_pair: dict[int, list[ConnectionEdge]] = defaultdict(list)
    for e in edges:
        if e.src not in known or e.dst not in known:
            raise InvariantViolation(f"edge {e.src}->{e.dst} references an unknown node")
        graph.add_edge(e.src, e.dst)
        by_pair[e.src].append(e)
    components = sorted((sorted(c) for c in nx.weakly_connected_components(graph)), key=lambda c: c[0])
    chains = []
    for chain_id, members in enumerate(components, start=1):
        chain_edges = sorted({e for nid in members for e in by_pair[nid]}, key=lambda e: (e.src, e.dst, e.kind.value))
        chains.append(FunctionChain(chain_id, tuple(members), tuple(chain_edges)))
    return chains


@dataclass(frozen=True)
class LinkStats:
    mode: str
    pair_count: int
    edges_by_kind: dict[str, int]
    chain_count: int
    largest_chain: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "pair_count": self.pair_count,
            "edges_by_kind": self.edges_by_kind,
            "chain_count": self.chain_count,
            "largest_chain": self.largest_chain,
        }


def link_stats(scope: LinkScope, edges: Sequence[ConnectionEdge], chains: Sequence[FunctionChain]) -> LinkStats:
    counts = Counter(e.kind.value for e in edges)
    return LinkStats(
        scope.mode.value,
        scope.pair_count,
        {k.value: counts.get(k.value, 0) for k in EdgeKind},
        len(chains),
        max((len(c.node_ids) for c in chains), default=0),
    )


def pair_cost_years(pair_count: int, seconds_per_pair: float = DEFAULT_SECONDS_PER_PAIR) -> float:
    return pair_count * seconds_per_pair / SECONDS_PER_YEAR


def exhaustive_cost_years(node_count: int, seconds_per_pair: float = DEFAULT_SECONDS_PER_PAIR) -> float:
    """Cost estimate that charges every node against every node, n squared pairs."""
    return pair_cost_years(node_count * node_count, seconds_per_pair)


def write_edges(path: Path, edges: Iterable[ConnectionEdge], meta: dict) -> None:
    write_jsonl(path, (e.to_dict() for e in edges), meta)


def read_edges(path: Path) -> list[ConnectionEdge]:
    _, rows = read_jsonl(path)
    return [ConnectionEdge.from_dict(r) for r in rows]
