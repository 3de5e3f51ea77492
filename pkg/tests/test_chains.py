from __future__ import annotations

import random
from itertools import permutations

import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scachain.backends import LexiconCausalJudge, TokenSimilarityJudge, similarity_fallback
from scachain.chains import (
    ConnectionEdge,
    EdgeKind,
    ScopeMode,
    assemble_chains,
    build_scope,
    causal_edges,
    exhaustive_cost_years,
    link,
    read_edges,
    semantic_edges,
    temporal_edges,
    write_edges,
)
from scachain.errors import InvariantViolation
from scachain.sca import ScaNode, SourceRef

from conftest import link_resume
from corpora import clause_ids, random_nodes


def node(nid, clause="5.1", **kw):
    return ScaNode.build(nid, SourceRef("TS 1", clause, nid), **kw)


def naive_temporal(nodes, scope):
    out = []
    for a in nodes:
        for b in nodes:
            if a.node_id == b.node_id or not scope.contains(a.node_id, b.node_id):
                continue
            if a.end_state.is_sentinel or b.start_state.is_sentinel:
                continue
            if a.end_state.canonical == b.start_state.canonical:
                out.append((a.node_id, b.node_id))
    return sorted(out)


def test_temporal_toy_corpus():
    nodes = [
        node(1, end_state="5GMM-CONNECTED mode"),
        node(2, start_state="5GMM-CONNECTED mode"),
        node(3, start_state="5GMM-IDLE mode", end_state="RRC_IDLE"),
        node(4, start_state="5GMM-DEREGISTERED"),
    ]
    scope = build_scope(nodes, "exhaustive")
    edges = temporal_edges(nodes, scope)
    assert [(e.src, e.dst) for e in edges] == [(1, 2)] == naive_temporal(nodes, scope)


def test_temporal_sentinel_never_matches():
    nodes = [node(1), node(2)]
    assert temporal_edges(nodes, build_scope(nodes, "exhaustive")) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(list(ScopeMode)))
def test_temporal_matches_naive(seed, mode):
    nodes = random_nodes(random.Random(seed), 30)
    scope = build_scope(nodes, mode, clauses=clause_ids())
    assert [(e.src, e.dst) for e in temporal_edges(nodes, scope)] == naive_temporal(nodes, scope)


def test_semantic_excludes_temporal_and_respects_threshold():
    nodes = [
        node(1, end_state="5GMM IDLE mode"),
        node(2, start_state="5GMM-IDLE mode"),  # same canonical: temporal, not semantic
        node(3, start_state="idle mode 5GMM"),  # same tokens, different order
        node(4, start_state="5GMM idle"),
    ]
    scope = build_scope(nodes, "exhaustive")
    at_one = semantic_edges(nodes, scope, TokenSimilarityJudge(), 1.0)
    assert (1, 3) in {e.pair for e in at_one} and (1, 2) not in {e.pair for e in at_one}
    assert all(e.score == pytest.approx(1.0) for e in at_one)
    lower = semantic_edges(nodes, scope, TokenSimilarityJudge(), 0.8)
    assert (1, 4) in {(e.src, e.dst) for e in lower}
    assert similarity_fallback("5GMM idle mode", "5GMM idle") == pytest.approx(0.8165, abs=1e-4)


def test_semantic_threshold_validated():
    with pytest.raises(ValueError):
        semantic_edges([], build_scope([], "exhaustive"), TokenSimilarityJudge(), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
def test_semantic_threshold_monotone(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    nodes = random_nodes(random.Random(seed), 25)
    scope = build_scope(nodes, "exhaustive")
    judge = TokenSimilarityJudge()
    strict = {e.pair for e in semantic_edges(nodes, scope, judge, hi)}
    loose = {e.pair for e in semantic_edges(nodes, scope, judge, lo)}
    assert strict <= loose


def test_causal_skips_sentinel_source_and_self_pairs():
    nodes = [node(1), node(2, start_state="N1 NAS signalling connection active")]
    assert causal_edges(nodes, build_scope(nodes, "exhaustive"), LexiconCausalJudge()) == []


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_precedence_one_edge_per_pair(seed):
    nodes = random_nodes(random.Random(seed), 30)
    edges = link(nodes, build_scope(nodes, "exhaustive"), TokenSimilarityJudge(), LexiconCausalJudge(), 0.8)
    pairs = [e.pair for e in edges]
    assert len(pairs) == len(set(pairs))
    assert all(e.src != e.dst for e in edges)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_scope_soundness(seed):
    nodes = random_nodes(random.Random(seed), 40)
    clauses = clause_ids()
    local = set(build_scope(nodes, "clause_local", clauses=clauses).pairs())
    guided_scope = build_scope(nodes, "reference_guided", clauses=clauses)
    guided = set(guided_scope.pairs())
    assert local <= guided
    assert len(guided) == guided_scope.pair_count
    judges = (TokenSimilarityJudge(), LexiconCausalJudge(), 0.8)
    guided_edges = {(e.src, e.dst, e.kind) for e in link(nodes, guided_scope, *judges)}
    full_edges = {(e.src, e.dst, e.kind) for e in link(nodes, build_scope(nodes, "exhaustive"), *judges)}
    assert guided_edges <= full_edges


def test_single_clause_local_equals_exhaustive():
    nodes = [node(i, clause="5.1") for i in range(1, 6)]
    assert list(build_scope(nodes, "clause_local").pairs()) == list(build_scope(nodes, "exhaustive").pairs())


def test_reference_reaches_descendants():
    nodes = [
        node(1, clause="5.3.1.3", action="initiate it as specified in subclause 5.5"),
        node(2, clause="5.5.1.3.2"),
        node(3, clause="6.1"),
    ]
    scope = build_scope(nodes, "reference_guided", clauses={"TS 1": {"5", "5.5", "5.5.1.3.2", "5.3.1.3", "6.1"}})
    assert scope.contains(1, 2) and scope.contains(2, 1) and scope.via_reference(1, 2)
    assert not scope.contains(1, 3)


def test_unresolved_reference_logged(caplog):
    nodes = [node(1, action="see subclause 9.9")]
    scope = build_scope(nodes, "reference_guided", clauses={"TS 1": {"5.1"}})
    assert len(scope.unresolved) == 1 and "9.9" in caplog.text


def test_exhaustive_pair_count():
    nodes = [node(i) for i in range(1, 11)]
    assert build_scope(nodes, "exhaustive").pair_count == 90
    assert exhaustive_cost_years(10_415) == pytest.approx(18.78, abs=0.01)


def test_assemble_simple_and_empty():
    nodes = [node(i) for i in range(1, 5)]
    edges = [ConnectionEdge(1, 2, EdgeKind.TEMPORAL), ConnectionEdge(2, 3, EdgeKind.CAUSAL)]
    chains = assemble_chains(edges, nodes)
    assert len(chains) == 1 and chains[0].node_ids == (1, 2, 3)
    assert assemble_chains([], nodes) == []


def test_assemble_rejects_unknown_node():
    with pytest.raises(InvariantViolation):
        assemble_chains([ConnectionEdge(1, 9, EdgeKind.TEMPORAL)], [node(1)])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
def test_assemble_permutation_invariant(seed, rnd):
    nodes = random_nodes(random.Random(seed), 30)
    edges = link(nodes, build_scope(nodes, "exhaustive"), TokenSimilarityJudge(), LexiconCausalJudge(), 0.8)
    shuffled = list(edges)
    rnd.shuffle(shuffled)
    chains = assemble_chains(edges, nodes)
    assert assemble_chains(shuffled, nodes) == chains
    for c in chains:
        assert nx.is_weakly_connected(c.graph())
        assert all(e.src in c and e.dst in c for e in c.edges)


def test_edge_validation():
    with pytest.raises(InvariantViolation):
        ConnectionEdge(1, 1, EdgeKind.TEMPORAL)
    with pytest.raises(InvariantViolation):
        ConnectionEdge(1, 2, EdgeKind.SEMANTIC)


def test_edge_store_round_trip(tmp_path, resume_nodes, resume_doc):
    _, edges, _ = link_resume(resume_nodes, resume_doc)
    write_edges(tmp_path / "e.jsonl", edges, {"artifact": "edges"})
    assert read_edges(tmp_path / "e.jsonl") == edges


def test_resume_edges(resume_nodes, resume_doc):
    _, edges, chains = link_resume(resume_nodes, resume_doc)
    got = {(e.src, e.dst, e.kind.value, e.via_reference) for e in edges}
    assert got == {
        (2110, 2055, "Temporal", False),
        (2055, 2073, "Temporal", False),
        (2073, 2037, "Causal", False),
        (2073, 5263, "Causal", True),
        (5263, 2107, "Semantic", False),
    }
    assert len(chains) == 1 and set(chains[0].node_ids) == {2110, 2055, 2073, 2037, 5263, 2107}


def test_resume_clause_local_splits(resume_nodes, resume_doc):
    scope, _, chains = link_resume(resume_nodes, resume_doc, "clause_local")
    assert len(chains) == 2
    assert scope.pair_count < build_scope(resume_nodes, "exhaustive").pair_count


def test_pairs_unique():
    nodes = random_nodes(random.Random(1), 40)
    scope = build_scope(nodes, "reference_guided", clauses=clause_ids())
    pairs = list(scope.pairs())
    assert len(pairs) == len(set(pairs))
    ids = {n.node_id for n in nodes}
    assert all(i in ids and j in ids for i, j in pairs)
    assert set(pairs) <= set(permutations(sorted(ids), 2))
