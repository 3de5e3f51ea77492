"""Stage runners shared by the command line and the tests.

Each stage reads its inputs from the work directory, writes its artifacts
there with a run-metadata header, and returns a short summary dict.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

from . import backends as bk
from .chains import (
    ScopeMode,
    FunctionChain,
    assemble_chains,
    build_scope,
    exhaustive_cost_years,
    link,
    link_stats,
    pair_cost_years,
    read_edges,
    write_edges,
)
from .config import PipelineConfig
from .corpus import Corpus, read_corpus, segment, write_corpus
from .errors import MissingArtifact
from .extraction import PatternBackend, ServiceBackend, extract, load_icl_examples
from .metrics import completeness_distribution, field_accuracy, rouge, rouge_table
from .oracle import (
    AttackAction,
    RulePropertyJudge,
    RuleTable,
    ServicePropertyJudge,
    load_properties,
    message_policies,
    read_violations,
    sweep,
)
from .sca import read_nodes, write_nodes
from .store import read_json, run_metadata, write_json
from .vulntester import synthesize_all, write_bundle

logger = logging.getLogger(__name__)

STAGES = ("ingest", "extract", "link", "analyze", "testgen", "stats")


@dataclass(frozen=True)
class Artifacts:
    root: Path

    @property
    def corpus(self) -> Path:
        return self.root / "corpus.jsonl"

    @property
    def nodes(self) -> Path:
        return self.root / "nodes.jsonl"

    @property
    def edges(self) -> Path:
        return self.root / "edges.jsonl"

    @property
    def chains(self) -> Path:
        return self.root / "chains.json"

    @property
    def violations(self) -> Path:
        return self.root / "violations.json"

    @property
    def violations_table(self) -> Path:
        return self.root / "violations.txt"

    @property
    def testcases(self) -> Path:
        return self.root / "testcases"

    @property
    def stats(self) -> Path:
        return self.root / "stats.json"

    @property
    def stats_table(self) -> Path:
        return self.root / "stats.txt"


_PRODUCERS = {
    "corpus file": "ingest",
    "node store": "extract",
    "edge store": "link",
    "chain report": "link",
    "violation report": "analyze",
}


def require(path: Path, artifact: str) -> Path:
    if not path.exists():
        raise MissingArtifact(artifact, _PRODUCERS[artifact], str(path))
    return path


def read_chains(path: Path) -> list[FunctionChain]:
    return [FunctionChain.from_dict(c) for c in read_json(path)["chains"]]


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.artifacts = Artifacts(config.work_dir)

    # -- backends ----------------------------------------------------------

    @cached_property
    def cache(self) -> bk.ResponseCache:
        path = self.config.paths.cache
        return bk.ResponseCache(self.config.resolve(path) if path else self.artifacts.root / "cache.jsonl")

    @cached_property
    def client(self) -> bk.ServiceClient:
        b = self.config.backend
        kwargs = dict(
            offline=b.offline,
            retry_attempts=b.retry_attempts,
            max_concurrency=min(b.max_concurrency, self.config.jobs) or 1,
        )
        if b.endpoint:
            kwargs["endpoint"] = b.endpoint
        return bk.ServiceClient.from_env(self.cache, **kwargs)

    def uses_service(self, stage: str) -> bool:
        c = self.config
        return {
            "extract": c.extractor.backend == "service",
            "link": "service" in (c.chains.similarity_judge, c.chains.causal_judge),
            "analyze": c.oracle.judge == "service",
        }.get(stage, False)

    def meta(self, artifact: str, stage: str) -> dict:
        cache_digest = self.cache.digest() if self.uses_service(stage) else ""
        return run_metadata(artifact, self.config.digest(), cache_digest)

    # -- stages ------------------------------------------------------------

    def run(self, command: str) -> dict:
        self.config.validate_paths()
        if command == "all":
            return {stage: getattr(self, stage)() for stage in STAGES}
        if command not in STAGES:
            raise ValueError(f"unknown command {command!r}")
        return {command: getattr(self, command)()}

    def ingest(self) -> dict:
        docs = []
        for src in self.config.paths.specs:
            raw = self.config.resolve(src.path).read_text(encoding="utf-8")
            doc = segment(src.spec_id, raw, src.version)
            for issue in doc.issues:
                logger.warning("%s: %s", src.spec_id, issue)
            docs.append(doc)
        write_corpus(self.artifacts.corpus, docs, self.meta("corpus", "ingest"))
        clauses = sum(len(d.clause_ids()) for d in docs)
        sentences = sum(len(d.records()) for d in docs)
        logger.info("ingested %d documents, %d clauses, %d sentences", len(docs), clauses, sentences)
        return {"documents": len(docs), "clauses": clauses, "sentences": sentences}

    def load_corpus(self) -> Corpus:
        return read_corpus(require(self.artifacts.corpus, "corpus file"))

    def extract(self) -> dict:
        corpus = self.load_corpus()
        cfg = self.config.extractor
        if cfg.backend == "service":
            examples = load_icl_examples(self.config.resolve(cfg.examples) if cfg.examples else None)
            backend = ServiceBackend(self.client, examples, cfg.examples_per_spec)
        else:
            backend = PatternBackend()
        skipped: list = []
        nodes = extract(corpus.records(), backend, jobs=self.config.jobs, skipped=skipped)
        meta = self.meta("nodes", "extract")
        meta["extractor"] = backend.name
        meta["skipped_sentences"] = [r.sentence.sentence_id for r, _ in skipped]
        write_nodes(self.artifacts.nodes, nodes, meta)
        return {"nodes": len(nodes), "skipped": len(skipped)}

    def link(self) -> dict:
        nodes = read_nodes(require(self.artifacts.nodes, "node store"))
        corpus = self.load_corpus()
        cfg = self.config.chains
        clauses = {d.spec_id: d.clause_ids() for d in corpus.documents}
        scope = build_scope(nodes, cfg.mode, clauses=clauses, clause_depth=cfg.clause_depth)
        similarity = bk.ServiceSimilarityJudge(self.client) if cfg.similarity_judge == "service" else bk.TokenSimilarityJudge()
        if cfg.causal_judge == "service":
            causal = bk.ServiceCausalJudge(self.client)
        else:
            lexicon = bk.EnablingLexicon.load(self.config.resolve(cfg.lexicon)) if cfg.lexicon else bk.default_lexicon()
            causal = bk.LexiconCausalJudge(lexicon)
        edges = link(nodes, scope, similarity, causal, cfg.semantic_threshold, jobs=self.config.jobs)
        chains = assemble_chains(edges, nodes)
        stats = link_stats(scope, edges, chains)
        write_edges(self.artifacts.edges, edges, self.meta("edges", "link"))
        write_json(self.artifacts.chains, {
            "meta": self.meta("chains", "link"),
            "stats": stats.to_dict(),
            "unresolved_references": [str(u) for u in scope.unresolved],
            "chains": [c.to_dict() for c in chains],
        })
        return {"edges": len(edges), "chains": len(chains), "pairs": scope.pair_count}

    def analyze(self) -> dict:
        nodes = read_nodes(require(self.artifacts.nodes, "node store"))
        require(self.artifacts.edges, "edge store")
        chains = read_chains(require(self.artifacts.chains, "chain report"))
        corpus = self.load_corpus()
        cfg = self.config.oracle
        rules = RuleTable.load(self.config.resolve(cfg.rules_file) if cfg.rules_file else None)
        props = load_properties(self.config.resolve(cfg.properties_file) if cfg.properties_file else None)
        judge = ServicePropertyJudge(self.client) if cfg.judge == "service" else RulePropertyJudge(rules)
        report = sweep(
            chains, nodes, judge,
            properties=props,
            actions=[AttackAction(a) for a in cfg.actions],
            policies=message_policies(corpus.records(), rules),
            jobs=self.config.jobs,
        )
        write_json(self.artifacts.violations, report.to_dict(self.meta("violations", "analyze")))
        self.artifacts.violations_table.write_text(report.summary() + "\n", encoding="utf-8")
        return {
            "checks_executed": report.checks_executed,
            "unchecked": len(report.unchecked),
            "violations": len(report.violations),
        }

    def testgen(self) -> dict:
        _, violations = read_violations(require(self.artifacts.violations, "violation report"))
        chains = read_chains(require(self.artifacts.chains, "chain report"))
        nodes = read_nodes(require(self.artifacts.nodes, "node store"))
        cases = synthesize_all(violations, chains, nodes, jobs=self.config.jobs)
        write_bundle(self.artifacts.testcases, cases, self.meta("testcases", "testgen"))
        return {"test_cases": len(cases)}

    def stats(self) -> dict:
        corpus = self.load_corpus()
        a = self.artifacts
        nodes = read_nodes(a.nodes) if a.nodes.exists() else []
        edges = read_edges(a.edges) if a.edges.exists() else []
        chains = read_chains(a.chains) if a.chains.exists() else []
        spp = self.config.metrics.seconds_per_pair
        clauses = {d.spec_id: d.clause_ids() for d in corpus.documents}
        depth = self.config.chains.clause_depth
        pairs = {m.value: build_scope(nodes, m, clauses=clauses, clause_depth=depth).pair_count for m in ScopeMode}
        report: dict = {
            "meta": self.meta("stats", "stats"),
            "corpus": {
                "documents": len(corpus.documents),
                "clauses": sum(len(d.clause_ids()) for d in corpus.documents),
                "sentences": len(corpus.records()),
            },
            "nodes": len(nodes),
            "completeness": completeness_distribution(nodes).to_dict(),
            "pairs": pairs,
            "cost_years": {
                "n_squared": exhaustive_cost_years(len(nodes), spp),
                **{m: pair_cost_years(c, spp) for m, c in pairs.items()},
            },
            "seconds_per_pair": spp,
            "edges": len(edges),
            "chains": len(chains),
            "largest_chain": max((len(c.node_ids) for c in chains), default=0),
            "note": "sentence counts are post-sanitation sentences; nodes are the subset judged to be function events",
        }
        if a.violations.exists():
            v = read_json(a.violations)
            report["violations"] = {
                "checks_executed": v["checks_executed"],
                "unchecked": v["unchecked"],
                "total": len(v["violations"]),
                "per_property": v["per_property_counts"],
                "per_attack": v["per_attack_counts"],
            }
        tables = ["completeness", completeness_distribution(nodes).table()]
        m = self.config.metrics
        if self.config.paths.gold:
            gold = read_nodes(self.config.resolve(self.config.paths.gold))
            acc = field_accuracy(nodes, gold, m.match_mode, m.similarity_threshold)
            report["field_accuracy"] = acc.to_dict()
            tables += ["", "field accuracy", acc.table()]
        if self.config.paths.rouge_pairs:
            pairs_data = json.loads(self.config.resolve(self.config.paths.rouge_pairs).read_text(encoding="utf-8"))
            scores = [rouge(p["candidate"], p["reference"]) for p in pairs_data]
            report["rouge"] = [s.to_dict() for s in scores]
            for i, s in enumerate(scores, start=1):
                tables += ["", f"rouge pair {i}", rouge_table(s)]
        write_json(a.stats, report)
        a.stats_table.write_text("\n".join(tables) + "\n", encoding="utf-8")
        return {"nodes": len(nodes), "sentences": report["corpus"]["sentences"]}
