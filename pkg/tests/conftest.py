from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scachain.backends import LexiconCausalJudge, TokenSimilarityJudge  # noqa: E402
from scachain.chains import assemble_chains, build_scope, link  # noqa: E402
from scachain.corpus import segment  # noqa: E402
from scachain.sca import read_nodes  # noqa: E402

REPO = Path(__file__).resolve().parents[1]
RESUME = Path(str(resources.files("scachain.data") / "fixtures" / "inactive_resume"))
RESUME_THRESHOLD = 0.7


@pytest.fixture(scope="session")
def resume_dir() -> Path:
    return RESUME


@pytest.fixture(scope="session")
def resume_doc():
    return segment("TS 24.501", (RESUME / "spec.txt").read_text(encoding="utf-8"), "18.0.0")


@pytest.fixture(scope="session")
def resume_nodes():
    return read_nodes(RESUME / "nodes.jsonl")


def link_resume(nodes, doc, mode="reference_guided"):
    scope = build_scope(nodes, mode, clauses={doc.spec_id: doc.clause_ids()})
    edges = link(nodes, scope, TokenSimilarityJudge(), LexiconCausalJudge(), RESUME_THRESHOLD)
    return scope, edges, assemble_chains(edges, nodes)


@pytest.fixture()
def resume_config(tmp_path) -> Path:
    """The committed resume configuration, rewritten to use a temporary work directory."""
    src = REPO / "configs" / "inactive_resume.json"
    dst_dir = tmp_path / "configs"
    dst_dir.mkdir()
    text = src.read_text(encoding="utf-8").replace("../src/", str(REPO / "src") + "/")
    text = text.replace('"../out/inactive_resume"', '"' + str(tmp_path / "out") + '"')
    dst = dst_dir / "inactive_resume.json"
    dst.write_text(text, encoding="utf-8")
    return dst
