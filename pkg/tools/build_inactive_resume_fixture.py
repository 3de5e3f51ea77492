"""Regenerate the replay cache and node store of the bundled resume fixture.

Run after changing the extraction prompt, the ICL examples or the transcript:

    python tools/build_inactive_resume_fixture.py [OUT_DIR]

OUT_DIR defaults to the fixture directory itself.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from scachain.backends import CachedResponse, ResponseCache, ServiceClient
from scachain.corpus import segment
from scachain.extraction import ServiceBackend, parse_sca_response
from scachain.sca import ScaNode, SourceRef, write_nodes

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "scachain" / "data" / "fixtures" / "inactive_resume"
STAMP = "2025-01-01T00:00:00+00:00"


def build(out_dir: Path = FIXTURE) -> tuple[int, int]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    transcript = json.loads((FIXTURE / "transcript.json").read_text(encoding="utf-8"))
    responses = {r["sentence"]: r for r in transcript["responses"]}
    doc = segment(transcript["spec_id"], (FIXTURE / "spec.txt").read_text(encoding="utf-8"), transcript["version"])
    backend = ServiceBackend(ServiceClient(offline=True))

    cache_path = out_dir / "cache.jsonl"
    cache_path.unlink(missing_ok=True)
    cache = ResponseCache(cache_path)
    nodes = []
    for record in doc.records():
        entry = responses.pop(record.sentence.text)
        req = backend.request_for(record)
        cache.put_if_absent(CachedResponse(req.digest, req.template_id, entry["response"], STAMP))
        fields = parse_sca_response(entry["response"])
        if fields is not None:
            source = SourceRef(record.spec_id, record.clause_id, record.sentence.sentence_id)
            nodes.append(ScaNode.build(entry["source_node_id"], source, sentence_refs=record.sentence.references, **fields))
    if responses:
        raise SystemExit(f"transcript sentences not found in spec.txt: {list(responses)}")
    write_nodes(out_dir / "nodes.jsonl", nodes, {"artifact": "nodes", "fixture": "inactive_resume"})
    return len(cache), len(nodes)


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else FIXTURE
    n_cache, n_nodes = build(out)
    print(f"{n_cache} cached responses, {n_nodes} nodes")


if __name__ == "__main__":
    main()
