"""Line-delimited record files with a leading run-metadata header line."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

from . import __version__


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=False)


def digest(obj) -> str:
    """Stable sha256 of a JSON-serialisable value."""
    blob = json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def run_metadata(artifact: str, config_digest: str = "", cache_digest: str = "") -> dict:
    return {
        "artifact": artifact,
        "tool_version": __version__,
        "config_digest": config_digest,
        "cache_digest": cache_digest,
    }


def write_jsonl(path: Path, records: Iterable[dict], meta: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps({"meta": meta}) + "\n")
        for record in records:
            fh.write(dumps(record) + "\n")


def read_jsonl(path: Path) -> tuple[dict, list[dict]]:
    meta: dict = {}
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            obj = json.loads(line)
            if i == 0 and set(obj) == {"meta"}:
                meta = obj["meta"]
            else:
                rows.append(obj)
    return meta, rows


def write_json(path: Path, obj: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
