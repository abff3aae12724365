"""Run manifests: every artifact directory gets exactly one manifest.json
describing the command, its inputs, and when it ran."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional


def git_blob_sha1(data: bytes) -> str:
    """SHA-1 over the git blob encoding of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(paths: list[Path | str], base: Optional[Path | str] = None) -> str:
    """Combined git-style hash of the given files (directories recurse).

    Stable against listing order: entries are hashed as sorted
    "<blob_sha> <relative_path>" lines.
    """
    entries = []
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for f in files:
            rel = f.relative_to(base) if base is not None else f
            entries.append(f"{git_blob_sha1(f.read_bytes())} {rel.as_posix()}")
    h = hashlib.sha1()
    for line in sorted(entries):
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    dataset_digest: Optional[str]
    seed: Optional[int]
    started_at: str
    finished_at: str
    output_dir: str
    inputs_hash: Optional[str]

    def save(self, out_dir: Path | str) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path
