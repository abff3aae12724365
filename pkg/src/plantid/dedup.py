"""Near-duplicate detection over a corpus via 64-bit perceptual hashes.

Web-scraped corpora routinely pick up the same photo from several sources.
Detection is report-only; callers decide whether to quarantine.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import DatasetIndex
from .errors import DataError

QUARANTINE_DIR = "_quarantine"


def dhash64(image: Image.Image) -> int:
    """64-bit difference hash: sign of the horizontal gradient on an 8x9
    grayscale thumbnail. Robust to recompression and mild resizing."""
    thumb = image.convert("L").resize((9, 8), Image.Resampling.BILINEAR)
    pixels = np.asarray(thumb, dtype=np.int16)
    bits = (pixels[:, 1:] > pixels[:, :-1]).flatten()
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def file_digest(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class DuplicateReport:
    """Groups of sample_ids considered duplicates, plus files that could
    not be hashed."""

    hamming_threshold: int
    groups: list[list[str]]
    undecodable: list[str]

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        doc = {
            "hamming_threshold": self.hamming_threshold,
            "groups": self.groups,
            "undecodable": self.undecodable,
        }
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def find_near_duplicates(index: DatasetIndex, hamming_threshold: int = 0) -> DuplicateReport:
    """Group samples whose perceptual hashes differ by <= threshold bits.

    Byte-identical files are always grouped together, whatever the
    threshold. Samples that cannot be decoded are excluded from hashing
    and listed in the report. Grouping is transitive (connected
    components over the pairwise relation).
    """
    if hamming_threshold < 0:
        raise ValueError("hamming_threshold must be >= 0")

    ids: list[str] = []
    digests: dict[str, str] = {}
    hashes: dict[str, int] = {}
    undecodable: list[str] = []
    for s in index.all_samples():
        ids.append(s.sample_id)
        try:
            digests[s.sample_id] = file_digest(s.source_path)
        except OSError:
            undecodable.append(s.sample_id)
            continue
        try:
            with Image.open(s.source_path) as im:
                hashes[s.sample_id] = dhash64(im)
        except Exception:
            undecodable.append(s.sample_id)

    uf = _UnionFind(ids)

    by_digest: dict[str, str] = {}
    for sid, digest in digests.items():
        if digest in by_digest:
            uf.union(by_digest[digest], sid)
        else:
            by_digest[digest] = sid

    hashed_ids = list(hashes)
    if hashed_ids:
        values = np.array([hashes[sid] for sid in hashed_ids], dtype=np.uint64)
        # Pairwise Hamming distances, chunked to bound memory on large corpora.
        chunk = max(1, 2_000_000 // max(1, len(values)))
        for start in range(0, len(values), chunk):
            block = values[start : start + chunk]
            dist = np.bitwise_count(block[:, None] ^ values[None, :])
            rows, cols = np.nonzero(dist <= hamming_threshold)
            for r, c in zip(rows, cols):
                gi = start + int(r)
                if gi < int(c):
                    uf.union(hashed_ids[gi], hashed_ids[int(c)])

    components: dict[str, list[str]] = {}
    for sid in ids:
        if sid in digests:
            components.setdefault(uf.find(sid), []).append(sid)
    groups = sorted(
        (sorted(group) for group in components.values() if len(group) > 1),
        key=lambda g: g[0],
    )
    return DuplicateReport(
        hamming_threshold=hamming_threshold,
        groups=groups,
        undecodable=sorted(undecodable),
    )


def quarantine_duplicates(
    index: DatasetIndex, report: DuplicateReport
) -> tuple[DatasetIndex, list[str]]:
    """Move all but the first member of each duplicate group into
    ``<root>/_quarantine/<class>/`` and return the pruned index."""
    moved: list[str] = []
    for group in report.groups:
        for sid in group[1:]:
            sample = index.find(sid)
            src = Path(sample.source_path)
            dest = Path(index.root) / QUARANTINE_DIR / sample.class_name / src.name
            dest.parent.mkdir(parents=True, exist_ok=True)
            if dest.exists():
                raise DataError(f"quarantine collision: {dest}")
            src.rename(dest)
            moved.append(sid)
    return index.without_ids(moved), moved
