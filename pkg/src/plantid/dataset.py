"""Corpus indexing, preprocessing, and deterministic train/test splitting.

A corpus is a directory of class subdirectories, each holding image files:

    <root>/<class_name>/<image files>

Class order is always lexicographic; the integer label of a class is its
rank in that order, independent of directory listing order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import DataError

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

ORIGINAL = "original"
AUGMENTED = "augmented"

UNIT_RANGE = "unit_range"
STANDARDIZE = "unit_range_then_standardize"

# Conventional channel statistics for backbones pretrained on large photo corpora.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ImageSample:
    """One image in a corpus. Pixels are decoded on demand, never stored."""

    sample_id: str
    class_name: str
    source_path: Path
    provenance: str = ORIGINAL
    parent_id: Optional[str] = None

    def __post_init__(self):
        if self.provenance not in (ORIGINAL, AUGMENTED):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if (self.provenance == AUGMENTED) != (self.parent_id is not None):
            raise ValueError(
                f"sample {self.sample_id!r}: parent_id must be set exactly "
                "for augmented samples"
            )

    def load_pixels(self) -> np.ndarray:
        """Decode to an HxWx3 float32 array with values in [0, 1]."""
        return decode_image(self.source_path)


def decode_image(path: Path | str) -> np.ndarray:
    """Decode an image file to HxWx3 float32 in [0, 1].

    Grayscale inputs are channel-replicated and alpha is discarded (8-bit
    RGB decode target).
    """
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
    except Exception as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if rgb.width == 0 or rgb.height == 0:
        raise DataError(f"zero-area image: {path}")
    return np.asarray(rgb, dtype=np.float32) / 255.0


@dataclass(frozen=True)
class DatasetIndex:
    """Immutable catalog of classes and their samples.

    ``classes`` is sorted lexicographically and defines the label encoding.
    Derive modified indexes with :meth:`with_samples` / :meth:`without_ids`
    rather than mutating.
    """

    root: Path
    classes: tuple[str, ...]
    samples_by_class: dict[str, tuple[ImageSample, ...]]
    skipped: tuple[Path, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if list(self.classes) != sorted(set(self.classes)):
            raise ValueError("classes must be unique and lexicographically sorted")
        if set(self.samples_by_class) != set(self.classes):
            raise ValueError("samples_by_class keys must match classes")
        seen: set[str] = set()
        for samples in self.samples_by_class.values():
            for s in samples:
                if s.sample_id in seen:
                    raise ValueError(f"duplicate sample_id {s.sample_id!r}")
                seen.add(s.sample_id)

    @classmethod
    def from_samples(
        cls,
        root: Path | str,
        samples: Iterable[ImageSample],
        skipped: Iterable[Path] = (),
        warnings: Iterable[str] = (),
        classes: Iterable[str] = (),
    ) -> "DatasetIndex":
        """Group samples by class. ``classes`` may add empty classes."""
        by_class: dict[str, list[ImageSample]] = {c: [] for c in classes}
        for s in samples:
            by_class.setdefault(s.class_name, []).append(s)
        ordered = tuple(sorted(by_class))
        return cls(
            root=Path(root),
            classes=ordered,
            samples_by_class={c: tuple(by_class[c]) for c in ordered},
            skipped=tuple(skipped),
            warnings=tuple(warnings),
        )

    @property
    def counts(self) -> dict[str, int]:
        return {c: len(self.samples_by_class[c]) for c in self.classes}

    @property
    def num_samples(self) -> int:
        return sum(len(v) for v in self.samples_by_class.values())

    @cached_property
    def _by_id(self) -> dict[str, ImageSample]:
        return {s.sample_id: s for s in self.all_samples()}

    def all_samples(self) -> Iterable[ImageSample]:
        for c in self.classes:
            yield from self.samples_by_class[c]

    def find(self, sample_id: str) -> ImageSample:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise DataError(f"unknown sample_id {sample_id!r}") from None

    def label_of(self, class_name: str) -> int:
        try:
            return self.classes.index(class_name)
        except ValueError:
            raise DataError(f"unknown class {class_name!r}") from None

    def with_samples(self, new_samples: Iterable[ImageSample]) -> "DatasetIndex":
        """A new index with extra samples appended to their classes."""
        merged = {c: list(v) for c, v in self.samples_by_class.items()}
        for s in new_samples:
            if s.class_name not in merged:
                raise DataError(f"sample {s.sample_id!r} names unknown class")
            merged[s.class_name].append(s)
        return DatasetIndex(
            root=self.root,
            classes=self.classes,
            samples_by_class={c: tuple(v) for c, v in merged.items()},
            skipped=self.skipped,
            warnings=self.warnings,
        )

    def without_ids(self, ids: Iterable[str]) -> "DatasetIndex":
        drop = set(ids)
        kept = {
            c: tuple(s for s in v if s.sample_id not in drop)
            for c, v in self.samples_by_class.items()
        }
        return DatasetIndex(
            root=self.root,
            classes=self.classes,
            samples_by_class=kept,
            skipped=self.skipped,
            warnings=self.warnings,
        )

    def content_digest(self) -> str:
        """Digest over sample ids and file contents; identifies corpus state."""
        h = hashlib.sha256()
        for s in sorted(self.all_samples(), key=lambda s: s.sample_id):
            h.update(s.sample_id.encode("utf-8"))
            h.update(b"\0")
            p = Path(s.source_path)
            if p.is_file():
                h.update(hashlib.sha256(p.read_bytes()).digest())
            h.update(b"\n")
        return h.hexdigest()

    def export_manifest(self, path: Path | str) -> Path:
        """Write the sample manifest CSV (paths relative to root if possible)."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "class_name", "provenance", "parent_id", "path"])
            for s in self.all_samples():
                try:
                    rel = Path(s.source_path).relative_to(self.root)
                except ValueError:
                    rel = Path(s.source_path)
                writer.writerow(
                    [s.sample_id, s.class_name, s.provenance, s.parent_id or "", str(rel)]
                )
        return path


def _is_class_dir(path: Path) -> bool:
    return path.is_dir() and not path.name.startswith((".", "_"))


def _is_decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except Exception:
        return False


def load_index(root: Path | str) -> DatasetIndex:
    """Scan ``root``'s class subdirectories and register decodable images.

    Every registered sample has provenance "original"; files that are not
    decodable images are reported in ``index.skipped``. Empty class
    directories are kept (count 0) with a warning. Directories whose name
    starts with "." or "_" (e.g. the duplicate quarantine) are ignored.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"corpus root does not exist: {root}")
    class_dirs = sorted((d for d in root.iterdir() if _is_class_dir(d)), key=lambda d: d.name)
    if not class_dirs:
        raise DataError(f"no class directories under {root}")

    samples: list[ImageSample] = []
    skipped: list[Path] = []
    warnings: list[str] = []
    for class_dir in class_dirs:
        n_before = len(samples)
        for f in sorted(class_dir.iterdir(), key=lambda p: p.name):
            if not f.is_file():
                continue
            if f.suffix.lower() not in IMAGE_EXTENSIONS or not _is_decodable(f):
                skipped.append(f)
                continue
            samples.append(
                ImageSample(
                    sample_id=f"{class_dir.name}/{f.name}",
                    class_name=class_dir.name,
                    source_path=f,
                )
            )
        if len(samples) == n_before:
            warnings.append(f"class {class_dir.name!r} has no decodable images")

    return DatasetIndex.from_samples(
        root,
        samples,
        skipped=skipped,
        warnings=warnings,
        classes=[d.name for d in class_dirs],
    )


@dataclass(frozen=True)
class PreprocessConfig:
    """Resolution and normalization applied before a model sees an image."""

    target_resolution: int = 128
    normalization: str = UNIT_RANGE
    standardize_mean: tuple[float, float, float] = IMAGENET_MEAN
    standardize_std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if self.target_resolution <= 0:
            raise ValueError("target_resolution must be positive")
        if self.normalization not in (UNIT_RANGE, STANDARDIZE):
            raise ValueError(f"unknown normalization {self.normalization!r}")


def preprocess(sample: ImageSample, config: PreprocessConfig) -> np.ndarray:
    """Decode, resize to the target square, and normalize one sample.

    Returns (R, R, 3) float32. In unit_range mode values lie in [0, 1];
    in standardize mode they are (unit_range - mean) / std per channel.
    """
    try:
        with Image.open(sample.source_path) as im:
            rgb = im.convert("RGB")
    except Exception as exc:
        raise DataError(f"cannot decode image {sample.source_path}: {exc}") from exc
    return preprocess_image(rgb, config)


def preprocess_image(image: Image.Image, config: PreprocessConfig) -> np.ndarray:
    """Resize + normalize an already-decoded PIL image (RGB)."""
    if image.width == 0 or image.height == 0:
        raise DataError("zero-area image")
    r = config.target_resolution
    resized = image.resize((r, r), Image.Resampling.BILINEAR)
    pixels = np.asarray(resized, dtype=np.float32) / 255.0
    if config.normalization == STANDARDIZE:
        mean = np.asarray(config.standardize_mean, dtype=np.float32)
        std = np.asarray(config.standardize_std, dtype=np.float32)
        pixels = (pixels - mean) / std
    return pixels


def derive_rng(seed: int, label: str) -> random.Random:
    """Stable per-label RNG: same (seed, label) gives the same stream on
    any platform or run."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class SplitAssignment:
    """Deterministic stratified train/test partition of an index."""

    seed: int
    train_fraction: float
    train_ids: frozenset[str]
    test_ids: frozenset[str]

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        doc = {
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "train": sorted(self.train_ids),
            "test": sorted(self.test_ids),
        }
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: Path | str) -> "SplitAssignment":
        try:
            doc = json.loads(Path(path).read_text())
            return cls(
                seed=int(doc["seed"]),
                train_fraction=float(doc["train_fraction"]),
                train_ids=frozenset(doc["train"]),
                test_ids=frozenset(doc["test"]),
            )
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read split file {path}: {exc}") from exc


def stratified_split(index: DatasetIndex, fraction: float = 0.6, seed: int = 0) -> SplitAssignment:
    """Partition every class with round(fraction * count) train samples.

    Rounding is half-up; the remainder goes to test. Shuffling uses a
    per-class RNG derived from (seed, class_name), so the assignment for a
    class does not depend on what other classes exist.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    train: set[str] = set()
    test: set[str] = set()
    for class_name in index.classes:
        ids = sorted(s.sample_id for s in index.samples_by_class[class_name])
        if len(ids) < 2:
            raise DataError(
                f"class {class_name!r} has {len(ids)} sample(s); need at least 2 to split"
            )
        derive_rng(seed, class_name).shuffle(ids)
        n_train = _round_half_up(fraction * len(ids))
        train.update(ids[:n_train])
        test.update(ids[n_train:])
    return SplitAssignment(
        seed=seed,
        train_fraction=fraction,
        train_ids=frozenset(train),
        test_ids=frozenset(test),
    )
