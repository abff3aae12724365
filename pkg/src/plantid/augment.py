"""Exact-pixel augmentation ops and class balancing.

Every op is a bijection on square pixel grids (flips, quarter-turn
rotations, and their two distinct compositions), so no information is
lost and op algebra holds pixel-exactly. Classes below the target count
are topped up with augmented copies; classes at or above it pass through
unchanged.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import AUGMENTED, DatasetIndex, ImageSample, derive_rng
from .errors import DataError


class AugmentationOp(Enum):
    HFLIP = "hflip"
    VFLIP = "vflip"
    ROT90 = "rot90"
    ROT180 = "rot180"
    ROT270 = "rot270"
    HFLIP_ROT90 = "hflip_rot90"
    VFLIP_ROT90 = "vflip_rot90"


# Cycling order when a class needs several augmented copies per parent.
OP_ORDER = (
    AugmentationOp.HFLIP,
    AugmentationOp.VFLIP,
    AugmentationOp.ROT90,
    AugmentationOp.ROT180,
    AugmentationOp.ROT270,
    AugmentationOp.HFLIP_ROT90,
    AugmentationOp.VFLIP_ROT90,
)

_ROTATING = {
    AugmentationOp.ROT90,
    AugmentationOp.ROT180,
    AugmentationOp.ROT270,
    AugmentationOp.HFLIP_ROT90,
    AugmentationOp.VFLIP_ROT90,
}


def apply_op(pixels: np.ndarray, op: AugmentationOp) -> np.ndarray:
    """Apply one transform to an HxWxC array as an exact pixel permutation.

    rot90 is counter-clockwise; composites apply the flip first, then the
    rotation. Rotation ops require square input.
    """
    if pixels.ndim not in (2, 3):
        raise ValueError(f"expected HxW or HxWxC pixels, got shape {pixels.shape}")
    if op in _ROTATING and pixels.shape[0] != pixels.shape[1]:
        raise DataError(
            f"rotation op {op.value} needs a square image, got {pixels.shape[0]}x{pixels.shape[1]}"
        )
    if op is AugmentationOp.HFLIP:
        out = pixels[:, ::-1]
    elif op is AugmentationOp.VFLIP:
        out = pixels[::-1, :]
    elif op is AugmentationOp.ROT90:
        out = np.rot90(pixels, 1, axes=(0, 1))
    elif op is AugmentationOp.ROT180:
        out = np.rot90(pixels, 2, axes=(0, 1))
    elif op is AugmentationOp.ROT270:
        out = np.rot90(pixels, 3, axes=(0, 1))
    elif op is AugmentationOp.HFLIP_ROT90:
        out = np.rot90(pixels[:, ::-1], 1, axes=(0, 1))
    elif op is AugmentationOp.VFLIP_ROT90:
        out = np.rot90(pixels[::-1, :], 1, axes=(0, 1))
    else:
        raise ValueError(f"unknown op {op!r}")
    return np.ascontiguousarray(out)


@dataclass(frozen=True)
class BalancePlan:
    """Which (parent, op) pairs raise one class to its target count."""

    class_name: str
    originals: int
    target_count: int
    assignments: tuple[tuple[str, AugmentationOp], ...]

    def __post_init__(self):
        if self.originals + len(self.assignments) != self.target_count:
            raise ValueError(
                f"plan for {self.class_name!r} is inconsistent: "
                f"{self.originals} + {len(self.assignments)} != {self.target_count}"
            )
        if len(set(self.assignments)) != len(self.assignments):
            raise ValueError(f"plan for {self.class_name!r} repeats a (parent, op) pair")


def plan_balance(index: DatasetIndex, target_count: int, seed: int = 0) -> list[BalancePlan]:
    """Plan augmentation assignments that bring every class to target_count.

    Parents are cycled in seeded-shuffled order, ops in OP_ORDER, so no
    (parent, op) pair repeats until the pool of 7 ops per parent is
    exhausted. Classes already at or above the target get an empty plan
    (their effective target is their own count). Deterministic for a
    fixed seed.
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    plans = []
    for class_name in index.classes:
        n = len(index.samples_by_class[class_name])
        if n == 0:
            raise DataError(f"class {class_name!r} has no originals to augment from")
        deficit = max(0, target_count - n)
        if deficit > len(OP_ORDER) * n:
            raise DataError(
                f"class {class_name!r}: op pool exhausted; {n} originals can reach "
                f"at most {n * (len(OP_ORDER) + 1)} samples, not {target_count}"
            )
        parents = sorted(s.sample_id for s in index.samples_by_class[class_name])
        derive_rng(seed, class_name).shuffle(parents)
        assignments = tuple((parents[k % n], OP_ORDER[k // n]) for k in range(deficit))
        plans.append(
            BalancePlan(
                class_name=class_name,
                originals=n,
                target_count=max(target_count, n),
                assignments=assignments,
            )
        )
    return plans


def _encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def materialize(plan: BalancePlan, index: DatasetIndex, resolution: int = 128) -> list[ImageSample]:
    """Write a plan's augmented images to disk beside their parents.

    Parents are resized to the square working resolution first so rotation
    ops are well-defined; outputs are PNG (lossless, byte-deterministic)
    named ``<parent_stem>__aug_<opname>.png``. Re-running the same plan is
    a no-op; a name collision with different content is fatal.
    """
    new_samples = []
    for parent_id, op in plan.assignments:
        parent = index.find(parent_id)
        try:
            with Image.open(parent.source_path) as im:
                rgb = im.convert("RGB").resize(
                    (resolution, resolution), Image.Resampling.BILINEAR
                )
        except Exception as exc:
            raise DataError(f"cannot decode parent {parent_id}: {exc}") from exc
        pixels = apply_op(np.asarray(rgb, dtype=np.uint8), op)
        filename = f"{Path(parent.source_path).stem}__aug_{op.value}.png"
        dest = Path(parent.source_path).parent / filename
        encoded = _encode_png(pixels)
        if dest.exists():
            if dest.read_bytes() != encoded:
                raise DataError(f"filename collision with different content: {dest}")
        else:
            dest.write_bytes(encoded)
        new_samples.append(
            ImageSample(
                sample_id=f"{plan.class_name}/{filename}",
                class_name=plan.class_name,
                source_path=dest,
                provenance=AUGMENTED,
                parent_id=parent_id,
            )
        )
    return new_samples


def export_plans_csv(plans: list[BalancePlan], path: Path | str) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "parent_id", "op"])
        for plan in plans:
            for parent_id, op in plan.assignments:
                writer.writerow([plan.class_name, parent_id, op.value])
    return path
