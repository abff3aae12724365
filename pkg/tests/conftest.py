"""Shared synthetic-corpus builders for the test suite."""

from __future__ import annotations

import colorsys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from plantid.dataset import DatasetIndex, ImageSample


def write_image(path: Path, pixels: np.ndarray, fmt: str | None = None, **save_kwargs) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels.astype(np.uint8), mode="RGB").save(path, format=fmt, **save_kwargs)
    return path


def random_image(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    return rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)


def make_corpus(
    root: Path,
    counts: dict[str, int],
    size: int = 32,
    seed: int = 0,
    ext: str = "png",
) -> Path:
    """Class-per-directory corpus of deterministic random images."""
    rng = np.random.default_rng(seed)
    for class_name, n in counts.items():
        for i in range(n):
            write_image(root / class_name / f"img_{i:03d}.{ext}", random_image(rng, size))
    return root


def textured_image(
    rng: np.random.Generator,
    class_idx: int,
    num_classes: int,
    size: int = 128,
    color_cue: bool = True,
) -> np.ndarray:
    """A class-separable texture: oriented stripes (and optionally a class
    hue) with per-image phase, angle jitter, and noise."""
    angle = np.pi * class_idx / num_classes + rng.normal(0.0, 0.06)
    freq = 0.25 + 0.08 * (class_idx % 4)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    waves = np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
    stripes = 0.5 + 0.5 * waves

    if color_cue:
        base = np.array(colorsys.hsv_to_rgb(class_idx / num_classes, 0.85, 0.85))
    else:
        base = np.array([0.45, 0.62, 0.40])  # same hue for every class
    img = base[None, None, :] * (90 + 150 * stripes[:, :, None])
    img = img + rng.normal(0.0, 10.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def make_textured_corpus(
    root: Path,
    num_classes: int,
    per_class: int,
    size: int = 128,
    seed: int = 0,
    color_cue: bool = True,
) -> Path:
    rng = np.random.default_rng(seed)
    for k in range(num_classes):
        for i in range(per_class):
            pixels = textured_image(rng, k, num_classes, size=size, color_cue=color_cue)
            write_image(root / f"class_{k:02d}" / f"img_{i:03d}.png", pixels)
    return root


def synthetic_index(counts: dict[str, int], root: str = "/synthetic") -> DatasetIndex:
    """In-memory index with fake paths; enough for splitting and planning."""
    samples = []
    for class_name, n in counts.items():
        for i in range(n):
            sid = f"{class_name}/img_{i:04d}.png"
            samples.append(
                ImageSample(
                    sample_id=sid,
                    class_name=class_name,
                    source_path=Path(root) / sid,
                )
            )
    return DatasetIndex.from_samples(root, samples, classes=counts.keys())


def color_blob_batch(n_per_class: int = 4, size: int = 128, seed: int = 0):
    """Linearly separable two-class set: red-dominant vs blue-dominant noise.

    Returns (images, labels) as tensors, images (N, 3, size, size) in [0, 1].
    """
    rng = np.random.default_rng(seed)
    images = []
    labels = []
    for label in (0, 1):
        for _ in range(n_per_class):
            img = rng.uniform(0.0, 0.35, size=(3, size, size)).astype(np.float32)
            img[2 if label else 0] += 0.55
            images.append(img)
            labels.append(label)
    return torch.from_numpy(np.stack(images)), torch.tensor(labels)
