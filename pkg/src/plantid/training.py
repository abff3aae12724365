"""Training protocol: Adam + cross-entropy + per-epoch exponential LR decay.

Each epoch runs seeded-shuffled minibatch updates at lr = base_lr * gamma^epoch,
then a full evaluation pass over both partitions in evaluation mode. The
recorded history is the machine-readable form of the loss/accuracy curves.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .dataset import DatasetIndex, PreprocessConfig, preprocess
from .errors import DataError, NumericError
from .models import ImageClassifier, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    """Every hyperparameter of a run. Defaults are the standard protocol:
    Adam(0.9, 0.999, eps 1e-8), lr 0.001 decayed by 0.9 per epoch, 50 epochs."""

    base_lr: float = 0.001
    gamma: float = 0.9
    epochs: int = 50
    batch_size: int = 32
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every_epoch: bool = True

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate applied before epoch's updates: base_lr * gamma^epoch."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.base_lr * config.gamma**epoch


def _as_2d_float(logits) -> torch.Tensor:
    t = torch.as_tensor(logits)
    if t.ndim != 2:
        raise ValueError(f"expected (B, K) logits, got shape {tuple(t.shape)}")
    return t


def _valid_labels(labels, num_classes: int) -> torch.Tensor:
    t = torch.as_tensor(labels, dtype=torch.long)
    if t.ndim != 1:
        raise ValueError(f"expected 1-D labels, got shape {tuple(t.shape)}")
    if t.numel() == 0:
        raise DataError("empty batch")
    if int(t.min()) < 0 or int(t.max()) >= num_classes:
        raise DataError(
            f"label out of range: got {int(t.min())}..{int(t.max())} "
            f"for {num_classes} classes"
        )
    return t


def cross_entropy(logits, labels) -> torch.Tensor:
    """Mean over the batch of -log softmax(logits)[label].

    Log-sum-exp stabilized (finite for finite logits). Returns a 0-dim
    tensor so it can back-propagate; use float() for the scalar value.
    """
    t = _as_2d_float(logits)
    y = _valid_labels(labels, t.shape[1])
    return torch.nn.functional.cross_entropy(t, y)


def batch_accuracy(logits, labels) -> float:
    """Fraction of rows whose argmax equals the label (ties resolve to the
    lowest class index)."""
    t = _as_2d_float(logits)
    y = _valid_labels(labels, t.shape[1])
    return float((t.argmax(dim=1) == y).double().mean())


class CorpusDataset(Dataset):
    """Feeds (CHW float32 tensor, label) pairs for a subset of an index.

    Samples are ordered by sample_id so the feed is independent of
    directory listing order. ``preload`` decodes everything once up front,
    which is the right call for small corpora and repeated epochs.
    """

    def __init__(
        self,
        index: DatasetIndex,
        sample_ids: Sequence[str],
        config: PreprocessConfig,
        preload: bool = False,
    ):
        self.samples = [index.find(sid) for sid in sorted(sample_ids)]
        self.labels = [index.label_of(s.class_name) for s in self.samples]
        self.num_classes = len(index.classes)
        self.config = config
        self._cache: Optional[list[torch.Tensor]] = None
        if preload:
            self._cache = [self._decode(i) for i in range(len(self.samples))]

    def _decode(self, i: int) -> torch.Tensor:
        pixels = preprocess(self.samples[i], self.config)
        return torch.from_numpy(np.ascontiguousarray(pixels.transpose(2, 0, 1)))

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int):
        x = self._cache[i] if self._cache is not None else self._decode(i)
        return x, self.labels[i]


class TensorClassificationDataset(Dataset):
    """In-memory (images, labels) pairs; images are (N, 3, R, R) float32."""

    def __init__(self, images: torch.Tensor, labels: torch.Tensor):
        if len(images) != len(labels):
            raise ValueError("images and labels length mismatch")
        self.images = images.float()
        self.labels = labels.long()

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int):
        return self.images[i], int(self.labels[i])


def evaluation_pass(model: ImageClassifier, dataset: Dataset, batch_size: int = 64):
    """Full-pass mean loss and accuracy in evaluation mode (no updates)."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    was_training = model.training
    model.eval()
    loss_sum = 0.0
    correct = 0
    total = 0
    with torch.no_grad():
        for x, y in loader:
            logits = model(x)
            y = _valid_labels(y, logits.shape[1])
            loss_sum += float(cross_entropy(logits, y)) * len(y)
            correct += int((logits.argmax(dim=1) == y).sum())
            total += len(y)
    if was_training:
        model.train()
    return loss_sum / total, correct / total


def train(
    model: ImageClassifier,
    train_set: Dataset,
    test_set: Dataset,
    config: TrainConfig,
    out_dir: Optional[Path | str] = None,
    dataset_name: str = "dataset",
    workers: int = 0,
    checkpoint_extra: Optional[dict] = None,
) -> tuple[ImageClassifier, list[EpochMetrics], Optional[Path]]:
    """Run the full protocol and record per-epoch metrics.

    Returns (trained model, history, path of the best-test-accuracy
    checkpoint). Checkpoints (best and last epoch) are written only when
    ``out_dir`` is given, named ``<arch>_<dataset>_<epoch>.ckpt``. With
    ``eval_every_epoch`` off, test metrics are NaN except at the final
    epoch. Fixed (seed, data, config) reproduces the history exactly.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise DataError("train and test sets must be nonempty")
    torch.manual_seed(config.seed)
    loader = DataLoader(
        train_set,
        batch_size=config.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(config.seed),
        num_workers=workers,
    )
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.base_lr,
        betas=config.adam_betas,
        eps=config.adam_eps,
    )

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    arch = model.spec.architecture

    history: list[EpochMetrics] = []
    best_accuracy = -1.0
    best_path: Optional[Path] = None
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr

        model.train()
        for batch_idx, (x, y) in enumerate(loader):
            optimizer.zero_grad()
            loss = cross_entropy(model(x), y)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss {float(loss)} at epoch {epoch}, batch {batch_idx} "
                    f"(lr={lr:.3e})"
                )
            loss.backward()
            optimizer.step()

        train_loss, train_acc = evaluation_pass(model, train_set, config.batch_size)
        is_last = epoch == config.epochs - 1
        if config.eval_every_epoch or is_last:
            test_loss, test_acc = evaluation_pass(model, test_set, config.batch_size)
        else:
            test_loss = test_acc = math.nan
        history.append(
            EpochMetrics(
                epoch=epoch,
                lr=lr,
                train_loss=train_loss,
                train_accuracy=train_acc,
                test_loss=test_loss,
                test_accuracy=test_acc,
            )
        )

        if out_path is not None and not math.isnan(test_acc):
            extra = dict(checkpoint_extra or {})
            if test_acc > best_accuracy:
                new_best = out_path / f"{arch}_{dataset_name}_{epoch}.ckpt"
                save_checkpoint(model, new_best, epoch, test_accuracy=test_acc, **extra)
                if best_path is not None and best_path != new_best:
                    best_path.unlink(missing_ok=True)
                best_path = new_best
                best_accuracy = test_acc
            if is_last:
                last = out_path / f"{arch}_{dataset_name}_{epoch}.ckpt"
                if last != best_path:
                    save_checkpoint(model, last, epoch, test_accuracy=test_acc, **extra)

    return model, history, best_path


def write_metrics_csv(history: Sequence[EpochMetrics], path: Path | str) -> Path:
    """Metrics history CSV: epoch,lr,train_loss,train_acc,test_loss,test_acc."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "train_acc", "test_loss", "test_acc"])
        for m in history:
            writer.writerow(
                [m.epoch, repr(m.lr), repr(m.train_loss), repr(m.train_accuracy),
                 repr(m.test_loss), repr(m.test_accuracy)]
            )
    return path


def write_run_config(
    path: Path | str,
    config: TrainConfig,
    model_spec,
    **extra,
) -> Path:
    """JSON echo of every config field plus model spec and dataset digests."""
    doc = {
        "train_config": dataclasses.asdict(config),
        "model_spec": dataclasses.asdict(model_spec),
        **extra,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
