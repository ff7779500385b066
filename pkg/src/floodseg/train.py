"""Minibatch training loop with validation-based model selection.

Pairs are loaded from manifest entries, resized to the model input size
(masks re-binarized), and shuffled each epoch from one seeded stream, so a
(config, seed) pair pins the whole trajectory. A non-finite batch loss
aborts the run naming the offending batch. When validation entries are
given, the best-validation-dice snapshot is kept; otherwise the final state
is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convnn import bce_loss, dice_loss
from .dataio import binarize_mask, load_image, load_mask, resize_bilinear
from .metrics import dice_score, iou
from .model import Model, serialize_model
from .optim import Adam
from .tensor import Tensor, no_grad

LOSSES = {"bce": bce_loss, "dice": dice_loss}


class NumericFailure(RuntimeError):
    """Training hit a non-finite loss; carries the offending batch id."""

    def __init__(self, message: str, batch_id: str):
        super().__init__(message)
        self.batch_id = batch_id


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_iou: float | None
    val_dice: float | None

    def format(self) -> str:
        vi = "-" if self.val_iou is None else f"{self.val_iou:.6f}"
        vd = "-" if self.val_dice is None else f"{self.val_dice:.6f}"
        return f"{self.epoch}\t{self.loss:.6f}\t{vi}\t{vd}"


class PairDataset:
    """Loads (image CHW, mask) arrays at the model input size, with caching."""

    def __init__(self, entries, size: int, dtype=np.float32, cache: bool = True):
        self.entries = list(entries)
        self.size = size
        self.dtype = np.dtype(dtype)
        self._cache = {} if cache else None

    def __len__(self):
        return len(self.entries)

    def get(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        entry = self.entries[index]
        if self._cache is not None and index in self._cache:
            return self._cache[index]
        image = resize_bilinear(load_image(entry.image_path), self.size, self.size)
        mask = binarize_mask(resize_bilinear(load_mask(entry.mask_path), self.size, self.size))
        item = (np.ascontiguousarray(image.transpose(2, 0, 1).astype(self.dtype)),
                mask.astype(self.dtype))
        if self._cache is not None:
            self._cache[index] = item
        return item


def _mean_scores(model: Model, dataset: PairDataset, threshold: float = 0.5):
    ious, dices = [], []
    with no_grad():
        for i in range(len(dataset)):
            image, mask = dataset.get(i)
            prob = model.forward(Tensor(image)).data[0]
            pred = (prob > threshold).astype(np.uint8)
            true = (mask > 0.5).astype(np.uint8)
            ious.append(iou(pred, true))
            dices.append(dice_score(pred, true))
    return sum(ious) / len(ious), sum(dices) / len(dices)


@dataclass
class TrainResult:
    rows: list
    model_bytes: bytes          # best-validation snapshot, or the final state
    best_epoch: int | None


def train_model(model: Model, train_entries, val_entries=(), *, loss: str = "dice",
                epochs: int = 1, batch_size: int = 4, lr: float = 1e-3,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                seed: int = 0, freeze=(), early_stop_train_dice: float = 0.0,
                cache: bool = True, on_epoch=None) -> TrainResult:
    if loss not in LOSSES:
        raise ValueError(f"train_model: unknown loss {loss!r}, expected one of {sorted(LOSSES)}")
    if batch_size < 1 or epochs < 0:
        raise ValueError("train_model: batch_size must be >= 1 and epochs >= 0")
    loss_fn = LOSSES[loss]
    train_ds = PairDataset(train_entries, model.spec.input_size, model.dtype, cache)
    val_ds = PairDataset(val_entries, model.spec.input_size, model.dtype, cache)
    if len(train_ds) == 0:
        raise ValueError("train_model: no training entries")

    optimizer = Adam(model.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps, freeze=freeze)
    rng = np.random.RandomState(seed)
    rows = []
    best_dice = -1.0
    best_bytes = None
    best_epoch = None

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_ds))
        total = 0.0
        batches = 0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            optimizer.zero_grad()
            sample_losses = []
            for i in batch:
                image, mask = train_ds.get(int(i))
                pred = model.forward(Tensor(image))
                target = Tensor(mask[None, :, :])
                sample_losses.append(loss_fn(pred, target))
            batch_loss = sample_losses[0]
            for extra in sample_losses[1:]:
                batch_loss = batch_loss + extra
            batch_loss = batch_loss * (1.0 / len(sample_losses))
            value = batch_loss.item()
            if not np.isfinite(value):
                raise NumericFailure(
                    f"non-finite loss {value} in epoch {epoch}, batch {batches}",
                    batch_id=f"{epoch}:{batches}")
            batch_loss.backward()
            optimizer.step()
            total += value
            batches += 1

        val_iou = val_dice = None
        if len(val_ds):
            val_iou, val_dice = _mean_scores(model, val_ds)
            if val_dice > best_dice:
                best_dice = val_dice
                best_bytes = serialize_model(model)
                best_epoch = epoch
        row = EpochLog(epoch, total / batches, val_iou, val_dice)
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if early_stop_train_dice > 0.0:
            _, train_dice = _mean_scores(model, train_ds)
            if train_dice >= early_stop_train_dice:
                break

    if best_bytes is None:
        best_bytes = serialize_model(model)
    return TrainResult(rows, best_bytes, best_epoch)
