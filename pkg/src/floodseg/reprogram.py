"""Repurpose a frozen segmentation model for a new binary task.

The wrapper learns an elementwise input program (scale and shift applied to
every channel of the incoming image) and a 1x1 output map from the frozen
base's channels to the new task's channels; the base itself never changes.
Frozenness is enforced two ways: base parameters are marked as requiring no
gradient updates, and a checksum over the serialized base is compared before
and after training, failing hard on drift.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .convnn import bce_loss, conv2d, dice_loss
from .dataio import binarize_mask, resize_bilinear
from .model import (KIND_WRAPPER, Model, ModelFormatError, ModelSpec, _pack_header,
                    _unpack_header, build_model, init_params, load_model,
                    model_checksum)
from .optim import Adam
from .tensor import ShapeError, Tensor, no_grad, sigmoid

LOSSES = {"bce": bce_loss, "dice": dice_loss}


class FrozenBaseError(RuntimeError):
    """The frozen base's parameters changed during wrapper training."""


def input_transform(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Elementwise reprogramming of the input: weight * x + bias.

    ``weight`` and ``bias`` are (H, W), shared across the image channels, or
    (C, H, W) for a per-channel program; either way they must match the
    spatial extent of ``x``.
    """
    if weight.data.shape != bias.data.shape:
        raise ShapeError(f"input_transform: weight {weight.data.shape} and bias "
                         f"{bias.data.shape} must match")
    if weight.data.shape[-2:] != x.data.shape[-2:]:
        raise ShapeError(f"input_transform: program {weight.data.shape} does not cover "
                         f"input {x.data.shape}")
    if weight.data.ndim == 3 and weight.data.shape != x.data.shape:
        raise ShapeError(f"input_transform: per-channel program {weight.data.shape} "
                         f"does not match input {x.data.shape}")
    return weight * x + bias


def output_map(features: Tensor, kernel: Tensor, bias: Tensor,
               apply_sigmoid: bool | None = None) -> Tensor:
    """1x1 convolution across channels; sigmoid by default for 1-channel output."""
    if kernel.data.ndim != 4 or kernel.data.shape[2:] != (1, 1):
        raise ShapeError(f"output_map: kernel must be (C_new, C_old, 1, 1), "
                         f"got {kernel.data.shape}")
    out = conv2d(features, kernel, bias)
    if apply_sigmoid is None:
        apply_sigmoid = kernel.data.shape[0] == 1
    return sigmoid(out) if apply_sigmoid else out


class ReprogramWrapper:
    """A frozen base model plus trainable input program and output map."""

    def __init__(self, base: Model, c_new: int = 1, per_channel: bool = False, seed: int = 0):
        for p in base.params.values():
            p.requires_grad = False
        self.base = base
        self.c_new = int(c_new)
        self.per_channel = bool(per_channel)
        self.base_checksum = model_checksum(base)
        size = base.spec.input_size
        c_old = base.spec.out_channels
        dtype = base.dtype
        shape = (3, size, size) if per_channel else (size, size)
        rng = np.random.RandomState(seed)
        bound = np.sqrt(6.0 / (c_old + c_new))
        self.params = {
            "reprog.in.w": Tensor(np.ones(shape, dtype=dtype), requires_grad=True),
            "reprog.in.b": Tensor(np.zeros(shape, dtype=dtype), requires_grad=True),
            "reprog.out.w": Tensor(rng.uniform(-bound, bound, (c_new, c_old, 1, 1))
                                   .astype(dtype), requires_grad=True),
            "reprog.out.b": Tensor(np.zeros(c_new, dtype=dtype), requires_grad=True),
        }

    def forward(self, x: Tensor) -> Tensor:
        programmed = input_transform(x, self.params["reprog.in.w"], self.params["reprog.in.b"])
        features = self.base.forward(programmed)
        return output_map(features, self.params["reprog.out.w"], self.params["reprog.out.b"],
                          apply_sigmoid=self.c_new == 1)

    def predict_proba(self, image_hwc: np.ndarray) -> np.ndarray:
        chw = np.ascontiguousarray(
            np.asarray(image_hwc, dtype=self.base.dtype).transpose(2, 0, 1))
        with no_grad():
            out = self.forward(Tensor(chw)).data
        return out[0] if self.c_new == 1 else out

    def verify_frozen(self):
        current = model_checksum(self.base)
        if current != self.base_checksum:
            raise FrozenBaseError("frozen base parameters changed: checksum "
                                  f"{self.base_checksum[:12]} -> {current[:12]}")


def _pairs_to_arrays(pairs, size: int, dtype) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for pair in pairs:
        image = resize_bilinear(pair.image, size, size)
        mask = binarize_mask(resize_bilinear(pair.mask, size, size))
        out.append((np.ascontiguousarray(image.transpose(2, 0, 1).astype(dtype)),
                    mask.astype(dtype)))
    return out


def dataset_loss(wrapper: ReprogramWrapper, pairs, loss: str = "dice") -> float:
    """Mean loss of the wrapper over all pairs, without touching gradients."""
    if loss not in LOSSES:
        raise ValueError(f"dataset_loss: unknown loss {loss!r}")
    loss_fn = LOSSES[loss]
    data = _pairs_to_arrays(pairs, wrapper.base.spec.input_size, wrapper.base.dtype)
    if not data:
        raise ValueError("dataset_loss: no pairs")
    total = 0.0
    with no_grad():
        for image, mask in data:
            pred = wrapper.forward(Tensor(image))
            total += loss_fn(pred, Tensor(mask[None, :, :])).item()
    return total / len(data)


def reprogram_train(wrapper: ReprogramWrapper, pairs, steps: int, *, loss: str = "dice",
                    lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                    eps: float = 1e-8, batch_size: int = 4, seed: int = 0) -> list[float]:
    """Train only the wrapper parameters for ``steps`` minibatch updates.

    Returns the per-step loss trajectory. The base checksum is verified
    before and after; zero steps leaves every parameter untouched.
    """
    if loss not in LOSSES:
        raise ValueError(f"reprogram_train: unknown loss {loss!r}")
    loss_fn = LOSSES[loss]
    wrapper.verify_frozen()
    data = _pairs_to_arrays(pairs, wrapper.base.spec.input_size, wrapper.base.dtype)
    if not data:
        raise ValueError("reprogram_train: no training pairs")
    optimizer = Adam(wrapper.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    rng = np.random.RandomState(seed)
    order = []
    losses = []
    for step in range(steps):
        if len(order) < batch_size:
            order.extend(rng.permutation(len(data)))
        batch = [order.pop(0) for _ in range(batch_size)]
        optimizer.zero_grad()
        sample_losses = []
        for i in batch:
            image, mask = data[i]
            pred = wrapper.forward(Tensor(image))
            sample_losses.append(loss_fn(pred, Tensor(mask[None, :, :])))
        batch_loss = sample_losses[0]
        for extra in sample_losses[1:]:
            batch_loss = batch_loss + extra
        batch_loss = batch_loss * (1.0 / len(sample_losses))
        value = batch_loss.item()
        if not np.isfinite(value):
            raise FrozenBaseError(f"non-finite wrapper loss at step {step}")
        batch_loss.backward()
        optimizer.step()
        losses.append(value)
    wrapper.verify_frozen()
    return losses


def make_pretrained_base(c_old: int = 8, size: int = 32, widths=(4, 8), seed: int = 0,
                         steps: int = 40, lr: float = 1e-3) -> Model:
    """Small plain U-Net with a ``c_old``-channel head, pretrained briefly.

    The pretraining task is synthetic multi-region labeling: the head learns
    per-channel indicator probabilities under an elementwise cross-entropy,
    which is enough to make the base's channels task-structured.
    """
    from .synthetic import generate_multiclass_set, one_hot

    spec = ModelSpec(input_size=size, widths=tuple(widths), variant="plain-unet",
                     out_channels=c_old, seed=seed)
    base = init_params(build_model(spec), seed)
    scenes = generate_multiclass_set(count=12, size=size, classes=c_old, seed=seed)
    data = [(np.ascontiguousarray(img.transpose(2, 0, 1)), one_hot(labels, c_old))
            for img, labels in scenes]
    optimizer = Adam(base.params, lr=lr)
    rng = np.random.RandomState(seed)
    order = []
    for _ in range(steps):
        if len(order) < 4:
            order.extend(rng.permutation(len(data)))
        optimizer.zero_grad()
        sample_losses = []
        for i in [order.pop(0) for _ in range(4)]:
            image, target = data[i]
            sample_losses.append(bce_loss(base.forward(Tensor(image)), Tensor(target)))
        batch_loss = sample_losses[0]
        for extra in sample_losses[1:]:
            batch_loss = batch_loss + extra
        (batch_loss * 0.25).backward()
        optimizer.step()
    return base


# ---- wrapper serialization --------------------------------------------------


def serialize_wrapper(wrapper: ReprogramWrapper) -> bytes:
    width = wrapper.base.dtype.itemsize
    config = json.dumps({"c_new": wrapper.c_new, "per_channel": wrapper.per_channel,
                         "base_checksum": wrapper.base_checksum},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(p.data.astype(f"<f{width}", copy=False).tobytes()
                       for p in wrapper.params.values())
    return _pack_header(KIND_WRAPPER, width, config) + payload


def save_wrapper(wrapper: ReprogramWrapper, path):
    Path(path).write_bytes(serialize_wrapper(wrapper))


def load_wrapper(path, base) -> ReprogramWrapper:
    """Rebuild a wrapper from ``path`` around ``base`` (a Model or a model path)."""
    if not isinstance(base, Model):
        base = load_model(base)
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"wrapper file not found: {path}")
    kind, width, config, payload = _unpack_header(path.read_bytes(), path)
    if kind != KIND_WRAPPER:
        raise ModelFormatError(f"{path}: file holds a model, not a reprogramming wrapper")
    try:
        meta = json.loads(config.decode("utf-8"))
        c_new, per_channel, stored = meta["c_new"], meta["per_channel"], meta["base_checksum"]
    except (ValueError, KeyError) as exc:
        raise ModelFormatError(f"{path}: bad wrapper configuration block: {exc}") from exc
    if model_checksum(base) != stored:
        raise ModelFormatError(f"{path}: wrapper was trained against a different base "
                               f"(checksum {stored[:12]})")
    wrapper = ReprogramWrapper(base, c_new=c_new, per_channel=per_channel)
    expected = sum(p.data.size for p in wrapper.params.values()) * width
    if len(payload) != expected:
        raise ModelFormatError(f"{path}: wrapper payload is {len(payload)} bytes, "
                               f"expected {expected}")
    offset = 0
    for p in wrapper.params.values():
        n = p.data.size * width
        p.data[...] = np.frombuffer(payload[offset:offset + n],
                                    dtype=f"<f{width}").reshape(p.data.shape)
        offset += n
    return wrapper
