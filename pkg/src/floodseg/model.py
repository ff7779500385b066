"""Model assembly, initialization, and the .gacm serialization format.

The network is a U-Net over 3-channel inputs. Each encoder stage is a 3x3
convolution, a dilation-2 3x3 convolution (both leaky-relu), and a 2x2 max
pool; the pre-pool features feed the matching decoder stage through a skip
concatenation. The ``gac-unet`` variant runs the bottleneck grid through
attention mixing, a Chebyshev graph filter, and soft-centroid augmentation;
``plain-unet`` passes the bottleneck through unchanged, so the two variants
share identical encoders given the same seed. The head is a 1x1 convolution
with a per-channel sigmoid.

Model files (.gacm) hold a small header (magic, version, kind, float width),
the length-prefixed configuration JSON, and the raw little-endian parameter
payload in declaration order; nothing else, so the file size is exactly
header + width * parameter_count bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .convnn import ConvParams, maxpool2, upsample2
from .graphnn import (ChebParams, GatParams, build_grid_graph, cheb_conv, center_of_mass,
                      gat_conv, normalized_laplacian)
from .tensor import ShapeError, Tensor, concat, leaky_relu, no_grad, reshape, sigmoid, transpose

VARIANTS = ("gac-unet", "plain-unet")
ACTIVATION_SLOPE = 0.2

MAGIC = b"GACM"
FORMAT_VERSION = 1
KIND_MODEL = 0
KIND_WRAPPER = 1
_HEADER = "<HBBI"     # version, kind, float width, config length


class SpecError(ValueError):
    """Invalid model configuration; the message names the violated constraint."""


class ModelFormatError(Exception):
    """A .gacm file that cannot be read back."""


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild a model's architecture.

    ``gat_out`` and ``cheb_out`` accept 0 as "match the deepest encoder
    width". ``com`` toggles the soft-centroid bottleneck stage.
    """

    input_size: int = 256
    widths: tuple = (16, 32, 64)
    variant: str = "gac-unet"
    connectivity: int = 4
    gat_out: int = 0
    cheb_order: int = 2
    cheb_out: int = 0
    com: bool = True
    out_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths:
            raise SpecError("widths: need at least one encoder stage")
        if any(w < 1 for w in self.widths):
            raise SpecError(f"widths: all stage widths must be positive, got {self.widths}")
        if self.variant not in VARIANTS:
            raise SpecError(f"variant: must be one of {VARIANTS}, got {self.variant!r}")
        if self.connectivity not in (4, 8):
            raise SpecError(f"connectivity: must be 4 or 8, got {self.connectivity}")
        stages = len(self.widths)
        if self.input_size < 2 ** stages or self.input_size % (2 ** stages) != 0:
            raise SpecError(f"input_size: {self.input_size} is not divisible by "
                            f"2^{stages} (one halving per encoder stage)")
        if self.gat_out == 0:
            object.__setattr__(self, "gat_out", self.widths[-1])
        if self.cheb_out == 0:
            object.__setattr__(self, "cheb_out", self.widths[-1])
        if self.gat_out < 1 or self.cheb_out < 1:
            raise SpecError("gat_out/cheb_out: layer widths must be positive")
        if self.cheb_order < 0:
            raise SpecError(f"cheb_order: must be >= 0, got {self.cheb_order}")
        if self.out_channels < 1:
            raise SpecError(f"out_channels: must be >= 1, got {self.out_channels}")

    @property
    def stages(self) -> int:
        return len(self.widths)

    @property
    def grid_size(self) -> int:
        return self.input_size // (2 ** self.stages)

    @property
    def bottleneck_channels(self) -> int:
        if self.variant == "plain-unet":
            return self.widths[-1]
        return self.cheb_out + (2 if self.com else 0)

    def to_json(self) -> str:
        payload = {"input_size": self.input_size, "widths": list(self.widths),
                   "variant": self.variant, "connectivity": self.connectivity,
                   "gat_out": self.gat_out, "cheb_order": self.cheb_order,
                   "cheb_out": self.cheb_out, "com": self.com,
                   "out_channels": self.out_channels, "seed": self.seed}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        try:
            payload = json.loads(text)
            return cls(**{k: (tuple(v) if k == "widths" else v) for k, v in payload.items()})
        except (TypeError, ValueError, KeyError) as exc:
            raise ModelFormatError(f"bad model configuration block: {exc}") from exc


class Model:
    """A built network: parameter tensors plus the forward computation."""

    def __init__(self, spec: ModelSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise SpecError(f"dtype: must be float32 or float64, got {self.dtype}")
        self.params: dict[str, Tensor] = {}
        self._init_meta: dict[str, tuple | None] = {}
        self.graph = None
        self.laplacian = None
        self._assemble()

    # ---- construction ----------------------------------------------------

    def _new_param(self, name: str, shape, fans: tuple | None) -> Tensor:
        t = Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        self._init_meta[name] = fans
        return t

    def _conv(self, name: str, c_in: int, c_out: int, k: int, dilation: int = 1) -> ConvParams:
        fan = (c_in * k * k, c_out * k * k)
        weight = self._new_param(f"{name}.w", (c_out, c_in, k, k), fan)
        bias = self._new_param(f"{name}.b", (c_out,), None)
        return ConvParams(weight, bias, dilation=dilation)

    def _assemble(self):
        spec = self.spec
        self.encoder = []
        c_in = 3
        for i, width in enumerate(spec.widths, start=1):
            conv = self._conv(f"enc{i}.conv", c_in, width, 3)
            dconv = self._conv(f"enc{i}.dil", width, width, 3, dilation=2)
            self.encoder.append((conv, dconv))
            c_in = width

        self.gat = None
        self.cheb = None
        if spec.variant == "gac-unet":
            g = spec.grid_size
            self.graph = build_grid_graph(g, g, spec.connectivity)
            self.laplacian = normalized_laplacian(self.graph)
            w = self._new_param("gat.weight", (spec.gat_out, spec.widths[-1]),
                                (spec.widths[-1], spec.gat_out))
            a = self._new_param("gat.attn", (2 * spec.gat_out,), (2 * spec.gat_out, 1))
            self.gat = GatParams(w, a, ACTIVATION_SLOPE)
            thetas = [self._new_param(f"cheb.theta{k}", (spec.cheb_out, spec.gat_out),
                                      (spec.gat_out, spec.cheb_out))
                      for k in range(spec.cheb_order + 1)]
            self.cheb = ChebParams(thetas)

        self.decoder = []
        below = spec.bottleneck_channels
        for i in range(spec.stages, 0, -1):
            skip = spec.widths[i - 1]
            conv = self._conv(f"dec{i}.conv", below + skip, skip, 3)
            self.decoder.append(conv)
            below = skip
        self.head = self._conv("head", below, spec.out_channels, 1)

    # ---- forward -----------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        expected = (3, self.spec.input_size, self.spec.input_size)
        if x.data.shape != expected:
            raise ShapeError(f"forward: expected input shape {expected}, got {x.data.shape}")
        skips = []
        h = x
        for conv, dconv in self.encoder:
            h = leaky_relu(conv.apply(h), ACTIVATION_SLOPE)
            h = leaky_relu(dconv.apply(h), ACTIVATION_SLOPE)
            skips.append(h)
            h = maxpool2(h)
        if self.gat is not None:
            c, gh, gw = h.data.shape
            nodes = transpose(reshape(h, (c, gh * gw)))
            nodes = gat_conv(nodes, self.graph, self.gat)
            nodes = cheb_conv(nodes, self.laplacian, self.cheb)
            h = reshape(transpose(nodes), (self.spec.cheb_out, gh, gw))
            if self.spec.com:
                _, h = center_of_mass(h)
        for conv, skip in zip(self.decoder, reversed(skips)):
            h = upsample2(h)
            h = concat([h, skip], axis=0)
            h = leaky_relu(conv.apply(h), ACTIVATION_SLOPE)
        return sigmoid(self.head.apply(h))

    def encoder_features(self, x: Tensor) -> list[np.ndarray]:
        """Pre-pool feature maps of each encoder stage (no recording)."""
        with no_grad():
            maps = []
            h = x
            for conv, dconv in self.encoder:
                h = leaky_relu(conv.apply(h), ACTIVATION_SLOPE)
                h = leaky_relu(dconv.apply(h), ACTIVATION_SLOPE)
                maps.append(h.data.copy())
                h = maxpool2(h)
        return maps

    def predict_proba(self, image_hwc: np.ndarray) -> np.ndarray:
        """Probability map for an already-sized (H, W, 3) image in [0, 1].

        Returns (H, W) for single-channel heads, else (C, H, W).
        """
        chw = np.ascontiguousarray(np.asarray(image_hwc, dtype=self.dtype).transpose(2, 0, 1))
        with no_grad():
            out = self.forward(Tensor(chw)).data
        return out[0] if self.spec.out_channels == 1 else out

    # ---- bookkeeping ---------------------------------------------------------

    def parameter_count(self) -> int:
        return sum(int(p.data.size) for p in self.params.values())

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.params)


def build_model(spec: ModelSpec, dtype=np.float32) -> Model:
    """Assemble a zero-initialized model for the given configuration."""
    return Model(spec, dtype)


def init_params(model: Model, seed: int) -> Model:
    """Fill weights uniformly in +-sqrt(6 / (fan_in + fan_out)); biases zero.

    Draws happen in declaration order from one seeded stream, so a seed
    pins every parameter and the encoder draws are shared across variants.
    """
    rng = np.random.RandomState(seed)
    for name, p in model.params.items():
        fans = model._init_meta[name]
        if fans is None:
            p.data[...] = 0.0
        else:
            bound = math.sqrt(6.0 / (fans[0] + fans[1]))
            p.data[...] = rng.uniform(-bound, bound, size=p.data.shape).astype(p.data.dtype)
    return model


# ---- serialization -----------------------------------------------------------


def _pack_header(kind: int, width: int, config: bytes) -> bytes:
    return MAGIC + struct.pack(_HEADER, FORMAT_VERSION, kind, width, len(config)) + config


def _unpack_header(blob: bytes, path) -> tuple[int, int, bytes, bytes]:
    head = struct.calcsize(_HEADER)
    if blob[:4] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic bytes)")
    if len(blob) < 4 + head:
        raise ModelFormatError(f"{path}: truncated header")
    version, kind, width, config_len = struct.unpack_from(_HEADER, blob, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {version} is not supported "
                               f"(this build reads version {FORMAT_VERSION})")
    if width not in (4, 8):
        raise ModelFormatError(f"{path}: bad float width {width}")
    start = 4 + head
    config = blob[start:start + config_len]
    if len(config) != config_len:
        raise ModelFormatError(f"{path}: truncated configuration block")
    return kind, width, config, blob[start + config_len:]


def serialize_model(model: Model) -> bytes:
    width = model.dtype.itemsize
    config = model.spec.to_json().encode("utf-8")
    payload = b"".join(p.data.astype(f"<f{width}", copy=False).tobytes()
                       for p in model.params.values())
    return _pack_header(KIND_MODEL, width, config) + payload


def save_model(model: Model, path):
    Path(path).write_bytes(serialize_model(model))


def load_model(path) -> Model:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"model file not found: {path}")
    blob = path.read_bytes()
    kind, width, config, payload = _unpack_header(blob, path)
    if kind != KIND_MODEL:
        raise ModelFormatError(f"{path}: file holds a reprogramming wrapper, not a model")
    spec = ModelSpec.from_json(config.decode("utf-8"))
    model = build_model(spec, np.float32 if width == 4 else np.float64)
    expected = model.parameter_count() * width
    if len(payload) != expected:
        raise ModelFormatError(f"{path}: parameter payload is {len(payload)} bytes, "
                               f"expected {expected}")
    offset = 0
    for p in model.params.values():
        n = p.data.size * width
        chunk = np.frombuffer(payload[offset:offset + n], dtype=f"<f{width}")
        p.data[...] = chunk.reshape(p.data.shape)
        offset += n
    return model


def model_checksum(model: Model) -> str:
    """Hex digest over the full serialized model, parameters included."""
    return hashlib.sha256(serialize_model(model)).hexdigest()
