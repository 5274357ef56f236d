"""Encoder/projector MLP with hand-written reverse mode, plus binary checkpoints.

Checkpoint layout (all little-endian)::

    magic      8 bytes   b"HOMECKPT"
    version    uint32    1
    n_layers   uint32
    n_encoder  uint32    layers [0, n_encoder) form the encoder
    per layer: fan_in uint32, fan_out uint32, activation uint8 (0 identity, 1 relu)
    per layer: weight fan_in*fan_out float64 (row-major), bias fan_out float64
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAGIC = b"HOMECKPT"
FORMAT_VERSION = 1
_ACT_CODES = {"identity": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class NonFiniteActivation(FloatingPointError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite activation at layer {layer}")
        self.layer = layer


class StaleCache(RuntimeError):
    pass


@dataclass
class Layer:
    weight: np.ndarray   # (fan_in, fan_out)
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.bias.shape != (self.weight.shape[1],):
            raise ValueError("bias length must equal the layer's output width")


@dataclass
class MlpModel:
    layers: list
    n_encoder: int
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if not 0 < self.n_encoder < len(self.layers):
            raise ValueError("need at least one encoder and one projector layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].weight.shape[0] != self.layers[i - 1].weight.shape[1]:
                raise ValueError(f"layer {i} input width does not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def rep_dim(self) -> int:
        return self.layers[self.n_encoder - 1].weight.shape[1]

    @property
    def emb_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def parameters(self) -> list:
        """Weight and bias arrays in a stable order (layer by layer, weight first)."""
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def decay_mask(self) -> list:
        return [True, False] * len(self.layers)

    def copy(self) -> "MlpModel":
        return MlpModel([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers],
                        self.n_encoder)


def init_layer(rng, fan_in, fan_out, activation):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return Layer(w, b, activation)


def build_model(input_dim: int, encoder_widths: Sequence[int] = (256, 128), proj_dim: int = 64,
                seed: int = 0) -> MlpModel:
    """ReLU encoder ``input_dim -> encoder_widths`` and a three-layer projector of width ``proj_dim``."""
    rng = np.random.default_rng(seed)
    layers = []
    width = input_dim
    for w in encoder_widths:
        layers.append(init_layer(rng, width, w, "relu"))
        width = w
    for i in range(3):
        layers.append(init_layer(rng, width, proj_dim, "relu" if i < 2 else "identity"))
        width = proj_dim
    return MlpModel(layers, len(encoder_widths))


@dataclass
class ForwardCache:
    inputs: list        # input to each layer
    masks: list         # relu masks (None for identity)
    version: int


def forward(model: MlpModel, x: np.ndarray):
    """Return ``(representations, embeddings, cache)``."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.input_dim:
        raise ValueError(f"expected inputs of shape (N, {model.input_dim}), got {h.shape}")
    inputs, masks = [], []
    reps = None
    for i, layer in enumerate(model.layers):
        inputs.append(h)
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            h = h @ layer.weight + layer.bias
        if layer.activation == "relu":
            mask = h > 0
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
        if not np.all(np.isfinite(h)):
            raise NonFiniteActivation(i)
        if i == model.n_encoder - 1:
            reps = h
    return reps, h, ForwardCache(inputs, masks, model.version)


def backward(model: MlpModel, cache: ForwardCache, grad_embeddings: np.ndarray,
             grad_representations: np.ndarray | None = None) -> list:
    """Parameter gradients in ``model.parameters()`` order."""
    if cache.version != model.version:
        raise StaleCache("model parameters changed since this forward pass")
    g = np.asarray(grad_embeddings, dtype=np.float64)
    grads = [None] * (2 * len(model.layers))
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if i == model.n_encoder - 1 and grad_representations is not None:
            g = g + grad_representations
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = g @ layer.weight.T
    return grads


def checkpoint_bytes(model: MlpModel) -> bytes:
    parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, len(model.layers), model.n_encoder)]
    for layer in model.layers:
        fi, fo = layer.weight.shape
        parts.append(struct.pack("<IIB", fi, fo, _ACT_CODES[layer.activation]))
    for layer in model.layers:
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(data: bytes) -> MlpModel:
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, n_layers, n_encoder = struct.unpack_from("<III", data, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 20
    shapes = []
    for _ in range(n_layers):
        fi, fo, act = struct.unpack_from("<IIB", data, off)
        if act not in _ACT_NAMES:
            raise ValueError(f"bad activation code {act}")
        shapes.append((fi, fo, _ACT_NAMES[act]))
        off += 9
    layers = []
    for fi, fo, act in shapes:
        w = np.frombuffer(data, dtype="<f8", count=fi * fo, offset=off).reshape(fi, fo)
        off += 8 * fi * fo
        b = np.frombuffer(data, dtype="<f8", count=fo, offset=off)
        off += 8 * fo
        layers.append(Layer(w.astype(np.float64), b.astype(np.float64), act))
    if off != len(data):
        raise ValueError("checkpoint has trailing or missing bytes")
    return MlpModel(layers, n_encoder)


def save_checkpoint(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path) -> MlpModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
