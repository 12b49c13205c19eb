"""Classifier builders and forward / input-gradient entry points.

Two desk-scale backbones: an MLP (affine + relu stack) and a small 1-d CNN
(conv + relu blocks, global average pooling), both ending in a C-way affine
head. Parameters initialise uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)]
from a per-build seeded generator, so identical seeds give bit-identical
models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError

CHECKPOINT_FORMAT = "dglab-checkpoint-v1"


@dataclass
class Model:
    """Ordered layer stack with named parameter tensors.

    ``layers`` is a JSON-ready list of descriptors ({"kind": "affine",
    "name": "fc0"}, {"kind": "relu"}, ...). ``input_shape`` is the expected
    per-sample shape; a None entry matches any extent (conv length).
    """

    layers: list[dict]
    params: dict[str, Tensor]
    num_classes: int
    input_shape: tuple
    seed: int

    def param_count(self) -> int:
        return sum(p.values.size for p in self.params.values())


def _init_affine(params: dict[str, Tensor], name: str, fan_in: int, fan_out: int, rng) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    params[f"{name}_w"] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    params[f"{name}_b"] = Tensor(rng.uniform(-bound, bound, size=fan_out))


def _init_conv(params: dict[str, Tensor], name: str, c_in: int, c_out: int, kernel: int, rng) -> None:
    bound = 1.0 / math.sqrt(c_in * kernel)
    params[f"{name}_w"] = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, kernel)))
    params[f"{name}_b"] = Tensor(rng.uniform(-bound, bound, size=c_out))


def build_mlp(layer_sizes: list[int], num_classes: int, seed: int) -> Model:
    """Affine+relu stack over flat inputs; layer_sizes[0] is the input width.

    A single entry builds a purely linear model (the affine head only).
    """
    if not layer_sizes:
        raise ConfigError("build_mlp: layer_sizes must be nonempty")
    if any(int(s) <= 0 for s in layer_sizes):
        raise ConfigError(f"build_mlp: layer sizes must be positive, got {layer_sizes}")
    if num_classes < 2:
        raise ConfigError(f"build_mlp: num_classes must be >= 2, got {num_classes}")

    rng = np.random.default_rng(seed)
    layers: list[dict] = []
    params: dict[str, Tensor] = {}
    sizes = [int(s) for s in layer_sizes]
    prev = sizes[0]
    for i, width in enumerate(sizes[1:]):
        name = f"fc{i}"
        _init_affine(params, name, prev, width, rng)
        layers.append({"kind": "affine", "name": name})
        layers.append({"kind": "relu"})
        prev = width
    _init_affine(params, "head", prev, num_classes, rng)
    layers.append({"kind": "affine", "name": "head"})
    return Model(layers, params, num_classes, (sizes[0],), int(seed))


def build_cnn1d(channels: list[int], kernel: int, num_classes: int, seed: int) -> Model:
    """Conv+relu blocks, global average pool, affine head.

    channels[0] is the input channel count; inputs are (batch, c_in, length)
    with any length. The kernel must be odd for symmetric same-padding.
    """
    if not channels:
        raise ConfigError("build_cnn1d: channels must be nonempty")
    if any(int(c) <= 0 for c in channels):
        raise ConfigError(f"build_cnn1d: channel counts must be positive, got {channels}")
    if kernel < 1 or kernel % 2 == 0:
        raise ConfigError(f"build_cnn1d: kernel must be odd and positive, got {kernel}")
    if num_classes < 2:
        raise ConfigError(f"build_cnn1d: num_classes must be >= 2, got {num_classes}")

    rng = np.random.default_rng(seed)
    layers: list[dict] = []
    params: dict[str, Tensor] = {}
    chans = [int(c) for c in channels]
    c_prev = chans[0]
    for i, c_out in enumerate(chans[1:]):
        name = f"conv{i}"
        _init_conv(params, name, c_prev, c_out, int(kernel), rng)
        layers.append({"kind": "conv1d", "name": name})
        layers.append({"kind": "relu"})
        c_prev = c_out
    layers.append({"kind": "gap"})
    _init_affine(params, "head", c_prev, num_classes, rng)
    layers.append({"kind": "affine", "name": "head"})
    return Model(layers, params, num_classes, (chans[0], None), int(seed))


def _check_batch_shape(model: Model, shape: tuple) -> None:
    expected = model.input_shape
    if len(shape) != len(expected) + 1:
        raise DimensionError(
            f"input batch has shape {shape}, expected (batch, {', '.join(map(str, expected))})"
        )
    for got, want in zip(shape[1:], expected):
        if want is not None and got != want:
            raise DimensionError(f"input batch shape {shape} does not match per-sample shape {expected}")


def forward(model: Model, x) -> Tensor:
    """Run the layer stack; returns logits of shape (batch, num_classes)."""
    h = ad.as_tensor(x)
    _check_batch_shape(model, h.shape)
    for layer in model.layers:
        kind = layer["kind"]
        if kind == "affine":
            name = layer["name"]
            h = ad.affine(h, model.params[f"{name}_w"], model.params[f"{name}_b"])
        elif kind == "relu":
            h = ad.relu(h)
        elif kind == "conv1d":
            name = layer["name"]
            h = ad.conv1d(h, model.params[f"{name}_w"], model.params[f"{name}_b"])
        elif kind == "gap":
            h = ad.global_avg_pool(h)
        elif kind == "flatten":
            h = ad.reshape(h, (h.shape[0], -1))
        else:
            raise ConfigError(f"unknown layer kind {kind!r}")
    return h


def features(model: Model, x) -> Tensor:
    """Activations feeding the final affine head (the penultimate layer).

    For a purely linear model this is the input itself.
    """
    head_idx = max(i for i, layer in enumerate(model.layers) if layer["kind"] == "affine")
    h = ad.as_tensor(x)
    _check_batch_shape(model, h.shape)
    for layer in model.layers[:head_idx]:
        kind = layer["kind"]
        if kind == "affine":
            name = layer["name"]
            h = ad.affine(h, model.params[f"{name}_w"], model.params[f"{name}_b"])
        elif kind == "relu":
            h = ad.relu(h)
        elif kind == "conv1d":
            name = layer["name"]
            h = ad.conv1d(h, model.params[f"{name}_w"], model.params[f"{name}_b"])
        elif kind == "gap":
            h = ad.global_avg_pool(h)
        elif kind == "flatten":
            h = ad.reshape(h, (h.shape[0], -1))
    return h


def class_logit_input_gradients(model: Model, batch_values: np.ndarray, classes) -> np.ndarray:
    """Per-row gradients d f(x_i)[c_i] / d x_i for a stacked batch.

    Rows pass through the network independently, so one backward pass over
    the summed picked logits yields every row's own input gradient.
    """
    classes = np.asarray(classes, dtype=np.intp)
    if classes.min(initial=0) < 0 or classes.max(initial=0) >= model.num_classes:
        raise IndexError(
            f"class index out of range: {classes} for {model.num_classes} classes"
        )
    leaf = Tensor(np.asarray(batch_values, dtype=np.float64))
    logits = forward(model, leaf)
    picked = ad.take_per_row(logits, classes)
    total = ad.sum_all(picked)
    grad_map = ad.backward(total)
    return grad_map[leaf]


def logit_input_gradient(model: Model, x, c: int) -> Tensor:
    """Gradient of the class-c logit with respect to a single input sample.

    ``x`` carries a leading batch axis of size 1; the result drops it.
    Model parameters are read but never written.
    """
    x = ad.as_tensor(x)
    if x.shape[0] != 1:
        raise ContractError(f"logit_input_gradient expects a single-sample batch, got {x.shape}")
    if not 0 <= int(c) < model.num_classes:
        raise IndexError(f"class index {c} out of range for {model.num_classes} classes")
    grads = class_logit_input_gradients(model, x.values, np.array([int(c)]))
    return Tensor(grads[0].copy())


# ---------------------------------------------------------------------------
# checkpoint round-trip


def save_model(model: Model, path) -> None:
    """Write a JSON checkpoint; save -> load -> forward is bit-exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "layers": model.layers,
        "num_classes": model.num_classes,
        "input_shape": [d for d in model.input_shape],
        "seed": model.seed,
        "params": {
            name: {"shape": list(p.values.shape), "values": p.values.ravel().tolist()}
            for name, p in model.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a model checkpoint (format {doc.get('format')!r})")
    params = {}
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        expected = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if values.size != expected:
            raise ConfigError(f"{path}: parameter {name} has {values.size} values for shape {shape}")
        params[name] = Tensor(values.reshape(shape))
    input_shape = tuple(d if d is None else int(d) for d in doc["input_shape"])
    return Model(doc["layers"], params, int(doc["num_classes"]), input_shape, int(doc["seed"]))
