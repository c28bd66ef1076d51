"""A small dense feed-forward network engine on numpy.

Layers compute ``y = act(x @ W + b)`` with ``W`` stored as an
``(input_width, output_width)`` matrix, followed by inverted dropout when the
network runs in train mode. Training minimises the mean squared error averaged
over batch rows and output columns with plain (optionally momentum) SGD.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BackwardStateError, ShapeError, TrainingError

ACTIVATIONS = ("identity", "rectifier", "sigmoid")
CHECKPOINT_MAGIC = b"MPBNET\x00\x01"


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    activation: str = "identity"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if int(self.input_width) < 1 or int(self.output_width) < 1:
            raise ShapeError(f"layer widths must be positive, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


def dense_stack(input_width, widths, activation="rectifier", output_activation="identity",
                dropout_rate=0.0):
    """Build chained layer specs for ``input_width -> widths[0] -> ... -> widths[-1]``.

    Every layer but the last uses ``activation`` and ``dropout_rate``; the last
    layer uses ``output_activation`` and never drops units.
    """
    layers = []
    prev = input_width
    for k, width in enumerate(widths):
        last = k == len(widths) - 1
        layers.append(LayerSpec(prev, width,
                                output_activation if last else activation,
                                0.0 if last else dropout_rate))
        prev = width
    return layers


@dataclass
class TrainBatch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if self.inputs.shape[0] < 1:
            raise ShapeError("batch must contain at least one row")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError(f"inputs have {self.inputs.shape[0]} rows but targets have "
                             f"{self.targets.shape[0]}")


@dataclass
class Gradients:
    weights: list
    biases: list
    loss: float


def _activate(name, z):
    if name == "rectifier":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activation_slope(name, z, a):
    if name == "rectifier":
        return z > 0.0
    if name == "sigmoid":
        return a * (1.0 - a)
    return None


def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class Network:
    """Feed-forward network with per-layer weights, biases and a seeded generator.

    Parameters
    ----------
    layers : sequence of LayerSpec
        Chained layer specs; each layer's ``output_width`` must equal the next
        layer's ``input_width``.
    rng_seed : int
        Seed for weight initialisation and for dropout masks drawn in train mode.
    weights, biases : list of ndarray, optional
        Explicit parameters. When omitted, weights are drawn uniformly from
        ``[-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out))]`` and
        biases start at zero.
    """

    def __init__(self, layers, rng_seed=0, weights=None, biases=None):
        self.layers = list(layers)
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for k in range(len(self.layers) - 1):
            if self.layers[k].output_width != self.layers[k + 1].input_width:
                raise ShapeError(f"layer {k} outputs {self.layers[k].output_width} units but "
                                 f"layer {k + 1} expects {self.layers[k + 1].input_width}")
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)
        if weights is None:
            weights = []
            for layer in self.layers:
                limit = np.sqrt(6.0 / (layer.input_width + layer.output_width))
                weights.append(self.rng.uniform(-limit, limit,
                                                size=(layer.input_width, layer.output_width)))
        if biases is None:
            biases = [np.zeros(layer.output_width) for layer in self.layers]
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for k, layer in enumerate(self.layers):
            if self.weights[k].shape != (layer.input_width, layer.output_width):
                raise ShapeError(f"layer {k} weights have shape {self.weights[k].shape}, "
                                 f"expected {(layer.input_width, layer.output_width)}")
            if self.biases[k].shape != (layer.output_width,):
                raise ShapeError(f"layer {k} biases have shape {self.biases[k].shape}")
        self._cache = None
        self._velocity = None

    @property
    def input_width(self):
        return self.layers[0].input_width

    @property
    def output_width(self):
        return self.layers[-1].output_width

    @property
    def has_dropout(self):
        return any(layer.dropout_rate > 0 for layer in self.layers)

    def __repr__(self):
        widths = [self.input_width] + [layer.output_width for layer in self.layers]
        return f"Network(widths={widths}, rng_seed={self.rng_seed})"

    def forward(self, x, mode="eval", masks=None):
        """Run the network on a vector or a batch of row vectors.

        In ``"train"`` mode dropout masks are applied (drawn from the network's
        generator unless ``masks`` is given) and the intermediate activations are
        kept for the following :meth:`backward`. ``"eval"`` mode ignores dropout.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        a = x[None, :] if single else x
        if a.ndim != 2 or a.shape[1] != self.input_width:
            raise ShapeError(f"expected input width {self.input_width}, got shape {x.shape}")
        train = mode == "train"
        inputs = a
        pre, raw, post, used = [], [], [a], []
        for k, layer in enumerate(self.layers):
            z = a @ self.weights[k] + self.biases[k]
            a = _activate(layer.activation, z)
            raw.append(a)
            mask = None
            if train and layer.dropout_rate > 0:
                if masks is not None and masks[k] is not None:
                    mask = masks[k]
                else:
                    keep = 1.0 - layer.dropout_rate
                    mask = (self.rng.random(a.shape) < keep) / keep
                a = a * mask
            pre.append(z)
            post.append(a)
            used.append(mask)
        if train:
            self._cache = (inputs, pre, raw, post, used)
        return a[0] if single else a

    def predict(self, x):
        return self.forward(x, mode="eval")

    def backward(self, batch):
        """Gradient of the batch MSE with respect to every weight and bias.

        Must follow a train-mode :meth:`forward` on ``batch.inputs``; the cached
        activations are consumed.
        """
        if self._cache is None:
            raise BackwardStateError("backward() needs a preceding forward(..., mode='train')")
        inputs, pre, raw, post, used = self._cache
        if inputs is not batch.inputs and not np.array_equal(inputs, batch.inputs):
            raise BackwardStateError("backward() batch differs from the last train-mode forward")
        self._cache = None
        out = post[-1]
        if batch.targets.shape != out.shape:
            raise ShapeError(f"targets have shape {batch.targets.shape}, outputs {out.shape}")
        diff = out - batch.targets
        loss = float(np.mean(diff * diff))
        grad = 2.0 * diff / diff.size
        dW = [None] * len(self.layers)
        db = [None] * len(self.layers)
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if used[k] is not None:
                grad = grad * used[k]
            slope = _activation_slope(layer.activation, pre[k], raw[k])
            if slope is not None:
                grad = grad * slope
            dW[k] = post[k].T @ grad
            db[k] = grad.sum(axis=0)
            if k:
                grad = grad @ self.weights[k].T
        return Gradients(dW, db, loss)

    def sgd_step(self, grads, learning_rate, momentum=0.0):
        """Apply ``w <- w - learning_rate * grad`` in place (classical momentum if set)."""
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        for k, layer in enumerate(self.layers):
            gw, gb = grads.weights[k], grads.biases[k]
            if gw.shape != self.weights[k].shape or gb.shape != self.biases[k].shape:
                raise ShapeError(f"gradient shapes for layer {k} do not match the network")
            # a sum is non-finite whenever any entry is (or the layer overflowed)
            if not np.isfinite(gw.sum() + gb.sum()):
                raise TrainingError(f"non-finite gradient in layer {k}", layer=k)
        if momentum:
            if self._velocity is None:
                self._velocity = [(np.zeros_like(w), np.zeros_like(b))
                                  for w, b in zip(self.weights, self.biases)]
            for k, (vw, vb) in enumerate(self._velocity):
                vw *= momentum
                vw -= learning_rate * grads.weights[k]
                vb *= momentum
                vb -= learning_rate * grads.biases[k]
                self.weights[k] += vw
                self.biases[k] += vb
        else:
            for k in range(len(self.layers)):
                self.weights[k] -= learning_rate * grads.weights[k]
                self.biases[k] -= learning_rate * grads.biases[k]
        return self

    def train_step(self, inputs, targets, learning_rate, momentum=0.0):
        """One forward/backward/update on a minibatch; returns the pre-update loss."""
        batch = TrainBatch(inputs, targets)
        self.forward(batch.inputs, mode="train")
        grads = self.backward(batch)
        if not np.isfinite(grads.loss):
            raise TrainingError("non-finite loss")
        self.sgd_step(grads, learning_rate, momentum)
        return grads.loss

    def mse(self, inputs, targets):
        out = self.forward(inputs, mode="eval")
        return float(np.mean((out - np.asarray(targets, dtype=np.float64)) ** 2))

    def sample_dropout_mask(self, rng=None):
        """Draw one inverted-dropout mask per layer for a single input vector.

        Surviving units carry ``1 / (1 - dropout_rate)``; layers without dropout
        get an all-ones mask. ``rng`` may be a seed or a Generator and defaults to
        the network's own generator.
        """
        gen = self.rng if rng is None else _as_generator(rng)
        masks = []
        for layer in self.layers:
            if layer.dropout_rate > 0:
                keep = 1.0 - layer.dropout_rate
                masks.append((gen.random(layer.output_width) < keep) / keep)
            else:
                masks.append(np.ones(layer.output_width))
        return masks

    def copy(self):
        net = Network(self.layers, self.rng_seed, self.weights, self.biases)
        net.rng.bit_generator.state = self.rng.bit_generator.state
        return net

    def snapshot(self, n_layers):
        """Independent copy of the first ``n_layers`` layers."""
        if not 1 <= n_layers <= len(self.layers):
            raise ValueError(f"n_layers must lie in 1..{len(self.layers)}")
        return Network(self.layers[:n_layers], self.rng_seed,
                       self.weights[:n_layers], self.biases[:n_layers])

    def parameters_equal(self, other):
        return (self.layers == other.layers
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    def to_bytes(self):
        header = json.dumps({
            "layers": [[l.input_width, l.output_width, l.activation, l.dropout_rate]
                       for l in self.layers],
            "rng_seed": self.rng_seed,
        }, sort_keys=True).encode("utf-8")
        parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(header)), header]
        for w, b in zip(self.weights, self.biases):
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        if data[:8] != CHECKPOINT_MAGIC:
            raise ValueError("not a network checkpoint")
        (n,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + n].decode("utf-8"))
        layers = [LayerSpec(int(i), int(o), a, float(d)) for i, o, a, d in header["layers"]]
        offset = 12 + n
        weights, biases = [], []
        for layer in layers:
            count = layer.input_width * layer.output_width
            w = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            offset += 8 * count
            b = np.frombuffer(data, dtype="<f8", count=layer.output_width, offset=offset)
            offset += 8 * layer.output_width
            weights.append(w.reshape(layer.input_width, layer.output_width).astype(np.float64))
            biases.append(b.astype(np.float64))
        if offset != len(data):
            raise ValueError("trailing bytes in network checkpoint")
        return cls(layers, header["rng_seed"], weights, biases)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def fit_minibatches(net, inputs, targets, epochs, learning_rate, batch_size=32, rng=None,
                    momentum=0.0):
    """Shuffled minibatch SGD over ``(inputs, targets)`` for ``epochs`` passes.

    Returns the mean training loss of each pass. A non-finite loss raises
    :class:`TrainingError` carrying the global step index.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    rng = _as_generator(rng)
    n = inputs.shape[0]
    history = []
    step = 0
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            batch = TrainBatch(inputs[idx], targets[idx])
            net.forward(batch.inputs, mode="train")
            grads = net.backward(batch)
            if not np.isfinite(grads.loss):
                raise TrainingError(f"non-finite loss at training step {step}", step=step)
            net.sgd_step(grads, learning_rate, momentum)
            total += grads.loss * len(idx)
            step += 1
        history.append(total / n)
    return history


def forward(net, x, mode="eval", masks=None):
    return net.forward(x, mode=mode, masks=masks)


def backward(net, batch):
    return net.backward(batch)


def sgd_step(net, grads, learning_rate, momentum=0.0):
    return net.sgd_step(grads, learning_rate, momentum)


def sample_dropout_mask(net, rng=None):
    return net.sample_dropout_mask(rng)
