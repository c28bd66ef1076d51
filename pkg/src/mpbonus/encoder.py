"""Autoencoder state encodings.

An hourglass autoencoder is trained to reconstruct flattened frames; the
encoding of a frame is the output of an intermediate "tap" layer, taken from a
frozen snapshot of the first ``tap_index`` layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError, ShapeError
from .nn import LayerSpec, Network, dense_stack, fit_minibatches

# hourglass profile relative to the input width; index 3 (1-based 4) is the bottleneck
DEFAULT_PROFILE = (0.8, 0.6, 0.4, 0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class AutoencoderSpec:
    """Layer widths of the autoencoder; the last width is the reconstruction."""

    hidden_widths: tuple = (128, 96, 64, 32, 64, 96, 128, 160)
    tap_index: int = 6
    bottleneck_index: int = 4

    def __post_init__(self):
        widths = tuple(int(w) for w in self.hidden_widths)
        object.__setattr__(self, "hidden_widths", widths)
        n = len(widths)
        if n < 2 or any(w < 1 for w in widths):
            raise ConfigError(f"invalid autoencoder widths {widths}")
        if not 1 <= self.tap_index <= n:
            raise ConfigError(f"tap_index must lie in 1..{n}, got {self.tap_index}")
        if not 1 <= self.bottleneck_index <= n:
            raise ConfigError(f"bottleneck_index must lie in 1..{n}, got {self.bottleneck_index}")
        b = self.bottleneck_index - 1
        down, up = widths[:b + 1], widths[b:]
        if any(y > x for x, y in zip(down, down[1:])) or any(y < x for x, y in zip(up, up[1:])):
            raise ConfigError(f"widths {widths} do not narrow to layer {self.bottleneck_index} "
                              "and widen afterwards")

    @classmethod
    def for_input(cls, input_width, tap_index=6, bottleneck_index=4):
        widths = tuple(max(1, int(round(f * input_width))) for f in DEFAULT_PROFILE[:-1])
        return cls(widths + (int(input_width),), tap_index, bottleneck_index)

    @property
    def input_width(self):
        return self.hidden_widths[-1]

    @property
    def tap_width(self):
        return self.hidden_widths[self.tap_index - 1]

    def layers(self):
        return dense_stack(self.input_width, self.hidden_widths, "rectifier", "identity")


@dataclass(frozen=True)
class EncoderHandle:
    """Frozen snapshot of the autoencoder up to the tap layer.

    ``autoencoder`` keeps a private copy of the full network so that the
    encoding can be retrained later without touching this handle.
    """

    net: Network
    tap_width: int
    version: int = 0
    spec: AutoencoderSpec | None = None
    autoencoder: Network | None = field(default=None, repr=False, compare=False)

    @property
    def input_width(self):
        return self.net.input_width

    def encode(self, frame):
        x = np.asarray(frame, dtype=np.float64).reshape(-1)
        if x.size != self.net.input_width:
            raise ShapeError(f"frame has {x.size} pixels, encoder expects {self.net.input_width}")
        return self.net.forward(x, mode="eval")

    def encode_batch(self, frames):
        X = np.asarray(frames, dtype=np.float64)
        X = X.reshape(X.shape[0], -1)
        if X.shape[1] != self.net.input_width:
            raise ShapeError(f"frames have {X.shape[1]} pixels, encoder expects "
                             f"{self.net.input_width}")
        return self.net.forward(X, mode="eval")

    def save(self, path):
        """Write ``<path>`` (network checkpoint) and ``<path>.json`` (metadata)."""
        path = Path(path)
        self.net.save(path)
        meta = {"version": self.version, "tap_width": self.tap_width,
                "tap_index": self.spec.tap_index if self.spec else None,
                "spec": None if self.spec is None else {
                    "hidden_widths": list(self.spec.hidden_widths),
                    "tap_index": self.spec.tap_index,
                    "bottleneck_index": self.spec.bottleneck_index}}
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path):
        net = Network.load(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        spec = AutoencoderSpec(**meta["spec"]) if meta["spec"] else None
        return cls(net, meta["tap_width"], meta["version"], spec)


def encode(handle, frame):
    return handle.encode(frame)


def identity_handle(width):
    """Encoder that returns the flattened frame unchanged (raw-pixel ablation)."""
    net = Network([LayerSpec(width, width)], weights=[np.eye(width)], biases=[np.zeros(width)])
    return EncoderHandle(net, width, 0, None, None)


def _handle_from(autoencoder, spec, version):
    return EncoderHandle(autoencoder.snapshot(spec.tap_index), spec.tap_width, version, spec,
                         autoencoder.copy())


@dataclass
class FrameDataset:
    train: np.ndarray
    test: np.ndarray
    frame_shape: tuple = ()

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.float64)
        self.test = np.asarray(self.test, dtype=np.float64)
        if self.train.ndim > 2:
            self.frame_shape = self.frame_shape or self.train.shape[1:]
            self.train = self.train.reshape(self.train.shape[0], -1)
        if self.test.ndim > 2:
            self.test = self.test.reshape(self.test.shape[0], -1)

    @property
    def sizes(self):
        return len(self.train), len(self.test)

    @classmethod
    def split(cls, frames, rng=None, frame_shape=()):
        """Shuffle and split 10:1 into train and test rows."""
        frames = np.asarray(frames, dtype=np.float64)
        frames = frames.reshape(frames.shape[0], -1)
        n = len(frames)
        n_test = n // 11
        order = np.random.default_rng(rng).permutation(n)
        return cls(frames[order[n_test:]], frames[order[:n_test]], tuple(frame_shape))


def collect_random_frames(env, n_frames, seed):
    rng = np.random.default_rng(seed)
    frames = [env.reset(seed=seed)]
    while len(frames) < n_frames:
        if env.episode_over:
            frames.append(env.reset(seed=seed))
            continue
        frame, _, _ = env.step(int(rng.integers(env.n_actions)))
        frames.append(frame)
    return np.array(frames[:n_frames])


def build_static_dataset(env, n_frames, seed):
    """Frames from uniformly random play, split 10:1 into train and test."""
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    frames = collect_random_frames(env, n_frames, seed)
    return FrameDataset.split(frames, rng=seed, frame_shape=env.frame_size)


def train_autoencoder(spec, data, epochs=10, lr=0.1, seed=0, batch_size=32, momentum=0.9):
    """Train a fresh autoencoder on ``data.train``.

    Returns ``(handle, train_mse, test_mse)`` where the MSEs are reconstruction
    errors of the trained network (eval mode) on each split.
    """
    if len(data.train) == 0:
        raise ValueError("training split is empty")
    if data.train.shape[1] != spec.input_width:
        raise ShapeError(f"frames have {data.train.shape[1]} pixels, spec expects "
                         f"{spec.input_width}")
    net = Network(spec.layers(), rng_seed=seed)
    fit_minibatches(net, data.train, data.train, epochs, lr, batch_size,
                    np.random.default_rng(seed), momentum)
    test_mse = net.mse(data.test, data.test) if len(data.test) else float("nan")
    return _handle_from(net, spec, 0), net.mse(data.train, data.train), test_mse


def dynamic_retrain(handle, recent, epochs=1, lr=0.1, seed=0, batch_size=32, momentum=0.9):
    """Continue training the handle's autoencoder on recent frames.

    Returns a new handle with ``version + 1``; the input handle is not modified,
    so codes computed with it remain valid.
    """
    if handle.autoencoder is None or handle.spec is None:
        raise ConfigError("this encoder has no trainable autoencoder")
    frames = recent.train if isinstance(recent, FrameDataset) else np.asarray(recent)
    frames = frames.reshape(len(frames), -1)
    net = handle.autoencoder.copy()
    if epochs and len(frames):
        fit_minibatches(net, frames, frames, epochs, lr, batch_size,
                        np.random.default_rng(seed), momentum)
    return _handle_from(net, handle.spec, handle.version + 1)


def reconstruction_mse(handle, frames):
    frames = np.asarray(frames, dtype=np.float64)
    frames = frames.reshape(len(frames), -1)
    return handle.autoencoder.mse(frames, frames)


class AutoencoderEncoder(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer wrapping :func:`train_autoencoder`.

    ``fit`` trains a fresh autoencoder on flattened frames, ``partial_fit``
    continues training (bumping the encoder version) and ``transform`` returns
    the tap-layer codes.

    Parameters
    ----------
    hidden_widths : tuple of int, optional
        Autoencoder widths ending with the input width. Derived from the input
        width with the default hourglass profile when omitted.
    tap_index, bottleneck_index : int
        1-based layer indices of the encoding tap and of the narrowest layer.
    epochs, learning_rate, momentum, batch_size : training settings.
    random_state : int
        Seed for initialisation and minibatch order.

    Attributes
    ----------
    handle_ : EncoderHandle
        Current frozen encoder.
    spec_ : AutoencoderSpec
    n_features_in_ : int
    """

    def __init__(self, hidden_widths=None, tap_index=6, bottleneck_index=4, epochs=10,
                 learning_rate=0.1, momentum=0.9, batch_size=32, random_state=0):
        self.hidden_widths = hidden_widths
        self.tap_index = tap_index
        self.bottleneck_index = bottleneck_index
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.random_state = random_state

    def _spec(self, n_features):
        if self.hidden_widths is None:
            return AutoencoderSpec.for_input(n_features, self.tap_index, self.bottleneck_index)
        return AutoencoderSpec(tuple(self.hidden_widths), self.tap_index, self.bottleneck_index)

    def fit(self, X, y=None):
        X = check_array(X)
        self.spec_ = self._spec(X.shape[1])
        self.n_features_in_ = X.shape[1]
        data = FrameDataset(X, X[:0])
        self.handle_, self.train_mse_, _ = train_autoencoder(
            self.spec_, data, self.epochs, self.learning_rate, self.random_state,
            self.batch_size, self.momentum)
        return self

    def partial_fit(self, X, y=None, epochs=None):
        if not hasattr(self, "handle_"):
            return self.fit(X)
        X = self._check(X)
        self.handle_ = dynamic_retrain(self.handle_, X, self.epochs if epochs is None else epochs,
                                       self.learning_rate, self.random_state + self.handle_.version,
                                       self.batch_size, self.momentum)
        return self

    def _check(self, X):
        check_is_fitted(self, "handle_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {X.shape[1]} features, encoder was fitted with "
                             f"{self.n_features_in_}")
        return X

    def transform(self, X):
        X = self._check(X)
        return self.handle_.encode_batch(X)

    def reconstruct(self, X):
        X = self._check(X)
        return self.handle_.autoencoder.forward(X, mode="eval")

    def score(self, X, y=None):
        """Negative reconstruction MSE (higher is better)."""
        X = self._check(X)
        return -reconstruction_mse(self.handle_, X)
