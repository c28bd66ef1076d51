"""Learned dynamics over encoded states and its squared prediction error."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ShapeError
from .nn import Network, dense_stack, fit_minibatches

logger = logging.getLogger(__name__)


def one_hot(action, n_actions):
    v = np.zeros(n_actions)
    v[int(action)] = 1.0
    return v


def model_inputs(codes, actions, n_actions):
    """Rows ``code ⊕ one_hot(action)`` for a batch of codes and actions."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    onehots = np.zeros((len(codes), n_actions))
    onehots[np.arange(len(codes)), np.asarray(actions, dtype=int)] = 1.0
    return np.hstack([codes, onehots])


class DynamicsModel(RegressorMixin, BaseEstimator):
    """Two-hidden-layer regressor from ``code ⊕ one_hot(action)`` to the next code.

    Parameters
    ----------
    code_width : int
        Width of the state encoding.
    n_actions : int
    hidden_widths : tuple of int, optional
        Defaults to ``(code_width, code_width)``.
    epochs : int
        Passes over the data per ``fit``/``partial_fit`` call.
    learning_rate, momentum, batch_size : SGD settings.
    random_state : int
    """

    def __init__(self, code_width, n_actions, hidden_widths=None, epochs=1, learning_rate=0.05,
                 momentum=0.9, batch_size=32, random_state=0):
        self.code_width = code_width
        self.n_actions = n_actions
        self.hidden_widths = hidden_widths
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.random_state = random_state

    def initialize(self):
        """Create fresh (untrained) weights; prediction works from here on."""
        hidden = tuple(self.hidden_widths or (self.code_width, self.code_width))
        if len(hidden) != 2:
            raise ShapeError("the dynamics model has exactly two hidden layers")
        width = self.code_width + self.n_actions
        self.net_ = Network(dense_stack(width, hidden + (self.code_width,)),
                            rng_seed=self.random_state)
        self.rng_ = np.random.default_rng(self.random_state)
        self.n_features_in_ = width
        self.n_updates_ = 0
        return self

    def _check_xy(self, X, y):
        X = check_array(X)
        y = check_array(y)
        if X.shape[1] != self.code_width + self.n_actions or y.shape[1] != self.code_width:
            raise ShapeError(f"expected X with {self.code_width + self.n_actions} and y with "
                             f"{self.code_width} columns, got {X.shape[1]} and {y.shape[1]}")
        return X, y

    def fit(self, X, y):
        self.initialize()
        return self.partial_fit(X, y)

    def partial_fit(self, X, y, epochs=None):
        if not hasattr(self, "net_"):
            self.initialize()
        X, y = self._check_xy(X, y)
        epochs = self.epochs if epochs is None else epochs
        if epochs and len(X):
            self.history_ = fit_minibatches(self.net_, X, y, epochs, self.learning_rate,
                                            self.batch_size, self.rng_, self.momentum)
            self.n_updates_ += 1
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} input columns, got {X.shape[-1]}")
        return self.net_.forward(X, mode="eval")

    def predict_next(self, code, action):
        code = np.asarray(code, dtype=np.float64)
        if code.shape != (self.code_width,):
            raise ShapeError(f"code must have length {self.code_width}, got {code.shape}")
        if not 0 <= int(action) < self.n_actions:
            raise ValueError(f"invalid action {action}")
        return self.predict(np.concatenate([code, one_hot(action, self.n_actions)]))

    def prediction_error(self, code_t, action, code_t1):
        """Squared Euclidean distance between ``code_t1`` and the prediction."""
        code_t1 = np.asarray(code_t1, dtype=np.float64)
        if code_t1.shape != (self.code_width,):
            raise ShapeError(f"target code must have length {self.code_width}")
        diff = code_t1 - self.predict_next(code_t, action)
        return float(diff @ diff)

    def score(self, X, y, sample_weight=None):
        """Negative mean squared error (higher is better)."""
        X, y = self._check_xy(X, y)
        return -float(np.mean((self.predict(X) - y) ** 2))


def predict(model, code, action):
    return model.predict_next(code, action)


def prediction_error(model, code_t, action, code_t1):
    return model.prediction_error(code_t, action, code_t1)


def retrain(model, bank, encoder, epochs=None, lr=None):
    """Update the model on every transition in ``bank`` encoded with ``encoder``.

    Stored frames are re-encoded with the current encoder rather than reusing
    the codes seen at collection time.
    """
    if len(bank) == 0:
        logger.warning("dynamics retrain skipped: memory bank is empty")
        return model
    frame_ids_t, actions, frame_ids_t1 = bank.model_columns()
    codes = encoder.encode_batch(bank.frames.matrix())
    X = model_inputs(codes[frame_ids_t], actions, model.n_actions)
    y = codes[frame_ids_t1]
    if lr is not None:
        model.set_params(learning_rate=lr)
    return model.partial_fit(X, y, epochs)
