"""Action selection strategies and the prediction-error bonus bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError

STRATEGIES = ("epsilon_greedy", "boltzmann", "thompson", "model_bonus")


def novelty(normalized_error, t, decay):
    """Time-decayed novelty ``normalized_error / (t * decay)``."""
    return normalized_error / (t * decay)


class BonusAccountant:
    """Running state for turning prediction errors into bonus-augmented rewards.

    Parameters
    ----------
    beta : float
        Bonus weight. ``beta=0`` leaves rewards untouched.
    decay : float
        Decay constant ``C > 0`` in the novelty denominator ``t * C``.
    max_e : float
        Initial running maximum of the prediction error.
    t : int
        Initial global step counter (starts at 1).
    """

    def __init__(self, beta, decay, max_e=1.0, t=1):
        if beta < 0:
            raise ConfigError("beta must be non-negative")
        if not decay > 0:
            raise ConfigError("decay constant C must be positive")
        self.beta = float(beta)
        self.decay = float(decay)
        self.max_e = float(max_e)
        self.t = int(t)

    def __repr__(self):
        return (f"BonusAccountant(beta={self.beta}, decay={self.decay}, "
                f"max_e={self.max_e}, t={self.t})")

    def observe(self, e, reward):
        """Return ``(r_bonus, e_bar)`` for one transition and advance the state.

        The error is normalised by the running maximum *before* that maximum is
        updated, so a record-setting step can produce ``e_bar > 1``.
        """
        e = float(e)
        if not np.isfinite(e):
            raise TrainingError(f"non-finite prediction error {e!r} at step {self.t} "
                                f"(max_e={self.max_e})", step=self.t)
        e_bar = e / self.max_e
        r_bonus = reward + self.beta * novelty(e_bar, self.t, self.decay)
        if e > self.max_e:
            self.max_e = e
        self.t += 1
        return r_bonus, e_bar


def observe_and_bonus(acct, e, reward):
    return acct.observe(e, reward)


@dataclass
class EpsilonSchedule:
    """Linear annealing from ``start`` to ``end`` over ``anneal_steps`` steps."""

    start: float = 1.0
    end: float = 0.1
    anneal_steps: int = 40_000

    def __post_init__(self):
        for v in (self.start, self.end):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"epsilon values must lie in [0, 1], got {v}")
        if self.anneal_steps < 0:
            raise ConfigError("anneal_steps must be non-negative")

    def value(self, step):
        if self.anneal_steps == 0 or step >= self.anneal_steps:
            return self.end
        frac = step / self.anneal_steps
        return self.start + frac * (self.end - self.start)


@dataclass
class StrategyConfig:
    kind: str = "epsilon_greedy"
    epsilon: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    temperature: float = 0.1
    dropout_rate: float = 0.5
    beta: float = 50.0
    decay: float | None = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"strategy kind must be one of {STRATEGIES}, got {self.kind!r}")
        if self.kind == "boltzmann" and not self.temperature > 0:
            raise ConfigError("boltzmann temperature must be positive")
        if self.kind == "thompson" and not 0.0 < self.dropout_rate < 1.0:
            raise ConfigError("thompson sampling needs a dropout_rate in (0, 1)")
        if self.kind == "model_bonus":
            if self.beta < 0:
                raise ConfigError("beta must be non-negative")
            if self.decay is not None and not self.decay > 0:
                raise ConfigError("decay constant C must be positive")

    @property
    def uses_bonus(self):
        return self.kind == "model_bonus"


def greedy(q):
    # np.argmax returns the first maximum, i.e. ties go to the lowest index
    return int(np.argmax(q))


def select_epsilon_greedy(q, epsilon, rng, n_actions=None):
    """Uniform random action with probability ``epsilon``, else the greedy one.

    ``q`` may be a zero-argument callable (with ``n_actions`` given) so the
    Q-values are only computed on the greedy branch. The generator advances the
    same way in both cases.
    """
    n = len(q) if n_actions is None else n_actions
    if rng.random() < epsilon:
        return int(rng.integers(n))
    return greedy(q() if callable(q) else q)


def boltzmann_probabilities(q, temperature):
    q = np.asarray(q, dtype=np.float64)
    z = (q - q.max()) / temperature
    p = np.exp(z)
    return p / p.sum()


def select_boltzmann(q, temperature, rng):
    """Sample an action from ``softmax(q / temperature)``."""
    p = boltzmann_probabilities(q, temperature)
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(p), u, side="right"), len(p) - 1))


def select_thompson(qnet, x, rng):
    """Argmax of a single dropout-perturbed forward pass with a fresh mask."""
    masks = qnet.sample_dropout_mask(rng)
    q = qnet.forward(x, mode="train", masks=masks)
    return greedy(q)
