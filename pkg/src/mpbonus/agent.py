"""Q-learning with experience replay and prediction-error exploration bonuses.

A :class:`Run` owns one environment, one Q-network and, for the ``model_bonus``
strategy, an encoder, a dynamics model and a :class:`BonusAccountant`. Every
environment step is scored and stored in the memory bank; all learning happens
at epoch boundaries (Q replay, dynamics update, periodic encoder update),
followed by a greedy test phase whose mean episode score forms the learning
curve.
"""

from __future__ import annotations

import copy
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DynamicsModel
from .dynamics import retrain as retrain_dynamics
from .encoder import (AutoencoderSpec, EncoderHandle, build_static_dataset, dynamic_retrain,
                      identity_handle, train_autoencoder)
from .errors import ConfigError
from .exploration import (BonusAccountant, StrategyConfig, greedy, select_boltzmann,
                          select_epsilon_greedy, select_thompson)
from .metrics import LearningCurve, coefficient_of_variation
from .nn import Network, TrainBatch, dense_stack

logger = logging.getLogger(__name__)

ENCODER_REGIMES = ("static", "dynamic", "raw_pixels")

# how many encoders / dynamics models were ever built, per component name
INSTANTIATIONS = Counter()


@dataclass
class Transition:
    frame_t: np.ndarray
    action_t: int
    frame_t1: np.ndarray
    r: float
    r_bonus: float
    terminal: bool
    step_index: int


class FrameStore:
    """Interns frames so the memory bank stores each distinct frame once.

    The table only grows; it is meant for environments with a modest number of
    distinct frames.
    """

    def __init__(self, width):
        self.width = width
        self._ids = {}
        self._rows = []
        self._matrix = None

    def __len__(self):
        return len(self._rows)

    def add(self, frame):
        row = np.asarray(frame, dtype=np.float64).reshape(-1)
        key = row.tobytes()
        fid = self._ids.get(key)
        if fid is None:
            fid = len(self._rows)
            self._ids[key] = fid
            self._rows.append(row.copy())
            self._matrix = None
        return fid

    def get(self, fid):
        return self._rows[fid]

    def matrix(self):
        if self._matrix is None:
            self._matrix = np.array(self._rows).reshape(len(self._rows), self.width)
        return self._matrix


class MemoryBank:
    """Fixed-capacity FIFO ring buffer of transitions with frozen bonus rewards."""

    def __init__(self, capacity, frame_width, frame_shape=None):
        if capacity < 1:
            raise ConfigError("memory bank capacity must be positive")
        self.capacity = int(capacity)
        self.frame_shape = frame_shape
        self.frames = FrameStore(frame_width)
        self._ids_t = np.zeros(capacity, dtype=np.int64)
        self._ids_t1 = np.zeros(capacity, dtype=np.int64)
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._r_bonus = np.zeros(capacity)
        self._terminal = np.zeros(capacity, dtype=bool)
        self._step = np.zeros(capacity, dtype=np.int64)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def store(self, frame_t, action, frame_t1, r, r_bonus, terminal, step_index,
              ids=None):
        i = self._next
        if ids is None:
            ids = self.frames.add(frame_t), self.frames.add(frame_t1)
        self._ids_t[i], self._ids_t1[i] = ids
        self._actions[i] = action
        self._r[i] = r
        self._r_bonus[i] = r_bonus
        self._terminal[i] = terminal
        self._step[i] = step_index
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _order(self):
        # chronological slot indices, oldest first
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def _frame(self, fid):
        f = self.frames.get(fid)
        return f.reshape(self.frame_shape) if self.frame_shape else f

    def __getitem__(self, k):
        i = self._order()[k]
        return Transition(self._frame(self._ids_t[i]), int(self._actions[i]),
                          self._frame(self._ids_t1[i]), float(self._r[i]),
                          float(self._r_bonus[i]), bool(self._terminal[i]), int(self._step[i]))

    def __iter__(self):
        for k in range(self._size):
            yield self[k]

    def sample(self, batch_size, rng):
        """Uniformly sampled slots as arrays ``(X_t, actions, X_t1, r_bonus, terminal)``."""
        idx = rng.integers(self._size, size=batch_size)
        frames = self.frames.matrix()
        return (frames[self._ids_t[idx]], self._actions[idx], frames[self._ids_t1[idx]],
                self._r_bonus[idx], self._terminal[idx])

    def model_columns(self):
        """Frame ids and actions of every stored transition, oldest first."""
        o = self._order()
        return self._ids_t[o], self._actions[o], self._ids_t1[o]

    def recent_frames(self, n):
        """Up to ``n`` most recent ``frame_t1`` rows."""
        o = self._order()[-n:]
        return self.frames.matrix()[self._ids_t1[o]]

    def r_bonus_column(self):
        return self._r_bonus[self._order()].copy()


@dataclass
class EncoderConfig:
    regime: str = "dynamic"
    hidden_widths: tuple | None = None
    tap_index: int = 6
    bottleneck_index: int = 4
    epochs: int = 10
    learning_rate: float = 0.1
    momentum: float = 0.9
    n_frames: int = 5500
    retrain_period: int = 5
    retrain_epochs: int = 1
    recent_frames: int | None = None

    def __post_init__(self):
        if self.regime not in ENCODER_REGIMES:
            raise ConfigError(f"encoder regime must be one of {ENCODER_REGIMES}")
        if self.retrain_period < 1:
            raise ConfigError("retrain_period must be positive")

    def spec(self, input_width):
        if self.hidden_widths is None:
            return AutoencoderSpec.for_input(input_width, self.tap_index, self.bottleneck_index)
        return AutoencoderSpec(tuple(self.hidden_widths), self.tap_index, self.bottleneck_index)


@dataclass
class DynamicsConfig:
    hidden_widths: tuple | None = None
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 1


@dataclass
class AgentConfig:
    gamma: float = 0.99
    epoch_length: int = 2000
    test_steps: int = 400
    total_epochs: int = 100
    capacity: int = 50_000
    replay_batch: int = 32
    replay_updates_per_epoch: int = 500
    target_sync_period: int = 1
    q_hidden_widths: tuple = (64,)
    lr: float = 0.05
    momentum: float = 0.0
    td_clip: float | None = 1.0
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.epoch_length < 1 or self.total_epochs < 1:
            raise ConfigError("epoch_length and total_epochs must be at least 1")
        if self.test_steps < 1 or self.capacity < 1 or self.replay_batch < 1:
            raise ConfigError("test_steps, capacity and replay_batch must be positive")
        if self.target_sync_period < 1:
            raise ConfigError("target_sync_period must be at least 1")
        if self.td_clip is not None and not self.td_clip > 0:
            raise ConfigError("td_clip must be positive (or None to disable clipping)")

    @property
    def bonus_decay(self):
        s = self.strategy
        return s.decay if s.decay is not None else 1.0 / self.epoch_length


def q_target(r_bonus, terminal, q_next, gamma):
    """One-step Q-learning backup ``r + gamma * max(q_next)`` (just ``r`` if terminal)."""
    if terminal:
        return float(r_bonus)
    return float(r_bonus + gamma * np.max(q_next))


@dataclass
class EpochRecord:
    epoch: int
    mean_test_score: float
    mean_residual: float
    residual_cv: float
    sigma_version: int


class Run:
    """One seeded training run on one environment.

    Parameters
    ----------
    env : environment instance (see :mod:`mpbonus.envs`)
    config : AgentConfig
    seed : int
    log_bonuses : bool
        Keep a per-step ``(t, e, e_bar, max_e, r, r_bonus)`` log in
        :attr:`bonus_log`; ``max_e`` is the value used for normalisation.
    """

    def __init__(self, env, config, seed=0, log_bonuses=False):
        self.env = env
        self.eval_env = copy.deepcopy(env)
        self.config = config
        self.seed = int(seed)
        self.strategy = config.strategy
        streams = np.random.SeedSequence(self.seed).spawn(6)
        self.action_rng = np.random.default_rng(streams[0])
        self.replay_rng = np.random.default_rng(streams[1])
        q_seed, enc_seed, dyn_seed = (int(s.generate_state(1)[0]) for s in streams[2:5])
        self.encoder_rng = np.random.default_rng(streams[5])
        self.n_actions = env.n_actions
        width = env.frame_width
        dropout = self.strategy.dropout_rate if self.strategy.kind == "thompson" else 0.0
        self.qnet = Network(dense_stack(width, tuple(config.q_hidden_widths) + (self.n_actions,),
                                        dropout_rate=dropout), rng_seed=q_seed)
        self.target = self.qnet.copy()
        self.bank = MemoryBank(config.capacity, width, env.frame_size)
        self.encoder = None
        self.dynamics = None
        self.accountant = None
        if self.strategy.uses_bonus:
            self._build_bonus_pipeline(enc_seed, dyn_seed)
        self.log_bonuses = log_bonuses
        self.bonus_log = []
        self.records = []
        self.step_count = 0
        self.epoch = 0
        self._epoch_e_bar = []
        self._codes = {}
        self._errors = {}
        self.frame = env.reset(seed=self.seed)
        self.frame_id = self.bank.frames.add(self.frame)

    def _build_bonus_pipeline(self, enc_seed, dyn_seed):
        cfg = self.config.encoder
        env = self.env
        if cfg.regime == "raw_pixels":
            self.encoder = identity_handle(env.frame_width)
        else:
            spec = cfg.spec(env.frame_width)
            if cfg.regime == "static":
                data = build_static_dataset(copy.deepcopy(env), cfg.n_frames, enc_seed)
                self.encoder, _, _ = train_autoencoder(spec, data, cfg.epochs, cfg.learning_rate,
                                                       enc_seed, momentum=cfg.momentum)
            else:
                # untrained snapshot until the first scheduled retrain
                ae = Network(spec.layers(), rng_seed=enc_seed)
                self.encoder = EncoderHandle(ae.snapshot(spec.tap_index), spec.tap_width, 0,
                                             spec, ae)
        INSTANTIATIONS["encoder"] += 1
        d = self.config.dynamics
        self.dynamics = DynamicsModel(self.encoder.tap_width, self.n_actions, d.hidden_widths,
                                      d.epochs, d.learning_rate, d.momentum, d.batch_size,
                                      dyn_seed).initialize()
        INSTANTIATIONS["dynamics"] += 1
        self.accountant = BonusAccountant(self.strategy.beta, self.config.bonus_decay)

    @property
    def sigma_version(self):
        return self.encoder.version if self.encoder is not None else 0

    def _code(self, fid):
        code = self._codes.get(fid)
        if code is None:
            code = self.encoder.encode(self.bank.frames.get(fid))
            self._codes[fid] = code
        return code

    def _prediction_error(self, fid_t, action, fid_t1):
        key = (fid_t, action, fid_t1)
        e = self._errors.get(key)
        if e is None:
            e = self.dynamics.prediction_error(self._code(fid_t), action, self._code(fid_t1))
            self._errors[key] = e
        return e

    def _q(self, x):
        return self.qnet.forward(x, mode="eval")

    def select_action(self, x):
        s = self.strategy
        if s.kind == "boltzmann":
            return select_boltzmann(self._q(x), s.temperature, self.action_rng)
        if s.kind == "thompson":
            return select_thompson(self.qnet, x, self.action_rng)
        eps = s.epsilon.value(self.step_count)
        return select_epsilon_greedy(lambda: self._q(x), eps, self.action_rng, self.n_actions)

    def run_step(self):
        """Act once, score the transition and store it in the memory bank."""
        x = self.bank.frames.get(self.frame_id)
        action = self.select_action(x)
        frame1, reward, terminal = self.env.step(action)
        fid1 = self.bank.frames.add(frame1)
        step_index = self.step_count + 1
        if self.accountant is not None:
            e = self._prediction_error(self.frame_id, action, fid1)
            prior_max, t = self.accountant.max_e, self.accountant.t
            r_bonus, e_bar = self.accountant.observe(e, reward)
            self._epoch_e_bar.append(e_bar)
            if self.log_bonuses:
                self.bonus_log.append((t, e, e_bar, prior_max, reward, r_bonus))
        else:
            r_bonus = reward
        self.bank.store(None, action, None, reward, r_bonus, terminal, step_index,
                        ids=(self.frame_id, fid1))
        self.step_count = step_index
        if self.env.episode_over:
            self.frame = self.env.reset(seed=self.seed)
            self.frame_id = self.bank.frames.add(self.frame)
        else:
            self.frame, self.frame_id = frame1, fid1
        return action, reward, r_bonus

    def replay(self, n_updates):
        cfg = self.config
        if len(self.bank) == 0:
            return
        rows = np.arange(cfg.replay_batch)
        for _ in range(n_updates):
            X, actions, X1, r_bonus, terminal = self.bank.sample(cfg.replay_batch, self.replay_rng)
            q_next = self.target.forward(X1, mode="eval").max(axis=1)
            y = r_bonus + cfg.gamma * q_next * ~terminal
            q = self.qnet.forward(X, mode="train")
            targets = q.copy()
            if cfg.td_clip is not None:
                # Huber-style update: the squared-error gradient sees a clipped TD error
                q_taken = q[rows, actions]
                y = q_taken + np.clip(y - q_taken, -cfg.td_clip, cfg.td_clip)
            targets[rows, actions] = y
            grads = self.qnet.backward(TrainBatch(X, targets))
            self.qnet.sgd_step(grads, cfg.lr, cfg.momentum)

    def run_epoch_boundary(self):
        """Replay, model and encoder updates, target sync, then a greedy test."""
        cfg = self.config
        if self.step_count % cfg.epoch_length:
            raise RuntimeError("epoch boundary reached off the epoch grid")
        self.epoch += 1
        self.replay(cfg.replay_updates_per_epoch)
        if self.accountant is not None:
            retrain_dynamics(self.dynamics, self.bank, self.encoder)
            self._errors.clear()
            enc = cfg.encoder
            if enc.regime == "dynamic" and self.epoch % enc.retrain_period == 0:
                recent = self.bank.recent_frames(enc.recent_frames or cfg.capacity)
                seed = int(self.encoder_rng.integers(2**31))
                self.encoder = dynamic_retrain(self.encoder, recent, enc.retrain_epochs,
                                               enc.learning_rate, seed, momentum=enc.momentum)
                self._codes.clear()
        if self.epoch % cfg.target_sync_period == 0:
            self.target = self.qnet.copy()
        score = self.evaluate_greedy(cfg.test_steps)
        e_bars = self._epoch_e_bar
        mean_r = float(np.mean(e_bars)) if e_bars else float("nan")
        cv = coefficient_of_variation(e_bars) if e_bars else float("nan")
        self._epoch_e_bar = []
        record = EpochRecord(self.epoch, score, mean_r, cv, self.sigma_version)
        self.records.append(record)
        return record

    def evaluate_greedy(self, test_steps):
        """Mean return of completed greedy episodes within ``test_steps`` steps."""
        env = self.eval_env
        frame = env.reset(seed=self.seed)
        total, episodes, ret = 0.0, 0, 0.0
        cache = {}
        for _ in range(test_steps):
            key = frame.tobytes()
            a = cache.get(key)
            if a is None:
                a = cache[key] = greedy(self._q(frame.reshape(-1)))
            frame, reward, _ = env.step(a)
            ret += reward
            if env.episode_over:
                total += ret
                episodes += 1
                ret = 0.0
                frame = env.reset(seed=self.seed)
        if episodes == 0:
            logger.warning("greedy evaluation finished no episode in %d steps", test_steps)
            return 0.0
        return total / episodes

    def run_epoch(self):
        for _ in range(self.config.epoch_length):
            self.run_step()
        return self.run_epoch_boundary()

    def run(self, callback=None):
        while self.epoch < self.config.total_epochs:
            record = self.run_epoch()
            if callback is not None:
                callback(self, record)
        return self

    @property
    def curve(self):
        return LearningCurve(tuple(r.epoch for r in self.records),
                             tuple(r.mean_test_score for r in self.records))

    @property
    def residuals(self):
        return [(r.mean_residual, r.residual_cv) for r in self.records]


def train(env, config, seed=0, log_bonuses=False, callback=None):
    return Run(env, config, seed, log_bonuses).run(callback)
