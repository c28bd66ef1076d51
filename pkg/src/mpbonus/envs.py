"""Deterministic pixel-observation toy MDPs.

Every environment renders its hidden state into a grayscale frame with values
in ``[0, 1]``. Frames are cached per hidden state and returned read-only, so two
visits to the same state yield the identical array.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ContractViolation, UnsupportedEnvError


class _FrameEnv:
    name = None
    actions = ()
    gamma = 0.99

    def __init__(self):
        self._frames = {}
        self._done = True
        self._terminal = False
        self.steps = 0
        self.seed = None

    @property
    def n_actions(self):
        return len(self.actions)

    @property
    def frame_width(self):
        h, w = self.frame_size
        return h * w

    @property
    def episode_over(self):
        """True once the episode hit a terminal state or the step cap."""
        return self._done

    def render(self, state=None):
        state = self._state() if state is None else state
        frame = self._frames.get(state)
        if frame is None:
            frame = self._draw(state)
            frame.flags.writeable = False
            self._frames[state] = frame
        return frame

    def reset(self, seed=None):
        # the start state is fixed; the seed is kept so runs can record it
        self.seed = seed
        self._reset_state()
        self.steps = 0
        self._done = False
        self._terminal = False
        return self.render()

    def step(self, action):
        if self._done:
            raise ContractViolation(f"{self.name}: step() called after the episode ended")
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"{self.name}: invalid action {action}")
        reward, terminal = self._transition(action)
        self.steps += 1
        self._terminal = terminal
        self._done = terminal or self.steps >= self.episode_cap
        return self.render(), float(reward), terminal


class PixelChain(_FrameEnv):
    """Chain of ``length`` cells; LEFT jumps back to cell 0, RIGHT advances one cell.

    Entering the last cell pays 1.0 and ends the episode. The frame is an
    ``8 x length`` strip with the agent's column lit at 1.0.
    """

    name = "pixel_chain"
    actions = ("LEFT", "RIGHT")
    LEFT, RIGHT = 0, 1

    def __init__(self, length=20, gamma=0.99):
        super().__init__()
        if length < 2:
            raise ValueError("PixelChain needs at least 2 cells")
        self.length = int(length)
        self.gamma = gamma
        self.frame_size = (8, self.length)
        self.episode_cap = 4 * self.length
        self.cell = 0

    def params(self):
        return {"length": self.length}

    def _state(self):
        return self.cell

    def _reset_state(self):
        self.cell = 0

    def _draw(self, cell):
        frame = np.zeros(self.frame_size)
        frame[:, cell] = 1.0
        return frame

    def _transition(self, action):
        if action == self.LEFT:
            self.cell = 0
            return 0.0, False
        self.cell += 1
        if self.cell == self.length - 1:
            return 1.0, True
        return 0.0, False


DEFAULT_MAZE = (
    "S..#...",
    ".#.#.#.",
    ".#...#.",
    ".###.#.",
    "...#...",
    "##.###.",
    "....#.G",
)

DEFAULT_TREASURE = (
    "S..#..K",
    ".#.#.#.",
    ".#...#.",
    ".###.#.",
    "...#...",
    "##.###.",
    "....#.G",
)


class GridMaze(_FrameEnv):
    """Grid world with walls (``#``), start ``S`` and goal ``G``.

    Moves into walls or off the grid leave the agent in place. Reaching the goal
    pays 1.0 and ends the episode; the cap is ``4 * W * H`` steps. Pixels: wall
    0.5, goal 0.8, agent 1.0, floor 0.0.
    """

    name = "grid_maze"
    actions = ("UP", "DOWN", "LEFT", "RIGHT")
    MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
    WALL, GOAL, AGENT, KEY = 0.5, 0.8, 1.0, 0.3

    def __init__(self, layout=None, width=None, height=None, gamma=0.99):
        super().__init__()
        if layout is None and width is not None and height is not None:
            rows = [["."] * int(width) for _ in range(int(height))]
            rows[0][0] = "S"
            rows[-1][-1] = "G"
            layout = ["".join(r) for r in rows]
        self.layout = tuple(layout) if layout is not None else self._default_layout()
        if len({len(r) for r in self.layout}) != 1:
            raise ValueError("maze rows must have equal length")
        self.gamma = gamma
        self.height = len(self.layout)
        self.width = len(self.layout[0])
        self.frame_size = (self.height, self.width)
        self.episode_cap = 4 * self.width * self.height
        self.walls = {(r, c) for r, row in enumerate(self.layout)
                      for c, ch in enumerate(row) if ch == "#"}
        self.start = self._find("S")
        self.goal = self._find("G")
        self.pos = self.start

    def _default_layout(self):
        return DEFAULT_MAZE

    def params(self):
        return {"layout": "/".join(self.layout)}

    def _find(self, ch):
        for r, row in enumerate(self.layout):
            c = row.find(ch)
            if c >= 0:
                return (r, c)
        raise ValueError(f"layout has no {ch!r} cell")

    def _state(self):
        return self.pos

    def _reset_state(self):
        self.pos = self.start

    def _base_frame(self):
        frame = np.zeros(self.frame_size)
        for r, c in self.walls:
            frame[r, c] = self.WALL
        frame[self.goal] = self.GOAL
        return frame

    def _draw(self, pos):
        frame = self._base_frame()
        frame[pos] = self.AGENT
        return frame

    def _move(self, pos, action):
        dr, dc = self.MOVES[action]
        r, c = pos[0] + dr, pos[1] + dc
        if not (0 <= r < self.height and 0 <= c < self.width) or (r, c) in self.walls:
            return pos
        return (r, c)

    def _transition(self, action):
        self.pos = self._move(self.pos, action)
        if self.pos == self.goal:
            return 1.0, True
        return 0.0, False


class LockedTreasure(GridMaze):
    """GridMaze whose chest ``G`` pays 1.0 only after the key ``K`` was visited.

    Without the key the chest is an ordinary floor cell. The key is drawn at 0.3
    until it is picked up, so the frame stays Markov.
    """

    name = "locked_treasure"

    def __init__(self, layout=None, gamma=0.99):
        super().__init__(layout=layout, gamma=gamma)
        self.key = self._find("K")
        self.has_key = False

    def _default_layout(self):
        return DEFAULT_TREASURE

    def _state(self):
        return (self.pos, self.has_key)

    def _reset_state(self):
        self.pos = self.start
        self.has_key = False

    def _draw(self, state):
        pos, has_key = state
        frame = self._base_frame()
        if not has_key:
            frame[self.key] = self.KEY
        frame[pos] = self.AGENT
        return frame

    def _transition(self, action):
        self.pos = self._move(self.pos, action)
        if self.pos == self.key:
            self.has_key = True
        if self.pos == self.goal and self.has_key:
            return 1.0, True
        return 0.0, False


ENVIRONMENTS = {cls.name: cls for cls in (PixelChain, GridMaze, LockedTreasure)}


def make_env(name, **params):
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise UnsupportedEnvError(f"unknown environment {name!r}; "
                                  f"choose from {sorted(ENVIRONMENTS)}") from None
    if "layout" in params and isinstance(params["layout"], str):
        params = dict(params, layout=params["layout"].split("/"))
    return cls(**params)


def optimal_return(env):
    """Largest undiscounted episode return of a built-in environment.

    Each built-in pays a single terminal reward of 1.0 on a reachable goal.
    """
    if isinstance(env, (PixelChain, GridMaze)):
        return 1.0
    raise UnsupportedEnvError(f"no analytic optimum for {type(env).__name__}")


def flatten(frame):
    return np.asarray(frame, dtype=np.float64).reshape(-1)


def write_pgm(path, frame):
    """Write a frame as a binary (P5) portable graymap with maxval 255."""
    frame = np.asarray(frame)
    pixels = np.clip(np.rint(frame * 255), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pixels = np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)
    return pixels / maxval
