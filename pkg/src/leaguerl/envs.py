"""Two-player environments with the reset/step contract used by actors.

``reset()`` returns one observation per agent; ``step(actions)`` returns a
:class:`StepResult`.  When an episode ends ``info["outcome"]`` holds one of
``"win" | "loss" | "tie"`` per agent.  All agents of an env share one
observation shape and one action count.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

RPS_PAYOFF = np.array([[0.0, -1.0, 1.0],
                       [1.0, 0.0, -1.0],
                       [-1.0, 1.0, 0.0]])
ROCK, PAPER, SCISSORS = 0, 1, 2


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    env_name: str
    n_agents: int = 2
    horizon: int = 1
    payoff_table: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_agents < 2:
            raise EnvError("n_agents must be at least 2")
        if self.horizon < 1:
            raise EnvError("horizon must be at least 1")
        if self.payoff_table is not None:
            table = np.asarray(self.payoff_table, dtype=np.float64)
            if not np.all(np.isfinite(table)):
                raise EnvError("payoff_table must be finite")
            object.__setattr__(self, "payoff_table",
                               tuple(map(tuple, table.reshape(table.shape[0], -1).tolist()))
                               if table.ndim == 2 else _nested(table))


def _nested(a: np.ndarray):
    return tuple(_nested(x) for x in a) if a.ndim > 1 else tuple(a.tolist())


@dataclass
class StepResult:
    observations: list
    rewards: list
    done: bool
    info: dict = field(default_factory=dict)


def outcomes_from_returns(returns) -> list[str]:
    """Per-agent outcome by comparing each agent's return with the best rival."""
    out = []
    for i, r in enumerate(returns):
        rival = max(x for j, x in enumerate(returns) if j != i)
        out.append("win" if r > rival else "loss" if r < rival else "tie")
    return out


class Env:
    n_agents = 2
    n_actions: int
    obs_dim: int
    zero_sum = True

    def __init__(self, spec: EnvSpec):
        if spec.n_agents != 2:
            raise EnvError(f"{spec.env_name} is a two-player game")
        self.spec = spec
        self.horizon = spec.horizon
        self.rng = np.random.default_rng(spec.seed)
        self.t = 0
        self.done = True
        self.returns = [0.0, 0.0]

    def reset(self, seed: Optional[int] = None) -> list[np.ndarray]:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self.done = False
        self.returns = [0.0, 0.0]
        self._reset_state()
        return self._observe()

    def step(self, actions) -> StepResult:
        if self.done:
            raise EnvError("step called after episode end; call reset()")
        if len(actions) != self.n_agents:
            raise EnvError(f"expected {self.n_agents} actions, got {len(actions)}")
        acts = []
        for a in actions:
            if isinstance(a, (bool, np.bool_)) or not 0 <= int(a) < self.n_actions or int(a) != a:
                raise EnvError(f"action {a!r} outside [0, {self.n_actions})")
            acts.append(int(a))
        rewards, terminal = self._transition(acts)
        self.t += 1
        self.returns = [x + r for x, r in zip(self.returns, rewards)]
        self.done = terminal or self.t >= self.horizon
        info = {"t": self.t}
        if self.done:
            info["outcome"] = outcomes_from_returns(self.returns)
        return StepResult(self._observe(), rewards, self.done, info)

    def _reset_state(self) -> None:
        pass

    def _observe(self) -> list[np.ndarray]:
        raise NotImplementedError

    def _transition(self, actions: list[int]) -> tuple[list[float], bool]:
        raise NotImplementedError


def _payoffs(spec: EnvSpec, default=RPS_PAYOFF) -> tuple[np.ndarray, np.ndarray, bool]:
    table = default if spec.payoff_table is None else np.asarray(spec.payoff_table, dtype=np.float64)
    if table.ndim == 2:
        if table.shape[0] != table.shape[1]:
            raise EnvError("payoff_table must be square so both agents share one action set")
        return table, -table.T, True
    if table.ndim == 3 and table.shape[2] == 2 and table.shape[0] == table.shape[1]:
        return table[:, :, 0], table[:, :, 1].T, False
    raise EnvError("payoff_table must be A x A (zero-sum) or A x A x 2 (general-sum)")


class MatrixGame(Env):
    """One-shot matrix game; the observation is the constant vector ``[1.0]``.

    A 2-D table gives the row player's payoff and the column player receives its
    negation.  A 3-D ``A x A x 2`` table gives both payoffs (general-sum).
    """
    obs_dim = 1

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.horizon = 1
        self.payoff_table, self._col_payoff, self.zero_sum = _payoffs(spec)
        self.n_actions = self.payoff_table.shape[0]

    def _observe(self):
        return [np.ones(1), np.ones(1)]

    def _transition(self, actions):
        a, b = actions
        r0 = float(self.payoff_table[a, b])
        r1 = -r0 if self.zero_sum else float(self._col_payoff[b, a])
        return [r0, r1], True


class IteratedMatrixGame(MatrixGame):
    """Repeated matrix game; each agent observes the previous joint action.

    Observation index 0 means "no previous round", index ``1 + own*A + other``
    otherwise, one-hot encoded.
    """

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.horizon = spec.horizon
        self.obs_dim = 1 + self.n_actions ** 2
        self.last = None

    def _reset_state(self):
        self.last = None

    def _observe(self):
        obs = [np.zeros(self.obs_dim), np.zeros(self.obs_dim)]
        if self.last is None:
            obs[0][0] = obs[1][0] = 1.0
        else:
            a, b = self.last
            obs[0][1 + a * self.n_actions + b] = 1.0
            obs[1][1 + b * self.n_actions + a] = 1.0
        return obs

    def _transition(self, actions):
        rewards, _ = super()._transition(actions)
        self.last = tuple(actions)
        return rewards, False


class GridDuel(Env):
    """Two shooters on a 5x5 board.

    Actions: 0 idle, 1 up, 2 down, 3 left, 4 right, 5 fire.  A shot hits when
    the target shares a row or column within distance 2.  Shots resolve before
    movement; mutual hits and the horizon both end in a tie.  Moves into the
    same cell cancel.  Observation: own cell one-hot, opponent cell one-hot,
    then a constant 1.
    """
    SIZE = 5
    RANGE = 2
    n_actions = 6
    obs_dim = 2 * SIZE * SIZE + 1
    MOVES = {1: (-1, 0), 2: (1, 0), 3: (0, -1), 4: (0, 1)}

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.pos = [(0, 0), (0, 0)]

    def _reset_state(self):
        cells = self.rng.choice(self.SIZE * self.SIZE, size=2, replace=False)
        self.pos = [divmod(int(c), self.SIZE) for c in cells]

    def _observe(self):
        n = self.SIZE * self.SIZE
        out = []
        for i in (0, 1):
            v = np.zeros(self.obs_dim)
            me, other = self.pos[i], self.pos[1 - i]
            v[me[0] * self.SIZE + me[1]] = 1.0
            v[n + other[0] * self.SIZE + other[1]] = 1.0
            v[-1] = 1.0
            out.append(v)
        return out

    def _hits(self, shooter: int) -> bool:
        (r0, c0), (r1, c1) = self.pos[shooter], self.pos[1 - shooter]
        return (r0 == r1 or c0 == c1) and abs(r0 - r1) + abs(c0 - c1) <= self.RANGE

    def _transition(self, actions):
        hit = [a == 5 and self._hits(i) for i, a in enumerate(actions)]
        if hit[0] != hit[1]:
            return ([1.0, -1.0] if hit[0] else [-1.0, 1.0]), True
        if hit[0]:
            return [0.0, 0.0], True
        target = []
        for (r, c), a in zip(self.pos, actions):
            dr, dc = self.MOVES.get(a, (0, 0))
            target.append((min(max(r + dr, 0), self.SIZE - 1), min(max(c + dc, 0), self.SIZE - 1)))
        if target[0] != target[1] and not (target[0] == self.pos[1] and target[1] == self.pos[0]):
            self.pos = target
        return [0.0, 0.0], False


ENV_REGISTRY: dict[str, Callable[[EnvSpec], Env]] = {
    "rps": MatrixGame,
    "matrix": MatrixGame,
    "iterated_rps": IteratedMatrixGame,
    "iterated_matrix": IteratedMatrixGame,
    "grid_duel": GridDuel,
}

DEFAULT_HORIZON = {"iterated_rps": 10, "iterated_matrix": 10, "grid_duel": 20}


def register_env(name: str, factory: Callable[[EnvSpec], Env]) -> None:
    ENV_REGISTRY[name] = factory


def make_env(spec: "EnvSpec | str") -> Env:
    if isinstance(spec, str):
        spec = default_spec(spec)
    try:
        factory = ENV_REGISTRY[spec.env_name]
    except KeyError:
        raise EnvError(f"unknown env {spec.env_name!r}; known: {sorted(ENV_REGISTRY)}") from None
    if spec.env_name == "matrix" and spec.payoff_table is None:
        raise EnvError("env 'matrix' needs a payoff_table")
    return factory(spec)


def default_spec(name: str, seed: int = 0, **overrides) -> EnvSpec:
    fields = {"horizon": DEFAULT_HORIZON.get(name, 1), "seed": seed}
    fields.update(overrides)
    return EnvSpec(name, **fields)
