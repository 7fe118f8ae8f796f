"""Head-to-head evaluation and exact exploitability for one-shot matrix games."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..envs import Env, EnvSpec, MatrixGame, default_spec, make_env
from ..policy import ParamBlob, action_distribution, evaluate as forward, sample_action
from ..pool import import_model
from ..records import ModelRecord


@dataclass(frozen=True)
class EvalReport:
    key_a: str
    key_b: str
    n_episodes: int
    wins: int
    losses: int
    ties: int
    exploitability: Optional[float] = None

    @property
    def win_rate(self) -> float:
        """Ties count as half a win."""
        return (self.wins + 0.5 * self.ties) / self.n_episodes if self.n_episodes else 0.0

    def line(self) -> str:
        text = (f"a={self.key_a} b={self.key_b} n={self.n_episodes} wins={self.wins} "
                f"losses={self.losses} ties={self.ties} win_rate={self.win_rate:.4f}")
        if self.exploitability is not None:
            text += f" exploitability={self.exploitability:.6f}"
        return text


def matrix_policy(params: ParamBlob, env: Env) -> np.ndarray:
    """Action probabilities of a blob in a one-shot matrix game."""
    if not isinstance(env, MatrixGame) or env.horizon != 1:
        raise ValueError("exploitability needs a one-shot matrix game")
    return forward(params, env.reset()[0])[1][0]


def best_response_value(probs: Sequence[float], payoff_table) -> float:
    """Best payoff the column player can get against row strategy ``probs``.

    For a zero-sum table ``A`` (row player's payoff) the column player earns
    ``-A``; a general-sum ``A x A x 2`` table supplies the column payoff directly.
    """
    table = np.asarray(payoff_table, dtype=np.float64)
    col_payoff = -table if table.ndim == 2 else table[:, :, 1]
    return float(np.max(np.asarray(probs, dtype=np.float64) @ col_payoff))


def exploitability(params: "ParamBlob | Sequence[float]", env: "Env | EnvSpec | str") -> float:
    if not isinstance(env, Env):
        env = make_env(env)
    if not isinstance(env, MatrixGame) or env.horizon != 1:
        raise ValueError("exploitability needs a one-shot matrix game")
    probs = matrix_policy(params, env) if isinstance(params, ParamBlob) else params
    table = env.payoff_table if env.zero_sum else np.stack([env.payoff_table, env._col_payoff.T], -1)
    return best_response_value(probs, table)


def average_policy(blobs: Sequence[ParamBlob], env: Env) -> np.ndarray:
    """Mixture of several matrix-game policies, each weighted equally."""
    return np.mean([matrix_policy(b, env) for b in blobs], axis=0)


def play(blob_a: ParamBlob, blob_b: ParamBlob, env: Env, n_episodes: int,
         seed: int) -> tuple[int, int, int]:
    """Side-balanced match; returns a's (wins, losses, ties).

    Episodes ``2m`` and ``2m+1`` share one random stream with the seats swapped,
    so swapping ``a`` and ``b`` exactly swaps wins and losses for even ``n``.
    """
    counts = {"win": 0, "loss": 0, "tie": 0}
    for k in range(n_episodes):
        rng = np.random.default_rng((seed, k // 2))
        seat_a = k % 2
        seats = [blob_a, blob_b] if seat_a == 0 else [blob_b, blob_a]
        obs = env.reset(seed=seed * 1_000_003 + k // 2)
        while True:
            actions = [sample_action(action_distribution(blob, o), rng)[0]
                       for blob, o in zip(seats, obs)]
            result = env.step(actions)
            obs = result.observations
            if result.done:
                counts[result.info["outcome"][seat_a]] += 1
                break
    return counts["win"], counts["loss"], counts["tie"]


def load_blob(ref: str, run_dir=None, pool=None) -> tuple[str, ModelRecord]:
    """Resolve a model file path, a key exported in ``run_dir``, or a pool key."""
    from .launch import model_filename
    path = Path(ref)
    if path.is_file():
        rec = import_model(path)
        return rec.model_key, rec
    if run_dir is not None:
        candidate = Path(run_dir) / "models" / model_filename(ref)
        if candidate.is_file():
            return ref, import_model(candidate)
    if pool is not None:
        return ref, pool.get(ref)
    raise FileNotFoundError(f"no model file or exported key {ref!r}")


def evaluate(a: "str | ParamBlob", b: "str | ParamBlob", env: "str | EnvSpec" = "rps",
             n_episodes: int = 100, seed: int = 0, run_dir=None, pool=None) -> EvalReport:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    spec = default_spec(env) if isinstance(env, str) else env
    game = make_env(spec)
    blobs, names = [], []
    for ref in (a, b):
        if isinstance(ref, ParamBlob):
            blobs.append(ref)
            names.append("<blob>")
        else:
            key, rec = load_blob(ref, run_dir, pool)
            blobs.append(rec.params)
            names.append(key)
    wins, losses, ties = play(blobs[0], blobs[1], game, n_episodes, seed)
    expl = None
    if isinstance(game, MatrixGame) and game.horizon == 1:
        expl = exploitability(blobs[0], game)
    return EvalReport(names[0], names[1], n_episodes, wins, losses, ties, expl)
