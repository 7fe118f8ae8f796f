"""Payoff bookkeeping, Elo ratings and opponent sampling."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..records import Outcome

DEFAULT_ELO = 1200.0


class Scheme(str, enum.Enum):
    SELF_PLAY_LATEST = "self_play_latest"
    UNIFORM_RECENT_K = "uniform_recent_K"
    PFSP = "pfsp"
    MIXTURE = "mixture"


class EmptyCandidates(ValueError):
    pass


@dataclass(frozen=True)
class SamplingScheme:
    scheme: Scheme = Scheme.UNIFORM_RECENT_K
    K: int = 50
    pfsp_exponent: float = 2.0
    mixture_self_play_weight: float = 0.35
    elo_sigma: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.pfsp_exponent <= 0:
            raise ValueError("pfsp_exponent must be > 0")
        if not 0 <= self.mixture_self_play_weight <= 1:
            raise ValueError("mixture_self_play_weight must be in [0, 1]")
        if self.elo_sigma is not None and self.elo_sigma <= 0:
            raise ValueError("elo_sigma must be > 0")


def elo_expected(elo_i: float, elo_j: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((elo_j - elo_i) / 400.0))


def elo_update(elo_i: float, elo_j: float, score_i: float, k_factor: float = 16.0):
    """Logistic Elo; the change to ``i`` is exactly the negative of ``j``'s."""
    if not (math.isfinite(elo_i) and math.isfinite(elo_j)):
        raise ValueError("Elo ratings must be finite")
    delta = k_factor * (score_i - elo_expected(elo_i, elo_j))
    return elo_i + delta, elo_j - delta


class PayoffMatrix:
    """Win/loss/tie counts for ordered model pairs (row = learning side)."""

    def __init__(self, k_factor: float = 16.0):
        self.keys: list[str] = []
        self.index: dict[str, int] = {}
        self.k_factor = k_factor
        self.elo: dict[str, float] = {}
        self._counts = np.zeros((3, 0, 0), dtype=np.int64)

    @property
    def wins(self) -> np.ndarray:
        return self._counts[Outcome.WIN]

    @property
    def losses(self) -> np.ndarray:
        return self._counts[Outcome.LOSS]

    @property
    def ties(self) -> np.ndarray:
        return self._counts[Outcome.TIE]

    def add(self, key: str, elo: float = DEFAULT_ELO) -> None:
        if key in self.index:
            return
        self.index[key] = len(self.keys)
        self.keys.append(key)
        self.elo[key] = elo
        n = len(self.keys)
        grown = np.zeros((3, n, n), dtype=np.int64)
        grown[:, :n - 1, :n - 1] = self._counts
        self._counts = grown

    def record(self, key_i: str, key_j: str, outcome_i) -> None:
        """Count one game of ``i`` (learning side) against ``j``."""
        outcome_i = Outcome.parse(outcome_i)
        i, j = self.index[key_i], self.index[key_j]
        mirrored = {Outcome.WIN: Outcome.LOSS, Outcome.LOSS: Outcome.WIN,
                    Outcome.TIE: Outcome.TIE}[outcome_i]
        self._counts[outcome_i, i, j] += 1
        self._counts[mirrored, j, i] += 1
        if key_i != key_j:
            self.elo[key_i], self.elo[key_j] = elo_update(
                self.elo[key_i], self.elo[key_j], outcome_i.score, self.k_factor)

    def games(self, key_i: str, key_j: str) -> tuple[int, int, int]:
        i, j = self.index[key_i], self.index[key_j]
        return tuple(int(c) for c in self._counts[:, i, j])

    def winrate(self, key_i: str, key_j: str) -> float:
        """Add-one smoothed win rate of ``i`` against ``j``; ties count half."""
        w, l, t = self.games(key_i, key_j)
        return (w + t / 2 + 1) / (w + l + t + 2)

    def winrates(self, key_i: str, keys: Sequence[str]) -> np.ndarray:
        """:meth:`winrate` against each of ``keys`` at once."""
        i = self.index[key_i]
        cols = [self.index[k] for k in keys]
        w, l, t = (self._counts[o, i, cols].astype(np.float64) for o in Outcome)
        return (w + t / 2 + 1) / (w + l + t + 2)


def opponent_weights(payoff: PayoffMatrix, current_key: str, frozen_keys: Sequence[str],
                     scheme: SamplingScheme) -> dict[str, float]:
    """Analytic opponent distribution; keys in ``frozen_keys`` order, current last."""
    if scheme.scheme is Scheme.SELF_PLAY_LATEST:
        return {current_key: 1.0}
    if not frozen_keys:
        raise EmptyCandidates("no frozen models to sample opponents from")
    if scheme.scheme is Scheme.UNIFORM_RECENT_K:
        cands = list(frozen_keys)[-scheme.K:]
        raw = np.ones(len(cands))
    else:
        cands = list(frozen_keys)
        raw = (1.0 - payoff.winrates(current_key, cands)) ** scheme.pfsp_exponent
    if scheme.elo_sigma is not None:
        me = payoff.elo.get(current_key, DEFAULT_ELO)
        d = np.array([payoff.elo.get(k, DEFAULT_ELO) - me for k in cands])
        raw = raw * np.exp(-d * d / (2.0 * scheme.elo_sigma ** 2))
    total = raw.sum()
    if not total > 0:
        raw, total = np.ones(len(cands)), float(len(cands))
    weights = {k: float(w / total) for k, w in zip(cands, raw)}
    if scheme.scheme is Scheme.MIXTURE:
        sp = scheme.mixture_self_play_weight
        weights = {k: (1.0 - sp) * w for k, w in weights.items()}
        weights[current_key] = weights.get(current_key, 0.0) + sp
    return weights


def sample_opponent(payoff: PayoffMatrix, current_key: str, frozen_keys: Sequence[str],
                    scheme: SamplingScheme, rng: np.random.Generator) -> str:
    weights = opponent_weights(payoff, current_key, frozen_keys, scheme)
    u = rng.random()
    acc = 0.0
    last = None
    for key, w in weights.items():
        if w <= 0:
            continue
        acc += w
        last = key
        if u < acc:
            return key
    return last
