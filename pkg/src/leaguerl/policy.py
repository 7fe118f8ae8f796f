"""Tabular-softmax and linear-softmax policies with a linear value head.

A :class:`ParamBlob` stores one weight matrix of shape ``(n_inputs, n_actions + 1)``
in row-major order.  The first ``n_actions`` columns produce action logits, the
last column is the value head.  For the tabular family the observation must be
a one-hot vector and selects a single row; for the linear family logits are the
weighted sum of the observation features.

All evaluation is written as element-wise loops over the (small) input and
action dimensions so that the result for one observation is bit-identical no
matter how many other observations are evaluated in the same batch.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class Family(enum.IntEnum):
    TABULAR_SOFTMAX = 0
    LINEAR_SOFTMAX = 1

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        if isinstance(name, int):
            return cls(name)
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown policy family {name!r}") from None


class ShapeError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParamBlob:
    family: Family
    shape: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        values = self.values
        if not (isinstance(values, np.ndarray) and values.dtype == np.float64 and not values.flags.writeable):
            values = _frozen(values)
        object.__setattr__(self, "values", values.reshape(-1))
        if len(self.shape) != 2 or self.shape[0] < 1 or self.shape[1] < 2:
            raise ShapeError(f"blob shape must be (n_inputs, n_actions + 1), got {self.shape}")
        if self.values.size != self.shape[0] * self.shape[1]:
            raise ShapeError(f"{self.values.size} values do not fill shape {self.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter values must be finite")

    @property
    def n_inputs(self) -> int:
        return self.shape[0]

    @property
    def n_actions(self) -> int:
        return self.shape[1] - 1

    @property
    def matrix(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def with_values(self, values) -> "ParamBlob":
        return ParamBlob(self.family, self.shape, values)

    def __eq__(self, other):
        if not isinstance(other, ParamBlob):
            return NotImplemented
        return (self.family == other.family and self.shape == other.shape
                and self.values.tobytes() == other.values.tobytes())

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ActionDistribution:
    logits: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, ActionDistribution):
            return NotImplemented
        return all(a.tobytes() == b.tobytes() for a, b in
                   ((self.logits, other.logits), (self.probs, other.probs),
                    (self.log_probs, other.log_probs)))

    __hash__ = None

    def tobytes(self) -> bytes:
        return self.logits.tobytes() + self.probs.tobytes() + self.log_probs.tobytes()


def init_params(family, shape: Sequence[int], init_scale: float, seed: int) -> ParamBlob:
    """Random seed policy.

    ``shape`` is ``(n_inputs, n_actions)``; the value column is added here.
    Every weight, value head included, is drawn uniformly from
    ``[-init_scale, init_scale]``; ``init_scale == 0`` gives the uniform policy.
    """
    if init_scale < 0:
        raise ValueError("init_scale must be >= 0")
    if len(shape) != 2 or int(shape[0]) < 1 or int(shape[1]) < 1:
        raise ShapeError(f"policy shape must be (n_inputs, n_actions), got {tuple(shape)}")
    n_in, n_act = int(shape[0]), int(shape[1])
    rng = np.random.default_rng(seed)
    values = rng.uniform(-init_scale, init_scale, size=n_in * (n_act + 1))
    if init_scale == 0:
        values = np.zeros_like(values)
    return ParamBlob(Family.parse(family), (n_in, n_act + 1), values)


def _as_batch(params: ParamBlob, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        obs = obs[None, :]
    if obs.ndim != 2 or obs.shape[1] != params.n_inputs:
        raise ShapeError(f"observation width {obs.shape[-1]} does not match "
                         f"blob with {params.n_inputs} inputs")
    return obs


def tabular_index(obs: np.ndarray) -> np.ndarray:
    """Row index of each one-hot observation; anything else is rejected."""
    hot = obs == 1.0
    cold = obs == 0.0
    if not np.all(hot | cold) or not np.all(hot.sum(axis=1) == 1):
        raise ShapeError("tabular policy needs one-hot observations")
    return np.argmax(hot, axis=1)


def _linear(obs: np.ndarray, w: np.ndarray) -> np.ndarray:
    # input-ordered accumulation, independent of batch size
    out = np.zeros((obs.shape[0], w.shape[1]))
    for i in range(w.shape[0]):
        out += obs[:, i:i + 1] * w[i]
    return out


def _heads(params: ParamBlob, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = params.matrix
    if params.family == Family.TABULAR_SOFTMAX:
        rows = w[tabular_index(obs)]
    else:
        rows = _linear(obs, w)
    return rows[:, :-1], rows[:, -1]


def log_softmax(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (probs, log_probs) with sequential summation over actions."""
    logits = np.atleast_2d(logits)
    m = logits[:, 0].copy()
    for k in range(1, logits.shape[1]):
        m = np.maximum(m, logits[:, k])
    shifted = logits - m[:, None]
    e = np.exp(shifted)
    s = e[:, 0].copy()
    for k in range(1, e.shape[1]):
        s = s + e[:, k]
    return e / s[:, None], shifted - np.log(s)[:, None]


def evaluate(params: ParamBlob, obs) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Batched forward pass: ``(logits, probs, log_probs, values)``."""
    obs = _as_batch(params, obs)
    logits, values = _heads(params, obs)
    probs, logp = log_softmax(logits)
    return logits, probs, logp, values


def action_distribution(params: ParamBlob, obs) -> ActionDistribution:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ShapeError("action_distribution takes a single observation vector")
    logits, probs, logp, _ = evaluate(params, obs)
    return ActionDistribution(logits[0], probs[0], logp[0])


def value_estimate(params: ParamBlob, obs) -> float:
    return float(evaluate(params, obs)[3][0])


def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> tuple[int, float]:
    u = rng.random()
    acc = 0.0
    action = None
    for k, p in enumerate(dist.probs):
        acc += p
        if p > 0 and u < acc:
            action = k
            break
    if action is None:  # rounding left u above the running total
        action = int(np.flatnonzero(dist.probs > 0)[-1])
    return action, float(dist.log_probs[action])


def policy_grad_logp(params: ParamBlob, obs, action: int) -> np.ndarray:
    """Gradient of ``log pi(action | obs)`` with respect to ``params.values``."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ShapeError("policy_grad_logp takes a single observation vector")
    if not 0 <= action < params.n_actions:
        raise ValueError(f"action {action} out of range")
    _, probs, _, _ = evaluate(params, obs)
    dlogits = -probs[0]
    dlogits[action] += 1.0
    grad = np.zeros(params.shape)
    if params.family == Family.TABULAR_SOFTMAX:
        grad[tabular_index(obs[None])[0], :-1] = dlogits
    else:
        grad[:, :-1] = np.outer(obs, dlogits)
    return grad.reshape(-1)


def blob_from_logits(logits: Sequence[float], family=Family.TABULAR_SOFTMAX) -> ParamBlob:
    """One-input blob with fixed logits and zero value head (fixed strategies)."""
    logits = list(map(float, logits))
    return ParamBlob(family, (1, len(logits) + 1), logits + [0.0])
