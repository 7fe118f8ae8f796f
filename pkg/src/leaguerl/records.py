"""Plain data records shared by the services: pool entries, tasks, segments."""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .policy import ParamBlob
from .rlmath import HyperParams


class Outcome(enum.IntEnum):
    WIN = 0
    LOSS = 1
    TIE = 2

    @property
    def score(self) -> float:
        return {Outcome.WIN: 1.0, Outcome.LOSS: 0.0, Outcome.TIE: 0.5}[self]

    @classmethod
    def parse(cls, value) -> "Outcome":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(value)


def parse_key(model_key: str) -> tuple[str, int]:
    """Split ``"{lineage}:{generation:04d}"``."""
    lineage, _, gen = model_key.rpartition(":")
    if not lineage or not gen.isdigit():
        raise ValueError(f"malformed model key {model_key!r}")
    return lineage, int(gen)


def make_key(lineage: str, generation: int) -> str:
    return f"{lineage}:{generation:04d}"


@dataclass(frozen=True, eq=True)
class ModelRecord:
    model_key: str
    params: ParamBlob
    hyperparams: HyperParams
    parent_key: Optional[str] = None
    created_at: float = 0.0
    frozen: bool = False
    version: int = 0

    def replace(self, **changes) -> "ModelRecord":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Task:
    task_id: int
    learner_group: int
    learning_model_key: str
    opponent_model_keys: tuple = ()
    hyperparams: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        object.__setattr__(self, "opponent_model_keys", tuple(self.opponent_model_keys))


def _arr(a, dtype):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TrajectorySegment:
    """``L`` consecutive learning-agent steps; padded steps have ``mask == False``."""
    model_key: str
    actor_id: int
    incarnation: int
    segment_seq: int
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_logps: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    mask: np.ndarray
    bootstrap_value: float = 0.0

    def __post_init__(self):
        for name, dtype in (("obs", np.float64), ("actions", np.int64), ("rewards", np.float64),
                            ("behavior_logps", np.float64), ("values", np.float64),
                            ("dones", bool), ("mask", bool)):
            object.__setattr__(self, name, _arr(getattr(self, name), dtype))
        if self.obs.ndim != 2:
            raise ValueError("segment obs must be (L, obs_dim)")
        n = self.obs.shape[0]
        for name in ("actions", "rewards", "behavior_logps", "values", "dones", "mask"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"segment field {name} must have length {n}")

    @property
    def length(self) -> int:
        return self.obs.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def __eq__(self, other):
        if not isinstance(other, TrajectorySegment):
            return NotImplemented
        for f in dataclasses.fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or a.tobytes() != b.tobytes():
                    return False
            elif isinstance(a, float):
                if np.float64(a).tobytes() != np.float64(b).tobytes():
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None
