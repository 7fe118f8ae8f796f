"""Per-model hyperparameter registry with optional learning-rate perturbation."""
from __future__ import annotations

import numpy as np

from ..rlmath import HyperParams

PERTURB_FACTORS = (0.8, 1.0, 1.25)


def perturb_hyper(hp: HyperParams, rng: np.random.Generator) -> HyperParams:
    factor = PERTURB_FACTORS[int(rng.integers(len(PERTURB_FACTORS)))]
    return hp if factor == 1.0 else hp.replace(learning_rate=hp.learning_rate * factor)


class HyperMgr:
    def __init__(self, perturb: bool = False, seed: int = 0):
        self.perturb = perturb
        self.rng = np.random.default_rng(seed)
        self._by_key: dict[str, HyperParams] = {}

    def set(self, key: str, hp: HyperParams) -> None:
        self._by_key[key] = hp

    def get(self, key: str) -> HyperParams:
        return self._by_key[key]

    def successor(self, key: str) -> HyperParams:
        hp = self._by_key[key]
        return perturb_hyper(hp, self.rng) if self.perturb else hp
