"""Return estimators, V-trace, PPO / V-trace losses with analytic gradients, SGD."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .policy import Family, ParamBlob, evaluate, tabular_index


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.01
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    kl_teacher_coef: float = 0.0
    rho_bar: float = 1.0
    c_bar: float = 1.0
    elo_sigma: float = 200.0
    batch_size: int = 32
    unroll_len: int = 1
    max_reuse: int = 1
    normalize_advantages: bool = True

    def __post_init__(self):
        checks = [
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (0 < self.gamma <= 1, "gamma must be in (0, 1]"),
            (0 <= self.lam <= 1, "lam must be in [0, 1]"),
            (self.clip_eps > 0, "clip_eps must be > 0"),
            (self.vf_coef >= 0 and self.ent_coef >= 0 and self.kl_teacher_coef >= 0,
             "loss coefficients must be >= 0"),
            (self.rho_bar > 0 and self.c_bar > 0, "rho_bar and c_bar must be > 0"),
            (self.c_bar <= self.rho_bar, "c_bar must not exceed rho_bar"),
            (self.elo_sigma > 0, "elo_sigma must be > 0"),
            (min(self.batch_size, self.unroll_len, self.max_reuse) >= 1,
             "batch_size, unroll_len and max_reuse must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)


def _check_lengths(*arrays):
    n = len(arrays[0])
    if n < 1:
        raise ValueError("segments must have at least one step")
    for a in arrays[1:]:
        if len(a) != n:
            raise ValueError(f"length mismatch: {n} vs {len(a)}")
    return n


def _discounts(dones, gamma):
    return gamma * (1.0 - np.asarray(dones, dtype=np.float64))


def lambda_return(rewards, values, bootstrap, dones, gamma, lam) -> np.ndarray:
    """Backward lambda-return; a done at step t cuts the bootstrap after t."""
    n = _check_lengths(rewards, values, dones)
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    disc = _discounts(dones, gamma)
    out = np.empty(n)
    next_return = float(bootstrap)
    next_value = float(bootstrap)
    for t in range(n - 1, -1, -1):
        out[t] = rewards[t] + disc[t] * ((1.0 - lam) * next_value + lam * next_return)
        next_return = out[t]
        next_value = values[t]
    return out


def gae_advantages(rewards, values, bootstrap, dones, gamma, lam) -> np.ndarray:
    n = _check_lengths(rewards, values, dones)
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    disc = _discounts(dones, gamma)
    adv = np.empty(n)
    acc = 0.0
    next_value = float(bootstrap)
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + disc[t] * next_value - values[t]
        acc = delta + disc[t] * lam * acc
        adv[t] = acc
        next_value = values[t]
    return adv


def vtrace_targets(behavior_logps, target_logps, rewards, values, bootstrap, dones,
                   gamma, rho_bar, c_bar) -> tuple[np.ndarray, np.ndarray]:
    """V-trace value targets and policy-gradient advantages."""
    n = _check_lengths(behavior_logps, target_logps, rewards, values, dones)
    behavior_logps = np.asarray(behavior_logps, dtype=np.float64)
    target_logps = np.asarray(target_logps, dtype=np.float64)
    if not (np.all(np.isfinite(behavior_logps)) and np.all(np.isfinite(target_logps))):
        raise ValueError("log-probabilities must be finite")
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    disc = _discounts(dones, gamma)
    ratio = np.exp(target_logps - behavior_logps)
    rhos = np.minimum(rho_bar, ratio)
    cs = np.minimum(c_bar, ratio)
    next_values = np.append(values[1:], float(bootstrap))
    deltas = rhos * (rewards + disc * next_values - values)
    vs = np.empty(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        acc = deltas[t] + disc[t] * cs[t] * acc
        vs[t] = values[t] + acc
    next_vs = np.append(vs[1:], float(bootstrap))
    pg_adv = rhos * (rewards + disc * next_vs - values)
    return vs, pg_adv


@dataclass
class Minibatch:
    """Flattened learner samples; ``mask`` marks real (non-padding) steps."""
    obs: np.ndarray
    actions: np.ndarray
    behavior_logps: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=np.float64))
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.behavior_logps = np.asarray(self.behavior_logps, dtype=np.float64)
        self.advantages = np.asarray(self.advantages, dtype=np.float64)
        self.value_targets = np.asarray(self.value_targets, dtype=np.float64)
        n = len(self.actions)
        self.mask = (np.ones(n, dtype=bool) if self.mask is None
                     else np.asarray(self.mask, dtype=bool))
        for name in ("obs", "behavior_logps", "advantages", "value_targets", "mask"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"minibatch field {name} has wrong length")

    @classmethod
    def concat(cls, parts) -> "Minibatch":
        return cls(*(np.concatenate([getattr(p, f.name) for p in parts])
                     for f in dataclasses.fields(cls)))


@dataclass
class LossStats:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    kl_teacher: float
    clip_fraction: float = 0.0
    mean_ratio: float = 1.0
    extra: dict = field(default_factory=dict)


def normalize(adv: np.ndarray, mask: np.ndarray) -> np.ndarray:
    valid = adv[mask]
    mean = valid.mean()
    std = max(valid.std(), 1e-8)
    return (adv - mean) / std


def _param_grad(params: ParamBlob, obs: np.ndarray, dlogits: np.ndarray,
                dvalue: np.ndarray) -> np.ndarray:
    rows = np.concatenate([dlogits, dvalue[:, None]], axis=1)
    grad = np.zeros(params.shape)
    if params.family == Family.TABULAR_SOFTMAX:
        np.add.at(grad, tabular_index(obs), rows)
    else:
        grad = obs.T @ rows
    return grad.reshape(-1)


def _regularizers(probs, logp, teacher_logp, ent_coef, kl_coef, weight):
    """Entropy bonus and teacher KL, returned as per-sample values and logit grads."""
    ent = -(probs * logp).sum(axis=1)
    dlogits = np.zeros_like(probs)
    if ent_coef:
        # d(-ent_coef * H)/dz = ent_coef * p * (log p + H)
        dlogits += ent_coef * probs * (logp + ent[:, None]) * weight[:, None]
    kl = np.zeros(len(probs))
    if teacher_logp is not None:
        kl = (probs * (logp - teacher_logp)).sum(axis=1)
        if kl_coef:
            dlogits += kl_coef * probs * (logp - teacher_logp - kl[:, None]) * weight[:, None]
    return ent, kl, dlogits


def _teacher_logp(teacher_params, hp, obs):
    if hp.kl_teacher_coef > 0 and teacher_params is None:
        raise ValueError("kl_teacher_coef > 0 needs a teacher policy")
    if teacher_params is None:
        return None
    return evaluate(teacher_params, obs)[2]


def ppo_loss_and_grad(params: ParamBlob, teacher_params: Optional[ParamBlob],
                      mb: Minibatch, hp: HyperParams) -> tuple[float, np.ndarray, LossStats]:
    """Clipped-surrogate PPO loss over the masked samples and its exact gradient.

    loss = -surrogate + vf_coef * MSE(value) - ent_coef * entropy
           + kl_teacher_coef * KL(pi || teacher), each averaged over valid samples.
    """
    if not np.all(np.isfinite(mb.advantages[mb.mask])):
        raise ValueError("non-finite advantage")
    teacher_logp = _teacher_logp(teacher_params, hp, mb.obs)
    _, probs, logp, values = evaluate(params, mb.obs)
    n_valid = int(mb.mask.sum())
    if n_valid == 0:
        raise ValueError("minibatch has no valid samples")
    weight = mb.mask / n_valid
    idx = np.arange(len(mb.actions))

    adv = normalize(mb.advantages, mb.mask) if hp.normalize_advantages else mb.advantages
    logp_a = logp[idx, mb.actions]
    ratio = np.exp(logp_a - mb.behavior_logps)
    clipped = np.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    use_unclipped = unclipped_term <= clipped_term
    surr = np.where(use_unclipped, unclipped_term, clipped_term)
    policy_loss = -(surr * weight).sum()

    onehot = np.zeros_like(probs)
    onehot[idx, mb.actions] = 1.0
    coef = np.where(use_unclipped, -adv * ratio, 0.0) * weight
    dlogits = coef[:, None] * (onehot - probs)

    verr = values - mb.value_targets
    value_loss = (verr ** 2 * weight).sum()
    dvalue = hp.vf_coef * 2.0 * verr * weight

    ent, kl, dreg = _regularizers(probs, logp, teacher_logp, hp.ent_coef,
                                  hp.kl_teacher_coef, weight)
    dlogits += dreg
    entropy = (ent * weight).sum()
    kl_mean = (kl * weight).sum()
    loss = policy_loss + hp.vf_coef * value_loss - hp.ent_coef * entropy + hp.kl_teacher_coef * kl_mean

    grad = _param_grad(params, mb.obs, dlogits, dvalue)
    m = mb.mask
    stats = LossStats(float(loss), float(policy_loss), float(value_loss), float(entropy),
                      float(kl_mean),
                      clip_fraction=float((np.abs(ratio[m] - 1.0) > hp.clip_eps).mean()),
                      mean_ratio=float(ratio[m].mean()))
    return float(loss), grad, stats


def vtrace_loss_and_grad(params: ParamBlob, teacher_params: Optional[ParamBlob],
                         mb: Minibatch, hp: HyperParams) -> tuple[float, np.ndarray, LossStats]:
    """Importance-weighted actor-critic loss: ``advantages`` are V-trace pg advantages,
    ``value_targets`` the V-trace ``vs``."""
    if not np.all(np.isfinite(mb.advantages[mb.mask])):
        raise ValueError("non-finite advantage")
    teacher_logp = _teacher_logp(teacher_params, hp, mb.obs)
    _, probs, logp, values = evaluate(params, mb.obs)
    n_valid = int(mb.mask.sum())
    if n_valid == 0:
        raise ValueError("minibatch has no valid samples")
    weight = mb.mask / n_valid
    idx = np.arange(len(mb.actions))
    logp_a = logp[idx, mb.actions]
    policy_loss = -(mb.advantages * logp_a * weight).sum()
    onehot = np.zeros_like(probs)
    onehot[idx, mb.actions] = 1.0
    dlogits = (-mb.advantages * weight)[:, None] * (onehot - probs)

    verr = values - mb.value_targets
    value_loss = (verr ** 2 * weight).sum()
    dvalue = hp.vf_coef * 2.0 * verr * weight
    ent, kl, dreg = _regularizers(probs, logp, teacher_logp, hp.ent_coef,
                                  hp.kl_teacher_coef, weight)
    dlogits += dreg
    entropy = (ent * weight).sum()
    kl_mean = (kl * weight).sum()
    loss = policy_loss + hp.vf_coef * value_loss - hp.ent_coef * entropy + hp.kl_teacher_coef * kl_mean
    grad = _param_grad(params, mb.obs, dlogits, dvalue)
    ratio = np.exp(logp_a - mb.behavior_logps)[mb.mask]
    stats = LossStats(float(loss), float(policy_loss), float(value_loss), float(entropy),
                      float(kl_mean), clip_fraction=float((ratio > hp.rho_bar).mean()),
                      mean_ratio=float(ratio.mean()))
    return float(loss), grad, stats


def sgd_step(params: ParamBlob, grad: np.ndarray, learning_rate: float) -> ParamBlob:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ValueError(f"gradient length {grad.size} != parameter length {params.values.size}")
    return params.with_values(params.values - learning_rate * grad)
