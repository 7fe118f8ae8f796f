"""Rollout worker: task -> params -> episode -> segments -> outcome report."""
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .envs import EnvSpec, make_env
from .policy import (ActionDistribution, ParamBlob, action_distribution, sample_action,
                     value_estimate)
from .pool import ModelNotFound, PoolClient
from .proto import ErrorCode
from .proto.messages import InferenceRequest, OutcomeReport, SegmentPush, TaskRequest
from .records import ModelRecord, Outcome, Task, TrajectorySegment
from .rpc import RpcClient, RpcError

log = logging.getLogger(__name__)


class Step(NamedTuple):
    obs: np.ndarray
    action: int
    reward: float
    logp: float
    value: float
    done: bool


@dataclass
class ActorConfig:
    actor_id: int
    league_endpoint: str
    learner_endpoint: str
    model_pool_endpoints: Sequence[str]
    env: EnvSpec
    learner_group: int = 0
    unroll_len: Optional[int] = None
    param_refresh_interval: int = 1
    inference_mode: str = "local"
    infserver_endpoint: Optional[str] = None
    seed: int = 0
    incarnation: int = 0
    max_episodes: Optional[int] = None
    step_delay: float = 0.0
    retry_for: float = 60.0

    def __post_init__(self):
        if self.inference_mode not in ("local", "remote"):
            raise ValueError("inference_mode must be 'local' or 'remote'")
        if self.inference_mode == "remote" and not self.infserver_endpoint:
            raise ValueError("remote inference needs an inference-server endpoint")
        if self.unroll_len is not None and self.unroll_len < 1:
            raise ValueError("unroll_len must be >= 1")
        if self.param_refresh_interval < 1:
            raise ValueError("param_refresh_interval must be >= 1")


def segment_episode(steps: Sequence[Step], L: int, final_value: float, model_key: str,
                    actor_id: int = 0, incarnation: int = 0,
                    first_seq: int = 0) -> list[TrajectorySegment]:
    """Cut an episode into consecutive length-``L`` windows.

    A window's bootstrap is the value estimate of the step right after it, or
    ``final_value`` after the last step (0 for a finished episode).  The last
    window is zero-padded with ``mask == False``.
    """
    if not steps:
        raise ValueError("episode has no steps")
    obs_dim = len(steps[0].obs)
    out = []
    for k, start in enumerate(range(0, len(steps), L)):
        window = list(steps[start:start + L])
        n = len(window)
        bootstrap = steps[start + L].value if start + L < len(steps) else final_value
        pad = L - n
        obs = np.zeros((L, obs_dim))
        obs[:n] = [s.obs for s in window]
        fields = {
            "actions": [s.action for s in window] + [0] * pad,
            "rewards": [s.reward for s in window] + [0.0] * pad,
            "behavior_logps": [s.logp for s in window] + [0.0] * pad,
            "values": [s.value for s in window] + [0.0] * pad,
            "dones": [s.done for s in window] + [True] * pad,
            "mask": [True] * n + [False] * pad,
        }
        out.append(TrajectorySegment(model_key, actor_id, incarnation, first_seq + k, obs,
                                     bootstrap_value=float(bootstrap), **fields))
    return out


InferFn = Callable[[np.ndarray], tuple[ActionDistribution, float, str]]


def act(learner_params: ParamBlob, opponent_params: Sequence[ParamBlob], observations,
        rng: np.random.Generator, learner_slot: int = 0,
        infer: Optional[InferFn] = None) -> list[tuple[int, float, float]]:
    """Sample one action per agent slot; returns ``(action, logp, value)`` each.

    The learning agent sits in ``learner_slot``; opponents fill the remaining
    slots in order.  ``infer`` replaces local evaluation for the learning agent.
    """
    if len(observations) != 1 + len(opponent_params):
        raise ValueError("one parameter blob per agent slot is required")
    out = []
    opp = iter(opponent_params)
    for slot, obs in enumerate(observations):
        if slot == learner_slot:
            if infer is None:
                dist = action_distribution(learner_params, obs)
                value = value_estimate(learner_params, obs)
            else:
                dist, value, _ = infer(obs)
        else:
            dist, value = action_distribution(next(opp), obs), 0.0
        a, logp = sample_action(dist, rng)
        out.append((a, logp, value))
    return out


class Actor:
    def __init__(self, cfg: ActorConfig):
        self.cfg = cfg
        self.env = make_env(cfg.env)
        self.rng = np.random.default_rng([cfg.seed, cfg.actor_id, cfg.incarnation])
        self.league = RpcClient(cfg.league_endpoint, retry_for=cfg.retry_for)
        self.learner = RpcClient(cfg.learner_endpoint, retry_for=cfg.retry_for)
        self.pool = PoolClient(cfg.model_pool_endpoints, seed=cfg.seed + cfg.actor_id,
                               retry_for=cfg.retry_for)
        self.infserver = (RpcClient(cfg.infserver_endpoint, retry_for=cfg.retry_for)
                          if cfg.inference_mode == "remote" else None)
        self.stop_event = threading.Event()
        self._cache: dict[str, tuple[ModelRecord, int]] = {}
        self.next_seq = 0
        self.episodes = 0
        self.steps = 0
        self.segments_pushed = 0
        self.outcomes_reported = 0

    def stop(self) -> None:
        self.stop_event.set()

    def _params(self, key: str) -> ParamBlob:
        cached = self._cache.get(key)
        if cached is not None:
            record, fetched_at = cached
            if record.frozen or self.episodes - fetched_at < self.cfg.param_refresh_interval:
                return record.params
        record = self.pool.get(key)
        self._cache[key] = (record, self.episodes)
        return record.params

    def _remote_infer(self, obs: np.ndarray):
        rep = self.infserver.call(InferenceRequest(self.cfg.actor_id, np.asarray(obs, float)))
        return ActionDistribution(rep.logits, rep.probs, rep.log_probs), rep.value, rep.model_key

    def run_episode(self, task: Task) -> list[TrajectorySegment]:
        theta = self._params(task.learning_model_key)
        phis = [self._params(k) for k in task.opponent_model_keys]
        n_agents = 1 + len(phis)
        slot = self.episodes % n_agents
        used_key = task.learning_model_key
        infer = None
        if self.infserver is not None:
            def infer(obs):
                nonlocal used_key
                dist, value, key = self._remote_infer(obs)
                used_key = key
                return dist, value, key
        obs = self.env.reset()
        steps: list[Step] = []
        done = False
        info: dict = {}
        while not done:
            joint = act(theta, phis, obs, self.rng, slot, infer)
            result = self.env.step([a for a, _, _ in joint])
            if self.cfg.step_delay:
                time.sleep(self.cfg.step_delay)
            a, logp, value = joint[slot]
            steps.append(Step(np.asarray(obs[slot], dtype=np.float64), a,
                              float(result.rewards[slot]), logp, value, result.done))
            obs, done, info = result.observations, result.done, result.info
        self.steps += len(steps)
        L = self.cfg.unroll_len or task.hyperparams.unroll_len
        segments = segment_episode(steps, L, 0.0, used_key, self.cfg.actor_id,
                                   self.cfg.incarnation, self.next_seq)
        self.next_seq += len(segments)
        outcome = info["outcome"]
        self._last_outcomes = [outcome[slot]] + [o for i, o in enumerate(outcome) if i != slot]
        return segments

    def run_once(self) -> bool:
        """One full episode cycle; False once the league says training is over."""
        try:
            task = self.league.call(TaskRequest(self.cfg.actor_id, self.cfg.learner_group)).task
        except RpcError as exc:
            if exc.code == ErrorCode.RUN_FINISHED:
                return False
            raise
        try:
            segments = self.run_episode(task)
        except ModelNotFound:
            log.warning("actor %d: model missing, retrying task", self.cfg.actor_id)
            time.sleep(0.05)
            return True
        try:
            for seg in segments:
                self.learner.call(SegmentPush(seg))
                self.segments_pushed += 1
        except RpcError as exc:
            if exc.code == ErrorCode.RUN_FINISHED:
                return False
            raise
        try:
            self.league.call(OutcomeReport(task.task_id, tuple(map(Outcome.parse,
                                                                   self._last_outcomes))))
        except RpcError as exc:
            if exc.code == ErrorCode.RUN_FINISHED:
                return False
            if exc.code != ErrorCode.DUPLICATE:  # a retried report already landed
                raise
        self.outcomes_reported += 1
        self.episodes += 1
        return True

    def run(self) -> int:
        while not self.stop_event.is_set():
            if self.cfg.max_episodes is not None and self.episodes >= self.cfg.max_episodes:
                break
            if not self.run_once():
                break
        self.close()
        return 0

    def close(self) -> None:
        for c in (self.league, self.learner, self.infserver):
            if c is not None:
                c.close()
        self.pool.close()
