"""Learner group: segment ingest, replay memory with reuse limit, synchronized
shard updates, parameter publishing, and learning-period rollover.

The M_L shards of a group are threads of one process.  Each shard owns an
ingest endpoint and a replay memory fed by its own actors.  Every update step
all shards compute a gradient on their own minibatch, meet at a barrier, and
the barrier action averages the gradients in rank order, applies SGD, publishes
and, when due, ends the learning period.  Every shard thus sees the same
parameters at every step.
"""
from __future__ import annotations

import collections
import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .policy import ParamBlob, evaluate
from .proto import ErrorCode, Kind
from .proto.messages import Empty, EndLearningPeriod, LearnerTaskRequest, SegmentPush
from .records import ModelRecord, Task, TrajectorySegment
from .rlmath import (HyperParams, LossStats, Minibatch, gae_advantages, lambda_return,
                     ppo_loss_and_grad, sgd_step, vtrace_loss_and_grad, vtrace_targets)
from .rpc import RpcClient, RpcError, RpcServer

log = logging.getLogger(__name__)

ALGOS = ("ppo", "vtrace")


class MemoryClosed(Exception):
    pass


class ReplayMem:
    """FIFO ring of segments, each usable at most ``max_reuse`` times.

    ``sample`` blocks until ``n`` eligible segments exist; this blocking is what
    keeps PPO on-policy when ``max_reuse == 1``.  Counters are in frames
    (unpadded steps).
    """

    def __init__(self, capacity: int, max_reuse: int):
        if capacity < 1 or max_reuse < 1:
            raise ValueError("capacity and max_reuse must be >= 1")
        self.capacity = capacity
        self.max_reuse = max_reuse
        self._entries: collections.OrderedDict[int, list] = collections.OrderedDict()
        self._next_id = 0
        self._cond = threading.Condition()
        self._closed = False
        self.frames_in = 0
        self.frames_used = 0
        self.evicted_unused = 0
        # lockstep bookkeeping: newest entry id the sampler saw before blocking
        self._blocked_seen = -1
        self._sampler_blocked = False

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, segment: TrajectorySegment) -> int:
        with self._cond:
            if self._closed:
                raise MemoryClosed()
            while len(self._entries) >= self.capacity:
                _, (old, uses) = self._entries.popitem(last=False)
                if uses == 0:
                    self.evicted_unused += 1
            eid = self._next_id
            self._next_id += 1
            self._entries[eid] = [segment, 0]
            self.frames_in += segment.n_valid
            self._cond.notify_all()
            return eid

    def eligible(self) -> int:
        with self._cond:
            return len(self._entries)

    def sample(self, n: int, rng: np.random.Generator,
               timeout: Optional[float] = None) -> list[TrajectorySegment]:
        """Draw ``n`` distinct segments uniformly; blocks until enough exist."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while len(self._entries) < n:
                if self._closed:
                    raise MemoryClosed()
                self._sampler_blocked = True
                self._blocked_seen = self._next_id - 1
                self._cond.notify_all()
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    self._sampler_blocked = False
                    raise TimeoutError("replay memory did not fill in time")
                self._cond.wait(remaining)
            self._sampler_blocked = False
            ids = list(self._entries)
            picks = rng.choice(len(ids), size=n, replace=False) if len(ids) > n else range(n)
            out = []
            for k in picks:
                eid = ids[int(k)]
                entry = self._entries[eid]
                entry[1] += 1
                out.append(entry[0])
                self.frames_used += entry[0].n_valid
                if entry[1] >= self.max_reuse:
                    del self._entries[eid]
            return out

    def wait_consumed(self, eid: int) -> None:
        """Block until the sampler has seen entry ``eid`` and gone idle again."""
        with self._cond:
            while not self._closed and not (self._sampler_blocked and self._blocked_seen >= eid):
                self._cond.wait()

    def drop_where(self, predicate: Callable[[TrajectorySegment], bool]) -> int:
        with self._cond:
            doomed = [eid for eid, (seg, _) in self._entries.items() if predicate(seg)]
            for eid in doomed:
                del self._entries[eid]
            return len(doomed)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


def segment_targets(seg: TrajectorySegment, hp: HyperParams, algo: str,
                    params: ParamBlob) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and value targets for the valid steps of one segment.

    Only the valid steps enter the recursions, so the step after the last
    valid one is always ``bootstrap_value`` and padding never leaks in.
    """
    m = seg.mask
    rewards, values, dones = seg.rewards[m], seg.values[m], seg.dones[m]
    if algo == "ppo":
        adv = gae_advantages(rewards, values, seg.bootstrap_value, dones, hp.gamma, hp.lam)
        ret = lambda_return(rewards, values, seg.bootstrap_value, dones, hp.gamma, hp.lam)
        return adv, ret
    behavior = seg.behavior_logps[m]
    if not m.any():
        return behavior.copy(), values.copy()
    logp = evaluate(params, seg.obs[m])[2]
    target = logp[np.arange(len(behavior)), seg.actions[m]]
    vs, pg_adv = vtrace_targets(behavior, target, rewards, values, seg.bootstrap_value, dones,
                                hp.gamma, hp.rho_bar, hp.c_bar)
    return pg_adv, vs


def build_minibatch(segments: Sequence[TrajectorySegment], hp: HyperParams, algo: str,
                    params: ParamBlob) -> Minibatch:
    """Flatten the valid steps of ``segments``; padding never enters the loss."""
    parts = []
    for seg in segments:
        adv, targets = segment_targets(seg, hp, algo, params)
        m = seg.mask
        parts.append(Minibatch(seg.obs[m], seg.actions[m], seg.behavior_logps[m], adv, targets))
    return Minibatch.concat(parts)


def shard_gradient(params: ParamBlob, segments: Sequence[TrajectorySegment], hp: HyperParams,
                   algo: str = "ppo",
                   teacher: Optional[ParamBlob] = None) -> tuple[np.ndarray, LossStats]:
    mb = build_minibatch(segments, hp, algo, params)
    loss_fn = ppo_loss_and_grad if algo == "ppo" else vtrace_loss_and_grad
    loss, grad, stats = loss_fn(params, teacher, mb, hp)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite loss {loss} in learner update")
    return grad, stats


def allreduce_gradients(shard_grads: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean summed in rank order, so the result is bit-reproducible."""
    if not shard_grads:
        raise ValueError("no shard gradients")
    total = np.array(shard_grads[0], dtype=np.float64, copy=True)
    for g in shard_grads[1:]:
        total += g
    return total / len(shard_grads)


def train_step(params: ParamBlob, shard_batches: Sequence[Sequence[TrajectorySegment]],
               hp: HyperParams, algo: str = "ppo",
               teacher: Optional[ParamBlob] = None) -> tuple[ParamBlob, list[LossStats]]:
    """One synchronized update computed serially (the reference for the threaded group)."""
    results = [shard_gradient(params, b, hp, algo, teacher) for b in shard_batches]
    grad = allreduce_gradients([g for g, _ in results])
    return sgd_step(params, grad, hp.learning_rate), [s for _, s in results]


class ThroughputMeter:
    """Windowed and cumulative rfps/cfps from replay-memory frame counters."""

    def __init__(self, mems: Sequence[ReplayMem], clock=time.monotonic):
        self.mems = list(mems)
        self.clock = clock
        self.t0 = clock()
        self._last = (self.t0, 0, 0)
        self.update_steps = 0
        self.stale = 0
        self.duplicates = 0

    def totals(self) -> tuple[int, int]:
        return (sum(m.frames_in for m in self.mems), sum(m.frames_used for m in self.mems))

    def window(self) -> tuple[float, float]:
        now = self.clock()
        recv, used = self.totals()
        t, r0, u0 = self._last
        self._last = (now, recv, used)
        dt = max(now - t, 1e-9)
        return (recv - r0) / dt, (used - u0) / dt

    def overall(self) -> tuple[float, float]:
        recv, used = self.totals()
        dt = max(self.clock() - self.t0, 1e-9)
        return recv / dt, used / dt

    def line(self, group: int, ts: Optional[float] = None) -> str:
        rfps, cfps = self.window()
        recv, used = self.totals()
        ts = time.time() if ts is None else ts
        return (f"ts={ts:.3f} group={group} rfps={rfps:.2f} cfps={cfps:.2f} "
                f"steps={self.update_steps} recv={recv} used={used} stale={self.stale} "
                f"elapsed={self.clock() - self.t0:.3f}")


@dataclass
class LearnerConfig:
    group: int
    league_endpoint: str
    model_pool_endpoints: Sequence[str]
    listen: Sequence[str] = ("127.0.0.1:0",)
    algo: str = "ppo"
    batch_size: Optional[int] = None
    max_reuse: Optional[int] = None
    publish_interval: int = 1
    period_steps: int = 1000
    capacity: int = 4096
    seed: int = 0
    lockstep: bool = False
    train_delay: float = 0.0
    teacher_key: Optional[str] = None
    metrics_path: Optional[str] = None
    metrics_interval: float = 1.0

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        if not self.listen:
            raise ValueError("at least one shard listen endpoint is required")
        if self.publish_interval < 1 or self.period_steps < 1:
            raise ValueError("publish_interval and period_steps must be >= 1")

    @property
    def num_shards(self) -> int:
        return len(self.listen)


class LearnerGroup:
    """M_L shard threads sharing one parameter vector.

    Only rank 0's barrier action talks to the league and publishes, which is
    the rank-0 contract: the action runs while every other shard waits.
    """

    def __init__(self, cfg: LearnerConfig, pool=None, league=None):
        from .pool import PoolClient
        self.cfg = cfg
        self.pool = pool if pool is not None else PoolClient(cfg.model_pool_endpoints, seed=cfg.seed)
        self.league = league if league is not None else RpcClient(cfg.league_endpoint)
        self.task: Optional[Task] = None
        self.record: Optional[ModelRecord] = None
        self.params: Optional[ParamBlob] = None
        self.teacher: Optional[ParamBlob] = None
        self.mems: list[ReplayMem] = []
        self.rngs = [np.random.default_rng([cfg.seed, cfg.group, r]) for r in range(cfg.num_shards)]
        self.period_step = 0
        self.publishes = 0
        self.finished = threading.Event()
        self.failed: Optional[BaseException] = None
        self._grads: list = [None] * cfg.num_shards
        self._stats: list = [None] * cfg.num_shards
        self._barrier = threading.Barrier(cfg.num_shards, action=self._reduce)
        self._last_seq: dict[tuple[int, int], int] = {}
        self._seq_lock = threading.Lock()
        self.history: list[ParamBlob] = []
        self.keep_history = False
        self.meter: Optional[ThroughputMeter] = None

    @property
    def hp(self) -> HyperParams:
        hp = self.task.hyperparams
        changes = {}
        if self.cfg.batch_size is not None:
            changes["batch_size"] = self.cfg.batch_size
        if self.cfg.max_reuse is not None:
            changes["max_reuse"] = self.cfg.max_reuse
        return hp.replace(**changes) if changes else hp

    def start_task(self) -> None:
        self.task = self.league.call(LearnerTaskRequest(self.cfg.group, 0)).task
        self.record = self.pool.get(self.task.learning_model_key)
        self.params = self.record.params
        self.period_step = 0
        if self.cfg.teacher_key and self.teacher is None:
            self.teacher = self.pool.get(self.cfg.teacher_key).params
        if not self.mems:
            hp = self.hp
            self.mems = [ReplayMem(self.cfg.capacity, hp.max_reuse)
                         for _ in range(self.cfg.num_shards)]
            self.meter = ThroughputMeter(self.mems)
        else:
            key = self.task.learning_model_key
            for mem in self.mems:
                self.meter.stale += mem.drop_where(lambda s: s.model_key != key)

    def ingest(self, rank: int, seg: TrajectorySegment) -> Optional[int]:
        """Store a segment; returns its entry id, or None if dropped."""
        ident = (seg.actor_id, seg.incarnation)
        with self._seq_lock:
            if seg.segment_seq <= self._last_seq.get(ident, -1):
                self.meter.duplicates += 1
                return None
            self._last_seq[ident] = seg.segment_seq
        if self.task is None or seg.model_key != self.task.learning_model_key:
            self.meter.stale += 1
            return None
        try:
            return self.mems[rank].add(seg)
        except MemoryClosed:
            return None

    def publish(self) -> None:
        self.record = self.record.replace(params=self.params, hyperparams=self.task.hyperparams)
        self.pool.put(self.record)
        self.publishes += 1

    def _reduce(self) -> None:
        grad = allreduce_gradients(self._grads)
        hp = self.hp
        self.params = sgd_step(self.params, grad, hp.learning_rate)
        if self.keep_history:
            self.history.append(self.params)
        self.meter.update_steps += 1
        self.period_step += 1
        if self.cfg.train_delay:
            time.sleep(self.cfg.train_delay)
        period_over = self.period_step >= self.cfg.period_steps
        if period_over or self.period_step % self.cfg.publish_interval == 0:
            self.publish()
        if period_over:
            reply = self.league.call(EndLearningPeriod(self.cfg.group))
            if reply.finished:
                self._finish()
            else:
                self.start_task()

    def _finish(self) -> None:
        self.finished.set()
        for mem in self.mems:
            mem.close()

    def _shard_loop(self, rank: int) -> None:
        try:
            while not self.finished.is_set():
                hp = self.hp
                batch = self.mems[rank].sample(hp.batch_size, self.rngs[rank])
                self._grads[rank], self._stats[rank] = shard_gradient(
                    self.params, batch, hp, self.cfg.algo, self.teacher)
                self._barrier.wait()
        except (MemoryClosed, threading.BrokenBarrierError):
            pass
        except BaseException as exc:
            log.exception("learner shard %d failed", rank)
            self.failed = exc
            self._barrier.abort()
            self._finish()

    def run(self) -> None:
        """Train until the league reports the last period done."""
        if self.task is None:
            self.start_task()
        threads = [threading.Thread(target=self._shard_loop, args=(r,), daemon=True,
                                    name=f"shard-{r}") for r in range(self.cfg.num_shards)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self.failed is not None:
            raise RuntimeError(f"learner group {self.cfg.group} aborted") from self.failed


class LearnerService:
    """Ingest endpoints (one per shard) plus the training group and metrics log."""

    def __init__(self, cfg: LearnerConfig, pool=None, league=None):
        self.cfg = cfg
        self.group = LearnerGroup(cfg, pool, league)
        self.servers = [RpcServer(ep, {Kind.SEGMENT_PUSH: self._handler(r)})
                        for r, ep in enumerate(cfg.listen)]
        self._metrics_stop = threading.Event()
        self._metrics_thread: Optional[threading.Thread] = None

    @property
    def endpoints(self) -> list[str]:
        return [s.endpoint for s in self.servers]

    def _handler(self, rank: int):
        def on_segment(req: SegmentPush) -> Empty:
            if self.group.finished.is_set():
                raise RpcError(ErrorCode.RUN_FINISHED, "learner finished")
            eid = self.group.ingest(rank, req.segment)
            if eid is not None and self.cfg.lockstep:
                self.group.mems[rank].wait_consumed(eid)
            return Empty()
        return on_segment

    def _metrics_loop(self) -> None:
        with open(self.cfg.metrics_path, "a", buffering=1) as fh:
            while not self._metrics_stop.wait(self.cfg.metrics_interval):
                fh.write(self.group.meter.line(self.cfg.group) + "\n")
            fh.write(self.group.meter.line(self.cfg.group) + "\n")

    def start(self) -> "LearnerService":
        self.group.start_task()
        for s in self.servers:
            s.start()
        if self.cfg.metrics_path:
            self._metrics_thread = threading.Thread(target=self._metrics_loop, daemon=True)
            self._metrics_thread.start()
        return self

    def run(self) -> None:
        try:
            self.group.run()
        finally:
            self.stop()

    def stop(self) -> None:
        self.group._finish()
        self._metrics_stop.set()
        if self._metrics_thread is not None:
            self._metrics_thread.join(timeout=5)
        for s in self.servers:
            s.stop()
