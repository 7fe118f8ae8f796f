"""League manager: issues tasks, books outcomes, and advances learning periods."""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..policy import ParamBlob
from ..proto import ErrorCode
from ..records import ModelRecord, Outcome, Task, make_key, parse_key
from ..rlmath import HyperParams
from ..rpc import RpcError
from .game import PayoffMatrix, SamplingScheme, Scheme, sample_opponent
from .hyper import HyperMgr

SEED_KEY = "seed:0000"


class RunFinished(RpcError):
    def __init__(self, group: int):
        super().__init__(ErrorCode.RUN_FINISHED, f"group {group} completed all periods")


@dataclass(frozen=True)
class GroupConfig:
    group_id: int
    lineage: str = "main"
    scheme: SamplingScheme = field(default_factory=SamplingScheme)
    hyperparams: HyperParams = field(default_factory=HyperParams)
    total_periods: int = 1
    n_opponents: int = 1
    # self_play_latest against another group's current model (exploiter role)
    opponent_lineage: Optional[str] = None


@dataclass
class _Group:
    cfg: GroupConfig
    current_key: Optional[str] = None
    periods_done: int = 0
    finished: bool = False


class LeagueManager:
    """Single authority over tasks, payoff counts and the frozen pool.

    ``pool`` is anything with ``get``, ``put`` and ``freeze`` (a
    :class:`~leaguerl.pool.PoolClient` or a local store).
    """

    def __init__(self, pool, groups: Sequence[GroupConfig], seed_params: ParamBlob,
                 seed: int = 0, k_factor: float = 16.0, perturb_hyper: bool = False,
                 summary_path=None, clock=time.time):
        ids = [g.group_id for g in groups]
        if sorted(ids) != list(range(len(ids))):
            raise ValueError("learner groups must be numbered 0..M_G-1")
        self.pool = pool
        self.groups = {g.group_id: _Group(g) for g in groups}
        self.payoff = PayoffMatrix(k_factor)
        self.hyper = HyperMgr(perturb_hyper, seed + 1)
        self.rng = np.random.default_rng(seed)
        self.clock = clock
        self.summary_path = Path(summary_path) if summary_path else None
        self.frozen_keys: list[str] = []
        self._pending: dict[int, Task] = {}
        self._next_task = 1
        self._lock = threading.RLock()
        self.games_reported = 0

        seed_record = ModelRecord(SEED_KEY, seed_params, groups[0].hyperparams,
                                  created_at=clock(), frozen=True)
        try:
            pool.put(seed_record)
        except RpcError as exc:
            if exc.code != ErrorCode.FROZEN:
                raise
        self.frozen_keys.append(SEED_KEY)
        self.payoff.add(SEED_KEY)
        self.hyper.set(SEED_KEY, groups[0].hyperparams)

    def _group(self, group_id: int) -> _Group:
        g = self.groups.get(group_id)
        if g is None:
            raise RpcError(ErrorCode.NO_GROUP, f"no learner group {group_id}")
        if g.finished:
            raise RunFinished(group_id)
        if g.current_key is None:
            self._start_group(g)
        return g

    def _start_group(self, g: _Group) -> None:
        """Generation 0 of a lineage starts from the seed parameters."""
        key = make_key(g.cfg.lineage, 0)
        seed = self.pool.get(SEED_KEY)
        self.pool.put(ModelRecord(key, seed.params, g.cfg.hyperparams, parent_key=SEED_KEY,
                                  created_at=self.clock()))
        self.hyper.set(key, g.cfg.hyperparams)
        self.payoff.add(key, self.payoff.elo[SEED_KEY])
        g.current_key = key

    def _lineage_key(self, lineage: str) -> str:
        for g in self.groups.values():
            if g.cfg.lineage == lineage:
                if g.current_key is None and not g.finished:
                    self._start_group(g)
                if g.current_key is not None:
                    return g.current_key
        raise RpcError(ErrorCode.NO_GROUP, f"no active lineage {lineage!r}")

    def _opponent(self, g: _Group) -> str:
        if g.cfg.opponent_lineage is not None:
            return self._lineage_key(g.cfg.opponent_lineage)
        return sample_opponent(self.payoff, g.current_key, self.frozen_keys, g.cfg.scheme, self.rng)

    def request_actor_task(self, actor_id: int, group_id: int = 0) -> Task:
        with self._lock:
            g = self._group(group_id)
            opponents = tuple(self._opponent(g) for _ in range(g.cfg.n_opponents))
            task = Task(self._next_task, group_id, g.current_key, opponents,
                        self.hyper.get(g.current_key))
            self._next_task += 1
            self._pending[task.task_id] = task
            return task

    def report_outcome(self, task_id: int, outcomes) -> None:
        """``outcomes[0]`` is the learning agent's result against every opponent slot."""
        with self._lock:
            task = self._pending.pop(task_id, None)
            if task is None:
                code = ErrorCode.DUPLICATE if 0 < task_id < self._next_task else ErrorCode.UNKNOWN_TASK
                raise RpcError(code, f"task {task_id} is not awaiting a report")
            if len(outcomes) != 1 + len(task.opponent_model_keys):
                self._pending[task_id] = task
                raise RpcError(ErrorCode.BAD_REQUEST,
                               f"expected {1 + len(task.opponent_model_keys)} outcomes")
            mine = Outcome.parse(outcomes[0])
            for opp in task.opponent_model_keys:
                self.payoff.add(opp)
                self.payoff.record(task.learning_model_key, opp, mine)
            self.games_reported += 1

    def request_learner_task(self, group_id: int, rank: int = 0) -> Task:
        with self._lock:
            if rank != 0:
                raise RpcError(ErrorCode.NOT_RANK_ZERO, "only rank 0 requests learner tasks")
            g = self._group(group_id)
            task = Task(self._next_task, group_id, g.current_key, (),
                        self.hyper.get(g.current_key))
            self._next_task += 1
            return task

    def end_learning_period(self, group_id: int) -> tuple[str, bool]:
        """Freeze the current model; returns ``(successor_key, finished)``.

        The successor key is empty when this was the group's last period.
        """
        with self._lock:
            g = self.groups.get(group_id)
            if g is None:
                raise RpcError(ErrorCode.NO_GROUP, f"no learner group {group_id}")
            if g.finished or g.current_key is None:
                raise RpcError(ErrorCode.NO_PERIOD, f"group {group_id} has no period in progress")
            old = g.current_key
            self.pool.freeze(old)
            self.frozen_keys.append(old)
            g.periods_done += 1
            if g.periods_done >= g.cfg.total_periods:
                g.finished = True
                g.current_key = None
                new_key = ""
            else:
                record = self.pool.get(old)
                lineage, gen = parse_key(old)
                new_key = make_key(lineage, gen + 1)
                hp = self.hyper.successor(old)
                self.pool.put(ModelRecord(new_key, record.params, hp, parent_key=old,
                                          created_at=self.clock()))
                self.hyper.set(new_key, hp)
                self.payoff.add(new_key, self.payoff.elo[old])
                g.current_key = new_key
            self._write_summary(f"period group={group_id} frozen={old} "
                                f"next={new_key or '-'} finished={int(g.finished)}")
            return new_key, g.finished

    @property
    def all_finished(self) -> bool:
        return all(g.finished for g in self.groups.values())

    def summary(self) -> str:
        with self._lock:
            return render_summary(self.payoff, self.frozen_keys)

    def _write_summary(self, header: str) -> None:
        if self.summary_path is None:
            return
        with open(self.summary_path, "a") as fh:
            fh.write(f"# {header}\n")
            fh.write(render_summary(self.payoff, self.frozen_keys))
            fh.write("\n")


def render_summary(payoff: PayoffMatrix, keys: Sequence[str]) -> str:
    """Aligned text: payoff counts as wins/losses/ties (row vs column), then Elo."""
    keys = list(keys)
    cells = [[("%d/%d/%d" % payoff.games(r, c)) for c in keys] for r in keys]
    width = max([len(k) for k in keys] + [len(x) for row in cells for x in row] + [4])
    lines = [f"payoff {len(keys)}x{len(keys)} (row vs col: wins/losses/ties)",
             " " * width + "  " + "  ".join(k.rjust(width) for k in keys)]
    for key, row in zip(keys, cells):
        lines.append(key.ljust(width) + "  " + "  ".join(x.rjust(width) for x in row))
    lines.append("elo")
    for key in sorted(keys, key=lambda k: (-payoff.elo[k], k)):
        lines.append(f"{key.ljust(width)}  {payoff.elo[key]:9.2f}")
    return "\n".join(lines) + "\n"
