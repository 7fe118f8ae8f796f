import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from leaguerl.policy import Family, ParamBlob  # noqa: E402
from leaguerl.records import ModelRecord, TrajectorySegment  # noqa: E402
from leaguerl.rlmath import HyperParams  # noqa: E402

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

TESTDATA = Path(__file__).parent / "testdata"
CONFIGS = Path(__file__).parent.parent / "configs"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_blob(rng, family=Family.LINEAR_SOFTMAX, n_in=4, n_act=3, scale=1.0) -> ParamBlob:
    return ParamBlob(family, (n_in, n_act + 1), rng.normal(0, scale, n_in * (n_act + 1)))


def one_hot(i, n):
    v = np.zeros(n)
    v[i] = 1.0
    return v


def random_segment(rng, n_in=3, n_act=3, L=4, key="main:0000", actor_id=0, seq=0,
                   incarnation=0, n_valid=None, tabular=True) -> TrajectorySegment:
    n_valid = L if n_valid is None else n_valid
    if tabular:
        obs = np.stack([one_hot(int(rng.integers(n_in)), n_in) for _ in range(L)])
    else:
        obs = rng.normal(size=(L, n_in))
    mask = np.arange(L) < n_valid
    obs[~mask] = 0.0
    dones = ~mask
    if n_valid:
        dones[n_valid - 1] = bool(rng.integers(2))
    logps = np.log(rng.uniform(0.05, 1.0, L))
    return TrajectorySegment(
        model_key=key, actor_id=actor_id, incarnation=incarnation, segment_seq=seq, obs=obs,
        actions=rng.integers(0, n_act, L), rewards=np.where(mask, rng.normal(size=L), 0.0),
        behavior_logps=np.where(mask, logps, 0.0), values=np.where(mask, rng.normal(size=L), 0.0),
        dones=dones, mask=mask, bootstrap_value=float(rng.normal()))


class LocalPool:
    """In-process stand-in for PoolClient over a ModelStore."""

    def __init__(self):
        from leaguerl.pool import ModelStore
        self.store = ModelStore()
        self.puts = 0

    def get(self, key):
        return self.store.get(key)

    def put(self, record):
        self.puts += 1
        self.store.put(record)

    def freeze(self, key):
        self.store.freeze(key)

    def list(self):
        return self.store.list()

    def close(self):
        pass


class LocalLeague:
    """Answers learner and actor payloads from a LeagueManager in-process."""

    def __init__(self, manager):
        self.manager = manager

    def call(self, payload):
        from leaguerl.proto.messages import (Empty, EndLearningPeriod, LearnerTaskReply,
                                             LearnerTaskRequest, OutcomeReport, TaskReply,
                                             TaskRequest)
        m = self.manager
        if isinstance(payload, TaskRequest):
            return TaskReply(m.request_actor_task(payload.actor_id, payload.learner_group))
        if isinstance(payload, OutcomeReport):
            m.report_outcome(payload.task_id, payload.outcomes)
            return Empty()
        if isinstance(payload, LearnerTaskRequest):
            return LearnerTaskReply(m.request_learner_task(payload.learner_group, payload.rank))
        if isinstance(payload, EndLearningPeriod):
            key, finished = m.end_learning_period(payload.learner_group)
            return EndLearningPeriod(payload.learner_group, key, finished)
        raise TypeError(type(payload).__name__)

    def close(self):
        pass


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hp():
    return HyperParams()


@pytest.fixture
def local_pool():
    return LocalPool()


def make_record(key="main:0000", params=None, frozen=False, rng=None) -> ModelRecord:
    rng = rng or np.random.default_rng(0)
    params = params if params is not None else random_blob(rng)
    return ModelRecord(key, params, HyperParams(), created_at=0.0, frozen=frozen)
