from __future__ import annotations

import threading

from ..proto import Kind
from ..proto.messages import (Empty, EndLearningPeriod, LearnerTaskReply, LearnerTaskRequest,
                              OutcomeReport, TaskReply, TaskRequest)
from ..rpc import RpcServer
from .manager import LeagueManager


class LeagueService:
    def __init__(self, listen: str, manager: LeagueManager):
        self.manager = manager
        self.finished = threading.Event()
        self.server = RpcServer(listen, {
            Kind.TASK_REQUEST: self._task,
            Kind.OUTCOME_REPORT: self._outcome,
            Kind.LEARNER_TASK_REQUEST: self._learner_task,
            Kind.END_LEARNING_PERIOD: self._end_period,
        })

    @property
    def endpoint(self) -> str:
        return self.server.endpoint

    def _task(self, req: TaskRequest) -> TaskReply:
        return TaskReply(self.manager.request_actor_task(req.actor_id, req.learner_group))

    def _outcome(self, req: OutcomeReport) -> Empty:
        self.manager.report_outcome(req.task_id, req.outcomes)
        return Empty()

    def _learner_task(self, req: LearnerTaskRequest) -> LearnerTaskReply:
        return LearnerTaskReply(self.manager.request_learner_task(req.learner_group, req.rank))

    def _end_period(self, req: EndLearningPeriod) -> EndLearningPeriod:
        key, finished = self.manager.end_learning_period(req.learner_group)
        if self.manager.all_finished:
            self.finished.set()
        return EndLearningPeriod(req.learner_group, key, finished)

    def start(self) -> "LeagueService":
        self.server.start()
        return self

    def stop(self) -> None:
        self.server.stop()
