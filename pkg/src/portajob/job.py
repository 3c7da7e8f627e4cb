"""Client-side job objects and their lifecycle state machine."""

from __future__ import annotations

import enum
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from portajob.exceptions import (
    AlreadyBoundError,
    IllegalTransitionError,
    JobTimeoutError,
    PortajobError,
    UnboundJobError,
)
from portajob.spec import JobSpec

logger = logging.getLogger(__name__)


class JobState(enum.Enum):
    NEW = "NEW"
    QUEUED = "QUEUED"
    ACTIVE = "ACTIVE"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    CANCELED = "CANCELED"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @property
    def final(self) -> bool:
        return _RANK[self] == 3

    def __str__(self):
        return self.value


_RANK = {
    JobState.NEW: 0,
    JobState.QUEUED: 1,
    JobState.ACTIVE: 2,
    JobState.COMPLETED: 3,
    JobState.FAILED: 3,
    JobState.CANCELED: 3,
}

LEGAL_TRANSITIONS = frozenset({
    (JobState.NEW, JobState.QUEUED),
    (JobState.NEW, JobState.FAILED),
    (JobState.QUEUED, JobState.ACTIVE),
    (JobState.QUEUED, JobState.CANCELED),
    (JobState.QUEUED, JobState.FAILED),
    (JobState.ACTIVE, JobState.COMPLETED),
    (JobState.ACTIVE, JobState.FAILED),
    (JobState.ACTIVE, JobState.CANCELED),
})


@dataclass(frozen=True)
class JobStatus:
    state: JobState
    timestamp: float = field(default_factory=time.time)
    exit_code: Optional[int] = None
    message: Optional[str] = None
    metadata: Dict[str, str] = field(default_factory=dict)

    @property
    def final(self) -> bool:
        return self.state.final

    def __str__(self):
        s = self.state.value
        if self.exit_code is not None:
            s += f" {self.exit_code}"
        return s


StatusCallback = Callable[["Job", JobStatus], None]


class Job:
    """A unit of work tracked on the client side.

    ``id`` is generated locally and never changes; ``native_id`` is whatever
    the scheduler (or OS) calls the job and is set once, by submit or attach.
    Pass ``id`` explicitly only to re-associate with a previously submitted job.
    """

    def __init__(self, spec: Optional[JobSpec] = None, id: Optional[str] = None):
        self._id = id or str(uuid.uuid4())
        self.spec = spec
        self._native_id: Optional[str] = None
        self._status = JobStatus(JobState.NEW)
        self._executor = None
        self._cond = threading.Condition(threading.RLock())
        self._callbacks: List[StatusCallback] = []

    @property
    def id(self) -> str:
        return self._id

    @property
    def native_id(self) -> Optional[str]:
        return self._native_id

    @property
    def status(self) -> JobStatus:
        return self._status

    @property
    def executor(self):
        return self._executor

    def add_status_callback(self, callback: StatusCallback) -> None:
        with self._cond:
            self._callbacks.append(callback)

    def wait(self, timeout: Optional[float] = None) -> JobStatus:
        return wait(self, timeout)

    def cancel(self) -> None:
        if self._executor is None:
            raise UnboundJobError(f"job {self.id} is not bound to an executor")
        self._executor.cancel(self)

    def _bind(self, executor) -> None:
        with self._cond:
            if self._executor is not None:
                raise AlreadyBoundError(f"job {self.id} is already bound to {self._executor!r}")
            self._executor = executor

    def _set_native_id(self, native_id: str) -> None:
        with self._cond:
            if self._native_id is not None:
                raise PortajobError(f"job {self.id} already has native id {self._native_id}")
            self._native_id = native_id

    def __repr__(self):
        return f"Job(id={self._id!r}, native_id={self._native_id!r}, state={self._status.state.name})"


def transition(job: Job, new: JobStatus) -> Job:
    """Move ``job`` to ``new`` if the edge is legal and notify its callbacks.

    A status repeating the current state is absorbed without notification.
    """
    with job._cond:
        current = job._status.state
        if new.state is current:
            return job
        if (current, new.state) not in LEGAL_TRANSITIONS:
            raise IllegalTransitionError(current, new.state)
        job._status = new
        job._cond.notify_all()
        # delivered under the job lock: per-job delivery is serialized and in rank order
        for cb in list(job._callbacks):
            try:
                cb(job, new)
            except Exception:
                logger.exception("status callback %r failed for job %s", cb, job.id)
    return job


def advance(job: Job, status: JobStatus, ran: bool = False) -> List[JobStatus]:
    """Drive ``job`` towards ``status``, synthesizing skipped intermediate states.

    Used by pollers, which may observe a job for the first time when it is
    already finished.  With ``ran`` set, an ACTIVE state is synthesized before
    a FAILED or CANCELED final state.  Reports that would move a job backwards
    or out of a final state are ignored.  Returns the statuses actually applied.
    """
    target = status.state
    with job._cond:
        current = job._status.state
        if current.final or target.rank < current.rank or target is current:
            return []
        steps = []
        if current is JobState.NEW and target is not JobState.NEW:
            steps.append(JobState.QUEUED)
        if target is JobState.COMPLETED or (ran and target.final) or target is JobState.ACTIVE:
            if current.rank < 2:
                steps.append(JobState.ACTIVE)
        applied = []
        for state in steps:
            if state is target:
                break
            s = JobStatus(state, timestamp=status.timestamp)
            transition(job, s)
            applied.append(s)
        transition(job, status)
        applied.append(status)
        return applied


def wait(job: Job, timeout: Optional[float] = None) -> JobStatus:
    """Block until ``job`` is final; raise :class:`JobTimeoutError` after ``timeout`` seconds."""
    if job._executor is None:
        raise UnboundJobError(f"job {job.id} is not bound to an executor")
    with job._cond:
        if not job._cond.wait_for(lambda: job._status.state.final, timeout):
            raise JobTimeoutError(
                f"job {job.id} still {job._status.state.name} after {timeout} s")
        return job._status
