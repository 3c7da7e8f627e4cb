"""A fixed conformance suite runnable against any registered executor.

Each test drives the executor through one capability and produces a
:class:`TestRecord`; failures are recorded, never raised, so one broken
capability does not hide the others.
"""

from __future__ import annotations

import os
import platform
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable, Dict, Optional

from portajob import __version__
from portajob.exceptions import PortajobError, SubmitError, UnknownExecutorError
from portajob.executor import ExecutorConfig, ExecutorRegistry, default_registry
from portajob.harness.report import ConformanceReport, TestRecord
from portajob.job import Job, JobState
from portajob.spec import JobAttributes, JobSpec

SUITE = (
    "submit-complete",
    "submit-fail",
    "cancel-queued",
    "cancel-active",
    "attach-running",
    "attach-finished",
    "env-propagation",
    "redirection",
    "bulk-invariant",
)

WAIT_TIMEOUT = 30.0


class NotApplicable(Exception):
    """The capability cannot be observed on this executor."""


def _sh(script: str, **kw) -> JobSpec:
    return JobSpec(executable="/bin/sh", arguments=["-c", script], **kw)


def _describe(status) -> str:
    parts = [status.state.name]
    if status.exit_code is not None:
        parts.append(f"exit={status.exit_code}")
    if status.message:
        parts.append(status.message)
    return " ".join(parts)


def _expect(job: Job, state: JobState, exit_code=None, timeout=WAIT_TIMEOUT) -> str:
    final = job.wait(timeout)
    got = _describe(final)
    if final.state is not state or (exit_code is not None and final.exit_code != exit_code):
        want = state.name + (f" exit={exit_code}" if exit_code is not None else "")
        raise AssertionError(f"expected {want}, got {got}")
    return got


def _await_active(job: Job, timeout=WAIT_TIMEOUT) -> None:
    deadline = time.monotonic() + timeout
    while job.status.state not in (JobState.ACTIVE,) and not job.status.final:
        if time.monotonic() > deadline:
            raise AssertionError(f"job never became ACTIVE (last state {job.status.state.name})")
        time.sleep(0.01)
    if job.status.final:
        raise AssertionError(f"job finished before it could be observed running: {_describe(job.status)}")


class _Suite:
    def __init__(self, name: str, registry: ExecutorRegistry, work_directory: Path):
        self.name = name
        self.registry = registry
        self.work_directory = work_directory
        self.executor = self.new_executor()

    def new_executor(self, **config):
        return self.registry.get_instance(
            self.name, config=ExecutorConfig(work_directory=self.work_directory, **config))

    @property
    def uses_command_contract(self) -> bool:
        from portajob.batch.dialects import CommandDialect
        return isinstance(getattr(self.executor, "dialect", None), CommandDialect)

    def scratch(self, test: str) -> Path:
        return Path(tempfile.mkdtemp(prefix=f"{test}-", dir=self.work_directory))

    def submit(self, spec: JobSpec, executor=None) -> Job:
        job = Job(spec)
        (executor or self.executor).submit(job)
        return job

    # -- the tests ---------------------------------------------------------

    def submit_complete(self):
        return _expect(self.submit(_sh("exit 0")), JobState.COMPLETED, 0)

    def submit_fail(self):
        return _expect(self.submit(_sh("exit 3")), JobState.FAILED, 3)

    def cancel_queued(self):
        if self.name == "local":
            raise NotApplicable("local jobs start immediately")
        spec = _sh("sleep 60")
        if self.uses_command_contract:
            # ask the scheduler to hold the job long enough to cancel it in the queue
            spec.attributes = JobAttributes(custom_attributes={f"{self.executor.dialect.name}.delay": "60"})
        job = self.submit(spec)
        seen = []
        job.add_status_callback(lambda j, s: seen.append(s.state))
        self.executor.cancel(job)
        out = _expect(job, JobState.CANCELED)
        if self.uses_command_contract and JobState.ACTIVE in seen:
            raise AssertionError("job ran although it was canceled while queued")
        return out

    def cancel_active(self):
        job = self.submit(_sh("sleep 60"))
        _await_active(job)
        self.executor.cancel(job)
        return _expect(job, JobState.CANCELED)

    def attach_running(self):
        job = self.submit(_sh("sleep 1"))
        _await_active(job)
        with self.new_executor() as other:
            twin = Job(id=job.id)
            other.attach(twin, job.native_id)
            return _expect(twin, JobState.COMPLETED, 0)

    def attach_finished(self):
        job = self.submit(_sh("exit 5"))
        _expect(job, JobState.FAILED, 5)
        with self.new_executor() as other:
            twin = Job(id=job.id)
            other.attach(twin, job.native_id)
            return _expect(twin, JobState.FAILED, 5)

    def env_propagation(self):
        d = self.scratch("env")
        value = "two words $HOME 'quoted'"
        spec = _sh('printf "%s" "$PORTAJOB_CONFORMANCE_VAR"', directory=d,
                   environment={"PORTAJOB_CONFORMANCE_VAR": value}, stdout_path=d / "out")
        out = _expect(self.submit(spec), JobState.COMPLETED, 0)
        got = (d / "out").read_text()
        if got != value:
            raise AssertionError(f"environment value mangled: {got!r} != {value!r}")
        return out

    def redirection(self):
        d = self.scratch("redir")
        (d / "in").write_text("input line\n")
        spec = _sh("cat; echo to-stderr >&2", directory=d, stdin_path=d / "in",
                   stdout_path=d / "out", stderr_path=d / "err")
        out = _expect(self.submit(spec), JobState.COMPLETED, 0)
        got = ((d / "out").read_text(), (d / "err").read_text())
        if got != ("input line\n", "to-stderr\n"):
            raise AssertionError(f"streams not redirected as requested: {got!r}")
        return out

    def bulk_invariant(self):
        counters = getattr(self.executor, "invocation_counters", None)
        if counters is None or counters() is None:
            raise NotApplicable("executor exposes no command counters")
        # a huge poll interval keeps the background poller out of the count
        with self.new_executor(poll_interval=3600.0) as ex:
            jobs = [self.submit(_sh("sleep 0.2"), ex) for _ in range(10)]
            before = ex.invocation_counters()["status"]
            cycles = 0
            deadline = time.monotonic() + WAIT_TIMEOUT
            while not all(j.status.final for j in jobs):
                if time.monotonic() > deadline:
                    raise AssertionError("jobs did not finish")
                ex.poll_cycle()
                cycles += 1
                time.sleep(0.05)
            used = ex.invocation_counters()["status"] - before
        if used > cycles:
            raise AssertionError(f"{used} status commands for {cycles} poll cycles over {len(jobs)} jobs")
        bad = [_describe(j.status) for j in jobs if j.status.state is not JobState.COMPLETED]
        if bad:
            raise AssertionError(f"jobs did not complete: {bad}")
        return f"{used} status commands for {cycles} cycles over {len(jobs)} jobs"

    # -- bookkeeping -------------------------------------------------------

    def cleanup(self) -> None:
        for job in self.executor.jobs:
            if not job.status.final:
                try:
                    self.executor.cancel(job)
                except PortajobError:
                    pass
        self.executor.close()


def _environment(name: str) -> Dict[str, str]:
    return {
        "executor": name,
        "portajob": __version__,
        "python": platform.python_version(),
        "platform": sys.platform,
        "hostname": platform.node(),
        "user": os.environ.get("USER", ""),
    }


def _run_one(fn: Callable[[], Optional[str]], name: str, env: Dict[str, str]) -> TestRecord:
    start = time.perf_counter()
    applicable, passed = True, False
    try:
        output = fn() or ""
        passed = True
    except NotApplicable as e:
        applicable, passed, output = False, True, f"not applicable: {e}"
    except SubmitError as e:
        output = f"{type(e).__name__}: {e}"
        if e.stderr and e.stderr.strip() not in output:
            output += f"\nstderr: {e.stderr.strip()}"
    except Exception as e:
        output = f"{type(e).__name__}: {e}"
    return TestRecord(name=name, passed=passed, applicable=applicable,
                      duration_s=time.perf_counter() - start, output=output, environment=env)


def run_conformance(executor_name: str, site: str = "unnamed-site",
                    registry: Optional[ExecutorRegistry] = None,
                    work_directory=None) -> ConformanceReport:
    """Run every test in :data:`SUITE` against ``executor_name``."""
    registry = registry or default_registry()
    descriptor = registry.lookup(executor_name)  # raises UnknownExecutorError
    wd = Path(work_directory) if work_directory else Path(tempfile.mkdtemp(prefix="portajob-conformance-"))
    wd.mkdir(parents=True, exist_ok=True)
    report = ConformanceReport(site=site, executor=executor_name, version=str(descriptor.version))
    env = _environment(executor_name)
    try:
        suite = _Suite(executor_name, registry, wd)
    except Exception as e:
        msg = f"cannot create executor: {type(e).__name__}: {e}"
        report.tests = [TestRecord(name=n, passed=False, output=msg, environment=env) for n in SUITE]
        return report
    try:
        for name in SUITE:
            report.tests.append(_run_one(getattr(suite, name.replace("-", "_")), name, env))
    finally:
        suite.cleanup()
    return report


__all__ = ["SUITE", "run_conformance", "NotApplicable", "UnknownExecutorError"]
