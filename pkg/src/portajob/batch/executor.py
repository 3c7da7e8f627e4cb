"""Generic executor for batch schedulers driven through their command-line tools."""

from __future__ import annotations

import logging
import subprocess
import threading
import time
from collections import deque
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from portajob.batch.dialects import Command, CommandDialect, InterimState, SchedulerDialect
from portajob.exceptions import (
    CancelError,
    NativeIdParseError,
    SchedulerCommandError,
    SubmitError,
    TemplateRenderError,
)
from portajob.executor import ExecutorConfig, JobExecutor
from portajob.job import Job, JobState, JobStatus, advance, transition
from portajob.launchers import get_launch_command, write_launcher_script
from portajob.spec import complete_resources

logger = logging.getLogger(__name__)

Delta = Tuple[Job, JobStatus]


class BatchExecutor(JobExecutor):
    """Submits generated scripts to a scheduler and tracks jobs with bulk status queries.

    A single poller thread per instance issues one status command per cycle
    covering every active job.
    """

    def __init__(self, dialect: SchedulerDialect, config: Optional[ExecutorConfig] = None):
        super().__init__(config)
        self.dialect = dialect
        self.name = dialect.name
        self.poll_interval = self.config.poll_interval or dialect.default_poll_interval
        self.missing_tolerance = self.config.missing_tolerance
        self.max_consecutive_failures = self.config.max_consecutive_failures
        self._active: Dict[str, Job] = {}
        self._missing: Dict[str, int] = {}
        self._failures = 0
        self._poll_lock = threading.Lock()
        self._poller: Optional[threading.Thread] = None
        self._stop = threading.Event()
        self.poll_count = 0
        self.diagnostics: deque = deque(maxlen=200)

    # -- scripts -----------------------------------------------------------

    def script_path(self, job: Job) -> Path:
        return self.work_directory / f"{job.id}.job"

    def launcher_path(self, job: Job) -> Path:
        return self.work_directory / f"{job.id}.launcher"

    def render_submit_script(self, job: Job) -> str:
        spec = job.spec
        resources = complete_resources(spec.resources)
        launcher = self.config.launcher_override or spec.launcher or "single"
        argv = get_launch_command(launcher, spec)
        ctx = self.dialect.context(job.id, spec, resources, self.work_directory, argv)
        return self.dialect.render(ctx)

    def generate_submit_script(self, job: Job) -> Tuple[str, Path]:
        """Render and write the submit script and its launcher script."""
        text = self.render_submit_script(job)
        mode = "minimal" if self.config.launcher_mode == "minimal" else "default"
        write_launcher_script(job.spec, self.launcher_path(job), self.sidecar_path(job), mode)
        path = self.script_path(job)
        path.write_text(text)
        return text, path

    # -- commands ------------------------------------------------------------

    def run_command(self, command: Command) -> str:
        argv = command.argv
        try:
            if command.stdin is not None:
                with open(command.stdin, "rb") as stdin:
                    proc = subprocess.run(argv, stdin=stdin, capture_output=True,
                                          timeout=self.config.command_timeout)
            else:
                proc = subprocess.run(argv, stdin=subprocess.DEVNULL, capture_output=True,
                                      timeout=self.config.command_timeout)
        except FileNotFoundError:
            raise SchedulerCommandError(f"command not found: {argv[0]}", argv) from None
        except subprocess.TimeoutExpired:
            raise SchedulerCommandError(
                f"{argv[0]} timed out after {self.config.command_timeout} s", argv) from None
        except OSError as e:
            raise SchedulerCommandError(f"cannot run {argv[0]}: {e}", argv) from None
        stdout = proc.stdout.decode(errors="replace")
        stderr = proc.stderr.decode(errors="replace")
        if proc.returncode != 0:
            detail = stderr.strip() or stdout.strip() or "no output"
            raise SchedulerCommandError(f"{argv[0]} exited with {proc.returncode}: {detail}",
                                        argv, proc.returncode, stdout, stderr)
        return stdout

    # -- executor API --------------------------------------------------------

    def submit(self, job: Job) -> None:
        self._check_submittable(job)
        self._bind(job)
        try:
            _, path = self.generate_submit_script(job)
            stdout = self.run_command(self.dialect.submit_command(path))
            native_id = self.dialect.parse_native_id(stdout)
        except (SchedulerCommandError, NativeIdParseError, TemplateRenderError, OSError) as e:
            stderr = getattr(e, "stderr", "") or ""
            transition(job, JobStatus(JobState.FAILED, message=str(e)))
            raise SubmitError(f"submit of job {job.id} failed: {e}", stderr) from e
        job._set_native_id(native_id)
        with self._lock:
            self._active[job.id] = job
        transition(job, JobStatus(JobState.QUEUED, metadata={"native_id": native_id}))
        self._ensure_poller()

    def attach(self, job: Job, native_id: str) -> None:
        self._bind(job)
        job._set_native_id(str(native_id))
        with self._lock:
            self._active[job.id] = job
        self._ensure_poller()

    def cancel(self, job: Job) -> None:
        self._check_cancelable(job)
        if job.native_id is None:
            return
        try:
            self.run_command(self.dialect.cancel_command(job.native_id))
        except SchedulerCommandError as e:
            if self.dialect.absorbs_cancel_failure(e.stderr + e.stdout):
                logger.debug("cancel of %s raced with completion: %s", job.native_id, e)
                return
            diag = f"cancel of job {job.id} ({job.native_id}) failed: {e}"
            self.diagnostics.append(diag)
            raise CancelError(diag) from e

    def poll(self) -> None:
        self.poll_cycle()

    def invocation_counters(self) -> Optional[Dict[str, int]]:
        """Command counters reported by helpers that support it (the mock does)."""
        if not isinstance(self.dialect, CommandDialect):
            return None
        try:
            out = self.run_command(self.dialect.counters_command())
        except SchedulerCommandError:
            return None
        counts = {}
        for line in out.splitlines():
            key, sep, value = line.partition("=")
            if sep and value.strip().lstrip("-").isdigit():
                counts[key.strip()] = int(value)
        return counts or None

    # -- polling -------------------------------------------------------------

    def _ensure_poller(self) -> None:
        with self._lock:
            if self._poller is None and not self._stop.is_set():
                self._poller = threading.Thread(target=self._poll_loop, daemon=True,
                                                name=f"portajob-{self.name}-poller")
                self._poller.start()

    def _poll_loop(self) -> None:
        while not self._stop.wait(self.poll_interval):
            try:
                self.poll_cycle()
            except Exception:
                logger.exception("poll cycle failed")

    def close(self) -> None:
        self._stop.set()
        poller = self._poller
        if poller is not None and poller is not threading.current_thread():
            poller.join(timeout=self.config.command_timeout + 1)

    def poll_cycle(self) -> List[Delta]:
        """Query every active job with one status command and apply the resulting transitions."""
        with self._poll_lock:
            with self._lock:
                for job_id in [i for i, j in self._active.items() if j.status.final]:
                    del self._active[job_id]
                    self._missing.pop(job_id, None)
                jobs = list(self._active.values())
            if not jobs:
                return []
            self.poll_count += 1
            ids = sorted({j.native_id for j in jobs}, key=_natural)
            try:
                rows = self.dialect.parse_status(self.run_command(self.dialect.status_command(ids)))
            except (SchedulerCommandError, ValueError) as e:
                self._failures += 1
                logger.warning("status query failed (%d consecutive): %s", self._failures, e)
                if self._failures < self.max_consecutive_failures:
                    return []
                now = time.time()
                return self._apply_all(
                    (job, JobStatus(JobState.FAILED, now, message="scheduler unreachable"), False)
                    for job in jobs)
            self._failures = 0
            by_id = {row.native_id: row for row in rows}
            updates = []
            for job in jobs:
                row = by_id.get(job.native_id)
                if row is None:
                    update = self._vanished(job)
                else:
                    self._missing.pop(job.id, None)
                    update = self._status_for(job, row)
                if update is not None:
                    updates.append((job,) + update)
            return self._apply_all(updates)

    def _apply_all(self, updates) -> List[Delta]:
        deltas = []
        for job, status, ran in updates:
            for applied in advance(job, status, ran=ran):
                deltas.append((job, applied))
        return deltas

    def _status_for(self, job: Job, row) -> Optional[Tuple[JobStatus, bool]]:
        now = time.time()
        meta = {"native_state": row.state.value}
        state = row.state
        if state is InterimState.PENDING:
            return JobStatus(JobState.QUEUED, now, metadata=meta), False
        if state is InterimState.RUNNING:
            return JobStatus(JobState.ACTIVE, now, metadata=meta), False
        if state is InterimState.CANCELED_LRM:
            return JobStatus(JobState.CANCELED, now, message=row.message, metadata=meta), False
        if state in (InterimState.DONE, InterimState.FAILED_LRM):
            code = self.read_exit_code(job)
            if code is None:
                code = row.exit_code
            if state is InterimState.DONE or code == 0:
                return self._finished(code, now, row.message, meta), True
            return JobStatus(JobState.FAILED, now, exit_code=code, message=row.message,
                             metadata=meta), code is not None
        return None

    def _finished(self, code, now, message=None, meta=None) -> JobStatus:
        if code in (0, None):
            return JobStatus(JobState.COMPLETED, now, exit_code=code, metadata=meta or {})
        return JobStatus(JobState.FAILED, now, exit_code=code, message=message, metadata=meta or {})

    def _vanished(self, job: Job) -> Optional[Tuple[JobStatus, bool]]:
        count = self._missing.get(job.id, 0) + 1
        self._missing[job.id] = count
        if count < self.missing_tolerance:
            return None
        code = self.read_exit_code(job)
        now = time.time()
        if code is None:
            return JobStatus(JobState.FAILED, now, message="lost by scheduler"), False
        return self._finished(code, now), True


def _natural(native_id: str):
    return (0, int(native_id), "") if native_id.isdigit() else (1, 0, native_id)
