"""Executor that runs jobs as child processes of the current process."""

from __future__ import annotations

import logging
import os
import select
import shutil
import signal
import subprocess
import threading
import time
from contextlib import ExitStack
from pathlib import Path
from typing import Dict, Optional

from portajob.exceptions import SubmitError
from portajob.executor import ExecutorConfig, JobExecutor
from portajob.job import Job, JobState, JobStatus, advance, transition
from portajob.launchers import get_launch_command, write_launcher_script

logger = logging.getLogger(__name__)

# seconds between SIGTERM and SIGKILL when canceling
KILL_GRACE = 2.0


def signal_name(signum: int) -> str:
    try:
        return signal.Signals(signum).name
    except ValueError:
        return f"signal {signum}"


def _pid_alive(pid: int) -> bool:
    try:
        with open(f"/proc/{pid}/stat") as f:
            return f.read().rpartition(")")[2].split()[0] != "Z"
    except FileNotFoundError:
        return False
    except OSError:
        pass
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        pass
    return True


class _Attached:
    """Bookkeeping for a process we did not start and therefore cannot reap."""

    def __init__(self, pid: Optional[int]):
        self.pid = pid
        self.seen_alive = False


class LocalExecutor(JobExecutor):
    """Runs each job's launcher script as a child process in its own process group.

    A single reaper thread sleeps on process file descriptors (pidfds) of
    its children, so exits are noticed immediately.  Attached processes, which
    are not our children, are polled every ``poll_interval`` (10 ms by
    default), as are children on systems without pidfds.  The exit code
    recorded by the launcher script takes precedence over the one the OS
    reports.
    """

    name = "local"
    default_poll_interval = 0.01

    def __init__(self, config: Optional[ExecutorConfig] = None):
        super().__init__(config)
        self._procs: Dict[str, subprocess.Popen] = {}
        self._attached: Dict[str, _Attached] = {}
        self._cancel_requested: Dict[str, float] = {}
        self._pidfds: Dict[str, int] = {}
        self._reaper: Optional[threading.Thread] = None
        self._wake_r, self._wake_w = os.pipe()
        os.set_blocking(self._wake_r, False)
        os.set_blocking(self._wake_w, False)
        self._stop = threading.Event()

    def launcher_path(self, job: Job) -> Path:
        return self.work_directory / f"{job.id}.launcher"

    def submit(self, job: Job) -> None:
        self._check_submittable(job)
        self._bind(job)
        spec = job.spec
        mode = self.config.launcher_mode
        launch = get_launch_command(self.config.launcher_override or spec.launcher or "single", spec)
        env = dict(os.environ)
        env.update(spec.environment)
        try:
            self._check_executable(spec, env)
            with ExitStack() as stack:
                if mode == "none":
                    argv = launch
                    stdin = _open(stack, spec.stdin_path, "rb", spec.directory)
                    stdout = _open(stack, spec.stdout_path, "wb", spec.directory)
                    stderr = (subprocess.STDOUT if spec.merged_output
                              else _open(stack, spec.stderr_path, "wb", spec.directory))
                else:
                    script = write_launcher_script(spec, self.launcher_path(job),
                                                   self.sidecar_path(job), mode)
                    argv = ["/bin/sh", str(script)] + launch
                    stdin = stdout = stderr = subprocess.DEVNULL
                proc = subprocess.Popen(argv, cwd=spec.directory, env=env, stdin=stdin,
                                        stdout=stdout, stderr=stderr, start_new_session=True,
                                        close_fds=True)
        except OSError as e:
            transition(job, JobStatus(JobState.FAILED, message=str(e)))
            raise SubmitError(f"cannot start job {job.id}: {e}", str(e)) from e
        job._set_native_id(str(proc.pid))
        pidfd = _pidfd_open(proc.pid)
        with self._lock:
            self._procs[job.id] = proc
            if pidfd is not None:
                self._pidfds[job.id] = pidfd
        transition(job, JobStatus(JobState.QUEUED, metadata={"native_id": str(proc.pid)}))
        transition(job, JobStatus(JobState.ACTIVE))
        self._ensure_reaper()

    def _check_executable(self, spec, env) -> None:
        # a pre-launch hook may legitimately change PATH; let the shell decide then
        if spec.pre_launch is not None:
            return
        exe = spec.executable
        if "/" in exe:
            path = Path(exe)
            if not path.is_absolute() and spec.directory is not None:
                path = Path(spec.directory) / path
            if not path.exists():
                raise FileNotFoundError(2, "No such file or directory", exe)
        elif shutil.which(exe, path=env.get("PATH")) is None:
            raise FileNotFoundError(2, "No such file or directory", exe)

    def attach(self, job: Job, native_id: str) -> None:
        self._bind(job)
        job._set_native_id(str(native_id))
        try:
            pid = int(native_id)
        except ValueError:
            pid = None
        with self._lock:
            self._attached[job.id] = _Attached(pid if pid and pid > 0 else None)
        self._ensure_reaper()

    def cancel(self, job: Job) -> None:
        self._check_cancelable(job)
        with self._lock:
            proc = self._procs.get(job.id)
            attached = self._attached.get(job.id)
            self._cancel_requested.setdefault(job.id, time.monotonic())
        pid = proc.pid if proc is not None else (attached.pid if attached else None)
        if pid is not None:
            _kill_group(pid, signal.SIGTERM)
        self._wakeup()

    def poll(self) -> None:
        self._reap_once()

    def close(self) -> None:
        self._stop.set()
        self._wakeup()
        reaper = self._reaper
        if reaper is not None and reaper is not threading.current_thread():
            reaper.join(timeout=5)
            if reaper.is_alive():
                return
        with self._lock:
            fds = [self._wake_r, self._wake_w] + list(self._pidfds.values())
            self._wake_r = self._wake_w = -1
            self._pidfds.clear()
        for fd in fds:
            if fd >= 0:
                os.close(fd)

    # -- reaping ---------------------------------------------------------------

    def _wakeup(self) -> None:
        try:
            os.write(self._wake_w, b"x")
        except (BlockingIOError, OSError):
            pass  # pipe full (a wakeup is already pending) or closed

    def _ensure_reaper(self) -> None:
        self._wakeup()
        with self._lock:
            if self._reaper is None and not self._stop.is_set():
                self._reaper = threading.Thread(target=self._reap_loop, daemon=True,
                                                name="portajob-local-reaper")
                self._reaper.start()

    def _reap_loop(self) -> None:
        while not self._stop.is_set():
            try:
                busy = self._reap_once()
            except Exception:
                logger.exception("reap cycle failed")
                busy = True
            if not self._stop.is_set():
                self._sleep(busy)

    def _sleep(self, busy: bool) -> None:
        """Block until a child exits, a wakeup arrives, or polling is due."""
        poller = select.poll()
        poller.register(self._wake_r, select.POLLIN)
        with self._lock:
            for fd in self._pidfds.values():
                poller.register(fd, select.POLLIN)
            must_poll = bool(self._attached or self._cancel_requested
                             or len(self._pidfds) < len(self._procs))
        timeout = None
        if must_poll:
            timeout = self.poll_interval * 1000
        elif busy:
            timeout = 1000  # safety net only
        poller.poll(timeout)
        try:
            while os.read(self._wake_r, 4096):
                pass
        except BlockingIOError:
            pass

    def _reap_once(self) -> bool:
        """One pass over children and attached processes; True while any remain."""
        with self._lock:
            procs = list(self._procs.items())
            attached = list(self._attached.items())
            jobs = dict(self._jobs)
        now = time.monotonic()
        for job_id, proc in procs:
            rc = proc.poll()
            if rc is None:
                self._escalate(job_id, proc.pid, now)
                continue
            with self._lock:
                self._procs.pop(job_id, None)
                pidfd = self._pidfds.pop(job_id, None)
            if pidfd is not None:
                os.close(pidfd)
            if job_id in self._cancel_requested:
                # the group may outlive its leader if a member ignored SIGTERM
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except (ProcessLookupError, PermissionError):
                    pass
            self._finish(jobs[job_id], rc)
        for job_id, info in attached:
            job = jobs[job_id]
            alive = info.pid is not None and _pid_alive(info.pid)
            if alive:
                info.seen_alive = True
                self._escalate(job_id, info.pid, now)
                advance(job, JobStatus(JobState.ACTIVE))
                continue
            with self._lock:
                self._attached.pop(job_id, None)
            self._finish_attached(job, info)
        with self._lock:
            return bool(self._procs or self._attached)

    def _escalate(self, job_id: str, pid: int, now: float) -> None:
        requested = self._cancel_requested.get(job_id)
        if requested is not None and now - requested > KILL_GRACE:
            _kill_group(pid, signal.SIGKILL)

    def _finish(self, job: Job, rc: int) -> None:
        code = None if self.config.launcher_mode == "none" else self.read_exit_code(job)
        canceled = self._cancel_requested.pop(job.id, None) is not None
        # a sidecar means the launcher ran to completion before the signal landed
        if canceled and (code is None or rc < 0):
            advance(job, JobStatus(JobState.CANCELED, message="canceled"), ran=True)
            return
        message = None
        if code is None:
            if rc < 0:
                code = 128 - rc
                message = f"killed by {signal_name(-rc)}"
            else:
                code = rc
        elif code > 128:
            message = f"exit code {code} ({signal_name(code - 128)})"
        state = JobState.COMPLETED if code == 0 else JobState.FAILED
        advance(job, JobStatus(state, exit_code=code, message=message), ran=True)

    def _finish_attached(self, job: Job, info: _Attached) -> None:
        if self._cancel_requested.pop(job.id, None) is not None:
            advance(job, JobStatus(JobState.CANCELED, message="canceled"), ran=info.seen_alive)
            return
        code = self.read_exit_code(job)
        if code is not None:
            state = JobState.COMPLETED if code == 0 else JobState.FAILED
            advance(job, JobStatus(state, exit_code=code), ran=True)
        elif info.seen_alive:
            advance(job, JobStatus(JobState.FAILED, message="exit status unrecoverable"), ran=True)
        else:
            advance(job, JobStatus(JobState.FAILED, message="unknown to scheduler"))


def _pidfd_open(pid: int) -> Optional[int]:
    try:
        return os.pidfd_open(pid)
    except (AttributeError, OSError):
        return None


def _kill_group(pid: int, sig: int) -> None:
    """Signal ``pid``'s whole process group if it leads one, else just ``pid``."""
    try:
        if os.getpgid(pid) == pid:
            os.killpg(pid, sig)
        else:
            os.kill(pid, sig)
    except (ProcessLookupError, PermissionError):
        pass


def _open(stack: ExitStack, path, mode: str, directory):
    if path is None:
        return subprocess.DEVNULL
    path = Path(path)
    if not path.is_absolute() and directory is not None:
        path = Path(directory) / path
    return stack.enter_context(open(path, mode))
