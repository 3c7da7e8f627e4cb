"""Overhead benchmarks: executor cost, launcher-script cost, and scheduler load."""

from __future__ import annotations

import csv
import io
import statistics
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence

from portajob.executor import ExecutorConfig
from portajob.job import Job, JobState
from portajob.spec import JobSpec

CSV_HEADER = ("scenario", "n_jobs", "mode", "total_s", "per_job_s")
NOOP = "/bin/true"

LAUNCHER_MODES = {"default": "default", "minimal-wrapper": "minimal", "none": "none"}


@dataclass
class BenchmarkRecord:
    """One benchmark run.

    ``samples`` holds the individual timings: per-job wall times for the
    local scenarios, single status-command latencies for ``qstat-latency``
    (whose ``per_job_s`` is then the median latency).
    """

    scenario: str
    n_jobs: int
    mode: str
    total_s: float
    per_job_s: float
    samples: List[float] = field(default_factory=list)

    def row(self) -> tuple:
        return (self.scenario, self.n_jobs, self.mode, f"{self.total_s:.6f}", f"{self.per_job_s:.6f}")


def records_to_csv(records: Iterable[BenchmarkRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def _record(scenario, mode, samples, total) -> BenchmarkRecord:
    n = len(samples)
    return BenchmarkRecord(scenario, n, mode, total, total / n if n else 0.0, list(samples))


def _local_loop(n_jobs: int, launcher_mode: str, work_directory) -> tuple:
    from portajob.local import LocalExecutor

    wd = Path(work_directory) if work_directory else Path(tempfile.mkdtemp(prefix="portajob-bench-"))
    samples = []
    with LocalExecutor(ExecutorConfig(work_directory=wd, launcher_mode=launcher_mode)) as ex:
        start = time.perf_counter()
        for _ in range(n_jobs):
            t0 = time.perf_counter()
            job = Job(JobSpec(executable=NOOP))
            ex.submit(job)
            status = job.wait(60)
            if status.state is not JobState.COMPLETED:
                raise RuntimeError(f"benchmark job did not complete: {status}")
            samples.append(time.perf_counter() - t0)
        total = time.perf_counter() - start
    return samples, total


def bench_local(n_jobs: int, method: str = "library", work_directory=None) -> BenchmarkRecord:
    """Run ``n_jobs`` no-op jobs one after another.

    ``library`` goes through the local executor; ``direct-spawn-baseline``
    spawns and waits on the process directly.  Overhead is the difference.
    """
    if method == "library":
        samples, total = _local_loop(n_jobs, "default", work_directory)
    elif method == "direct-spawn-baseline":
        samples = []
        start = time.perf_counter()
        for _ in range(n_jobs):
            t0 = time.perf_counter()
            subprocess.Popen([NOOP]).wait()
            samples.append(time.perf_counter() - t0)
        total = time.perf_counter() - start
    else:
        raise ValueError(f"unknown method {method!r}; expected library or direct-spawn-baseline")
    return _record("local", method, samples, total)


def bench_launcher(n_jobs: int, mode: str = "default", work_directory=None) -> BenchmarkRecord:
    """Like :func:`bench_local` (library) with the launcher-script layer toggled."""
    try:
        launcher_mode = LAUNCHER_MODES[mode]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}; expected one of {', '.join(LAUNCHER_MODES)}") from None
    samples, total = _local_loop(n_jobs, launcher_mode, work_directory)
    return _record("launcher-script", mode, samples, total)


def launcher_deltas(records: Sequence[BenchmarkRecord]) -> dict:
    """Pairwise per-job differences between launcher modes, e.g. ``("default", "none")``."""
    by_mode = {r.mode: r.per_job_s for r in records}
    return {(a, b): by_mode[a] - by_mode[b]
            for a in by_mode for b in by_mode if a != b}


def bench_qstat_latency(n_jobs: int, samples: int = 20, status_latency: float = 0.05,
                        spool=None, work_directory=None) -> BenchmarkRecord:
    """Time a standalone status command while the mock manages ``n_jobs`` running jobs."""
    from portajob.batch import BatchExecutor, MockDialect
    from portajob.mock import Spool, command_prefix

    wd = Path(work_directory) if work_directory else Path(tempfile.mkdtemp(prefix="portajob-bench-"))
    spool_dir = Path(spool) if spool else wd / "mock-spool"
    spool_obj = Spool(spool_dir)
    spool_obj.write_config(status_latency=status_latency, schedule_delay=0.0, drop_after_done=False)
    config = ExecutorConfig(work_directory=wd, mock_spool=spool_dir)
    ex = BatchExecutor(MockDialect(spool_dir), config)
    jobs = []
    try:
        for _ in range(n_jobs):
            job = Job(JobSpec(executable="sleep", arguments=["600"]))
            ex.submit(job)
            jobs.append(job)
        probe = jobs[0].native_id if jobs else "1"
        argv = command_prefix(spool_dir) + ["status", probe]
        latencies = []
        for _ in range(samples):
            t0 = time.perf_counter()
            subprocess.run(argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, check=False)
            latencies.append(time.perf_counter() - t0)
    finally:
        ex.close()
        for job in jobs:
            try:
                spool_obj.cancel(job.native_id)
            except Exception:
                pass
    median = statistics.median(latencies) if latencies else 0.0
    return BenchmarkRecord("qstat-latency", n_jobs, f"status_latency={status_latency:g}",
                           sum(latencies), median, latencies)


def r_squared(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Coefficient of determination of the least-squares line through the points."""
    return statistics.correlation(xs, ys) ** 2


def iqr(values: Sequence[float]) -> tuple:
    q = statistics.quantiles(values, n=4, method="inclusive")
    return q[0], q[2]


def iqr_overlap(a: Sequence[float], b: Sequence[float]) -> bool:
    (a1, a3), (b1, b3) = iqr(a), iqr(b)
    return a1 <= b3 and b1 <= a3


__all__ = [
    "BenchmarkRecord", "CSV_HEADER", "bench_local", "bench_launcher", "bench_qstat_latency",
    "launcher_deltas", "records_to_csv", "r_squared", "iqr", "iqr_overlap",
]

