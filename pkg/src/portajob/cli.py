"""Command-line front end.

Exit codes: 0 success, 1 payload failure (run/wait), 2 usage or invalid spec,
3 scheduler interaction failure, 4 timeout.

Every command after ``submit`` works from a *handle file*
``<work-dir>/<job-id>.handle`` and re-attaches to the native job, so
invocations share no in-memory state.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from portajob.exceptions import (
    CancelError,
    InvalidSpecError,
    JobTimeoutError,
    NoMatchingVersionError,
    SpecFormatError,
    SubmitError,
    TerminalStateError,
    UnknownExecutorError,
)
from portajob.executor import ExecutorConfig, default_registry, default_work_directory
from portajob.job import Job, JobState
from portajob.spec import load_spec

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_SCHEDULER, EXIT_TIMEOUT = 0, 1, 2, 3, 4

EXECUTOR_ENV = "PORTAJOB_EXECUTOR"


class CliError(click.ClickException):
    def __init__(self, message, code):
        super().__init__(message)
        self.exit_code = code


def _work_dir(path: Optional[str]) -> Path:
    wd = Path(path) if path else default_work_directory()
    wd.mkdir(parents=True, exist_ok=True)
    return wd


def _executor(name: str, work_dir: Path):
    try:
        return default_registry().get_instance(name, config=ExecutorConfig(work_directory=work_dir))
    except (UnknownExecutorError, NoMatchingVersionError) as e:
        raise CliError(str(e), EXIT_USAGE)


def _handle_path(work_dir: Path, job_id: str) -> Path:
    return work_dir / f"{job_id}.handle"


def write_handle(work_dir: Path, job: Job, executor_name: str) -> Path:
    path = _handle_path(work_dir, job.id)
    path.write_text(json.dumps({"job_id": job.id, "executor": executor_name,
                                "native_id": job.native_id}) + "\n")
    return path


def _reattach(work_dir: Path, job_id: str):
    path = _handle_path(work_dir, job_id)
    try:
        handle = json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError(f"unknown job id {job_id!r} (no handle in {work_dir})", EXIT_USAGE)
    except json.JSONDecodeError:
        raise CliError(f"corrupt handle file {path}", EXIT_USAGE)
    ex = _executor(handle["executor"], work_dir)
    job = Job(id=job_id)
    ex.attach(job, handle["native_id"])
    if handle.get("canceled"):
        # cancel intent does not survive the process that issued it otherwise
        try:
            ex.cancel(job)
        except (CancelError, TerminalStateError):
            pass
    return ex, job, handle


def _refresh(ex, job: Job) -> None:
    # a vanished job needs a few cycles before it is resolved
    for _ in range(getattr(ex, "missing_tolerance", 1) + 1):
        ex.poll()
        if job.status.state is not JobState.NEW:
            return


def _load_spec(path: str):
    try:
        return load_spec(path)
    except (SpecFormatError, OSError) as e:
        raise CliError(str(e), EXIT_USAGE)


def _submit(ex, job: Job) -> None:
    try:
        ex.submit(job)
    except InvalidSpecError as e:
        raise CliError("invalid job spec:\n" + "\n".join(f"  {v}" for v in e.violations), EXIT_USAGE)
    except SubmitError as e:
        detail = f"\n{e.stderr.strip()}" if e.stderr.strip() and e.stderr.strip() not in str(e) else ""
        raise CliError(f"{e}{detail}", EXIT_SCHEDULER)


executor_option = click.option(
    "--executor", envvar=EXECUTOR_ENV, default="local", show_default=True,
    help=f"Executor name (default from ${EXECUTOR_ENV}).")
work_dir_option = click.option(
    "--work-dir", type=click.Path(file_okay=False), default=None,
    help="Directory for scripts, exit-code files and job handles.")


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def cli(verbose):
    """Submit, monitor and cancel jobs on batch schedulers or locally."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("spec_file", type=click.Path(dir_okay=False))
@executor_option
@work_dir_option
def submit(spec_file, executor, work_dir):
    """Submit the job described by SPEC_FILE; prints '<job-id> <native-id>'."""
    wd = _work_dir(work_dir)
    spec = _load_spec(spec_file)
    ex = _executor(executor, wd)
    job = Job(spec)
    _submit(ex, job)
    write_handle(wd, job, ex.name)
    click.echo(f"{job.id} {job.native_id}")


@cli.command()
@click.argument("job_id")
@work_dir_option
def status(job_id, work_dir):
    """Print '<state> [exit-code]' for a submitted job."""
    ex, job, _ = _reattach(_work_dir(work_dir), job_id)
    _refresh(ex, job)
    click.echo(str(job.status))


@cli.command()
@click.argument("job_id")
@click.option("--timeout", type=float, default=None, help="Seconds to wait before giving up (exit 4).")
@work_dir_option
def wait(job_id, timeout, work_dir):
    """Block until the job is final; exit 0 only if it COMPLETED."""
    ex, job, _ = _reattach(_work_dir(work_dir), job_id)
    try:
        final = job.wait(timeout)
    except JobTimeoutError:
        click.echo(str(job.status))
        raise CliError(f"timed out after {timeout} s", EXIT_TIMEOUT)
    click.echo(str(final))
    sys.exit(EXIT_OK if final.state is JobState.COMPLETED else EXIT_FAILED)


@cli.command()
@click.argument("job_id")
@work_dir_option
def cancel(job_id, work_dir):
    """Request cancellation of a job."""
    wd = _work_dir(work_dir)
    ex, job, handle = _reattach(wd, job_id)
    _refresh(ex, job)
    try:
        ex.cancel(job)
    except TerminalStateError as e:
        raise CliError(str(e), EXIT_USAGE)
    except CancelError as e:
        raise CliError(str(e), EXIT_SCHEDULER)
    handle["canceled"] = True
    _handle_path(wd, job_id).write_text(json.dumps(handle) + "\n")


@cli.command()
@click.argument("native_id")
@executor_option
@work_dir_option
def attach(native_id, executor, work_dir):
    """Create a handle for a job submitted outside portajob."""
    wd = _work_dir(work_dir)
    ex = _executor(executor, wd)
    job = Job()
    job._set_native_id(native_id)
    write_handle(wd, job, ex.name)
    click.echo(f"{job.id} {native_id}")


@cli.command()
@click.argument("spec_file", type=click.Path(dir_okay=False))
@executor_option
@work_dir_option
def run(spec_file, executor, work_dir):
    """Submit, wait, and print the job's standard output."""
    wd = _work_dir(work_dir)
    spec = _load_spec(spec_file)
    ex = _executor(executor, wd)
    job = Job(spec)
    if spec.stdout_path is None:
        spec.stdout_path = wd / f"{job.id}.out"
    _submit(ex, job)
    write_handle(wd, job, ex.name)
    final = job.wait()
    out = Path(spec.stdout_path)
    if not out.is_absolute() and spec.directory is not None:
        out = Path(spec.directory) / out
    if out.exists():
        sys.stdout.write(out.read_text())
        sys.stdout.flush()
    if final.state is not JobState.COMPLETED:
        click.echo(f"{final}{': ' + final.message if final.message else ''}", err=True)
        sys.exit(EXIT_FAILED)


@cli.command()
@click.argument("executor_name")
@click.option("--site", default="unnamed-site", help="Site label recorded in the report.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".",
              help="Directory receiving the report files.")
@click.option("--minimal", is_flag=True, help="Also write a stripped report for upload.")
@work_dir_option
def conformance(executor_name, site, out_dir, minimal, work_dir):
    """Run the conformance suite against EXECUTOR_NAME and write report files."""
    from portajob.harness import run_conformance, write_report

    try:
        report = run_conformance(executor_name, site=site, work_directory=_work_dir(work_dir))
    except UnknownExecutorError as e:
        raise CliError(str(e), EXIT_USAGE)
    paths = write_report(report, out_dir, minimal=minimal)
    for rec in report.tests:
        mark = "PASS" if rec.passed else "FAIL"
        if not rec.applicable:
            mark = "N/A "
        click.echo(f"{mark} {rec.name} ({rec.duration_s:.2f} s)")
    for p in paths:
        click.echo(f"wrote {p}")
    sys.exit(EXIT_OK if report.all_passed else EXIT_FAILED)


@cli.command()
@click.argument("scenario", type=click.Choice(["local", "launcher-script", "qstat-latency"]))
@click.option("-n", "--n-jobs", "n_jobs", type=int, multiple=True, help="Job counts (repeatable).")
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default=None,
              help="CSV output file (default: stdout).")
def bench(scenario, n_jobs, out_file):
    """Measure executor, launcher-script or scheduler-load overhead."""
    from portajob.harness import bench as b

    n_jobs = n_jobs or ((1, 10, 100) if scenario != "qstat-latency" else (1, 10, 100))
    records = []
    for n in n_jobs:
        if scenario == "local":
            records += [b.bench_local(n, "direct-spawn-baseline"), b.bench_local(n, "library")]
        elif scenario == "launcher-script":
            records += [b.bench_launcher(n, mode) for mode in ("none", "minimal-wrapper", "default")]
        else:
            records.append(b.bench_qstat_latency(n))
    text = b.records_to_csv(records)
    if out_file:
        Path(out_file).write_text(text)
    else:
        click.echo(text, nl=False)


def main(argv=None):
    return cli.main(args=argv, prog_name="portajob")


if __name__ == "__main__":
    main()
