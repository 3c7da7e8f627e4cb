"""Scheduler dialects: submit-script templates, command builders and output parsers.

Everything scheduler specific lives here.  Directive spellings and state
codes follow each scheduler's public command-line documentation.
"""

from __future__ import annotations

import enum
import json
import math
import os
import re
import shlex
from dataclasses import dataclass
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional

import pystache

from portajob.exceptions import NativeIdParseError, TemplateRenderError
from portajob.spec import JobSpec, ResourceSpec


class InterimState(enum.Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED_LRM = "FAILED_LRM"
    CANCELED_LRM = "CANCELED_LRM"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class Command:
    argv: List[str]
    stdin: Optional[Path] = None


class StatusRow(NamedTuple):
    native_id: str
    state: InterimState
    message: Optional[str] = None
    exit_code: Optional[int] = None


_renderer = pystache.Renderer(escape=lambda s: s, missing_tags="strict")


def hms(seconds: float) -> str:
    s = math.ceil(seconds)
    return f"{s // 3600:02d}:{s % 3600 // 60:02d}:{s % 60:02d}"


class SchedulerDialect:
    """Base dialect.  Subclasses set the class attributes and override what differs."""

    name = "abstract"
    template_name = ""
    native_id_pattern = r"^\s*(\S+)\s*$"
    state_map: Dict[str, InterimState] = {}
    # cancel failures matching this are a race with natural completion
    cancel_absorb_pattern = r"already completed"
    default_poll_interval = 5.0

    # -- submit script ---------------------------------------------------

    @property
    def template(self) -> str:
        ref = importlib_resources.files("portajob.batch") / "templates" / f"{self.template_name}.mustache"
        return ref.read_text()

    def render_duration(self, seconds: float) -> str:
        return hms(seconds)

    def context(self, job_id: str, spec: JobSpec, resources: ResourceSpec, work_directory: Path,
                launch_command: List[str]) -> dict:
        a = spec.attributes
        r = resources
        return {
            "job_id": job_id,
            "queue": a.queue_name,
            "project": a.project_name,
            "reservation": a.reservation_id,
            "duration": self.render_duration(a.duration) if a.duration else None,
            "nodes": r.node_count,
            "processes": r.process_count,
            "ppn": r.processes_per_node,
            "cpus": r.cpu_cores_per_process,
            "gpus": r.gpu_cores_per_process,
            "exclusive": r.exclusive_node_use,
            "out": str(work_directory / f"{job_id}.out"),
            "err": str(work_directory / f"{job_id}.err"),
            "custom": [{"key": k, "value": v} for k, v in a.custom_for(self.name).items()],
            "environment": [{"name": k, "value": shlex.quote(v)} for k, v in spec.environment.items()],
            "directory": shlex.quote(str(spec.directory)) if spec.directory is not None else None,
            "launcher_script": shlex.quote(str(work_directory / f"{job_id}.launcher")),
            "launch_command": " ".join(shlex.quote(t) for t in launch_command),
        }

    def render(self, context: dict) -> str:
        try:
            return _renderer.render(self.template, context)
        except pystache.context.KeyNotFoundError as e:
            raise TemplateRenderError(e.key, self.template_name) from None

    # -- commands ----------------------------------------------------------

    def submit_command(self, script: Path) -> Command:
        raise NotImplementedError

    def status_command(self, native_ids: List[str]) -> Command:
        raise NotImplementedError

    def cancel_command(self, native_id: str) -> Command:
        raise NotImplementedError

    # -- output parsing ------------------------------------------------------

    def parse_native_id(self, stdout: str) -> str:
        m = re.search(self.native_id_pattern, stdout, re.MULTILINE)
        if not m:
            raise NativeIdParseError(stdout, self.native_id_pattern)
        return m.group(1).strip()

    def map_state(self, code: str) -> InterimState:
        return self.state_map.get(code, InterimState.UNKNOWN)

    def status_rows(self, stdout: str) -> Iterable:
        return [line for line in stdout.splitlines() if line.strip()]

    def status_row_parser(self, row) -> Optional[StatusRow]:
        parts = row.split(None, 2)
        if len(parts) < 2:
            return None
        message = parts[2].strip() if len(parts) > 2 else None
        return StatusRow(parts[0], self.map_state(parts[1]), message)

    def parse_status(self, stdout: str) -> List[StatusRow]:
        out = []
        for row in self.status_rows(stdout):
            parsed = self.status_row_parser(row)
            if parsed is not None:
                out.append(parsed)
        return out

    def absorbs_cancel_failure(self, output: str) -> bool:
        return re.search(self.cancel_absorb_pattern, output, re.IGNORECASE) is not None

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


P, R, D, F, C = (InterimState.PENDING, InterimState.RUNNING, InterimState.DONE,
                 InterimState.FAILED_LRM, InterimState.CANCELED_LRM)


class SlurmDialect(SchedulerDialect):
    name = "slurm"
    template_name = "slurm"
    native_id_pattern = r"Submitted batch job (\d+)"
    cancel_absorb_pattern = r"already completed|invalid job id"
    # squeue --format=%T (long state names)
    state_map = {
        "PENDING": P, "CONFIGURING": P, "REQUEUED": P, "REQUEUE_HOLD": P, "REQUEUE_FED": P,
        "RESV_DEL_HOLD": P,
        "RUNNING": R, "COMPLETING": R, "SUSPENDED": R, "STOPPED": R, "SIGNALING": R,
        "STAGE_OUT": R, "RESIZING": R,
        "COMPLETED": D,
        "FAILED": F, "TIMEOUT": F, "NODE_FAIL": F, "BOOT_FAIL": F, "DEADLINE": F,
        "OUT_OF_MEMORY": F, "PREEMPTED": F, "SPECIAL_EXIT": F,
        "CANCELLED": C, "REVOKED": C,
    }

    def submit_command(self, script):
        return Command(["sbatch", str(script)])

    def status_command(self, native_ids):
        return Command(["squeue", "--noheader", "--states=all", "--format=%i %T %r",
                        "--jobs=" + ",".join(native_ids)])

    def cancel_command(self, native_id):
        return Command(["scancel", native_id])

    def status_row_parser(self, row):
        parsed = super().status_row_parser(row)
        if parsed is not None and parsed.message in ("None", "(null)"):
            parsed = parsed._replace(message=None)
        return parsed


class PbsDialect(SchedulerDialect):
    """PBS Pro.  Status comes from ``qstat -f -F json -x``, so ids are never truncated."""

    name = "pbs"
    template_name = "pbs"
    cancel_absorb_pattern = r"job has finished|unknown job id|already"
    state_map = {
        "Q": P, "H": P, "W": P, "T": P, "M": P,
        "R": R, "E": R, "B": R, "S": R, "U": R,
        "F": D, "X": D,
    }

    def context(self, job_id, spec, resources, work_directory, launch_command):
        ctx = super().context(job_id, spec, resources, work_directory, launch_command)
        a, r = spec.attributes, resources
        # reservations are queues in PBS Pro
        ctx["queue"] = a.reservation_id or a.queue_name
        cpus = r.cpu_cores_per_process or 1
        if r.node_count and r.processes_per_node:
            select = f"{r.node_count}:ncpus={r.processes_per_node * cpus}:mpiprocs={r.processes_per_node}"
            gpus = (r.gpu_cores_per_process or 0) * r.processes_per_node
        elif r.node_count:
            select = str(r.node_count)
            gpus = r.gpu_cores_per_process or 0
        elif r.process_count:
            select = f"{r.process_count}:ncpus={cpus}:mpiprocs=1"
            gpus = r.gpu_cores_per_process or 0
        else:
            select, gpus = None, 0
        if select and gpus:
            select += f":ngpus={gpus}"
        ctx["select"] = select
        if ctx["directory"] is None:
            ctx["directory"] = '"$PBS_O_WORKDIR"'
        return ctx

    def submit_command(self, script):
        return Command(["qsub", str(script)])

    def status_command(self, native_ids):
        return Command(["qstat", "-f", "-F", "json", "-x"] + list(native_ids))

    def cancel_command(self, native_id):
        return Command(["qdel", native_id])

    def status_rows(self, stdout):
        if not stdout.strip():
            return []
        return list(json.loads(stdout).get("Jobs", {}).items())

    def status_row_parser(self, row):
        native_id, attrs = row
        code = attrs.get("job_state", "")
        exit_status = attrs.get("Exit_status")
        return StatusRow(native_id, self.map_state(code), attrs.get("comment"),
                         int(exit_status) if exit_status is not None else None)


class LsfDialect(SchedulerDialect):
    name = "lsf"
    template_name = "lsf"
    native_id_pattern = r"Job <(\d+)>"
    cancel_absorb_pattern = r"already finished|job has already"
    state_map = {
        "PEND": P, "PSUSP": P, "WAIT": P, "PROV": P,
        "RUN": R, "USUSP": R, "SSUSP": R, "UNKWN": R,
        "DONE": D,
        "EXIT": F,
        "ZOMBI": C,
    }

    def render_duration(self, seconds):
        return str(math.ceil(seconds / 60))

    def context(self, job_id, spec, resources, work_directory, launch_command):
        ctx = super().context(job_id, spec, resources, work_directory, launch_command)
        g = resources.gpu_cores_per_process or 0
        ctx["gpus_per_host"] = g * (resources.processes_per_node or 1) if g else None
        return ctx

    def submit_command(self, script):
        # bsub only parses #BSUB directives when the script arrives on stdin
        return Command(["bsub"], stdin=Path(script))

    def status_command(self, native_ids):
        return Command(["bjobs", "-noheader", "-o", "jobid stat exit_code delimiter='|'"]
                       + list(native_ids))

    def cancel_command(self, native_id):
        return Command(["bkill", native_id])

    def status_row_parser(self, row):
        parts = row.strip().split("|")
        if len(parts) < 2:
            return None
        code = parts[2].strip() if len(parts) > 2 else ""
        return StatusRow(parts[0].strip(), self.map_state(parts[1].strip()), None,
                         int(code) if code.lstrip("-").isdigit() else None)


class CommandDialect(SchedulerDialect):
    """Drives an external helper honoring the portajob command contract.

    ``helper submit SCRIPT`` prints the native id, ``helper status ID...``
    prints ``<id> <code> [message]`` lines using the mock's state codes, and
    ``helper cancel ID`` exits 0 on success.  A helper may also answer
    ``counters`` with ``name=N`` lines.
    """

    template_name = "mock"
    native_id_pattern = r"^\s*(\S+)\s*$"
    state_map = {"Q": P, "R": R, "CD": D, "F": F, "CA": C, "U": F}
    _EXIT = re.compile(r"^exit=(-?\d+)$")

    def __init__(self, name: str, command: List[str]):
        self.name = name
        self.command = list(command)

    def context(self, job_id, spec, resources, work_directory, launch_command):
        ctx = super().context(job_id, spec, resources, work_directory, launch_command)
        for key in ("queue", "project", "reservation"):
            if ctx[key] is not None:
                ctx[key] = shlex.quote(ctx[key])
        ctx["out"] = shlex.quote(ctx["out"])
        ctx["err"] = shlex.quote(ctx["err"])
        ctx["custom"] = [{"key": c["key"], "value": shlex.quote(c["value"])} for c in ctx["custom"]]
        return ctx

    def render_duration(self, seconds):
        return str(math.ceil(seconds))

    def submit_command(self, script):
        return Command(self.command + ["submit", str(script)])

    def status_command(self, native_ids):
        return Command(self.command + ["status"] + list(native_ids))

    def cancel_command(self, native_id):
        return Command(self.command + ["cancel", native_id])

    def counters_command(self) -> Command:
        return Command(self.command + ["counters"])

    def status_row_parser(self, row):
        parsed = super().status_row_parser(row)
        if parsed is None:
            return None
        code = row.split()[1]
        if code == "U":
            return parsed._replace(message="unknown to scheduler")
        m = self._EXIT.match(parsed.message or "")
        if m:
            return parsed._replace(message=None, exit_code=int(m.group(1)))
        return parsed


class MockDialect(CommandDialect):
    default_poll_interval = 0.01

    def __init__(self, spool):
        from portajob.mock import command_prefix

        self.spool = Path(spool)
        super().__init__("mock", command_prefix(self.spool))


def mock_spool_for(config) -> Path:
    from portajob.executor import default_work_directory
    from portajob.mock import SPOOL_ENV

    if config is not None and config.mock_spool is not None:
        return config.mock_spool
    if os.environ.get(SPOOL_ENV):
        return Path(os.environ[SPOOL_ENV])
    work = (config.work_directory if config is not None else None) or default_work_directory()
    return Path(work) / "mock-spool"


_DIALECTS = {"slurm": SlurmDialect, "pbs": PbsDialect, "lsf": LsfDialect}


def dialect_for(name: str, config=None) -> SchedulerDialect:
    if name == "mock":
        return MockDialect(mock_spool_for(config))
    try:
        return _DIALECTS[name]()
    except KeyError:
        raise ValueError(f"unknown dialect {name!r}; known: mock, {', '.join(sorted(_DIALECTS))}") from None
