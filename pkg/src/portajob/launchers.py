"""Launchers and launcher scripts.

A launcher turns a job into the command that starts its processes once
resources are allocated (``srun``, ``mpirun``, a plain fork, ...).  Every job
is started through a small shell *launcher script* which sources the
pre-launch hook, runs the launch command with the requested stream wiring,
runs the post-launch hook and records the payload exit code in a sidecar file.
The launch command itself is passed to the script as its positional
arguments.
"""

from __future__ import annotations

import logging
import shlex
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

from portajob.exceptions import UnknownLauncherError
from portajob.spec import JobSpec, ResourceSpec, complete_resources

logger = logging.getLogger(__name__)

CommandBuilder = Callable[[JobSpec, ResourceSpec], List[str]]

SCRIPT_MODES = ("default", "minimal", "none")


@dataclass(frozen=True)
class Launcher:
    name: str
    command_builder: CommandBuilder
    source: str = "built-in"

    def prefix(self, spec: JobSpec, resources: ResourceSpec) -> List[str]:
        return list(self.command_builder(spec, resources))


# Starts N copies of "$@" concurrently, each with PORTAJOB_RANK set, and exits
# with the first nonzero code in rank order.
_MULTIPLE_SH = (
    'n=$1; shift; i=0; pids=""; '
    'while [ "$i" -lt "$n" ]; do PORTAJOB_RANK=$i "$@" & pids="$pids $!"; i=$((i+1)); done; '
    'rc=0; for p in $pids; do wait "$p"; c=$?; if [ "$rc" -eq 0 ]; then rc=$c; fi; done; '
    'exit "$rc"'
)


def _single(spec, r):
    return []


def _multiple(spec, r):
    return ["/bin/sh", "-c", _MULTIPLE_SH, "portajob-multiple", str(r.process_count or 1)]


def _mpirun(spec, r):
    return ["mpirun", "-n", str(r.process_count or 1)]


def _srun(spec, r):
    argv = ["srun"]
    if r.process_count:
        argv.append(f"--ntasks={r.process_count}")
    if r.node_count:
        argv.append(f"--nodes={r.node_count}")
    if r.cpu_cores_per_process:
        argv.append(f"--cpus-per-task={r.cpu_cores_per_process}")
    if r.gpu_cores_per_process:
        argv.append(f"--gpus-per-task={r.gpu_cores_per_process}")
    return argv


def _jsrun(spec, r):
    # one resource set per process
    return ["jsrun", "--nrs", str(r.process_count or 1), "--tasks_per_rs", "1",
            "--cpu_per_rs", str(r.cpu_cores_per_process or 1),
            "--gpu_per_rs", str(r.gpu_cores_per_process or 0)]


def _aprun(spec, r):
    argv = ["aprun", "-n", str(r.process_count or 1)]
    if r.processes_per_node:
        argv += ["-N", str(r.processes_per_node)]
    if r.cpu_cores_per_process:
        argv += ["-d", str(r.cpu_cores_per_process)]
    return argv


_BUILTINS = {
    "single": _single,
    "multiple": _multiple,
    "mpirun": _mpirun,
    "srun": _srun,
    "jsrun": _jsrun,
    "aprun": _aprun,
}

_registry: Dict[str, Launcher] = {name: Launcher(name, fn) for name, fn in _BUILTINS.items()}
_registry_lock = threading.Lock()


def register_launcher(launcher: Launcher) -> Optional[Launcher]:
    """Add ``launcher``; returns the launcher it shadows, if any."""
    with _registry_lock:
        previous = _registry.get(launcher.name)
        _registry[launcher.name] = launcher
    return previous


def prefix_template_launcher(name: str, prefix: str, source: str) -> Launcher:
    """A launcher whose prefix is a shell-word template such as ``mpiexec -np {process_count}``."""
    tokens = shlex.split(prefix)

    def build(spec, r):
        values = {
            "process_count": r.process_count or 1,
            "node_count": r.node_count or 1,
            "processes_per_node": r.processes_per_node or 1,
            "cpu_cores_per_process": r.cpu_cores_per_process or 1,
            "gpu_cores_per_process": r.gpu_cores_per_process or 0,
        }
        return [t.format(**values) for t in tokens]

    return Launcher(name, build, source)


def known_launchers() -> List[str]:
    with _registry_lock:
        return sorted(_registry)


def get_launcher(name: str) -> Launcher:
    with _registry_lock:
        try:
            return _registry[name]
        except KeyError:
            raise UnknownLauncherError(name, _registry) from None


def get_launch_command(launcher, spec: JobSpec) -> List[str]:
    """``launcher`` prefix followed by the executable and its arguments."""
    if isinstance(launcher, str):
        launcher = get_launcher(launcher)
    resources = complete_resources(spec.resources)
    return launcher.prefix(spec, resources) + [spec.executable] + list(spec.arguments)


def _q(path) -> str:
    return shlex.quote(str(path))


def redirections(spec: JobSpec) -> str:
    parts = []
    if spec.stdin_path is not None:
        parts.append("<" + _q(spec.stdin_path))
    if spec.stdout_path is not None:
        parts.append(">" + _q(spec.stdout_path))
    if spec.merged_output:
        parts.append("2>&1")
    elif spec.stderr_path is not None:
        parts.append("2>" + _q(spec.stderr_path))
    return " ".join(parts)


def render_launcher_script(spec: JobSpec, sidecar_path, mode: str = "default") -> str:
    """Shell script that runs ``"$@"`` as the payload and records its exit code.

    ``mode="minimal"`` produces a bare wrapper (run, capture, record) with no
    hooks.  Both variants write ``sidecar_path`` and exit with the payload code.
    """
    if mode not in ("default", "minimal"):
        raise ValueError(f"no launcher script in mode {mode!r}")
    redir = redirections(spec)
    launch = '"$@"' + (" " + redir if redir else "")
    if mode == "minimal":
        return (
            "#!/bin/sh\n"
            f"{launch}\n"
            "_pj_rc=$?\n"
            f"printf '%d\\n' \"$_pj_rc\" > {_q(sidecar_path)}\n"
            'exit "$_pj_rc"\n'
        )
    lines = [
        "#!/bin/sh",
        "# portajob launcher script",
        f"_pj_ec_file={_q(sidecar_path)}",
        # any exit, including one from inside a sourced hook, records its code
        "trap '_pj_rc=$?; printf \"%d\\n\" \"$_pj_rc\" > \"$_pj_ec_file\"' EXIT",
    ]
    if spec.pre_launch is not None:
        lines.append(f". {_q(spec.pre_launch)} || exit $?")
    lines += [launch, "_pj_rc=$?"]
    if spec.post_launch is not None:
        # subshell: a hook calling "exit 0" must not mask a payload failure
        lines += [
            f"( . {_q(spec.post_launch)} )",
            "_pj_post=$?",
            'if [ "$_pj_rc" -eq 0 ] && [ "$_pj_post" -ne 0 ]; then _pj_rc=$_pj_post; fi',
        ]
    lines.append('exit "$_pj_rc"')
    return "\n".join(lines) + "\n"


def write_launcher_script(spec: JobSpec, path: Path, sidecar_path, mode: str = "default") -> Path:
    path = Path(path)
    path.write_text(render_launcher_script(spec, sidecar_path, mode))
    return path
