"""Executor contract, callback dispatch and the executor registry.

Executors are looked up by name in a registry holding built-in executors plus
any discovered from plugin manifests (``*.exdesc`` files).  A manifest is a
line-oriented ``key: value`` file::

    name: mysched
    version: 1.0.0
    command: /opt/mysched/bin/helper     # or: dialect: slurm

A manifest with ``prefix:`` instead declares a launcher, e.g.
``prefix: mpiexec -np {process_count}``.
"""

from __future__ import annotations

import abc
import getpass
import logging
import os
import re
import shlex
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, NamedTuple, Optional, Tuple

from packaging.specifiers import InvalidSpecifier, SpecifierSet
from packaging.version import InvalidVersion, Version

from portajob import __version__
from portajob.exceptions import (
    AlreadyBoundError,
    InvalidSpecError,
    NoMatchingVersionError,
    PortajobError,
    ResourceInconsistencyError,
    TerminalStateError,
    UnboundJobError,
    UnknownExecutorError,
)
from portajob.job import Job, JobState, JobStatus, StatusCallback
from portajob.spec import Violation, complete_resources, validate_spec

logger = logging.getLogger(__name__)

PLUGIN_PATH_ENV = "PORTAJOB_PLUGIN_PATH"
MANIFEST_SUFFIX = ".exdesc"
_NAME = re.compile(r"^[a-z0-9][a-z0-9_.-]*$")


def default_work_directory() -> Path:
    try:
        user = getpass.getuser()
    except Exception:
        user = str(os.getuid())
    return Path(tempfile.gettempdir()) / f"portajob-{user}"


@dataclass
class ExecutorConfig:
    """Per-instance executor settings.

    ``poll_interval`` defaults per executor (5 s for real batch schedulers,
    10 ms for the local and mock executors).  ``launcher_mode`` selects the
    launcher-script variant: ``default``, ``minimal`` or ``none`` (local
    executor only; used by the benchmarks).
    """

    poll_interval: Optional[float] = None
    work_directory: Optional[Path] = None
    launcher_override: Optional[str] = None
    launcher_mode: str = "default"
    command_timeout: float = 60.0
    missing_tolerance: int = 2
    max_consecutive_failures: int = 10
    mock_spool: Optional[Path] = None

    def __post_init__(self):
        if self.poll_interval is not None and self.poll_interval <= 0:
            raise ValueError(f"poll_interval must be > 0, got {self.poll_interval}")
        if self.launcher_mode not in ("default", "minimal", "none"):
            raise ValueError(f"unknown launcher_mode {self.launcher_mode!r}")
        if self.work_directory is not None:
            self.work_directory = Path(self.work_directory)
        if self.mock_spool is not None:
            self.mock_spool = Path(self.mock_spool)


class JobExecutor(abc.ABC):
    """Base class for executors.

    Subclasses implement :meth:`submit`, :meth:`cancel`, :meth:`attach` and
    :meth:`poll`.  Status changes reach the executor-wide callback set with
    :meth:`set_job_status_callback`; per-job blocking is available through
    :meth:`Job.wait`.
    """

    name = "abstract"
    version = __version__
    default_poll_interval = 5.0

    def __init__(self, config: Optional[ExecutorConfig] = None):
        self.config = config or ExecutorConfig()
        self.poll_interval = self.config.poll_interval or self.default_poll_interval
        self.work_directory = Path(self.config.work_directory or default_work_directory())
        self.work_directory.mkdir(parents=True, exist_ok=True)
        self._callback: Optional[StatusCallback] = None
        self._jobs: Dict[str, Job] = {}
        self._lock = threading.RLock()

    @staticmethod
    def get_instance(name: str, version_constraint: Optional[str] = None,
                     config: Optional[ExecutorConfig] = None) -> "JobExecutor":
        return get_instance(name, version_constraint, config)

    def set_job_status_callback(self, callback: Optional[StatusCallback]) -> None:
        self._callback = callback

    @abc.abstractmethod
    def submit(self, job: Job) -> None:
        ...

    @abc.abstractmethod
    def cancel(self, job: Job) -> None:
        ...

    @abc.abstractmethod
    def attach(self, job: Job, native_id: str) -> None:
        ...

    @abc.abstractmethod
    def poll(self) -> None:
        """Run one synchronous status refresh for every active job."""

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def jobs(self) -> List[Job]:
        with self._lock:
            return list(self._jobs.values())

    def sidecar_path(self, job: Job) -> Path:
        return self.work_directory / f"{job.id}.ec"

    def read_exit_code(self, job: Job) -> Optional[int]:
        """Exit code from the job's sidecar file, or None if absent or unreadable."""
        return read_exit_code(self.sidecar_path(job))

    # -- helpers for subclasses ------------------------------------------

    def _check_submittable(self, job: Job) -> None:
        if job.executor is not None:
            raise AlreadyBoundError(f"job {job.id} is already bound to {job.executor!r}")
        if job.status.state is not JobState.NEW:
            raise PortajobError(f"job {job.id} is {job.status.state.name}, expected NEW")
        if job.spec is None:
            raise InvalidSpecError(["spec: a job without a spec cannot be submitted"])
        violations = validate_spec(job.spec)
        if not violations:
            try:
                complete_resources(job.spec.resources)
            except ResourceInconsistencyError as e:
                violations = [Violation("resources", str(e))]
        if violations:
            raise InvalidSpecError(violations)

    def _check_cancelable(self, job: Job) -> None:
        if job.executor is not self:
            raise UnboundJobError(f"job {job.id} is not bound to this executor")
        if job.status.final:
            raise TerminalStateError(f"job {job.id} is already {job.status.state.name}")

    def _bind(self, job: Job) -> None:
        job._bind(self)
        job.add_status_callback(self._dispatch)
        with self._lock:
            self._jobs[job.id] = job

    def _dispatch(self, job: Job, status: JobStatus) -> None:
        cb = self._callback
        if cb is None:
            return
        try:
            cb(job, status)
        except Exception:
            logger.exception("job status callback failed for job %s (%s)", job.id, status.state.name)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} {self.version}>"


def read_exit_code(path: Path) -> Optional[int]:
    try:
        text = Path(path).read_text()
    except OSError:
        return None
    try:
        return int(text.strip())
    except ValueError:
        logger.warning("ignoring malformed exit-code file %s: %r", path, text[:80])
        return None


# -- registry ----------------------------------------------------------------

ExecutorFactory = Callable[[Optional[ExecutorConfig]], JobExecutor]


@dataclass(frozen=True)
class ExecutorDescriptor:
    name: str
    version: str
    factory: ExecutorFactory = field(compare=False)
    source: str = "built-in"

    def __post_init__(self):
        if not self.name or not _NAME.match(self.name):
            raise ValueError(f"invalid executor name {self.name!r}: must be lowercase, no whitespace")
        Version(self.version)

    @property
    def key(self) -> Tuple[str, Version]:
        return self.name, Version(self.version)


class Diagnostic(NamedTuple):
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


class Discovery(NamedTuple):
    descriptors: List[ExecutorDescriptor]
    diagnostics: List[Diagnostic]
    launchers: List[str] = []


class ExecutorRegistry:
    def __init__(self):
        self._entries: Dict[Tuple[str, Version], ExecutorDescriptor] = {}
        self._lock = threading.Lock()

    def register(self, descriptor: ExecutorDescriptor) -> Optional[ExecutorDescriptor]:
        """Add ``descriptor``, returning the entry it shadows (same name and version)."""
        with self._lock:
            previous = self._entries.get(descriptor.key)
            self._entries[descriptor.key] = descriptor
        return previous

    def names(self) -> List[str]:
        with self._lock:
            return sorted({name for name, _ in self._entries})

    def descriptors(self, name: Optional[str] = None) -> List[ExecutorDescriptor]:
        with self._lock:
            out = [d for d in self._entries.values() if name is None or d.name == name]
        return sorted(out, key=lambda d: d.key)

    def lookup(self, name: str, version_constraint: Optional[str] = None) -> ExecutorDescriptor:
        candidates = self.descriptors(name)
        if not candidates:
            raise UnknownExecutorError(name, self.names())
        if version_constraint:
            try:
                spec = SpecifierSet(version_constraint)
            except InvalidSpecifier:
                spec = SpecifierSet("==" + version_constraint)
            matching = [d for d in candidates if d.key[1] in spec]
            if not matching:
                raise NoMatchingVersionError(name, version_constraint,
                                             [d.version for d in candidates])
            candidates = matching
        return candidates[-1]

    def get_instance(self, name: str, version_constraint: Optional[str] = None,
                     config: Optional[ExecutorConfig] = None) -> JobExecutor:
        descriptor = self.lookup(name, version_constraint)
        executor = descriptor.factory(config)
        executor.name = descriptor.name
        executor.version = descriptor.version
        return executor

    def discover_plugins(self, paths: Iterable) -> Discovery:
        """Scan ``paths`` for manifests and register what they declare.

        Manifests are processed directory by directory in the given order and
        by file name within a directory; later entries shadow earlier ones
        with the same name and version.
        """
        from portajob import launchers

        found: List[ExecutorDescriptor] = []
        diagnostics: List[Diagnostic] = []
        launcher_names: List[str] = []
        for directory in paths:
            directory = Path(directory)
            if not directory.is_dir():
                if str(directory):
                    diagnostics.append(Diagnostic(str(directory), "not a directory; skipped"))
                continue
            for path in sorted(directory.glob("*" + MANIFEST_SUFFIX)):
                try:
                    manifest = parse_manifest(path)
                    if "prefix" in manifest:
                        launcher = launchers.prefix_template_launcher(
                            manifest["name"], manifest["prefix"], str(path))
                        if launchers.register_launcher(launcher) is not None:
                            diagnostics.append(Diagnostic(str(path),
                                                          f"launcher {launcher.name!r} shadows an earlier one"))
                        launcher_names.append(launcher.name)
                        continue
                    descriptor = descriptor_from_manifest(manifest, path)
                except (ValueError, InvalidVersion, OSError) as e:
                    diagnostics.append(Diagnostic(str(path), f"invalid manifest: {e}"))
                    continue
                shadowed = self.register(descriptor)
                if shadowed is not None:
                    diagnostics.append(Diagnostic(
                        str(path), f"{descriptor.name} {descriptor.version} shadows {shadowed.source}"))
                    found = [d for d in found if d.key != descriptor.key]
                found.append(descriptor)
        return Discovery(found, diagnostics, launcher_names)


def parse_manifest(path: Path) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key: value'")
        key = key.strip()
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    for required in ("name", "version"):
        if not out.get(required):
            raise ValueError(f"missing required key {required!r}")
    if not _NAME.match(out["name"]):
        raise ValueError(f"invalid name {out['name']!r}: must be lowercase, no whitespace")
    Version(out["version"])
    kinds = [k for k in ("dialect", "command", "prefix") if k in out]
    if len(kinds) != 1:
        raise ValueError("exactly one of 'dialect', 'command' or 'prefix' is required")
    if "poll_interval" in out:
        try:
            interval = float(out["poll_interval"])
        except ValueError:
            interval = 0.0
        if not interval > 0:
            raise ValueError(f"poll_interval must be a positive number of seconds, got {out['poll_interval']!r}")
    return out


def descriptor_from_manifest(manifest: Dict[str, str], path: Path) -> ExecutorDescriptor:
    from portajob.batch import BatchExecutor, CommandDialect, dialect_for

    name = manifest["name"]
    interval = float(manifest["poll_interval"]) if "poll_interval" in manifest else None

    def build(dialect, config):
        if interval is not None:
            dialect.default_poll_interval = interval  # an explicit config value still wins
        return BatchExecutor(dialect, config)

    if "dialect" in manifest:
        base = manifest["dialect"]
        dialect_for(base)  # fail early on unknown dialects

        def factory(config, base=base):
            return build(dialect_for(base, config), config)
    else:
        argv = shlex.split(manifest["command"])
        if not argv:
            raise ValueError("empty 'command'")
        candidate = Path(path).parent / argv[0]
        if not os.path.isabs(argv[0]) and "/" in argv[0] and candidate.exists():
            argv[0] = str(candidate)

        def factory(config, argv=tuple(argv)):
            return build(CommandDialect(name, list(argv)), config)

    return ExecutorDescriptor(name, manifest["version"], factory, str(path))


def _builtin_descriptors() -> List[ExecutorDescriptor]:
    def local(config):
        from portajob.local import LocalExecutor
        return LocalExecutor(config)

    def batch(dialect_name):
        def factory(config):
            from portajob.batch import BatchExecutor, dialect_for
            return BatchExecutor(dialect_for(dialect_name, config), config)
        return factory

    out = [ExecutorDescriptor("local", __version__, local)]
    for name in ("slurm", "pbs", "lsf", "mock"):
        out.append(ExecutorDescriptor(name, __version__, batch(name)))
    return out


BUILTIN_EXECUTORS = ("local", "lsf", "mock", "pbs", "slurm")


def plugin_search_path() -> List[Path]:
    env = os.environ.get(PLUGIN_PATH_ENV, "")
    paths = [Path(p) for p in env.split(os.pathsep) if p]
    config_home = Path(os.environ.get("XDG_CONFIG_HOME") or Path.home() / ".config")
    paths.append(config_home / "portajob" / "plugins")
    return paths


_default: Optional[ExecutorRegistry] = None
_default_lock = threading.Lock()


def default_registry() -> ExecutorRegistry:
    """Registry with the built-ins and every manifest found on the plugin search path."""
    global _default
    with _default_lock:
        if _default is None:
            registry = ExecutorRegistry()
            for d in _builtin_descriptors():
                registry.register(d)
            found = registry.discover_plugins(p for p in plugin_search_path() if p.is_dir())
            for diag in found.diagnostics:
                logger.warning("plugin discovery: %s", diag)
            _default = registry
        return _default


def reset_default_registry() -> None:
    """Forget the default registry so the next lookup rescans the plugin path."""
    global _default
    with _default_lock:
        _default = None


def get_instance(name: str, version_constraint: Optional[str] = None,
                 config: Optional[ExecutorConfig] = None) -> JobExecutor:
    return default_registry().get_instance(name, version_constraint, config)


def discover_plugins(paths: Iterable) -> Discovery:
    return default_registry().discover_plugins(paths)
