"""Scheduler-independent job descriptions.

A :class:`JobSpec` says *what* to run; its :class:`ResourceSpec` says on how
much hardware, and :class:`JobAttributes` carries scheduling metadata such as
wall time and queue.  Nothing here depends on an executor.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from portajob.exceptions import ResourceInconsistencyError, SpecFormatError

_CUSTOM_KEY = re.compile(r"^[a-z][a-z0-9_-]*\.[^\s]+$")


@dataclass
class ResourceSpec:
    version: int = 1
    node_count: Optional[int] = None
    process_count: Optional[int] = None
    processes_per_node: Optional[int] = None
    cpu_cores_per_process: Optional[int] = None
    gpu_cores_per_process: Optional[int] = None
    exclusive_node_use: bool = False

    @property
    def counts(self):
        return self.node_count, self.process_count, self.processes_per_node


@dataclass
class JobAttributes:
    duration: Optional[float] = None
    queue_name: Optional[str] = None
    project_name: Optional[str] = None
    reservation_id: Optional[str] = None
    custom_attributes: Dict[str, str] = field(default_factory=dict)

    def custom_for(self, dialect: str) -> Dict[str, str]:
        """Custom attributes in ``dialect``'s namespace, with the prefix removed.

        Keys addressed to other dialects are silently ignored.
        """
        prefix = dialect + "."
        return {k[len(prefix):]: v for k, v in sorted(self.custom_attributes.items())
                if k.startswith(prefix)}


@dataclass
class JobSpec:
    """What to run, where, and with which streams."""

    executable: str = ""
    arguments: List[str] = field(default_factory=list)
    directory: Optional[Path] = None
    environment: Dict[str, str] = field(default_factory=dict)
    stdin_path: Optional[Path] = None
    stdout_path: Optional[Path] = None
    stderr_path: Optional[Path] = None
    resources: ResourceSpec = field(default_factory=ResourceSpec)
    attributes: JobAttributes = field(default_factory=JobAttributes)
    launcher: Optional[str] = None
    pre_launch: Optional[Path] = None
    post_launch: Optional[Path] = None

    def __post_init__(self):
        for name in _PATH_FIELDS:
            value = getattr(self, name)
            if value is not None and not isinstance(value, Path):
                setattr(self, name, Path(value))
        self.arguments = [str(a) for a in self.arguments]

    @property
    def merged_output(self) -> bool:
        return self.stdout_path is not None and self.stdout_path == self.stderr_path


_PATH_FIELDS = ("directory", "stdin_path", "stdout_path", "stderr_path", "pre_launch", "post_launch")


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self):
        return f"{self.field}: {self.message}"


def validate_spec(spec: JobSpec) -> List[Violation]:
    """Return every invariant violation in ``spec``; an empty list means valid."""
    out = []
    if not isinstance(spec.executable, str) or not spec.executable:
        out.append(Violation("executable", "must be a non-empty string"))
    for name in spec.environment:
        if not name or "=" in name or "\0" in name:
            out.append(Violation("environment", f"invalid variable name {name!r}"))
    for name, value in spec.environment.items():
        if not isinstance(value, str) or "\0" in value:
            out.append(Violation("environment", f"value of {name!r} must be a string without NUL"))

    r = spec.resources
    if r.version != 1:
        out.append(Violation("resources.version", f"unsupported version {r.version}"))
    for name in ("node_count", "process_count", "processes_per_node", "cpu_cores_per_process"):
        value = getattr(r, name)
        if value is not None and (not _is_int(value) or value < 1):
            out.append(Violation(f"resources.{name}", f"must be a positive integer, got {value!r}"))
    g = r.gpu_cores_per_process
    if g is not None and (not _is_int(g) or g < 0):
        out.append(Violation("resources.gpu_cores_per_process",
                             f"must be a non-negative integer, got {g!r}"))
    n, p, k = r.counts
    if None not in (n, p, k) and all(_is_int(x) for x in (n, p, k)) and n * k != p:
        out.append(Violation("resources", f"node_count x processes_per_node != process_count "
                                          f"({n}x{k}={n * k}, not {p})"))

    a = spec.attributes
    if a.duration is not None and (isinstance(a.duration, bool)
                                   or not isinstance(a.duration, (int, float)) or a.duration <= 0):
        out.append(Violation("attributes.duration", f"must be > 0 seconds, got {a.duration!r}"))
    for key in a.custom_attributes:
        if not _CUSTOM_KEY.match(key):
            out.append(Violation("attributes.custom_attributes",
                                 f"key {key!r} is not of the form <dialect>.<key>"))
    return out


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def complete_resources(r: ResourceSpec) -> ResourceSpec:
    """Fill in whichever of node/process/per-node counts follows from the others.

    Raises :class:`ResourceInconsistencyError` when the given counts contradict
    each other or would require rounding.
    """
    n, p, k = r.counts
    given = sum(x is not None for x in (n, p, k))
    if given == 3:
        if n * k != p:
            raise ResourceInconsistencyError(f"{n} nodes x {k} processes per node != {p} processes")
        return dataclasses.replace(r)
    if given == 0:
        return dataclasses.replace(r, node_count=1)
    if given == 1:
        return dataclasses.replace(r)
    if k is None:
        if p % n:
            raise ResourceInconsistencyError(f"{p} processes cannot be spread evenly over {n} nodes")
        return dataclasses.replace(r, processes_per_node=p // n)
    if n is None:
        if p % k:
            raise ResourceInconsistencyError(f"{p} processes is not a multiple of {k} per node")
        return dataclasses.replace(r, node_count=p // k)
    return dataclasses.replace(r, process_count=n * k)


# -- job-spec file format ---------------------------------------------------

def spec_to_dict(spec: JobSpec) -> Dict[str, Any]:
    d = dataclasses.asdict(spec)
    for name in _PATH_FIELDS:
        if d[name] is not None:
            d[name] = str(d[name])
    return d


def spec_from_dict(d: Dict[str, Any]) -> JobSpec:
    if not isinstance(d, dict):
        raise SpecFormatError("job spec must be a JSON object")
    kw = _strict_fields(JobSpec, d, "")
    if "resources" in kw:
        kw["resources"] = ResourceSpec(**_strict_fields(ResourceSpec, kw["resources"], "resources."))
    if "attributes" in kw:
        kw["attributes"] = JobAttributes(**_strict_fields(JobAttributes, kw["attributes"], "attributes."))
    for name, typ in (("arguments", list), ("environment", dict)):
        if name in kw and not isinstance(kw[name], typ):
            raise SpecFormatError(f"{name} must be a JSON {'array' if typ is list else 'object'}")
    return JobSpec(**kw)


def _strict_fields(cls, d, prefix):
    if not isinstance(d, dict):
        raise SpecFormatError(f"{prefix.rstrip('.')} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise SpecFormatError("unknown key(s): " + ", ".join(prefix + k for k in unknown))
    return dict(d)


def load_spec(path) -> JobSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SpecFormatError(f"{path}: not valid JSON: {e}") from None
    return spec_from_dict(data)


def dump_spec(spec: JobSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")
