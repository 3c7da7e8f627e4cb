"""Portable job submission and monitoring for batch schedulers and local processes.

Public names are imported lazily so that light entry points (the mock
scheduler's command line in particular) start quickly.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "Job": "portajob.job",
    "JobState": "portajob.job",
    "JobStatus": "portajob.job",
    "advance": "portajob.job",
    "transition": "portajob.job",
    "wait": "portajob.job",
    "JobAttributes": "portajob.spec",
    "JobSpec": "portajob.spec",
    "ResourceSpec": "portajob.spec",
    "Violation": "portajob.spec",
    "complete_resources": "portajob.spec",
    "load_spec": "portajob.spec",
    "validate_spec": "portajob.spec",
    "ExecutorConfig": "portajob.executor",
    "ExecutorDescriptor": "portajob.executor",
    "ExecutorRegistry": "portajob.executor",
    "JobExecutor": "portajob.executor",
    "discover_plugins": "portajob.executor",
    "get_instance": "portajob.executor",
}

__all__ = sorted(_EXPORTS) + ["ResourceSpecV1"]


def __getattr__(name):
    if name == "ResourceSpecV1":
        name = "ResourceSpec"
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(f"module 'portajob' has no attribute {name!r}") from None
    return getattr(importlib.import_module(module), name)
