"""Batch-scheduler executors: dialects, script generation and bulk status polling."""

from portajob.batch.dialects import (
    Command,
    CommandDialect,
    InterimState,
    LsfDialect,
    MockDialect,
    PbsDialect,
    SchedulerDialect,
    SlurmDialect,
    StatusRow,
    dialect_for,
)
from portajob.batch.executor import BatchExecutor

__all__ = [
    "BatchExecutor",
    "Command",
    "CommandDialect",
    "InterimState",
    "LsfDialect",
    "MockDialect",
    "PbsDialect",
    "SchedulerDialect",
    "SlurmDialect",
    "StatusRow",
    "dialect_for",
]
