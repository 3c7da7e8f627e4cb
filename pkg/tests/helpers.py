"""Helpers shared by the test modules."""

import sys

from portajob.spec import JobSpec

PY = sys.executable


def sh(script, **kw):
    return JobSpec(executable="/bin/sh", arguments=["-c", script], **kw)
