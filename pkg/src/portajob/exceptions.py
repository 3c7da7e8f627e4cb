"""Exception hierarchy shared by all portajob modules."""


class PortajobError(Exception):
    """Base class for all errors raised by portajob."""


class InvalidSpecError(PortajobError, ValueError):
    """Raised when a JobSpec violates its invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid job spec: " + "; ".join(str(v) for v in self.violations))


class ResourceInconsistencyError(PortajobError, ValueError):
    """Node, process and processes-per-node counts cannot be reconciled."""


class IllegalTransitionError(PortajobError):
    def __init__(self, current, new):
        self.current = current
        self.new = new
        super().__init__(f"illegal state transition {current.name} -> {new.name}")


class JobTimeoutError(PortajobError, TimeoutError):
    """wait() returned before the job reached a final state."""


class UnboundJobError(PortajobError):
    """The job is not bound to an executor."""


class AlreadyBoundError(PortajobError):
    """The job is already bound to an executor (submitted or attached)."""


class TerminalStateError(PortajobError):
    """The operation requires a non-final job."""


class SubmitError(PortajobError):
    """The scheduler (or the OS) refused the job.

    ``stderr`` carries the raw diagnostic text, if any.
    """

    def __init__(self, message, stderr=""):
        self.stderr = stderr
        super().__init__(message)


class CancelError(PortajobError):
    """The cancel command failed for a reason other than a natural-completion race."""


class SchedulerCommandError(PortajobError):
    """A scheduler command failed, timed out or could not be found."""

    def __init__(self, message, argv=None, returncode=None, stdout="", stderr=""):
        self.argv = argv
        self.returncode = returncode
        self.stdout = stdout
        self.stderr = stderr
        super().__init__(message)


class NativeIdParseError(PortajobError):
    """The submit command output did not contain a recognizable native id."""

    def __init__(self, stdout, pattern):
        self.stdout = stdout
        self.pattern = pattern
        super().__init__(f"no native id matching {pattern!r} in submit output: {stdout!r}")


class TemplateRenderError(PortajobError):
    def __init__(self, field, template):
        self.field = field
        super().__init__(f"cannot render template {template!r}: missing field {field!r}")


class UnknownExecutorError(PortajobError, LookupError):
    def __init__(self, name, known):
        self.name = name
        self.known = sorted(known)
        super().__init__(f"unknown executor {name!r}; known executors: {', '.join(self.known)}")


class NoMatchingVersionError(PortajobError, LookupError):
    def __init__(self, name, constraint, versions):
        self.name = name
        self.constraint = constraint
        self.versions = list(versions)
        super().__init__(
            f"no version of executor {name!r} satisfies {constraint!r} "
            f"(available: {', '.join(self.versions) or 'none'})"
        )


class UnknownLauncherError(PortajobError, LookupError):
    def __init__(self, name, known):
        self.name = name
        self.known = sorted(known)
        super().__init__(f"unknown launcher {name!r}; known launchers: {', '.join(self.known)}")


class SpecFormatError(PortajobError, ValueError):
    """A job-spec document is malformed (unknown keys, wrong types)."""
