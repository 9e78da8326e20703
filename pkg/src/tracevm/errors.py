"""Exception hierarchy shared across the package."""


class TraceVMError(Exception):
    """Base class for every error raised by this package."""


class ProgramParseError(TraceVMError):
    """Program text could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ProgramValidationError(TraceVMError):
    """Parsed program violates a structural rule (bad jump, bad slot, missing return)."""

    def __init__(self, message: str, method: str | None = None, line: int | None = None):
        self.method = method
        self.line = line
        prefix = ""
        if method is not None:
            prefix = f"{method}: "
        if line is not None:
            prefix = f"{prefix}line {line}: "
        super().__init__(prefix + message)


class MethodNotFoundError(TraceVMError):
    """Lookup of a method reference found no loaded method."""


class ArityMismatchError(TraceVMError):
    """Invocation supplied the wrong number of arguments."""


class StackDepthError(TraceVMError):
    """Call depth exceeded the configured frame-stack limit."""


class VMInternalError(TraceVMError):
    """Invariant the loader should have guaranteed was violated at run time."""


class DuplicateListenerError(TraceVMError):
    """A listener with the same id is already registered."""


class UnknownListenerError(TraceVMError):
    """Listener id is not registered."""


class InvalidStubError(TraceVMError):
    """Requested stub variant is invalid for the method's compilation state."""


class PhaseError(TraceVMError):
    """Trace engine operation called in the wrong phase."""


class ConfigError(TraceVMError):
    """Trace configuration is malformed or a lifecycle rule was violated."""


class WorkloadError(TraceVMError):
    """Workload generator parameters are out of bounds."""


class BenchmarkError(TraceVMError):
    """Benchmark harness misuse, such as comparing incompatible runs."""
