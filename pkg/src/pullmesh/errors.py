"""Typed pipeline errors carrying the CLI exit-code and stage conventions."""


class PullmeshError(Exception):
    """Base error. ``exit_code`` follows the CLI convention (2 input,
    3 numerical, 4 internal); ``stage`` tags the pipeline stage that failed."""

    exit_code = 1

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class InputError(PullmeshError):
    """Malformed or inconsistent input (bad file, bad pose, bad argument)."""

    exit_code = 2


class EmptyCloudError(InputError):
    """A point cloud with no points where at least one is required."""


class DegenerateCloudError(InputError):
    """A point cloud with zero spatial extent."""


class NumericalError(PullmeshError):
    """Non-finite values or a diverged optimization."""

    exit_code = 3


class InternalError(PullmeshError):
    """An internal invariant was violated; indicates a bug."""

    exit_code = 4
