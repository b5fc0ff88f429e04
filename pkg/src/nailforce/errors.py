"""Exception hierarchy shared by every module."""


class NailforceError(Exception):
    """Base class for all package errors."""


class DomainError(NailforceError, ValueError):
    """An argument is outside the domain an operation accepts."""


class FormatError(NailforceError):
    """A file does not follow the expected on-disk format."""


class WarpError(NailforceError):
    def __init__(self, triangle, area):
        self.triangle = triangle
        self.area = area
        super().__init__(f"degenerate source triangle {triangle} (area {area:.3g})")


class UnderdeterminedError(NailforceError):
    """Regression has no more samples than unknowns."""


class DetectionCountError(NailforceError):
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"expected {expected} blobs, found {found}")


class FeatureLossError(NailforceError):
    def __init__(self, expected, found):
        self.expected = expected
        self.found = found
        super().__init__(f"feature loss: expected {expected} dots, found {found}")


class DegenerateConfigurationError(NailforceError):
    """Interaction matrix lost rank; the control law is undefined."""


class NoGraspError(NailforceError):
    """No finger contact found in a trial."""


class UndefinedGapError(NailforceError):
    """Thumb force too small for a relative equilibrium gap."""


class TrialError(NailforceError):
    """A per-trial failure, tagged with the trial it came from."""

    def __init__(self, trial_id, cause):
        self.trial_id = trial_id
        self.cause = cause
        super().__init__(f"trial {trial_id}: {type(cause).__name__}: {cause}")
