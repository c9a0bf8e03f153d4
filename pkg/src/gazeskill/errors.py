"""Exception hierarchy shared by every gazeskill module."""


class GazeSkillError(Exception):
    """Base class for all errors raised by this package."""


class InputError(GazeSkillError):
    """Bad or unreadable input (CLI exit code 2)."""


class InsufficientDataError(GazeSkillError):
    """Input is well formed but too small for the requested analysis (CLI exit code 3)."""


class MalformedRow(InputError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        msg = f"malformed row at line {line_no}"
        super().__init__(f"{msg}: {reason}" if reason else msg)


class NonMonotoneTimestamp(InputError):
    def __init__(self, line_no):
        self.line_no = line_no
        super().__init__(f"timestamp not strictly increasing at line {line_no}")


class MissingHeader(InputError):
    pass


class EmptyRecording(InsufficientDataError):
    pass


class InsufficientData(InsufficientDataError):
    pass


class EmptyDistribution(InsufficientDataError):
    pass


class TooFewObservations(InsufficientDataError):
    pass


class TooFewFixations(InsufficientDataError):
    pass


class NonPositiveBandwidth(InputError):
    pass


class DegenerateDistribution(InsufficientDataError):
    pass


class InvalidBands(InputError):
    pass


class DegenerateData(InsufficientDataError):
    pass


class TooFewGroups(InsufficientDataError):
    pass


class UnbalancedWithinFactor(InputError):
    pass


class InvalidDf(InputError):
    pass


class InsufficientTraining(InsufficientDataError):
    pass


class ModelFeatureMismatch(InputError):
    pass


class InvalidProfile(InputError):
    pass


class ZeroVarianceFeature(UserWarning):
    """A training feature had zero spread and was dropped from the model."""
