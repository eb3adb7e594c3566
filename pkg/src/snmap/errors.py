"""Exception hierarchy shared across the package."""


class SnmapError(Exception):
    """Base class for every error raised by snmap."""


class SpecError(SnmapError, ValueError):
    """The model parameters violate a structural requirement."""


class InvalidGenerator(SpecError):
    pass


class DownwardSubordinatorState(SpecError):
    def __init__(self, state, message=None):
        self.state = state
        super().__init__(
            message
            or f"state {state} is a downward subordinator (zero variance and nonpositive drift)"
        )


class NonPhaseTypeJump(SpecError):
    pass


class TransformPole(SnmapError, ArithmeticError):
    """The argument hits a pole of a phase-type transform."""


class RootMultiplicity(SnmapError, ArithmeticError):
    pass


class SpectralCountMismatch(SnmapError, ArithmeticError):
    pass


class SingularEigenbasis(SnmapError, ArithmeticError):
    pass


class ExtrapolationDiverged(SnmapError, ArithmeticError):
    pass


class SingularW(SnmapError, ArithmeticError):
    pass


class HUnavailable(SnmapError, ArithmeticError):
    pass


class ScaleOverflow(SnmapError, OverflowError):
    pass


class OutOfInterval(SnmapError, ValueError):
    pass


class ExcludedNondefective(SnmapError):
    """Scenario has no finite potential measure for a process without killing."""

    def __init__(self, case, reason):
        self.case = case
        self.reason = reason
        super().__init__(f"excluded: {reason} (scenario {case})")


class DriftConditionViolated(SnmapError, ValueError):
    pass


class ConfigTooCoarse(SnmapError, ValueError):
    pass
