"""Exception hierarchy shared by all livesys modules."""


class LiveSysError(Exception):
    """Base class for every error raised by livesys."""


class DefinitionError(LiveSysError):
    """A system, configuration or norm is not (or inconsistently) defined."""


class AdmissibilityError(LiveSysError):
    """A configuration change leaves the admissible configuration set.

    ``impulse_index`` names the offending impulse when known.
    """

    def __init__(self, message, impulse_index=None):
        super().__init__(message)
        self.impulse_index = impulse_index


class NumericalError(LiveSysError):
    """Integration produced a non-finite derivative."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class InputError(LiveSysError):
    """An input channel required by a jump or dynamics is missing."""


class ProbeError(LiveSysError):
    """A Lie-derivative probe window contains an impulse time."""


class HypothesisError(LiveSysError):
    """A hypothesis of the KL-majorant construction fails on the probe grid.

    ``witness`` is a dict with the sample that exposed the failure.
    """

    def __init__(self, message, hypothesis, witness=None):
        super().__init__(message)
        self.hypothesis = hypothesis
        self.witness = witness or {}


class ScenarioError(LiveSysError):
    """A scenario file fails schema validation or cannot be built."""
