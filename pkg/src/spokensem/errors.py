"""Exception hierarchy.

Every error carries a CLI exit code so the command-line layer can map
failures without inspecting messages.
"""


class SpokenSemError(Exception):
    exit_code = 1


class UsageError(SpokenSemError):
    exit_code = 1


class ConfigError(SpokenSemError):
    exit_code = 1


class DataError(SpokenSemError):
    exit_code = 2


class LengthError(DataError):
    """Input sequence too short for the requested operation."""


class FormatError(DataError):
    """Malformed binary feature, embedding or checkpoint file."""


class ManifestError(DataError):
    pass


class SpecError(DataError):
    """Synthetic corpus specification cannot satisfy model preconditions."""


class BatchError(DataError):
    pass


class NumericsError(SpokenSemError):
    exit_code = 3


class MaskError(NumericsError):
    """Attention mask with no valid time step."""
