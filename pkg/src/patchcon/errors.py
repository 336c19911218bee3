"""Exception hierarchy shared across the package.

Every error raised by patchcon derives from PatchconError so callers (and
the CLI) can map error classes to exit codes in one place.
"""


class PatchconError(Exception):
    """Base class for all patchcon errors."""

    exit_code = 1


class ConfigError(PatchconError):
    """Run-config schema violation. Carries the dotted field path."""

    exit_code = 2

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingArtifact(PatchconError):
    """A prerequisite output of an earlier pipeline stage is absent."""

    exit_code = 3


class IoFailure(PatchconError):
    exit_code = 4


# --- core -------------------------------------------------------------

class ZeroRow(PatchconError):
    """A row with (near-)zero norm reached a normalization step."""

    exit_code = 5


class ShapeMismatch(PatchconError):
    exit_code = 5


# --- data -------------------------------------------------------------

class MalformedName(PatchconError):
    """Patch filename does not match the coordinate grammar."""

    exit_code = 6


class EmptyDataset(PatchconError):
    exit_code = 6


class DuplicateCoordinate(PatchconError):
    exit_code = 6


class PatientCountMismatch(PatchconError):
    exit_code = 6


# --- loss / training --------------------------------------------------

class NoPositives(PatchconError):
    """Every anchor in the contrastive batch has an empty positive set."""

    exit_code = 7


class NonUnitRows(PatchconError):
    exit_code = 7


class NonFiniteLoss(PatchconError):
    """Training loss became NaN/inf; the run aborts rather than continue."""

    exit_code = 7


class ManifestMismatch(PatchconError):
    """Checkpoint manifest disagrees with the expected configuration."""

    exit_code = 8


# --- evaluation -------------------------------------------------------

class LengthMismatch(PatchconError):
    exit_code = 9


class EmptyMatrix(PatchconError):
    exit_code = 9


class OverlapError(PatchconError):
    """Two patches claim the same pixel in a prediction map."""

    exit_code = 9


class MixedPatients(PatchconError):
    exit_code = 9
