"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2,
MissingArtifactError -> 3, NumericError -> 4.
"""


class MaskCountError(Exception):
    """Base class for all package errors."""


class ConfigError(MaskCountError):
    """Invalid configuration file, unknown key, or fingerprint mismatch."""


class MissingArtifactError(MaskCountError):
    """A prerequisite artifact (dataset, model, masks) does not exist."""

    def __init__(self, artifact: str, produced_by: str):
        super().__init__(
            f"missing artifact: {artifact} (run '{produced_by}' first)"
        )
        self.artifact = artifact
        self.produced_by = produced_by


class NumericError(MaskCountError):
    """Non-finite values or diverged training."""


class ParseError(MaskCountError):
    """Malformed on-disk artifact; names the offending field or byte offset."""

    def __init__(self, path, field: str, detail: str):
        super().__init__(f"{path}: field '{field}': {detail}")
        self.path = path
        self.field = field
        self.detail = detail


class PlacementError(MaskCountError):
    """Scene generator could not place the requested instances."""
