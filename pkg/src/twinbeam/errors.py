"""Exception hierarchy shared by the simulator, estimators and pipeline."""


class TwinbeamError(Exception):
    """Base class for all package errors."""


class ParameterError(TwinbeamError, ValueError):
    """An input parameter violates its invariant.

    ``field`` names the offending parameter (dotted path for nested configs).
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ValidityError(TwinbeamError):
    """An estimator's validity condition does not hold for the given data."""


class EmptySelectionError(TwinbeamError):
    """Post-selection kept no pulses, or too few to report a statistic."""


class MissingCalibrationError(TwinbeamError):
    """An analysis needs a calibration run (coherent or dark) that was not supplied."""

    def __init__(self, needed, message):
        self.needed = needed
        super().__init__(message)


class DatasetFormatError(TwinbeamError):
    """A persisted dataset could not be read back."""


class VersionError(DatasetFormatError):
    pass


class TruncatedFileError(DatasetFormatError):
    pass


class ChecksumError(DatasetFormatError):
    pass


class ConfigParseError(TwinbeamError):
    """A configuration or points file is not well-formed JSON/CSV."""
