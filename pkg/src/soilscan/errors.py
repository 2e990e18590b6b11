"""Exception hierarchy shared by all soilscan modules."""


class SoilScanError(Exception):
    """Base class for every error raised by soilscan."""


class DomainError(SoilScanError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(SoilScanError):
    """Inconsistent or incomplete configuration (missing salt model, unknown medium...)."""


class AlignmentError(SoilScanError):
    """Two spectra or feature sets do not share the same frequency grid."""


class FeatureUnavailableError(SoilScanError):
    """A feature needs a frequency that is absent from the spectrum."""


class EmptyFeatureError(SoilScanError):
    """A feature scheme left no bin with data."""


class ContractError(SoilScanError):
    """A caller or collaborator broke an interface contract."""


class AcquisitionError(SoilScanError):
    """The sample stream could not deliver data."""


class DegenerateFitError(SoilScanError):
    """A model cannot be fitted on the given data."""


class FoldError(SoilScanError):
    """A cross-validation fold failed; carries the fold identity."""

    def __init__(self, repeat: int, sample_id: str, cause: BaseException):
        super().__init__(f"fold failed (repeat={repeat}, held_out={sample_id}): {cause}")
        self.repeat = repeat
        self.sample_id = sample_id
        self.cause = cause


class LoadError(SoilScanError):
    """A dataset manifest or one of its files could not be loaded."""


class CalibrationError(SoilScanError):
    """Salt response fixtures could not satisfy the requested trend constraints."""

    def __init__(self, violated: list[str]):
        super().__init__("unsatisfied calibration constraints: " + "; ".join(violated))
        self.violated = violated
