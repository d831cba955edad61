"""
Exception hierarchy shared by every courtformer module.
Each class carries the process exit code the command line reports for it.
"""


class CourtformerError(Exception):
    exit_code = 1


class UsageError(CourtformerError):
    """Wrong invocation: bad arguments, task/model mismatch."""
    exit_code = 1


class ConfigurationError(CourtformerError):
    exit_code = 1


class UnsupportedModeError(CourtformerError):
    exit_code = 1


class DataError(CourtformerError):
    exit_code = 2


class TrackingParseError(DataError):
    def __init__(self, message: str, line_number: int = None, path: str = None):
        location = ""
        if path:
            location += f"{path}"
        if line_number is not None:
            location += f":{line_number}"
        super().__init__(f"{location}: {message}" if location else message)
        self.line_number = line_number
        self.path = path


class SamplingError(DataError):
    pass


class CheckpointError(CourtformerError):
    exit_code = 2


class NumericError(CourtformerError):
    exit_code = 3


class DimensionError(CourtformerError, ValueError):
    exit_code = 3


class InvalidMaskError(CourtformerError, ValueError):
    exit_code = 3


class EntityIndexError(CourtformerError, IndexError):
    exit_code = 1


class LabelIndexError(CourtformerError, IndexError):
    exit_code = 2


class AgentLookupError(CourtformerError, LookupError):
    exit_code = 2


class CaptureIndexError(CourtformerError, IndexError):
    exit_code = 1
