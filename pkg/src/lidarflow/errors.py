"""Exception hierarchy.

Every error carries an ``exit_code`` that the command line maps to the
process status, so scripts can tell failure classes apart.
"""


class LidarFlowError(Exception):
    exit_code = 1


# --- data ingestion -------------------------------------------------------


class MissingFile(LidarFlowError, FileNotFoundError):
    exit_code = 3

    def __init__(self, path, what="file"):
        self.path = str(path)
        super().__init__(f"missing {what}: {self.path}")

    def __str__(self):
        return self.args[0]


class MalformedRecord(LidarFlowError, ValueError):
    """A record could not be decoded; ``location`` is a line or byte offset."""

    exit_code = 4

    def __init__(self, message, source=None, location=None):
        self.source = source
        self.location = location
        where = ""
        if source is not None:
            where += f"{source}"
        if location is not None:
            where += f" @ {location}"
        super().__init__(f"{where}: {message}" if where else message)


class CalibrationParseError(LidarFlowError, ValueError):
    exit_code = 5


class InvalidSpec(LidarFlowError, ValueError):
    exit_code = 6


class DimensionMismatch(LidarFlowError, ValueError):
    exit_code = 7


# --- egomotion ------------------------------------------------------------


class EmptyWindow(LidarFlowError, ValueError):
    exit_code = 8


class NonMonotonicTimestamps(LidarFlowError, ValueError):
    exit_code = 9


class DegenerateGeometry(LidarFlowError, ValueError):
    exit_code = 10


class EmptyCloud(LidarFlowError, ValueError):
    exit_code = 11


class MissingStep(LidarFlowError, LookupError):
    exit_code = 12


class MissingNeighbor(LidarFlowError, LookupError):
    exit_code = 12


class MissingNeighborWarning(UserWarning):
    """Merge window was clipped at the sequence bounds."""


# --- enhancement / metrics / images ----------------------------------------


class WindowTooSmall(LidarFlowError, ValueError):
    exit_code = 13


class DecodeError(LidarFlowError, ValueError):
    exit_code = 14


class IoError(LidarFlowError, OSError):
    exit_code = 15


class ImageTooSmall(LidarFlowError, ValueError):
    exit_code = 16


EXIT_CODES = {
    cls.__name__: cls.exit_code
    for cls in (
        MissingFile,
        MalformedRecord,
        CalibrationParseError,
        InvalidSpec,
        DimensionMismatch,
        EmptyWindow,
        NonMonotonicTimestamps,
        DegenerateGeometry,
        EmptyCloud,
        MissingStep,
        MissingNeighbor,
        WindowTooSmall,
        DecodeError,
        IoError,
        ImageTooSmall,
    )
}
