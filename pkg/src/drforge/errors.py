"""Exception types raised across the package."""


class DrforgeError(Exception):
    """Base class for errors the command line maps to exit codes."""


class ConfigError(DrforgeError):
    pass


class BehindCamera(DrforgeError):
    pass


class InvalidScene(DrforgeError):
    pass


class InvalidDims(DrforgeError):
    pass


class EmptyTextureLibrary(DrforgeError):
    pass


class SamplingFailed(DrforgeError):
    pass


class OracleStuck(DrforgeError):
    pass


class ShapeMismatch(DrforgeError, ValueError):
    pass


class DatasetError(DrforgeError):
    pass


class ChecksumMismatch(DatasetError):
    pass


class VersionMismatch(DatasetError):
    pass


class TruncatedFile(DatasetError):
    pass
