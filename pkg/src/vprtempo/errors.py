"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI uses when it escapes.
"""


class VPRTempoError(Exception):
    exit_code = 1


class InvalidInputError(VPRTempoError, ValueError):
    """Argument shape, range or type violates an operation contract."""

    exit_code = 1


class InvalidStateError(VPRTempoError, RuntimeError):
    """Operation called in a state that forbids it (e.g. exhausted clock)."""

    exit_code = 1


class ConfigError(VPRTempoError, ValueError):
    exit_code = 3


class DatasetError(VPRTempoError):
    """Traversal directory is empty, misaligned or contains unreadable files."""

    exit_code = 4


class ModelFileError(VPRTempoError):
    """Model file is truncated, has a bad magic/version, or fails its checksum."""

    exit_code = 5


IO_EXIT_CODE = 6
