"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``StageError`` -> 3.
"""


class NeuroAuthError(Exception):
    """Base class for all package errors."""


class ConfigError(NeuroAuthError, ValueError):
    """Invalid configuration value."""


class DataError(NeuroAuthError):
    """Input data is missing, malformed or inconsistent."""


class ManifestError(DataError):
    pass


class ManifestNotFoundError(ManifestError, FileNotFoundError):
    pass


class MalformedManifestError(ManifestError):
    pass


class EmptyManifestError(ManifestError):
    pass


class DuplicateSessionError(ManifestError):
    pass


class SessionFormatError(DataError):
    pass


class ChannelCountError(SessionFormatError):
    pass


class NonFiniteValueError(SessionFormatError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SampleCountError(SessionFormatError):
    pass


class StageError(NeuroAuthError):
    """A pipeline stage failed; carries the stage name and user id."""

    def __init__(self, stage, message, user_id=None, hint=None):
        self.stage = stage
        self.user_id = user_id
        self.hint = hint
        where = f"stage '{stage}'"
        if user_id is not None:
            where += f", user {user_id}"
        text = f"{where}: {message}"
        if hint:
            text += f" (hint: {hint})"
        super().__init__(text)
