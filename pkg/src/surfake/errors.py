"""Exception types shared across pipeline stages."""


class SurfakeError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(SurfakeError):
    """Bad or inconsistent run configuration (CLI exit code 2)."""


class MissingArtifactError(SurfakeError):
    """A required input or upstream stage artifact is absent (CLI exit code 3)."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class DetectorError(SurfakeError):
    """The face-detector backend itself failed; distinct from 'no face found'."""


class GsdBackendError(SurfakeError):
    """The surface-descriptor estimator backend failed to load or run."""

    def __init__(self, message, backend_id=""):
        super().__init__(f"[{backend_id}] {message}" if backend_id else message)
        self.backend_id = backend_id
