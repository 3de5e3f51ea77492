"""Exception types shared across the pipeline stages."""


class ScaChainError(Exception):
    """Base class for every error raised by this package."""


class MalformedHeading(ScaChainError):
    def __init__(self, line_no: int, clause_id: str, attached_to: str | None):
        self.line_no = line_no
        self.clause_id = clause_id
        self.attached_to = attached_to
        parent = attached_to or "<root>"
        super().__init__(
            f"line {line_no}: heading {clause_id!r} has no valid parent chain; attached to {parent}"
        )


class BackendUnavailable(ScaChainError):
    """The inference endpoint could not be reached (or no response is cached offline)."""


class MalformedBackendOutput(ScaChainError):
    """A backend response could not be parsed into the expected shape."""


class ResponseTooLarge(ScaChainError):
    pass


class UnresolvedReference(ScaChainError):
    pass


class DanglingViolation(ScaChainError):
    pass


class AlignmentError(ScaChainError):
    pass


class ConfigError(ScaChainError):
    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class MissingArtifact(ScaChainError):
    def __init__(self, artifact: str, producer: str, path: str | None = None):
        self.artifact = artifact
        self.producer = producer
        self.path = path
        where = f" at {path}" if path else ""
        super().__init__(f"missing {artifact}{where}; run the '{producer}' command first")


class InvariantViolation(ScaChainError):
    """An internal consistency check failed; indicates a bug rather than bad input."""
