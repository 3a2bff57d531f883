"""Exception hierarchy shared across the pipeline."""


class VoidfaceError(Exception):
    """Base class for all pipeline errors."""


class DimensionError(VoidfaceError):
    """Image or grid dimensions are invalid or do not match."""


class IncompleteShareError(VoidfaceError):
    """A sub-grid set is missing members or mixes different shares."""


class ShareFormatError(VoidfaceError):
    """A share file has bad magic, version, CRC, or truncated payload."""


class LandmarkError(VoidfaceError):
    """A landmark box is malformed or falls outside the source image."""


class IncompleteLandmarksError(LandmarkError):
    """One or more of the six patch kinds is missing from a landmark set."""


class OrderingError(VoidfaceError):
    """A lifecycle operation was called out of order."""


class FullImageUnavailableError(VoidfaceError):
    """The session's full face image was already destroyed."""


class CapacityError(VoidfaceError):
    """A structure is too large for exhaustive validation."""


class UnknownSecretError(VoidfaceError):
    """A secret or patch index is not part of the structure or plan."""


class VaultConflictError(VoidfaceError):
    """A subject is already registered and active."""


class SubjectNotFoundError(VoidfaceError):
    """The vault has no record for the requested subject."""


class AuthorizationError(VoidfaceError):
    """The requester is not on any relevant allow-list."""


class NoDataError(VoidfaceError):
    """A request validated but produced zero authorized subjects."""


class InsufficientCapacityError(VoidfaceError):
    """Fewer candidate nodes meet the deadline than the round needs.

    Carries near-misses: (node_id, estimate) pairs that failed the deadline.
    """

    def __init__(self, message: str, near_misses: list[tuple[str, float]] | None = None):
        super().__init__(message)
        self.near_misses = near_misses or []


class RoundAbortedError(VoidfaceError):
    """A training round could not be completed."""


class ConfigError(VoidfaceError):
    """A scenario, fault, or CLI configuration is invalid."""
