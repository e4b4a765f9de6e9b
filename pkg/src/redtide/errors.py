"""Toolkit exception hierarchy.

Every domain error raised by the library derives from :class:`ToolkitError`
so the CLI can map them onto exit code 1 uniformly.
"""


class ToolkitError(Exception):
    """Base class for all domain errors raised by the toolkit."""


class ImageFormatError(ToolkitError):
    """Unreadable, malformed, or unsupported image payload."""


class PatchPlacementError(ToolkitError):
    """Patch footprint does not intersect the target image."""


class DatasetError(ToolkitError):
    """Dataset layout, annotation, or digest problem."""


class ScenePlacementError(DatasetError):
    """Synthetic objects could not be placed within the overlap budget."""


class ModelFormatError(ToolkitError):
    """Model file is malformed or carries an unsupported version."""


class TrainingDivergenceError(ToolkitError):
    """Training produced a non-finite loss."""


class OracleError(ToolkitError):
    """Base for detector-oracle failures."""


class OracleSpawnError(OracleError):
    """External oracle process failed to start or handshake."""


class OracleProtocolError(OracleError):
    """External oracle broke the wire protocol."""


class OracleTimeoutError(OracleError):
    """External oracle failed to answer within the deadline."""


class AttackError(ToolkitError):
    """Invalid attack parameters or an attack that cannot run."""


class PoisonError(ToolkitError):
    """Invalid poisoning plan or application failure."""


class ScenarioError(ToolkitError):
    """Scenario definition or execution problem."""


class EngagementError(ToolkitError):
    """Engagement plan violates its contract."""
