"""Exception hierarchy shared by all shapelm modules."""


class ShapeLMError(Exception):
    """Base class for every error raised by shapelm."""


class ParseError(ShapeLMError):
    """A mesh, cloud or config file could not be parsed."""


class TopologyError(ShapeLMError):
    """Non-manifold or inconsistently oriented connectivity."""


class DegenerateFace(ShapeLMError):
    """A face has (numerically) zero area."""


class BoundaryPresent(ShapeLMError):
    """An operation that needs a closed mesh received one with boundary."""


class ShapeMismatch(ShapeLMError):
    """A field does not match the vertex or face count of its mesh."""


class BreakdownError(ShapeLMError):
    """An iterative solver produced non-finite values."""


class EmptyCloud(ShapeLMError):
    pass


class UnorientedCloud(ShapeLMError):
    pass


class ZeroVector(ShapeLMError):
    pass


class DomainError(ShapeLMError):
    pass


class MeshIOError(ShapeLMError, OSError):
    """Writing a file failed."""
