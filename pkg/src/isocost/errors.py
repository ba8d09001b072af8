"""Exception hierarchy shared by all solver modules."""

from __future__ import annotations


class IsoCostError(Exception):
    """Base class for every error raised by this package."""


class UsageError(IsoCostError, ValueError):
    """Bad arguments: wrong dimensions, invalid config, empty inputs."""


class ModelEvaluationError(IsoCostError):
    """A model returned a non-finite or otherwise invalid value."""


class ModelDefinitionError(ModelEvaluationError):
    """A cost rate evaluated negative or non-finite."""


class SingularityError(IsoCostError):
    """The feedback-linearizing input transform is not invertible here."""


class IntegrationError(IsoCostError):
    """An RK4 stage produced a non-finite value."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class InstabilityError(IsoCostError):
    """A closed-loop run left the divergence bound."""

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class StallError(IsoCostError):
    """Backward step requested where the cost rate vanishes."""


class NoStabilizingSolutionError(IsoCostError):
    """The Riccati iteration did not reach a stabilizing solution."""


class DegenerateFrontError(IsoCostError):
    """Fewer than three usable agents remain on a front."""


class GeometryError(IsoCostError):
    """Polygon construction failed (collinear or angularly gapped agents)."""


class UnsupportedDimensionError(IsoCostError, NotImplementedError):
    """Front geometry is only implemented for planar state spaces."""


class SearchError(IsoCostError):
    """Every candidate in a GA generation evaluated to a non-finite value."""


class PartialSolutionError(IsoCostError):
    """IDP stopped before reaching the terminal cost; carries the completed part."""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


class DegenerateTableError(IsoCostError):
    """Policy samples are collinear or too few to triangulate."""
