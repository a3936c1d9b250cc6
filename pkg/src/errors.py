"""
EdgeTracer Error Types

Exception hierarchy shared by the solvers, geometry, topology and CLI layers.
"""

import math


class EdgeTracerError(Exception):
    """Base class for all EdgeTracer failures."""


class SolverError(EdgeTracerError, RuntimeError):
    """A linear solve failed to reach its residual bound."""

    def __init__(self, message: str, residual: float = math.nan, iterations: int = 0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class ImageFormatError(EdgeTracerError, ValueError):
    """Malformed or unsupported PGM data."""


class SnapshotFormatError(EdgeTracerError, ValueError):
    """Malformed curve snapshot text."""


class ParameterError(EdgeTracerError, ValueError):
    """A numeric parameter lies outside its admissible range."""


class ConfigError(EdgeTracerError, ValueError):
    """Invalid run configuration (unknown keys, missing inputs, bad mode)."""


class GeometryError(EdgeTracerError, ValueError):
    """Degenerate curve geometry or a point outside the image domain."""


class TopologyError(EdgeTracerError, ValueError):
    """A topology event does not match the network it is applied to."""


class ContractViolation(EdgeTracerError, ValueError):
    """An operation was called outside its precondition."""
