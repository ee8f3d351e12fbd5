"""Exceptions raised when a flow leaves the regime where it is defined."""

from __future__ import annotations


class HypflowError(Exception):
    """Base class for all package errors."""


class DegenerateMetric(HypflowError):
    """A metric stopped being positive definite at some grid point.

    Attributes
    ----------
    point : tuple of int
        Grid index of the worst offending point.
    min_eigenvalue : float
        Smallest eigenvalue found there.
    """

    def __init__(self, point, min_eigenvalue: float):
        self.point = tuple(int(p) for p in point)
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"metric not positive definite at {self.point}: "
            f"min eigenvalue {self.min_eigenvalue:.6e}"
        )


class DegenerateScale(HypflowError):
    """The homothetic scale factor reached zero (or below)."""

    def __init__(self, t: float | None, rho: float):
        self.t = None if t is None else float(t)
        self.rho = float(rho)
        where = "" if self.t is None else f" at t={self.t:.10g}"
        super().__init__(f"scale factor degenerate{where} (rho={self.rho:.3e})")


class NonFinite(HypflowError):
    """NaN or Inf appeared in an evolved field."""

    def __init__(self, t: float, where: str = "state"):
        self.t = float(t)
        self.where = where
        super().__init__(f"non-finite values in {where} at t={self.t:.10g}")
