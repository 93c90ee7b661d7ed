"""Midpoint-offset rotation of source-receiver data matrices.

The forward map places entry (r, c) of an Ns x Nr source-receiver matrix
at (r + c, r - c + Nr - 1) of an (Ns + Nr - 1) square matrix.  This is the
45-degree rotation in integer coordinates: the row index is twice the
midpoint and the column index twice the offset (shifted to be
nonnegative), which keeps the transform an exact permutation onto a
checkerboard support.  The adjoint gathers the checkerboard back and
ignores anything off the support.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import Domain, FrequencySlice
from .errors import ShapeMismatchError, WrongDomainError


@dataclass(frozen=True)
class MidOffMap:
    """Index bookkeeping for one (ns, nr) geometry."""

    ns: int
    nr: int
    rows: np.ndarray = field(init=False, repr=False)
    cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = np.arange(self.ns)[:, None]
        c = np.arange(self.nr)[None, :]
        object.__setattr__(self, "rows", r + c)
        object.__setattr__(self, "cols", r - c + self.nr - 1)

    @property
    def size_out(self) -> int:
        return self.ns + self.nr - 1

    def support(self) -> np.ndarray:
        """Boolean checkerboard support of the rotated matrix."""
        s = np.zeros((self.size_out, self.size_out), dtype=bool)
        s[self.rows, self.cols] = True
        return s

    def forward(self, d: np.ndarray) -> np.ndarray:
        """Scatter an ns x nr matrix onto the rotated grid."""
        if d.shape != (self.ns, self.nr):
            raise ShapeMismatchError(f"expected {(self.ns, self.nr)}, got {d.shape}")
        out = np.zeros((self.size_out, self.size_out), dtype=d.dtype)
        out[self.rows, self.cols] = d
        return out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Gather the checkerboard entries back to source-receiver layout."""
        n = self.size_out
        if y.shape != (n, n):
            raise ShapeMismatchError(f"expected {(n, n)}, got {y.shape}")
        return y[self.rows, self.cols]


@lru_cache(maxsize=128)
def midoff_map(ns: int, nr: int) -> MidOffMap:
    return MidOffMap(ns, nr)


def to_midoff(d: FrequencySlice) -> FrequencySlice:
    """Rotate a source-receiver slice into the midpoint-offset domain."""
    if d.domain is not Domain.SOURCE_RECEIVER:
        raise WrongDomainError("to_midoff expects a source-receiver slice")
    mapping = midoff_map(*d.data.shape)
    return FrequencySlice(
        omega=d.omega,
        domain=Domain.MIDPOINT_OFFSET,
        data=mapping.forward(d.data),
    )


def from_midoff(y: FrequencySlice, ns: int, nr: int) -> FrequencySlice:
    """Map a midpoint-offset slice back to an ns x nr source-receiver slice."""
    if y.domain is not Domain.MIDPOINT_OFFSET:
        raise WrongDomainError("from_midoff expects a midpoint-offset slice")
    mapping = midoff_map(ns, nr)
    return FrequencySlice(
        omega=y.omega,
        domain=Domain.SOURCE_RECEIVER,
        data=mapping.adjoint(y.data),
    )
