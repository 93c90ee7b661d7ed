"""Shared domain types: model grids, frequency slices, masks, factor pairs.

Conventions used throughout the package:

* Model grids have ``nz`` depth samples and ``nx`` lateral samples with
  spacing ``h`` (meters).  The model vector holds squared slowness
  (s^2/m^2) and is ordered depth-fastest: flat index ``ix * nz + iz``.
* Source-receiver frequency slices are ``Ns x Nr`` complex matrices with
  rows indexed by source and columns by receiver.
* All complex data are double precision.  Types are immutable after
  construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    BadShapeError,
    NonFiniteEntryError,
    NonPositiveSlownessError,
    ShapeMismatchError,
    WrongDomainError,
)


def _frozen_array(values, dtype):
    a = np.array(values, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


class Domain(Enum):
    SOURCE_RECEIVER = "source-receiver"
    MIDPOINT_OFFSET = "midpoint-offset"


@dataclass(frozen=True)
class ModelGrid:
    """2-D squared-slowness model on a regular grid.

    Parameters are stored as given; use :func:`validate_model` to check the
    invariants (minimum size 3x3, positive spacing, strictly positive and
    finite model values).
    """

    nz: int
    nx: int
    h: float
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _frozen_array(np.ravel(self.m), np.float64))

    @property
    def n(self) -> int:
        return self.nz * self.nx

    def index(self, iz: int, ix: int) -> int:
        """Flat index of grid node (iz, ix), depth-fastest ordering."""
        return ix * self.nz + iz

    def image(self) -> np.ndarray:
        """Model as an (nz, nx) image, depth down the rows."""
        return self.m.reshape(self.nx, self.nz).T

    @classmethod
    def from_image(cls, h: float, image) -> "ModelGrid":
        image = np.asarray(image, dtype=np.float64)
        nz, nx = image.shape
        return cls(nz=nz, nx=nx, h=float(h), m=image.T.ravel())

    def with_model(self, m) -> "ModelGrid":
        """Same geometry, new model vector."""
        return ModelGrid(nz=self.nz, nx=self.nx, h=self.h, m=m)


def validate_model(grid: ModelGrid) -> None:
    """Raise if any ModelGrid invariant is violated.

    Raises
    ------
    BadShapeError
        If nz or nx is below 3, h is not positive, or the model vector
        length does not match nz*nx.
    NonPositiveSlownessError
        If any squared-slowness value is not strictly positive and finite.
    """
    if grid.nz < 3 or grid.nx < 3:
        raise BadShapeError(f"grid must be at least 3x3, got {grid.nz}x{grid.nx}")
    if not grid.h > 0:
        raise BadShapeError(f"grid spacing must be positive, got {grid.h}")
    if grid.m.size != grid.nz * grid.nx:
        raise BadShapeError(
            f"model vector has {grid.m.size} entries, expected {grid.nz * grid.nx}"
        )
    if not np.all(np.isfinite(grid.m)):
        raise NonPositiveSlownessError("squared slowness contains non-finite values")
    if np.any(grid.m <= 0):
        raise NonPositiveSlownessError("squared slowness must be strictly positive")


@dataclass(frozen=True)
class FrequencySlice:
    """Complex data matrix for one angular frequency.

    ``Domain.SOURCE_RECEIVER`` slices are Ns x Nr (rows = sources,
    columns = receivers); ``Domain.MIDPOINT_OFFSET`` slices are square
    of size (Ns + Nr - 1).
    """

    omega: float
    domain: Domain
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise BadShapeError(f"slice data must be 2-D, got ndim={data.ndim}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteEntryError("slice data contains non-finite entries")
        if self.domain is Domain.MIDPOINT_OFFSET and data.shape[0] != data.shape[1]:
            raise BadShapeError(
                f"midpoint-offset slice must be square, got {data.shape}"
            )
        object.__setattr__(self, "data", _frozen_array(data, np.complex128))

    @property
    def shape(self):
        return self.data.shape

    @property
    def ns(self) -> int:
        if self.domain is not Domain.SOURCE_RECEIVER:
            raise WrongDomainError("source count is defined in the source-receiver domain")
        return self.data.shape[0]

    @property
    def nr(self) -> int:
        if self.domain is not Domain.SOURCE_RECEIVER:
            raise WrongDomainError("receiver count is defined in the source-receiver domain")
        return self.data.shape[1]


@dataclass(frozen=True)
class AcquisitionMask:
    """Boolean observation indicator plus the subsampled data.

    Construction masks the data, so unobserved entries are exactly zero
    and re-applying the mask is a no-op.
    """

    mask: np.ndarray
    observed: FrequencySlice

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 2:
            raise BadShapeError("mask must be a 2-D boolean matrix")
        if self.observed.domain is not Domain.SOURCE_RECEIVER:
            raise WrongDomainError("observed data must be in the source-receiver domain")
        if mask.shape != self.observed.data.shape:
            raise ShapeMismatchError(
                f"mask shape {mask.shape} does not match data shape {self.observed.data.shape}"
            )
        mask = mask.astype(bool)
        object.__setattr__(self, "mask", _frozen_array(mask, bool))
        if np.any(self.observed.data[~mask] != 0):
            masked = FrequencySlice(
                omega=self.observed.omega,
                domain=Domain.SOURCE_RECEIVER,
                data=np.where(mask, self.observed.data, 0.0),
            )
            object.__setattr__(self, "observed", masked)

    @property
    def keep_fraction(self) -> float:
        return float(np.count_nonzero(self.mask)) / self.mask.size


@dataclass(frozen=True)
class Factorization:
    """Rank-capped factor pair (L, R) with its ball radius tau.

    The pair represents the midpoint-offset matrix L @ R.  The radius
    tau tracks the constraint 0.5*||L||_F^2 + 0.5*||R||_F^2 <= tau that
    projection steps enforce.
    """

    L: np.ndarray
    R: np.ndarray
    rank_cap: int
    tau: float

    def __post_init__(self):
        L = np.asarray(self.L, dtype=np.complex128)
        R = np.asarray(self.R, dtype=np.complex128)
        if L.ndim != 2 or R.ndim != 2:
            raise BadShapeError("factors must be 2-D matrices")
        if L.shape[1] != R.shape[0]:
            raise ShapeMismatchError(
                f"inner factor dimensions disagree: {L.shape} vs {R.shape}"
            )
        k = L.shape[1]
        if k != self.rank_cap:
            raise BadShapeError(f"factor width {k} does not equal rank cap {self.rank_cap}")
        if k < 1 or k > min(L.shape[0], R.shape[1]):
            raise BadShapeError(
                f"rank cap {k} outside [1, min{L.shape[0], R.shape[1]}]"
            )
        object.__setattr__(self, "L", _frozen_array(L, np.complex128))
        object.__setattr__(self, "R", _frozen_array(R, np.complex128))

    def ball(self) -> float:
        """Current value of 0.5*||L||_F^2 + 0.5*||R||_F^2."""
        return 0.5 * float(np.vdot(self.L, self.L).real + np.vdot(self.R, self.R).real)

    def product(self) -> np.ndarray:
        return self.L @ self.R


def frobenius_norm(a) -> float:
    """Frobenius norm sqrt(sum |a_ij|^2) of a real or complex matrix.

    Raises
    ------
    NonFiniteEntryError
        If the matrix contains NaN or infinite entries.
    """
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise NonFiniteEntryError("matrix contains non-finite entries")
    return float(np.linalg.norm(a))
