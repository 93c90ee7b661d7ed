"""Survey geometry, sampling operators, Ricker weights, data and masks.

The restriction operator P and the source operator Q are never built as
dense matrices: applying P gathers receiver-index entries of a field and
applying Q scatters weighted point sources.  Point sources carry a 1/h^2
delta scaling so fields stay consistent under grid refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AcquisitionMask, Domain, FrequencySlice, ModelGrid
from .errors import BadRatioError, BadShapeError, BadSpecError, ShapeMismatchError
from .helmholtz import SolveCounter, assemble
from .probes import _rng

MASK_ENTRY = "entry"
MASK_SOURCE = "source"


@dataclass(frozen=True)
class Survey:
    """Source and receiver grid indices (flat, depth-fastest)."""

    src_idx: np.ndarray
    rcv_idx: np.ndarray
    colocated: bool

    def __post_init__(self):
        src = np.array(self.src_idx, dtype=np.intp, copy=True)
        rcv = np.array(self.rcv_idx, dtype=np.intp, copy=True)
        src.setflags(write=False)
        rcv.setflags(write=False)
        object.__setattr__(self, "src_idx", src)
        object.__setattr__(self, "rcv_idx", rcv)
        if len(np.unique(rcv)) != rcv.size:
            raise BadShapeError("receiver indices must be unique")
        if self.colocated and not (src.size == rcv.size and np.array_equal(src, rcv)):
            raise BadShapeError("colocated survey requires identical source/receiver lists")

    @property
    def ns(self) -> int:
        return self.src_idx.size

    @property
    def nr(self) -> int:
        return self.rcv_idx.size


def validate_survey(survey: Survey, grid: ModelGrid) -> None:
    n = grid.n
    for name, idx in (("source", survey.src_idx), ("receiver", survey.rcv_idx)):
        if idx.size == 0:
            raise BadShapeError(f"survey has no {name}s")
        if idx.min() < 0 or idx.max() >= n:
            raise BadShapeError(f"{name} index outside [0, {n})")


def colocated_line(grid: ModelGrid, count: int, depth_row: int = 1) -> Survey:
    """Evenly spaced colocated sources/receivers one row below the surface.

    Keeping them off the boundary row avoids the absorbing-boundary
    stencil at the injection points.
    """
    if count < 1 or count > grid.nx:
        raise BadShapeError(f"count must be in [1, nx={grid.nx}], got {count}")
    ixs = np.unique(np.round(np.linspace(0, grid.nx - 1, count)).astype(np.intp))
    flat = ixs * grid.nz + depth_row
    return Survey(src_idx=flat, rcv_idx=flat, colocated=True)


@dataclass(frozen=True)
class RickerSource:
    f_peak: float

    def __post_init__(self):
        if not self.f_peak > 0:
            raise BadSpecError(f"peak frequency must be positive, got {self.f_peak}")


def ricker_amplitude(wavelet: RickerSource, f: float) -> float:
    """Spectral weight of the Ricker wavelet at frequency f (Hz).

    This is the continuous Fourier magnitude of
    r(t) = (1 - 2 pi^2 fp^2 t^2) exp(-pi^2 fp^2 t^2):
    (2/sqrt(pi)) * f^2 / fp^3 * exp(-f^2 / fp^2).
    """
    if f < 0:
        raise BadSpecError(f"frequency must be nonnegative, got {f}")
    fp = wavelet.f_peak
    return float(2.0 / np.sqrt(np.pi) * (f * f) / fp**3 * np.exp(-(f * f) / fp**2))


def scatter_sources(grid: ModelGrid, survey: Survey, weights) -> np.ndarray:
    """Apply Q: map per-source weights (Ns or Ns x K) to grid vectors.

    Each source is a grid delta scaled by 1/h^2.
    """
    weights = np.asarray(weights)
    squeeze = weights.ndim == 1
    if squeeze:
        weights = weights[:, None]
    if weights.shape[0] != survey.ns:
        raise ShapeMismatchError(
            f"weights have {weights.shape[0]} rows, survey has {survey.ns} sources"
        )
    out = np.zeros((grid.n, weights.shape[1]), dtype=np.complex128)
    np.add.at(out, survey.src_idx, weights / (grid.h * grid.h))
    return out[:, 0] if squeeze else out


def gather_receivers(u, survey: Survey) -> np.ndarray:
    """Apply P: sample a field (n or n x K) at the receiver indices."""
    u = np.asarray(u)
    return u[survey.rcv_idx]


def scatter_receivers(grid: ModelGrid, survey: Survey, values) -> np.ndarray:
    """Apply P^T: spread receiver values back onto the grid."""
    values = np.asarray(values)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    if values.shape[0] != survey.nr:
        raise ShapeMismatchError(
            f"values have {values.shape[0]} rows, survey has {survey.nr} receivers"
        )
    out = np.zeros((grid.n, values.shape[1]), dtype=np.complex128)
    out[survey.rcv_idx] = values
    return out[:, 0] if squeeze else out


def forward_data(
    grid: ModelGrid,
    survey: Survey,
    omega: float,
    amp: float,
    counter: SolveCounter | None = None,
    operator=None,
) -> FrequencySlice:
    """Simulate the Ns x Nr data slice P H(m)^-1 Q scaled by amp.

    Row i holds the receiver samples of the field excited by source i.
    """
    validate_survey(survey, grid)
    if operator is None:
        operator = assemble(grid, omega)
    if amp == 0.0:
        data = np.zeros((survey.ns, survey.nr), dtype=np.complex128)
        return FrequencySlice(omega=omega, domain=Domain.SOURCE_RECEIVER, data=data)
    q = scatter_sources(grid, survey, amp * np.eye(survey.ns))
    u = operator.solve(q, counter)
    data = gather_receivers(u, survey).T
    return FrequencySlice(omega=omega, domain=Domain.SOURCE_RECEIVER, data=data)


def make_mask(ns: int, nr: int, keep_ratio: float, seed=0, pattern: str = MASK_ENTRY) -> np.ndarray:
    """Random boolean observation mask, deterministic for a given seed.

    ``pattern="entry"`` keeps exactly round(keep_ratio * Ns * Nr) entries
    drawn uniformly without replacement; ``pattern="source"`` keeps whole
    rows (entire shot gathers) instead.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise BadRatioError(f"keep ratio must be in (0, 1], got {keep_ratio}")
    rng = _rng(seed)
    mask = np.zeros((ns, nr), dtype=bool)
    if pattern == MASK_ENTRY:
        n_keep = int(round(keep_ratio * ns * nr))
        flat = rng.permutation(ns * nr)[:n_keep]
        mask.ravel()[flat] = True
    elif pattern == MASK_SOURCE:
        n_keep = int(round(keep_ratio * ns))
        rows = rng.permutation(ns)[:n_keep]
        mask[rows, :] = True
    else:
        raise BadSpecError(f"unknown mask pattern {pattern!r}")
    return mask


def apply_mask(mask, data_slice: FrequencySlice) -> AcquisitionMask:
    """Hadamard-mask a source-receiver slice into an AcquisitionMask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != data_slice.data.shape:
        raise ShapeMismatchError(
            f"mask {mask.shape} does not match slice {data_slice.data.shape}"
        )
    return AcquisitionMask(mask=mask, observed=data_slice)
