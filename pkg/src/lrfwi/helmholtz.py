"""Discrete 2-D Helmholtz operator and direct solves.

The operator is H = omega^2 diag(m) + Lap_h with a second-order 5-point
Laplacian on the depth-fastest grid ordering, so interior rows have
diagonal omega^2 m_i - 4/h^2 and off-diagonals 1/h^2, and the bandwidth
is at most nz.

Boundaries use a first-order absorbing (radiating) condition
du/dn = i omega sqrt(m) u, eliminated through ghost points with a
centered normal difference.  Each boundary row is scaled by 1/2 per
missing neighbor (1/2 on edges, 1/4 at corners), which makes the
assembled matrix complex symmetric; with the absorbing terms switched
off it is real symmetric.  Symmetry is what gives source-receiver
reciprocity of simulated data.

Systems are solved by a cached sparse LU factorization; the adjoint
system H^H v = b reuses the same factorization through a
conjugate-transpose solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import ModelGrid, validate_model
from .errors import ShapeMismatchError, SingularOperatorError

_PIVOT_FLOOR = 1e-14


@dataclass
class SolveCounter:
    """PDE-solve accounting: one count per right-hand-side column."""

    forward: int = 0
    adjoint: int = 0

    @property
    def total(self) -> int:
        return self.forward + self.adjoint

    def copy(self) -> "SolveCounter":
        return SolveCounter(self.forward, self.adjoint)


class HelmholtzOperator:
    """Assembled Helmholtz matrix for one (model, omega) pair.

    The matrix and (once computed) its LU factorization are immutable;
    concurrent solves on distinct right-hand-side blocks are safe.
    """

    def __init__(self, grid: ModelGrid, omega: float, matrix: sp.spmatrix):
        self.grid = grid
        self.omega = float(omega)
        self.matrix = matrix.tocsc()
        self._lu = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def _factorization(self):
        if self._lu is None:
            try:
                lu = splu(self.matrix)
            except RuntimeError as exc:  # SuperLU signals exact singularity
                raise SingularOperatorError(str(exc)) from exc
            pivots = np.abs(lu.U.diagonal())
            if pivots.min() < _PIVOT_FLOOR:
                raise SingularOperatorError(
                    f"pivot magnitude {pivots.min():.3e} below {_PIVOT_FLOOR:.0e}"
                )
            self._lu = lu
        return self._lu

    def _solve(self, rhs, trans, counter):
        rhs = np.asarray(rhs, dtype=np.complex128)
        squeeze = rhs.ndim == 1
        if squeeze:
            rhs = rhs[:, None]
        if rhs.shape[0] != self.n:
            raise ShapeMismatchError(
                f"rhs has {rhs.shape[0]} rows, operator has {self.n}"
            )
        u = self._factorization().solve(np.ascontiguousarray(rhs), trans=trans)
        if counter is not None:
            if trans == "N":
                counter.forward += rhs.shape[1]
            else:
                counter.adjoint += rhs.shape[1]
        return u[:, 0] if squeeze else u

    def solve(self, rhs, counter: SolveCounter | None = None):
        """Solve H u = rhs for one or many right-hand sides."""
        return self._solve(rhs, "N", counter)

    def solve_adjoint(self, rhs, counter: SolveCounter | None = None):
        """Solve H^H v = rhs, reusing the forward factorization."""
        return self._solve(rhs, "H", counter)


def assemble(grid: ModelGrid, omega: float, absorbing: bool = True) -> HelmholtzOperator:
    """Assemble the Helmholtz operator for a model grid and frequency.

    Parameters
    ----------
    grid : ModelGrid
        Validated squared-slowness model.
    omega : float
        Angular frequency (rad/s), positive.
    absorbing : bool
        Keep the radiating boundary terms.  ``False`` gives the real
        symmetric reflecting operator (useful in adjoint identity tests).
    """
    validate_model(grid)
    if not omega > 0:
        raise ShapeMismatchError(f"omega must be positive, got {omega}")
    nz, nx, h, m = grid.nz, grid.nx, grid.h, grid.m
    n = nz * nx
    idx = np.arange(n)
    iz = idx % nz
    ix = idx // nz

    at_top = iz == 0
    at_bottom = iz == nz - 1
    at_left = ix == 0
    at_right = ix == nx - 1
    n_missing = (
        at_top.astype(int) + at_bottom.astype(int)
        + at_left.astype(int) + at_right.astype(int)
    )
    weight = 0.5 ** n_missing

    inv_h2 = 1.0 / (h * h)
    diag = (omega**2) * m - 4.0 * inv_h2
    if absorbing:
        diag = diag.astype(np.complex128)
        diag += 2j * omega * np.sqrt(m) / h * n_missing
    diag = diag * weight

    rows = [idx]
    cols = [idx]
    vals = [diag.astype(np.complex128)]

    # Neighbor coefficient doubles when the opposite side is missing
    # (ghost elimination folds the ghost value onto the inward neighbor).
    def _add(mask, offset, doubled):
        src = idx[mask]
        coef = np.where(doubled[mask], 2.0, 1.0) * inv_h2 * weight[mask]
        rows.append(src)
        cols.append(src + offset)
        vals.append(coef.astype(np.complex128))

    _add(~at_top, -1, at_bottom)
    _add(~at_bottom, +1, at_top)
    _add(~at_left, -nz, at_right)
    _add(~at_right, +nz, at_left)

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return HelmholtzOperator(grid, omega, matrix)
