"""Random probe blocks (simultaneous shots) and randomized misfit.

A probe block W is an Ns x K real matrix with i.i.d. zero-mean,
unit-variance columns, so E[w w^T] = I per column.  For any matrix B with
Ns columns, the average of ||B w_j||^2 over the columns is an unbiased
estimate of ||B||_F^2; that identity is what lets a handful of random
source superpositions stand in for the full shot set.

Probes are real even when the data are complex: real probes keep
E[w w^T] = I and keep each simultaneous shot a real combination of
physical sources.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadSpecError, ShapeMismatchError

GAUSSIAN = "gaussian"
RADEMACHER = "rademacher"


def _rng(seed) -> np.random.Generator:
    # PCG64 gives the same stream for the same seed on every platform.
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class ProbeBlock:
    w: np.ndarray
    distribution: str
    seed: object

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def ns(self) -> int:
        return self.w.shape[0]

    @property
    def k(self) -> int:
        return self.w.shape[1]


def draw_probes(ns: int, k: int, distribution: str = GAUSSIAN, seed=0) -> ProbeBlock:
    """Draw an Ns x K probe block, deterministic for a given seed.

    Parameters
    ----------
    ns : int
        Number of physical sources (rows).
    k : int
        Number of probes (columns).
    distribution : {"gaussian", "rademacher"}
        Entry distribution; both satisfy E[w w^T] = I.
    seed : int or tuple
        Anything acceptable to ``numpy.random.SeedSequence``.
    """
    if k < 1:
        raise BadSpecError(f"probe count must be at least 1, got {k}")
    rng = _rng(seed)
    if distribution == GAUSSIAN:
        w = rng.standard_normal((ns, k))
    elif distribution == RADEMACHER:
        w = rng.integers(0, 2, size=(ns, k)).astype(np.float64) * 2.0 - 1.0
    else:
        raise BadSpecError(f"unknown probe distribution {distribution!r}")
    return ProbeBlock(w=w, distribution=distribution, seed=seed)


def randomized_misfit(b, probes: ProbeBlock) -> float:
    """Unbiased estimate (1/K) sum_j ||B w_j||^2 of ||B||_F^2.

    ``b`` must have Ns columns, one per physical source.
    """
    b = np.asarray(b)
    if b.ndim != 2 or b.shape[1] != probes.ns:
        raise ShapeMismatchError(
            f"matrix with {b.shape} columns incompatible with {probes.ns} sources"
        )
    bw = b @ probes.w
    return float(np.vdot(bw, bw).real) / probes.k


def masked_misfit_counterexample(b, mask, probes: ProbeBlock):
    """Demonstrate that observation masking and probing do not commute.

    Returns the pair ``(lhs, rhs)`` where

    * ``lhs`` probes the masked matrix: (1/K) ||(M o B)^T W||_F^2, the
      quantity a masked misfit actually needs (and which requires the full
      matrix B, i.e. all PDE solves, before the mask can act), and
    * ``rhs`` masks the probe sketch: ||M o ((1/K) W W^T B)||_F^2, the
      value obtained by pretending the mask can be applied after the
      probes have already combined the sources.

    With an all-ones mask the two describe the same unmasked misfit in
    expectation, but for a proper mask they differ almost surely.  Used
    only in tests and documentation.
    """
    b = np.asarray(b)
    mask = np.asarray(mask, dtype=bool)
    if b.shape != mask.shape:
        raise ShapeMismatchError(f"mask {mask.shape} does not match matrix {b.shape}")
    if b.shape[0] != probes.ns:
        raise ShapeMismatchError(
            f"matrix with {b.shape[0]} rows incompatible with {probes.ns} sources"
        )
    masked = np.where(mask, b, 0.0)
    lhs = randomized_misfit(masked.T, probes)
    sketch = probes.w @ (probes.w.T @ b) / probes.k
    rhs_mat = np.where(mask, sketch, 0.0)
    rhs = float(np.vdot(rhs_mat, rhs_mat).real)
    return lhs, rhs
