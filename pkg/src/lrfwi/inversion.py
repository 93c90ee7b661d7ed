"""Simultaneous-shot misfit, adjoint-state gradient, and L-BFGS driver.

The model subproblem minimizes, over the squared slowness m,

    phi(m) = sum_omega (1 / 2K) || P H_omega(m)^-1 (amp Q W) - target ||_F^2

for a fixed probe block W and per-frequency targets (Nr x K matrices,
either D^T W from observed data or the simultaneous samples of a
completed slice).  The 1/K normalization makes phi an unbiased sample
average of the full-shot misfit.

Gradients come from the adjoint-state method: one extra solve with H^H
per forward solve, both sharing one LU factorization per (m, omega).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .acquisition import (
    Survey,
    gather_receivers,
    scatter_receivers,
    scatter_sources,
    validate_survey,
)
from .core import ModelGrid
from .errors import ShapeMismatchError
from .helmholtz import SolveCounter, assemble
from .probes import ProbeBlock

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShotMisfitSpec:
    """Geometry, probe block, and per-frequency targets of one m-subproblem.

    ``components`` is a tuple of (omega, amp, target) with target complex
    Nr x K.
    """

    grid: ModelGrid
    survey: Survey
    probes: ProbeBlock
    components: tuple

    def __post_init__(self):
        validate_survey(self.survey, self.grid)
        if self.probes.ns != self.survey.ns:
            raise ShapeMismatchError(
                f"probe block has {self.probes.ns} rows, survey has {self.survey.ns} sources"
            )
        comps = []
        for omega, amp, target in self.components:
            target = np.asarray(target, dtype=np.complex128)
            if target.shape != (self.survey.nr, self.probes.k):
                raise ShapeMismatchError(
                    f"target for omega={omega} must be "
                    f"{(self.survey.nr, self.probes.k)}, got {target.shape}"
                )
            comps.append((float(omega), float(amp), target))
        object.__setattr__(self, "components", tuple(comps))


@dataclass
class FieldCache:
    """Forward fields (and operators) precomputed at one model vector.

    Lets the first misfit evaluation of an m-subproblem reuse the
    simultaneous-shot solves that produced F W, instead of repeating K
    forward solves per frequency.
    """

    m: np.ndarray
    entries: dict  # omega -> (HelmholtzOperator, fields n x K)

    def matches(self, m) -> bool:
        return np.array_equal(self.m, m)


def misfit_and_gradient(
    spec: ShotMisfitSpec,
    m,
    counter: SolveCounter | None = None,
    cache: FieldCache | None = None,
):
    """Evaluate phi(m) and its gradient with respect to squared slowness.

    Per frequency: forward-solve the K simultaneous shots, form the
    receiver residual, back-propagate it with one adjoint block solve,
    and correlate fields:  g_i = -(omega^2 / K) sum_k Re(conj(v_ki) u_ki).
    ``-g`` is a descent direction for phi.
    """
    m = np.asarray(m, dtype=np.float64)
    grid = spec.grid.with_model(m)
    k = spec.probes.k
    phi = 0.0
    g = np.zeros(grid.n)
    use_cache = cache is not None and cache.matches(m)
    for omega, amp, target in spec.components:
        if use_cache and omega in cache.entries:
            operator, u = cache.entries[omega]
        else:
            operator = assemble(grid, omega)
            rhs = scatter_sources(grid, spec.survey, amp * spec.probes.w)
            u = operator.solve(rhs, counter)
        pred = gather_receivers(u, spec.survey)
        res = pred - target
        phi += 0.5 / k * float(np.vdot(res, res).real)
        v = operator.solve_adjoint(
            scatter_receivers(grid, spec.survey, res), counter
        )
        g -= (omega * omega / k) * np.sum((np.conj(v) * u).real, axis=1)
    return phi, g


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    n_evals: int
    converged: bool
    line_search_failed: bool


def _cubic_step(a_lo, f_lo, g_lo, a_hi, f_hi):
    # minimizer of the cubic through (a_lo, f_lo, g_lo) and (a_hi, f_hi);
    # falls back to bisection when ill-conditioned
    d = a_hi - a_lo
    if abs(d) < 1e-30:
        return a_lo
    denom = 2.0 * (f_hi - f_lo - g_lo * d)
    if denom <= 0 or not np.isfinite(denom):
        return a_lo + 0.5 * d
    a = a_lo - g_lo * d * d / denom
    lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
    span = hi - lo
    if not np.isfinite(a) or a < lo + 0.1 * span or a > hi - 0.1 * span:
        return a_lo + 0.5 * d
    return a


def _wolfe_search(f_and_g, x, f0, g0, direction, alpha0, c1, c2, max_steps=25):
    """Strong Wolfe line search (bracket then zoom).

    Returns (alpha, x_new, f_new, g_new, n_evals, ok); ``ok`` is False when
    no acceptable step was found, in which case the best sufficient-decrease
    point seen (if any) is returned.
    """
    d0 = float(np.dot(g0, direction))
    evals = 0
    best = None

    def phi(alpha):
        nonlocal evals
        xa = x + alpha * direction
        fa, ga = f_and_g(xa)
        evals += 1
        return xa, fa, ga, float(np.dot(ga, direction))

    a_prev, f_prev, d_prev = 0.0, f0, d0
    alpha = alpha0
    bracket = None
    for i in range(max_steps):
        xa, fa, ga, da = phi(alpha)
        if fa <= f0 + c1 * alpha * d0 and (best is None or fa < best[2]):
            best = (alpha, xa, fa, ga)
        if fa > f0 + c1 * alpha * d0 or (i > 0 and fa >= f_prev):
            bracket = (a_prev, f_prev, d_prev, alpha, fa, da)
            break
        if abs(da) <= -c2 * d0:
            return alpha, xa, fa, ga, evals, True
        if da >= 0:
            bracket = (alpha, fa, da, a_prev, f_prev, d_prev)
            break
        a_prev, f_prev, d_prev = alpha, fa, da
        alpha *= 2.0
    if bracket is None:
        if best is not None:
            return best[0], best[1], best[2], best[3], evals, True
        return 0.0, x, f0, g0, evals, False

    a_lo, f_lo, d_lo, a_hi, f_hi, d_hi = bracket
    for _ in range(max_steps):
        alpha = _cubic_step(a_lo, f_lo, d_lo, a_hi, f_hi)
        xa, fa, ga, da = phi(alpha)
        if fa > f0 + c1 * alpha * d0 or fa >= f_lo:
            a_hi, f_hi, d_hi = alpha, fa, da
        else:
            if best is None or fa < best[2]:
                best = (alpha, xa, fa, ga)
            if abs(da) <= -c2 * d0:
                return alpha, xa, fa, ga, evals, True
            if da * (a_hi - a_lo) >= 0:
                a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
            a_lo, f_lo, d_lo = alpha, fa, da
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
    if best is not None:
        return best[0], best[1], best[2], best[3], evals, True
    return 0.0, x, f0, g0, evals, False


def lbfgs_minimize(
    f_and_g,
    x0,
    max_iter: int = 100,
    mem: int = 10,
    g_tol: float = 1e-6,
    c1: float = 1e-4,
    c2: float = 0.9,
) -> LbfgsResult:
    """Limited-memory BFGS with the two-loop recursion and Wolfe search.

    Stops when the gradient norm falls below ``g_tol * max(1, ||g0||)``
    or after ``max_iter`` accepted iterations.  Accepted iterates have
    nonincreasing objective values.  On a line-search failure the best
    iterate found so far is returned with ``line_search_failed`` set.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = f_and_g(x)
    g = np.asarray(g, dtype=np.float64)
    evals = 1
    g0_norm = float(np.linalg.norm(g))
    tol = g_tol * max(1.0, g0_norm)
    if g0_norm <= tol:
        return LbfgsResult(x, f, g0_norm, 0, evals, True, False)

    s_list, y_list, rho_list = [], [], []
    it = 0
    failed = False
    while it < max_iter:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            break
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
            a = rho * np.dot(s, q)
            alphas.append(a)
            q -= a * y
        if y_list:
            gamma = np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
            b = rho * np.dot(y, q)
            q += (a - b) * s
        direction = -q
        if np.dot(g, direction) >= 0:
            direction = -g  # fall back to steepest descent
        alpha0 = 1.0 if y_list else min(1.0, 1.0 / gnorm)
        alpha, x_new, f_new, g_new, ls_evals, ok = _wolfe_search(
            f_and_g, x, f, g, direction, alpha0, c1, c2
        )
        evals += ls_evals
        if not ok or f_new > f:
            failed = True
            break
        s = x_new - x
        y = np.asarray(g_new, dtype=np.float64) - g
        sy = float(np.dot(s, y))
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > mem:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x, f, g = x_new, f_new, np.asarray(g_new, dtype=np.float64)
        it += 1

    gnorm = float(np.linalg.norm(g))
    return LbfgsResult(x, f, gnorm, it, evals, gnorm <= tol, failed)


def solve_m_subproblem(
    spec: ShotMisfitSpec,
    m0,
    iter_cap: int,
    counter: SolveCounter | None = None,
    cache: FieldCache | None = None,
):
    """Partial model update: L-BFGS on the shot misfit, capped iterations.

    ``cache`` may hold forward fields precomputed at ``m0``; they are
    consumed by the first misfit evaluation only.

    Returns (model vector, LbfgsResult).
    """
    m0 = np.asarray(m0, dtype=np.float64)
    if iter_cap == 0:
        return m0.copy(), LbfgsResult(m0.copy(), np.nan, np.nan, 0, 0, False, False)

    state = {"cache": cache}

    def oracle(m):
        c = state.pop("cache", None)
        return misfit_and_gradient(spec, m, counter=counter, cache=c)

    result = lbfgs_minimize(oracle, m0, max_iter=iter_cap)
    logger.info(
        "m-subproblem: phi=%.6g |g|=%.3g evals=%d iters=%d",
        result.f, result.grad_norm, result.n_evals, result.iterations,
    )
    return result.x, result
