"""Residual-constrained factorized low-rank completion.

A frequency slice is completed by optimizing a rank-capped factor pair
(L, R) in the midpoint-offset domain.  The residual combines the fit to
the observed entries with an optional weighted simultaneous-shot data
term:

    r(L, R) = || M o T*(L R) - D_s ||_F^2
              + (lam / 2) || T*(L R)^T W - F W ||_F^2

where T* maps the rotated matrix back to source-receiver layout, M is
the observation mask, D_s the observed (zero-filled) data, W a probe
block and F W the simultaneous data predicted by the current model.

The budget problem "minimize 0.5 ||L||^2 + 0.5 ||R||^2 subject to
r(L, R) <= eps" is solved through its Lasso flip side: minimize r over
the ball 0.5 ||L||^2 + 0.5 ||R||^2 <= tau with a spectral projected
gradient method, and find the radius with v(tau) = eps by secant root
finding on the Pareto value function v.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import AcquisitionMask, Domain, Factorization, FrequencySlice
from .errors import BadSpecError, BudgetTooTightError, ShapeMismatchError
from .midoff import midoff_map
from .probes import ProbeBlock

logger = logging.getLogger(__name__)

_BB_MIN = 1e-12
_BB_MAX = 1e12
_SUFF_DECREASE = 1e-4
_LINE_MEMORY = 10


def default_rank_cap(ns: int, nr: int) -> int:
    """Default factor rank: min(Ns, Nr)/10 rounded up, at least 5."""
    return max(5, math.ceil(min(ns, nr) / 10))


@dataclass(frozen=True)
class CompletionProblem:
    """One per-frequency completion instance.

    ``sim_data`` is the pair (FW, probes) with FW the Nr x K
    simultaneous-shot data; it must be present exactly when ``lam > 0``.
    """

    acquisition: AcquisitionMask
    rank_cap: int
    epsilon: float
    lam: float = 0.0
    sim_data: tuple | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise BadSpecError(f"residual budget must be nonnegative, got {self.epsilon}")
        if (self.lam == 0.0) != (self.sim_data is None):
            raise BadSpecError("sim_data must be supplied exactly when lam > 0")
        if self.sim_data is not None:
            fw, probes = self.sim_data
            fw = np.asarray(fw, dtype=np.complex128)
            ns, nr = self.acquisition.mask.shape
            if not isinstance(probes, ProbeBlock) or probes.ns != ns:
                raise ShapeMismatchError("probe block does not match the source count")
            if fw.shape != (nr, probes.k):
                raise ShapeMismatchError(
                    f"simultaneous data must be {(nr, probes.k)}, got {fw.shape}"
                )
            object.__setattr__(self, "sim_data", (fw, probes))

    @property
    def shape(self):
        return self.acquisition.mask.shape

    def mapping(self):
        return midoff_map(*self.shape)


@dataclass
class ParetoTrace:
    """(tau, v(tau)) pairs visited by the root finder, in visit order."""

    points: list = field(default_factory=list)

    def append(self, tau: float, v: float) -> None:
        self.points.append((float(tau), float(v)))

    def taus(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])


def _residual_terms(problem: CompletionProblem, L, R):
    """Shared forward pass: (value, masked misfit E1, shot misfit E2)."""
    mapping = problem.mapping()
    a = mapping.adjoint(L @ R)
    e1 = problem.acquisition.mask * a - problem.acquisition.observed.data
    value = float(np.vdot(e1, e1).real)
    e2 = None
    if problem.sim_data is not None:
        fw, probes = problem.sim_data
        e2 = a.T @ probes.w - fw
        value += 0.5 * problem.lam * float(np.vdot(e2, e2).real)
    return value, e1, e2


def residual(problem: CompletionProblem, fact: Factorization) -> float:
    """Constraint left-hand side r(L, R) at a factor pair."""
    value, _, _ = _residual_terms(problem, fact.L, fact.R)
    return value


def _gradient_arrays(problem: CompletionProblem, L, R, e1, e2):
    z = 2.0 * (problem.acquisition.mask * e1)
    if e2 is not None:
        _, probes = problem.sim_data
        z = z + problem.lam * (probes.w @ e2.T)
    z_mo = problem.mapping().forward(z)
    return z_mo @ R.conj().T, L.conj().T @ z_mo


def residual_gradient(problem: CompletionProblem, fact: Factorization):
    """Gradient (gL, gR) of the residual in the factor pair.

    The directional derivative along (dL, dR) is
    Re<gL, dL> + Re<gR, dR> under the complex trace inner product.
    """
    _, e1, e2 = _residual_terms(problem, fact.L, fact.R)
    gl, gr = _gradient_arrays(problem, fact.L, fact.R, e1, e2)
    return gl, gr


def project_ball(fact: Factorization, tau: float):
    """Scale the pair onto the ball 0.5||L||^2 + 0.5||R||^2 <= tau."""
    current = fact.ball()
    if current <= tau:
        return Factorization(L=fact.L, R=fact.R, rank_cap=fact.rank_cap, tau=tau)
    scale = math.sqrt(tau / current) if current > 0 else 0.0
    return Factorization(
        L=fact.L * scale, R=fact.R * scale, rank_cap=fact.rank_cap, tau=tau
    )


def _project_arrays(L, R, tau):
    current = 0.5 * (np.vdot(L, L).real + np.vdot(R, R).real)
    if current <= tau:
        return L, R
    scale = math.sqrt(tau / current) if current > 0 else 0.0
    return L * scale, R * scale


def _dot(aL, aR, bL, bR) -> float:
    return float(np.vdot(aL, bL).real + np.vdot(aR, bR).real)


def solve_lasso(
    problem: CompletionProblem,
    tau: float,
    start: Factorization,
    max_iter: int = 200,
    log=None,
):
    """Minimize the residual over the tau-ball by spectral projected gradient.

    Barzilai-Borwein (BB1) steps with a nonmonotone Armijo line search
    over a 10-value memory window; the projection is the exact radial
    scaling onto the ball.  Iteration-capped: the final iterate and its
    residual value v(tau) are returned after at most ``max_iter`` steps.
    Every iterate is feasible, so the returned value never exceeds the
    residual of the (projected) starting pair.
    """
    L, R = _project_arrays(np.array(start.L), np.array(start.R), tau)
    f, e1, e2 = _residual_terms(problem, L, R)
    gL, gR = _gradient_arrays(problem, L, R, e1, e2)
    gnorm = math.sqrt(_dot(gL, gR, gL, gR))
    history = deque([f], maxlen=_LINE_MEMORY)
    alpha = 1.0 / gnorm if gnorm > 0 else 1.0
    pg0 = None

    for it in range(max_iter):
        if log is not None:
            log.append((it, tau, f, gnorm))
        cL, cR = _project_arrays(L - alpha * gL, R - alpha * gR, tau)
        dL, dR = cL - L, cR - R
        gtd = _dot(gL, gR, dL, dR)
        dnorm = math.sqrt(_dot(dL, dR, dL, dR))
        if pg0 is None:
            pg0 = dnorm
        if dnorm <= 1e-14 * max(1.0, pg0) or gtd >= -1e-30:
            break
        fmax = max(history)
        t = 1.0
        while True:
            tL, tR = L + t * dL, R + t * dR
            f_new, e1, e2 = _residual_terms(problem, tL, tR)
            if f_new <= fmax + _SUFF_DECREASE * t * gtd or t < 1e-16:
                break
            # quadratic interpolation safeguarded to [0.1 t, 0.5 t]
            denom = 2.0 * (f_new - f - t * gtd)
            t_q = -gtd * t * t / denom if denom > 0 else 0.5 * t
            t = min(max(t_q, 0.1 * t), 0.5 * t)
        if t < 1e-16:
            break
        gL_new, gR_new = _gradient_arrays(problem, tL, tR, e1, e2)
        sL, sR = tL - L, tR - R
        yL, yR = gL_new - gL, gR_new - gR
        ss = _dot(sL, sR, sL, sR)
        sy = _dot(sL, sR, yL, yR)
        alpha = min(max(ss / sy, _BB_MIN), _BB_MAX) if sy > 0 else _BB_MAX
        L, R, f = tL, tR, f_new
        gL, gR = gL_new, gR_new
        gnorm = math.sqrt(_dot(gL, gR, gL, gR))
        history.append(f)
        if f <= 1e-30:
            break

    fact = Factorization(L=L, R=R, rank_cap=problem.rank_cap, tau=tau)
    return fact, f


def init_factors(midoff_slice, rank_cap: int) -> Factorization:
    """SVD warm start: L = U sqrt(S), R = sqrt(S) V^H of the rotated data."""
    if isinstance(midoff_slice, FrequencySlice):
        if midoff_slice.domain is not Domain.MIDPOINT_OFFSET:
            raise BadSpecError("init_factors expects midpoint-offset data")
        y = midoff_slice.data
    else:
        y = np.asarray(midoff_slice, dtype=np.complex128)
    if rank_cap > min(y.shape):
        raise BadSpecError(
            f"rank cap {rank_cap} exceeds matrix dimensions {y.shape}"
        )
    u, s, vh = np.linalg.svd(y, full_matrices=False)
    root = np.sqrt(s[:rank_cap])
    L = u[:, :rank_cap] * root[None, :]
    R = root[:, None] * vh[:rank_cap]
    tau = 0.5 * float(np.vdot(L, L).real + np.vdot(R, R).real)
    return Factorization(L=L, R=R, rank_cap=rank_cap, tau=tau)


def _zero_factorization(problem: CompletionProblem) -> Factorization:
    n = problem.mapping().size_out
    k = problem.rank_cap
    zeros = np.zeros((n, k), dtype=np.complex128)
    return Factorization(L=zeros, R=zeros.T.copy(), rank_cap=k, tau=0.0)


def solve_completion(
    problem: CompletionProblem,
    start: Factorization | None = None,
    root_tol: float = 1e-2,
    max_root_iter: int = 10,
    lasso_iter: int = 200,
    log=None,
):
    """Drive the Pareto value function to the residual budget.

    Secant iteration on v(tau) = eps starting from tau = 0 and the ball
    value of the starting pair; each value evaluation is a warm-started
    :func:`solve_lasso`.  The secant update runs on the square-root scale
    (the value curve is close to linear in the residual norm, so far
    fewer root steps are needed than on the squared scale; the root is
    the same).  Stops when |v(tau) - eps| <= root_tol * max(1, eps) or
    after ``max_root_iter`` root steps, returning the iterate closest to
    the budget.

    Returns
    -------
    (Factorization, ParetoTrace)

    Raises
    ------
    BudgetTooTightError
        If the iterations are exhausted with v(tau) > eps while tau has
        stopped growing; the best pair and trace ride on the exception.
    """
    eps = problem.epsilon
    trace = ParetoTrace()
    zero = _zero_factorization(problem)
    v0, _, _ = _residual_terms(problem, zero.L, zero.R)
    trace.append(0.0, v0)
    if eps >= v0:
        return zero, trace

    if start is None:
        mapping = problem.mapping()
        start = init_factors(
            mapping.forward(problem.acquisition.observed.data), problem.rank_cap
        )
    fact = start
    tau = fact.ball()
    if tau <= 0:
        tau = max(1.0, eps)

    tol = root_tol * max(1.0, eps)
    target = math.sqrt(eps)
    lo = (0.0, math.sqrt(v0))  # infeasible side: v > eps
    hi = None  # feasible side: v <= eps
    best = None
    prev_tau, prev_u = 0.0, math.sqrt(v0)
    stalled = False
    last_side = 0
    v = v0

    for _ in range(max_root_iter):
        fact, v = solve_lasso(problem, tau, fact, max_iter=lasso_iter, log=log)
        trace.append(tau, v)
        if best is None or abs(v - eps) < abs(best[1] - eps):
            best = (fact, v)
        if abs(v - eps) <= tol:
            logger.debug("pareto root found: tau=%.6g v=%.6g eps=%.6g", tau, v, eps)
            return fact, trace
        u = math.sqrt(v)
        if v > eps:
            if tau >= lo[0]:
                lo = (tau, u)
            if hi is not None and last_side == +1:
                hi = (hi[0], 0.5 * (hi[1] - target) + target)  # Illinois damping
            last_side = +1
        else:
            if hi is None or tau <= hi[0]:
                hi = (tau, u)
            if last_side == -1:
                lo = (lo[0], 0.5 * (lo[1] - target) + target)
            last_side = -1

        if hi is not None:
            # false position on the bracket, square-root scale
            du = hi[1] - lo[1]
            if abs(du) <= 1e-15 * max(1.0, lo[1]) or hi[0] - lo[0] <= 1e-15 * max(1.0, hi[0]):
                stalled = True
                break
            tau_new = lo[0] + (target - lo[1]) * (hi[0] - lo[0]) / du
            span = hi[0] - lo[0]
            tau_new = min(max(tau_new, lo[0] + 1e-3 * span), hi[0] - 1e-3 * span)
        else:
            du = u - prev_u
            dtau = tau - prev_tau
            if abs(du) <= 1e-15 * max(1.0, u) or abs(dtau) <= 1e-15 * max(1.0, tau):
                stalled = True
                break
            tau_new = tau - (u - target) * dtau / du
            if tau_new <= 0 or not np.isfinite(tau_new):
                tau_new = 0.5 * tau
        prev_tau, prev_u = tau, u
        tau = tau_new

    fact, v = best
    if v > eps + tol and stalled:
        raise BudgetTooTightError(
            f"residual {v:.6g} stalled above budget {eps:.6g}",
            factorization=fact,
            trace=trace,
        )
    return fact, trace


def nuclear_norm(a) -> float:
    """Sum of singular values, by dense SVD (test oracle scale)."""
    return float(np.linalg.svd(np.asarray(a), compute_uv=False).sum())


def completed_slice(problem: CompletionProblem, fact: Factorization) -> FrequencySlice:
    """Source-receiver slice T*(L R) reconstructed from a factor pair."""
    data = problem.mapping().adjoint(fact.product())
    return FrequencySlice(
        omega=problem.acquisition.observed.omega,
        domain=Domain.SOURCE_RECEIVER,
        data=data,
    )


def write_convergence_log(path, rows) -> None:
    """Per-slice solver log as CSV: iter, tau, v_tau, grad_norm."""
    with open(path, "w", newline="") as fh:
        fh.write("iter,tau,v_tau,grad_norm\n")
        for it, tau, v, g in rows:
            fh.write(f"{it},{tau!r},{v!r},{g!r}\n")
