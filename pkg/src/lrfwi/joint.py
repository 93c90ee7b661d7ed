"""Alternating data completion and model inversion.

One outer iteration of the unified scheme:

1. draw a fresh probe block W (seeded from the master seed and the
   iteration index),
2. forward-model the simultaneous data F W = P H(m)^-1 Q W once per
   frequency (K solves each),
3. update every per-frequency factor pair by budget-constrained
   completion with the weighted simultaneous-shot term,
4. update m by a capped L-BFGS run against the simultaneous samples of
   the completed data, reusing the fields from step 2 for the first
   misfit evaluation.

Because of that reuse, each outer iteration costs 2 K solves per
misfit-and-gradient evaluation per frequency and nothing extra for the
completion, exactly as if the probes were the whole survey.

The stage-wise baseline completes every slice once (no physics term) and
then runs the same model updates against the frozen completed data, on
the identical probe-seed schedule, so comparisons isolate the coupling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import Survey, gather_receivers, scatter_sources
from .core import AcquisitionMask, Factorization, FrequencySlice, ModelGrid
from .errors import BudgetTooTightError, EmptyScheduleError
from .helmholtz import SolveCounter, assemble
from .inversion import FieldCache, ShotMisfitSpec, solve_m_subproblem
from .lowrank import (
    CompletionProblem,
    completed_slice,
    init_factors,
    midoff_map,
    solve_completion,
)
from .probes import draw_probes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Observation:
    """One frequency of masked data plus its source spectral weight."""

    omega: float
    amp: float
    acquisition: AcquisitionMask


@dataclass
class InversionSettings:
    n_probes: int = 4
    probe_distribution: str = "gaussian"
    rank_cap: int = 5
    lam: float = 1.0
    eps_rel: float = 1e-3
    outer_iters: int = 10
    lbfgs_cap: int = 5
    lbfgs_mem: int = 5
    lasso_iters: int = 150
    root_tol: float = 1e-2
    max_root_iter: int = 10
    master_seed: int = 0
    relax_budget: bool = True


@dataclass
class IterationRecord:
    iteration: int
    band: int
    phi: float
    n_evals: int
    pde_forward: int
    pde_adjoint: int
    completion_v: dict = field(default_factory=dict)
    completion_eps: dict = field(default_factory=dict)
    completion_failed: dict = field(default_factory=dict)
    model_error: float = np.nan
    snr: dict = field(default_factory=dict)


@dataclass
class JointState:
    """Outer-iteration state: model, per-frequency factors, metrics."""

    k: int
    m: ModelGrid
    factors: dict  # omega -> Factorization or None
    probes: object = None
    history: list = field(default_factory=list)
    counter: SolveCounter = field(default_factory=SolveCounter)
    flags: list = field(default_factory=list)


def probe_seed(master_seed: int, band: int, iteration: int):
    """Deterministic per-iteration probe seed shared by all pipelines."""
    return (int(master_seed), int(band), int(iteration))


def budget_for(acq: AcquisitionMask, eps_rel: float) -> float:
    """Residual budget (eps_rel * ||D_s||_F)^2 of one observed slice."""
    norm = float(np.linalg.norm(acq.observed.data))
    return (eps_rel * norm) ** 2


def _effective_root_tol(eps: float, root_tol: float) -> float:
    # the solver stops at |v - eps| <= tol * max(1, eps); rescale so the
    # achieved accuracy is relative to eps even for small data norms
    if eps <= 0:
        return root_tol
    return root_tol * eps / max(1.0, eps)


def _completion_update(problem, start, settings, log=None):
    """Run one budgeted completion; relax the budget once if infeasible."""
    tol = _effective_root_tol(problem.epsilon, settings.root_tol)
    try:
        fact, trace = solve_completion(
            problem, start, root_tol=tol,
            max_root_iter=settings.max_root_iter,
            lasso_iter=settings.lasso_iters, log=log,
        )
        return fact, trace, problem.epsilon, False
    except BudgetTooTightError as exc:
        if not settings.relax_budget:
            return exc.factorization, exc.trace, problem.epsilon, True
        relaxed = replace(problem, epsilon=2.0 * problem.epsilon)
        try:
            fact, trace = solve_completion(
                relaxed, exc.factorization,
                root_tol=_effective_root_tol(relaxed.epsilon, settings.root_tol),
                max_root_iter=settings.max_root_iter,
                lasso_iter=settings.lasso_iters, log=log,
            )
            return fact, trace, relaxed.epsilon, False
        except BudgetTooTightError as exc2:
            return exc2.factorization, exc2.trace, relaxed.epsilon, True


def _metrics(record, state, truth, true_slices, observations):
    from .experiment import model_error, snr_db  # local import, no cycle at load

    if truth is not None:
        record.model_error = model_error(truth.m, state.m.m)
    if true_slices:
        for obs in observations:
            fact = state.factors.get(obs.omega)
            if fact is None:
                continue
            mapping = midoff_map(*obs.acquisition.mask.shape)
            rec = mapping.adjoint(fact.product())
            record.snr[obs.omega] = snr_db(true_slices[obs.omega].data, rec)


def joint_invert(
    m0: ModelGrid,
    survey: Survey,
    observations,
    settings: InversionSettings,
    truth: ModelGrid | None = None,
    true_slices: dict | None = None,
    state: JointState | None = None,
    band: int = 0,
    completion_log=None,
) -> JointState:
    """Alternate completion and model updates for ``outer_iters`` rounds.

    ``state`` carries the model, factors, counter and history across
    frequency bands; pass the previous band's state to continue it.
    Subproblem failures are recorded in ``state.flags`` and the best
    iterate is kept.
    """
    observations = list(observations)
    if state is None:
        state = JointState(k=0, m=m0, factors={}, counter=SolveCounter())
    else:
        state.m = m0
    for obs in observations:
        if obs.omega not in state.factors:
            mapping = midoff_map(*obs.acquisition.mask.shape)
            state.factors[obs.omega] = init_factors(
                mapping.forward(obs.acquisition.observed.data), settings.rank_cap
            )
    budgets = {obs.omega: budget_for(obs.acquisition, settings.eps_rel) for obs in observations}

    for _ in range(settings.outer_iters):
        state.k += 1
        probes = draw_probes(
            survey.ns, settings.n_probes, settings.probe_distribution,
            seed=probe_seed(settings.master_seed, band, state.k),
        )
        state.probes = probes

        # simultaneous data at the current model, one block solve per omega
        fields = {}
        sim = {}
        for obs in observations:
            operator = assemble(state.m, obs.omega)
            rhs = scatter_sources(state.m, survey, obs.amp * probes.w)
            u = operator.solve(rhs, state.counter)
            fields[obs.omega] = (operator, u)
            sim[obs.omega] = gather_receivers(u, survey)

        record = IterationRecord(
            iteration=state.k, band=band, phi=np.nan, n_evals=0,
            pde_forward=state.counter.forward, pde_adjoint=state.counter.adjoint,
        )

        for obs in observations:
            problem = CompletionProblem(
                acquisition=obs.acquisition,
                rank_cap=settings.rank_cap,
                epsilon=budgets[obs.omega],
                lam=settings.lam,
                sim_data=(sim[obs.omega], probes),
            )
            fact, trace, eps_used, failed = _completion_update(
                problem, state.factors[obs.omega], settings, log=completion_log,
            )
            state.factors[obs.omega] = fact
            record.completion_v[obs.omega] = trace.points[-1][1] if trace.points else np.nan
            record.completion_eps[obs.omega] = eps_used
            record.completion_failed[obs.omega] = failed
            if failed:
                state.flags.append((state.k, obs.omega, "budget"))

        components = []
        for obs in observations:
            mapping = midoff_map(*obs.acquisition.mask.shape)
            target = mapping.adjoint(state.factors[obs.omega].product()).T @ probes.w
            components.append((obs.omega, obs.amp, target))
        spec = ShotMisfitSpec(
            grid=state.m, survey=survey, probes=probes, components=tuple(components)
        )
        cache = FieldCache(m=np.asarray(state.m.m), entries=fields)
        m_new, result = solve_m_subproblem(
            spec, state.m.m, settings.lbfgs_cap, counter=state.counter, cache=cache
        )
        if result.line_search_failed:
            state.flags.append((state.k, None, "line-search"))
        state.m = state.m.with_model(m_new)

        record.phi = result.f
        record.n_evals = result.n_evals
        record.pde_forward = state.counter.forward - record.pde_forward
        record.pde_adjoint = state.counter.adjoint - record.pde_adjoint
        _metrics(record, state, truth, true_slices, observations)
        state.history.append(record)
        logger.info(
            "joint iter %d: phi=%.4g err=%.4g pde=%d",
            state.k, record.phi, record.model_error, state.counter.total,
        )
    return state


def invert_with_targets(
    m0: ModelGrid,
    survey: Survey,
    data_slices: dict,
    amps: dict,
    settings: InversionSettings,
    truth: ModelGrid | None = None,
    true_slices: dict | None = None,
    state: JointState | None = None,
    band: int = 0,
) -> JointState:
    """Simultaneous-shot inversion against fixed full data slices.

    Used by the full-data pipeline (slices are the true data) and by the
    stage-wise pipeline (slices are the completed data).  Probe seeds
    follow the same schedule as :func:`joint_invert`.
    """
    omegas = sorted(data_slices)
    if state is None:
        state = JointState(k=0, m=m0, factors={}, counter=SolveCounter())
    else:
        state.m = m0

    for _ in range(settings.outer_iters):
        state.k += 1
        probes = draw_probes(
            survey.ns, settings.n_probes, settings.probe_distribution,
            seed=probe_seed(settings.master_seed, band, state.k),
        )
        state.probes = probes
        record = IterationRecord(
            iteration=state.k, band=band, phi=np.nan, n_evals=0,
            pde_forward=state.counter.forward, pde_adjoint=state.counter.adjoint,
        )
        components = tuple(
            (omega, amps[omega], data_slices[omega].data.T @ probes.w)
            for omega in omegas
        )
        spec = ShotMisfitSpec(
            grid=state.m, survey=survey, probes=probes, components=components
        )
        m_new, result = solve_m_subproblem(
            spec, state.m.m, settings.lbfgs_cap, counter=state.counter
        )
        if result.line_search_failed:
            state.flags.append((state.k, None, "line-search"))
        state.m = state.m.with_model(m_new)
        record.phi = result.f
        record.n_evals = result.n_evals
        record.pde_forward = state.counter.forward - record.pde_forward
        record.pde_adjoint = state.counter.adjoint - record.pde_adjoint
        if truth is not None:
            from .experiment import model_error

            record.model_error = model_error(truth.m, state.m.m)
        if true_slices:
            from .experiment import snr_db

            for omega in omegas:
                record.snr[omega] = snr_db(
                    true_slices[omega].data, data_slices[omega].data
                )
        state.history.append(record)
    return state


def complete_slices(
    observations,
    settings: InversionSettings,
    completion_log=None,
):
    """Stage one of the disjoint pipeline: budgeted completion per slice.

    Returns (factors, recovered slices, flags).
    """
    factors, recovered, flags = {}, {}, []
    for obs in observations:
        mapping = midoff_map(*obs.acquisition.mask.shape)
        start = init_factors(
            mapping.forward(obs.acquisition.observed.data), settings.rank_cap
        )
        problem = CompletionProblem(
            acquisition=obs.acquisition,
            rank_cap=settings.rank_cap,
            epsilon=budget_for(obs.acquisition, settings.eps_rel),
            lam=0.0,
            sim_data=None,
        )
        fact, trace, eps_used, failed = _completion_update(
            problem, start, settings, log=completion_log
        )
        factors[obs.omega] = fact
        recovered[obs.omega] = completed_slice(problem, fact)
        if failed:
            flags.append((obs.omega, "budget"))
    return factors, recovered, flags


def disjoint_invert(
    m0: ModelGrid,
    survey: Survey,
    observations,
    settings: InversionSettings,
    truth: ModelGrid | None = None,
    true_slices: dict | None = None,
    state: JointState | None = None,
    band: int = 0,
    completion_log=None,
) -> JointState:
    """Stage-wise baseline: interpolate once, then invert the fill-in."""
    observations = list(observations)
    factors, recovered, flags = complete_slices(
        observations, settings, completion_log=completion_log
    )
    amps = {obs.omega: obs.amp for obs in observations}
    state = invert_with_targets(
        m0, survey, recovered, amps, settings,
        truth=truth, true_slices=true_slices, state=state, band=band,
    )
    state.factors.update(factors)
    for omega, reason in flags:
        state.flags.append((0, omega, reason))
    # report the stage-one recovery quality, not the (exact) target data
    if true_slices:
        for record in state.history[-settings.outer_iters:]:
            for omega in recovered:
                record.snr[omega] = _slice_snr(true_slices[omega], recovered[omega])
    return state


def _slice_snr(true_slice: FrequencySlice, rec_slice: FrequencySlice) -> float:
    from .experiment import snr_db

    return snr_db(true_slice.data, rec_slice.data)


def frequency_continuation(bands, runner, m0: ModelGrid) -> ModelGrid:
    """Run per-band inversions low to high, warm-starting the model.

    ``runner(band_omegas, m, band_index)`` must return the updated model
    grid for one band.
    """
    bands = [list(b) for b in bands]
    if not bands or any(len(b) == 0 for b in bands):
        raise EmptyScheduleError("continuation schedule must have nonempty bands")
    m = m0
    for i, band in enumerate(bands):
        m = runner(band, m, i)
    return m
