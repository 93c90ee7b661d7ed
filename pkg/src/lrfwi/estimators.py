"""Scikit-learn style estimators over the functional core.

Three entry points compose with the wider ecosystem (``get_params``,
``clone``, pipelines):

* :class:`MidpointOffsetTransform`: the 45-degree data rotation as a
  stateless transformer;
* :class:`LowRankCompleter`: matrix completion as an imputer, with NaN
  marking the missing entries;
* :class:`InterpolatedFWI`: the full/stage-wise/joint inversion pipelines
  behind a single ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .acquisition import apply_mask
from .core import Domain, FrequencySlice, ModelGrid
from .errors import BadSpecError, ShapeMismatchError
from .joint import (
    InversionSettings,
    Observation,
    disjoint_invert,
    invert_with_targets,
    joint_invert,
    midoff_map,
)
from .lowrank import (
    CompletionProblem,
    default_rank_cap,
    solve_completion,
)


def check_complex_matrix(x, name="X", allow_nan=False):
    """Validation helper: coerce to a 2-D complex matrix."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got ndim={x.ndim}")
    if not allow_nan and not np.all(np.isfinite(x)):
        raise BadSpecError(f"{name} contains non-finite entries")
    return x


class MidpointOffsetTransform(TransformerMixin, BaseEstimator):
    """Rotate source-receiver matrices to the midpoint-offset domain.

    ``fit`` records the (Ns, Nr) geometry; ``transform`` scatters onto
    the checkerboard, ``inverse_transform`` gathers back.
    """

    def fit(self, X, y=None):
        X = check_complex_matrix(X)
        self.ns_, self.nr_ = X.shape
        return self

    def transform(self, X):
        X = check_complex_matrix(X)
        if X.shape != (self.ns_, self.nr_):
            raise ShapeMismatchError(
                f"X has shape {X.shape}, fitted for {(self.ns_, self.nr_)}"
            )
        return midoff_map(self.ns_, self.nr_).forward(X)

    def inverse_transform(self, Y):
        Y = check_complex_matrix(Y)
        return midoff_map(self.ns_, self.nr_).adjoint(Y)


class LowRankCompleter(TransformerMixin, BaseEstimator):
    """Impute missing matrix entries by rank-capped completion.

    Missing entries are NaN.  ``fit`` solves the budget-constrained
    factorization in the midpoint-offset domain; ``transform`` fills the
    NaNs from the reconstruction and keeps observed values.
    """

    def __init__(self, rank=0, eps_rel=1e-3, max_lasso_iter=200, root_tol=1e-2,
                 max_root_iter=10):
        self.rank = rank
        self.eps_rel = eps_rel
        self.max_lasso_iter = max_lasso_iter
        self.root_tol = root_tol
        self.max_root_iter = max_root_iter

    def fit(self, X, y=None):
        X = check_complex_matrix(X, allow_nan=True)
        mask = np.isfinite(X)
        observed = FrequencySlice(
            omega=1.0, domain=Domain.SOURCE_RECEIVER, data=np.where(mask, X, 0.0)
        )
        rank = self.rank if self.rank > 0 else default_rank_cap(*X.shape)
        eps = (self.eps_rel * np.linalg.norm(observed.data)) ** 2
        problem = CompletionProblem(
            acquisition=apply_mask(mask, observed),
            rank_cap=rank,
            epsilon=eps,
            lam=0.0,
        )
        tol = self.root_tol * eps / max(1.0, eps) if eps > 0 else self.root_tol
        fact, trace = solve_completion(
            problem, root_tol=tol, max_root_iter=self.max_root_iter,
            lasso_iter=self.max_lasso_iter,
        )
        self.mask_ = mask
        self.factors_ = fact
        self.trace_ = trace
        self.reconstruction_ = problem.mapping().adjoint(fact.product())
        return self

    def transform(self, X):
        X = check_complex_matrix(X, allow_nan=True)
        if X.shape != self.reconstruction_.shape:
            raise ShapeMismatchError(
                f"X has shape {X.shape}, fitted for {self.reconstruction_.shape}"
            )
        return np.where(np.isfinite(X), X, self.reconstruction_)


class InterpolatedFWI(BaseEstimator):
    """Frequency-domain waveform inversion with optional data fill-in.

    Parameters mirror the experiment settings; ``initial_model`` is the
    starting ModelGrid, ``survey`` the acquisition geometry, ``omegas``
    and ``amps`` the angular frequencies and per-frequency source
    weights.  ``fit`` takes the data as a complex (n_freq, Ns, Nr) array
    with NaN for unobserved entries and estimates ``model_``.
    """

    def __init__(self, initial_model=None, survey=None, omegas=(), amps=None,
                 pipeline="joint", n_probes=4, probe_dist="gaussian", rank=0,
                 lam=1.0, eps_rel=1e-3, outer_iters=10, lbfgs_cap=5,
                 lbfgs_mem=5, lasso_iters=150, root_tol=1e-2, seed=0):
        self.initial_model = initial_model
        self.survey = survey
        self.omegas = omegas
        self.amps = amps
        self.pipeline = pipeline
        self.n_probes = n_probes
        self.probe_dist = probe_dist
        self.rank = rank
        self.lam = lam
        self.eps_rel = eps_rel
        self.outer_iters = outer_iters
        self.lbfgs_cap = lbfgs_cap
        self.lbfgs_mem = lbfgs_mem
        self.lasso_iters = lasso_iters
        self.root_tol = root_tol
        self.seed = seed

    def _settings(self) -> InversionSettings:
        rank = self.rank if self.rank > 0 else default_rank_cap(
            self.survey.ns, self.survey.nr
        )
        return InversionSettings(
            n_probes=self.n_probes,
            probe_distribution=self.probe_dist,
            rank_cap=rank,
            lam=self.lam,
            eps_rel=self.eps_rel,
            outer_iters=self.outer_iters,
            lbfgs_cap=self.lbfgs_cap,
            lbfgs_mem=self.lbfgs_mem,
            lasso_iters=self.lasso_iters,
            root_tol=self.root_tol,
            master_seed=self.seed,
        )

    def fit(self, X, y=None):
        if not isinstance(self.initial_model, ModelGrid) or self.survey is None:
            raise BadSpecError("initial_model and survey are required to fit")
        X = np.asarray(X, dtype=np.complex128)
        if X.ndim != 3 or X.shape[0] != len(self.omegas):
            raise ShapeMismatchError(
                f"X must be (n_freq={len(self.omegas)}, Ns, Nr), got {X.shape}"
            )
        amps = self.amps if self.amps is not None else [1.0] * len(self.omegas)
        observations = []
        for omega, amp, data in zip(self.omegas, amps, X):
            mask = np.isfinite(data)
            observed = FrequencySlice(
                omega=omega, domain=Domain.SOURCE_RECEIVER,
                data=np.where(mask, data, 0.0),
            )
            observations.append(
                Observation(omega=omega, amp=amp, acquisition=apply_mask(mask, observed))
            )
        settings = self._settings()
        if self.pipeline == "joint":
            state = joint_invert(self.initial_model, self.survey, observations, settings)
        elif self.pipeline == "disjoint":
            state = disjoint_invert(self.initial_model, self.survey, observations, settings)
        elif self.pipeline == "full":
            data = {
                obs.omega: obs.acquisition.observed for obs in observations
            }
            amps_map = {obs.omega: obs.amp for obs in observations}
            state = invert_with_targets(
                self.initial_model, self.survey, data, amps_map, settings
            )
        else:
            raise BadSpecError(f"unknown pipeline {self.pipeline!r}")
        self.state_ = state
        self.model_ = state.m
        self.history_ = state.history
        self.pde_count_ = state.counter.total
        self.slices_ = {}
        for obs in observations:
            fact = state.factors.get(obs.omega)
            if fact is not None:
                mapping = midoff_map(*obs.acquisition.mask.shape)
                self.slices_[obs.omega] = mapping.adjoint(fact.product())
        return self

    def predict(self, X=None):
        """Forward-model data slices at the fitted model."""
        from .acquisition import forward_data

        amps = self.amps if self.amps is not None else [1.0] * len(self.omegas)
        out = [
            forward_data(self.model_, self.survey, omega, amp).data
            for omega, amp in zip(self.omegas, amps)
        ]
        return np.stack(out)
