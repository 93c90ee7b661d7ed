"""Joint low-rank seismic data interpolation and waveform inversion."""

from .core import (
    AcquisitionMask,
    Domain,
    Factorization,
    FrequencySlice,
    ModelGrid,
    frobenius_norm,
    validate_model,
)
from .acquisition import (
    RickerSource,
    Survey,
    apply_mask,
    colocated_line,
    forward_data,
    make_mask,
    ricker_amplitude,
)
from .helmholtz import HelmholtzOperator, SolveCounter, assemble
from .midoff import MidOffMap, from_midoff, midoff_map, to_midoff
from .probes import ProbeBlock, draw_probes, masked_misfit_counterexample, randomized_misfit
from .lowrank import (
    CompletionProblem,
    ParetoTrace,
    default_rank_cap,
    init_factors,
    nuclear_norm,
    project_ball,
    residual,
    residual_gradient,
    solve_completion,
    solve_lasso,
)
from .inversion import (
    FieldCache,
    LbfgsResult,
    ShotMisfitSpec,
    lbfgs_minimize,
    misfit_and_gradient,
    solve_m_subproblem,
)
from .joint import (
    InversionSettings,
    JointState,
    Observation,
    disjoint_invert,
    frequency_continuation,
    invert_with_targets,
    joint_invert,
)
from .experiment import (
    ExperimentConfig,
    load_config,
    make_initial,
    make_truth,
    model_error,
    run_experiment,
    snr_db,
)
from .estimators import InterpolatedFWI, LowRankCompleter, MidpointOffsetTransform

__version__ = "0.1.0"
