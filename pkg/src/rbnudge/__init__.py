"""Nudging-based downscaling of 2D Rayleigh-Benard convection.

The package integrates the Boussinesq equations in a horizontally periodic
channel on a staggered grid, assimilates coarse noisy observations through
Newtonian relaxation (continuously or in discrete bursts), and provides the
ensemble skill diagnostics used to study how downscaling quality responds to
noise level, observation spacing, and observation frequency.
"""

from .errors import (
    RBError,
    ConfigurationError,
    NumericalBlowupError,
    SolverFailureError,
    UndefinedDiagnosticError,
    UndefinedMetricError,
    DegenerateSampleError,
    MissingInputError,
)
from .grid import (
    CENTER,
    XFACE,
    YFACE,
    StaggeredGrid,
    ScalarField,
    FieldSet,
    divergence,
    diffuse,
    advect_scalar,
    apply_boundary_conditions,
)
from .solver import (
    PhysicalParams,
    PoissonSolver,
    TimeStepper,
    project,
    step,
    advance,
    kinetic_energy,
)
from .assimilation import (
    ObservationGrid,
    NudgingStrengths,
    NudgingForcing,
    cda_forcing,
    dda_forcing,
    run_downscaling,
)
from .observations import (
    ObservationFrame,
    NoiseSpec,
    MemberStream,
    ObservationStreamWriter,
    subsample,
    perturb,
    generate_ensemble,
    write_observation_stream,
    read_observation_stream,
)
from .snapshots import read_snapshot, write_snapshot
from .metrics import (
    SkillSeries,
    SkillRecorder,
    ae,
    rmse,
    rrmse,
    aes,
    mean_estimator_spread,
    expected_l2_error,
    write_skill_series_csv,
    read_skill_series_csv,
)
from .stats import (
    KSResult,
    BootstrapResult,
    ks_gaussianity,
    ks_profile_scan,
    bootstrap_skill,
    mean_solution_skill,
)
from .config import (
    ExperimentConfig,
    parse_config_text,
    read_config,
    write_config,
    desk_profile,
    full_profile,
    PROFILES,
)
from .experiment import (
    initial_random_fields,
    run_reference,
    run_member,
    run_ensemble,
    run_ensemble_downscaling,
    observe_from_snapshots,
    load_manifest,
    verify_manifest,
    fit_log_slope,
    run_preset,
    PRESETS,
)

__version__ = "0.1.0"
