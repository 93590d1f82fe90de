"""Event-driven closed testing of paired survival endpoints.

Simulation of illness-death cohorts, calendar-time log-rank statistics with
a joint covariance estimate across endpoints and analyses, level-inflation
solvers over multivariate normal orthants, and a Monte Carlo harness for
error rates, power, and event-number planning.
"""

from .errors import (
    ConfigError,
    DegenerateVariance,
    DuosurvError,
    InconsistentSnapshots,
    InsufficientEvents,
    InvalidCorrelation,
    InvalidModel,
    NoSolution,
)
from .harness import (
    CSV_COLUMNS,
    DROPOUT_RATE,
    ExperimentResult,
    MetricsRow,
    PlanResult,
    Scenario,
    default_designs,
    fwer_sweep,
    metrics_csv_text,
    null_scenario,
    plan_events,
    power_scenario,
    power_sweep,
    relative_to_baseline,
    run_experiment,
    simulate_replication,
    table_intensities,
    write_metrics_csv,
)
from .logrank import (
    CovarianceEstimate,
    GroupShare,
    LogrankResult,
    StepFunction,
    covariance_matrix,
    cross_covariance,
    group_share,
    logrank,
    nelson_aalen,
)
from .multistate import (
    ArmModel,
    Cohort,
    DropoutSpec,
    FrailtySpec,
    PatientPath,
    RecruitmentSpec,
    TransitionIntensities,
    effective_intensities,
    simulate_cohort,
)
from .mvnorm import (
    InflationProblem,
    OrthantQuery,
    mvn_upper_orthant,
    solve_inflation,
)
from .spending import SPENDING_KINDS, SpendingFunction
from .testing import (
    PROCEDURES,
    AnalysisInputs,
    DesignSpec,
    TrialOutcome,
    check_consonance,
    run_design_one,
    run_design_two,
    run_procedure,
)
from .trialdata import (
    OS,
    PFS,
    CutoffTargets,
    ObservedRecord,
    Snapshot,
    at_risk,
    event_cutoff,
    information_fraction,
    snapshot,
)

__version__ = "0.1.0"
