"""Panel threshold-kink regression and generalized event-study toolkit."""

from .errors import (
    AllColumnsAliased,
    ConfigInvalid,
    DegenerateGrid,
    DuplicateKey,
    EmptyDesign,
    EmptyInput,
    EmptyProfile,
    EmptyRegime,
    EmptySample,
    InvalidKey,
    MissingClusterId,
    MissingCoefficient,
    MissingColumn,
    NegativeValue,
    NegativeVotes,
    NoConvergence,
    NonBinaryIndicator,
    PanelDataError,
    PanelKinkError,
    PanelNumericalError,
    SampleShrinkWarning,
    SingleCluster,
    SingularRestrictionVariance,
    TooFewObservations,
    TooLargeForOracle,
    UnknownVariable,
)
from .panel import (
    CANONICAL_COLUMNS,
    FixedEffectsSpec,
    NonPositiveCell,
    PanelDataset,
    WithinResult,
    build_lags_leads,
    derive_inverse_total,
    derive_log,
    derive_log_per_capita,
    derive_vote_share,
    load_panel,
    within_transform,
)
from .regression import (
    DesignMatrix,
    FitResult,
    Residualized,
    WaldResult,
    classical_covariance,
    cluster_covariance,
    fwl_residualize,
    ols_fit,
    restriction_matrix,
    wald_test,
)
from .threshold import (
    STANDARD_CONTROLS,
    LinearityTestResult,
    ThresholdCI,
    ThresholdFit,
    ThresholdSpec,
    bootstrap_linearity_test,
    estimate_threshold,
    fit_threshold,
    lr_critical_value,
    regime_difference_test,
    threshold_confidence_interval,
)
from .eventstudy import (
    DistributedLagSpec,
    EventStudyPath,
    PretrendResult,
    cumulative_effects,
    fit_distributed_lag,
    fit_regime_distributed_lag,
    pretrend_test,
    to_event_study,
)
from .binscatter import BinnedScatter, binscatter
from .dgp import (
    DgpConfig,
    MonteCarloReport,
    ParamEstimate,
    monte_carlo,
    oracle_dummy_ols,
    rep_seed,
    simulate_panel,
    substream,
    votes_landowner,
    votes_nonagrarian,
)

__version__ = "0.1.0"
