"""Exception hierarchy shared by all modules.

Two branches matter for the CLI exit codes: ``PanelDataError`` (bad or
unusable input, exit 3) and ``PanelNumericalError`` (an estimation step
could not be completed, exit 4).
"""


class PanelKinkError(Exception):
    """Base class for all package errors."""


class PanelDataError(PanelKinkError):
    """Input data violates a precondition or invariant."""


class PanelNumericalError(PanelKinkError):
    """A numerical routine failed or was asked for something degenerate."""


# --- data errors -----------------------------------------------------------

class DuplicateKey(PanelDataError):
    """Two rows share the same (entity, year) pair."""


class MissingColumn(PanelDataError):
    """A column required by the schema is absent from the input."""


class EmptyInput(PanelDataError):
    """The input stream holds no data rows."""


class InvalidKey(PanelDataError):
    """An entity or year cell could not be parsed."""


class NegativeVotes(PanelDataError):
    """Vote counts must be non-negative."""


class NegativeValue(PanelDataError):
    """Monetary inputs to the vote formulas must be non-negative."""


class UnknownVariable(PanelDataError):
    """A referenced variable does not exist in the dataset."""


class EmptySample(PanelDataError):
    """No complete-case rows remain for the requested variables."""


class EmptyRegime(PanelDataError):
    """One side of the threshold has too few observations or clusters."""


class SingleCluster(PanelDataError):
    """Cluster-robust covariance needs at least two clusters."""


class MissingClusterId(PanelDataError):
    """A cluster id is undefined for some estimation row."""


class TooFewObservations(PanelDataError):
    """Sample is too small for the requested number of bins."""


class NonBinaryIndicator(PanelDataError):
    """Sample-split column takes values outside {0, 1}."""


class TooLargeForOracle(PanelDataError):
    """Explicit-dummy oracle refuses panels above its row guard."""


class ConfigInvalid(PanelDataError):
    """Simulation config violates its invariants."""


# --- numerical errors ------------------------------------------------------

class NoConvergence(PanelNumericalError):
    """Alternating demeaning did not converge within the iteration cap."""


class EmptyDesign(PanelNumericalError):
    """Design matrix has no rows or no columns."""


class AllColumnsAliased(PanelNumericalError):
    """Every design column was dropped as rank deficient."""


class SingularRestrictionVariance(PanelNumericalError):
    """Restriction covariance R V R' is singular (e.g. aliased terms)."""


class DegenerateGrid(PanelNumericalError):
    """Trimming left too few candidate threshold points."""


class EmptyProfile(PanelNumericalError):
    """SSR profile holds no candidates."""


class MissingCoefficient(PanelNumericalError):
    """A lead/lag coefficient needed for the path is absent or aliased."""


class ZeroResidualDf(PanelNumericalError):
    """No residual degrees of freedom left for variance estimation."""


# --- warnings ---------------------------------------------------------------

class SampleShrinkWarning(UserWarning):
    """Adding leads/lags shrank the estimation sample."""
