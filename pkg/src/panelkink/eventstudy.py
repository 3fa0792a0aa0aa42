"""Distributed-lag estimation, event-study reparametrization, regime-specific
dynamics, cumulative treatment paths, and the pretrend test.

The distributed-lag fit regresses the outcome on leads, the current share,
and lags; the event-study path is its invertible linear reparametrization,
normalized to zero one period before treatment.  The regime-specific model
pairs every lag with a kink term so landowner and nonagrarian dynamics can
differ, with no lead terms and (by default) no jump indicators.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MissingCoefficient, SampleShrinkWarning
from .panel import (
    FixedEffectsSpec,
    PanelDataset,
    build_estimation_sample,
    ensure_lags_leads,
    lag_name,
)
from .regression import (
    DesignMatrix,
    FitResult,
    WaldResult,
    cluster_covariance,
    ols_fit,
    restriction_matrix,
    wald_test,
)
from .threshold import _cluster_values

Z95 = 1.96


@dataclass(frozen=True)
class DistributedLagSpec:
    """Lead/lag orders, optional regime split, controls, and clustering."""

    share_var: str = "vote_share"
    y_var: str = "log_spend_pc"
    n_leads: int = 6
    n_lags: int = 6
    regime_split: float | None = None
    include_jump: bool = False
    controls: tuple[str, ...] = ()
    fe: FixedEffectsSpec = field(default_factory=FixedEffectsSpec)
    cluster_var: str = "entity_id"

    def __post_init__(self):
        if self.n_leads < 0 or self.n_lags < 0:
            raise ValueError("lead/lag orders must be non-negative")
        if self.regime_split is not None and not (0.0 < self.regime_split < 1.0):
            raise ValueError("regime_split must lie strictly inside (0, 1)")
        object.__setattr__(self, "controls", tuple(self.controls))


@dataclass(frozen=True)
class EventStudyPath:
    """Per-horizon estimates normalized at horizon -1.

    ``kind`` records whether the path is the instantaneous event-study
    reparametrization of a plain distributed-lag fit or a cumulative
    dynamic treatment effect from a regime-specific fit.
    """

    horizons: tuple[int, ...]
    estimates: np.ndarray
    variances: np.ndarray
    kind: str
    normalization_horizon: int = -1

    def __post_init__(self):
        horizons = tuple(int(h) for h in self.horizons)
        object.__setattr__(self, "horizons", horizons)
        object.__setattr__(self, "estimates", np.asarray(self.estimates, dtype=np.float64))
        object.__setattr__(self, "variances",
                           np.clip(np.asarray(self.variances, dtype=np.float64), 0.0, None))
        if list(horizons) != list(range(horizons[0], horizons[-1] + 1)):
            raise ValueError("horizons must be contiguous")
        if self.normalization_horizon not in horizons:
            raise ValueError("normalization horizon missing from path")
        at = horizons.index(self.normalization_horizon)
        if self.estimates[at] != 0.0 or self.variances[at] != 0.0:
            raise ValueError("path must be exactly zero at the normalization horizon")

    def estimate(self, horizon: int) -> float:
        return float(self.estimates[self.horizons.index(horizon)])

    def se(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def ci95(self) -> tuple[np.ndarray, np.ndarray]:
        se = self.se()
        return self.estimates - Z95 * se, self.estimates + Z95 * se

    def first_difference(self) -> dict[int, float]:
        """Map the path back to per-horizon coefficients by differencing."""
        out = {}
        for i in range(1, len(self.horizons)):
            out[self.horizons[i]] = float(self.estimates[i] - self.estimates[i - 1])
        return out

    def to_rows(self) -> list[dict]:
        lo, hi = self.ci95()
        se = self.se()
        return [
            {"horizon": h, "estimate": float(e), "se": float(s),
             "lo95": float(l), "hi95": float(u)}
            for h, e, s, l, u in zip(self.horizons, self.estimates, se, lo, hi)
        ]


def _kink_name(column: str) -> str:
    return f"{column}.kink"


def _jump_name(column: str) -> str:
    return f"{column}.jump"


def _fit_design(d, spec, values_builder, meta):
    """Shared tail: complete cases, demeaning, OLS, clustering, metadata."""
    sample = build_estimation_sample(d, [spec.y_var] + meta["sample_vars"], spec.fe)
    y_raw = sample.raw[spec.y_var]
    raw_cols, col_names = values_builder(sample)
    stacked, _ = sample.demean(np.column_stack([y_raw] + raw_cols))
    X = DesignMatrix(stacked[:, 1:], tuple(col_names),
                     entity_ids=sample.entity_ids, years=sample.years)
    fit = ols_fit(X, stacked[:, 0])
    cluster_covariance(fit, _cluster_values(d, sample, spec.cluster_var))
    fit.meta.update({k: v for k, v in meta.items() if k != "sample_vars"})
    return fit, sample


def fit_distributed_lag(d: PanelDataset, spec: DistributedLagSpec) -> FitResult:
    """Estimate the linear distributed-lag model with leads and lags.

    The design is [lead_K ... lead_1, share, lag_1 ... lag_K] plus controls,
    two-way fixed effects absorbed, cluster-robust covariance attached.
    Emits :class:`SampleShrinkWarning` with the before/after sample sizes
    when lead/lag construction shrinks the complete-case sample.
    """
    if spec.regime_split is not None:
        raise ValueError("spec has a regime split; use fit_regime_distributed_lag")
    d2 = ensure_lags_leads(d, spec.share_var, spec.n_leads, spec.n_lags)
    horizon_cols = [lag_name(spec.share_var, h)
                    for h in list(range(-spec.n_leads, 0)) + list(range(0, spec.n_lags + 1))]
    ordered = ([lag_name(spec.share_var, -k) for k in range(spec.n_leads, 0, -1)]
               + [spec.share_var]
               + [lag_name(spec.share_var, k) for k in range(1, spec.n_lags + 1)])

    base_sample = build_estimation_sample(d2, [spec.y_var, spec.share_var, *spec.controls], spec.fe)
    n_before = base_sample.n_obs

    def build(sample):
        cols = [sample.raw[c] for c in ordered] + [sample.raw[c] for c in spec.controls]
        return cols, list(ordered) + list(spec.controls)

    fit, sample = _fit_design(
        d2, spec, build,
        {"sample_vars": list(dict.fromkeys(horizon_cols + list(spec.controls))),
         "share_var": spec.share_var, "n_leads": spec.n_leads, "n_lags": spec.n_lags,
         "model": "distributed_lag", "controls": list(spec.controls)},
    )
    if sample.n_obs < n_before:
        warnings.warn(
            f"leads/lags shrank the estimation sample from {n_before} to {sample.n_obs} rows",
            SampleShrinkWarning,
            stacklevel=2,
        )
    fit.meta["n_before_lags"] = n_before
    return fit


def to_event_study(dl: FitResult, n_leads: int | None = None, n_lags: int | None = None) -> EventStudyPath:
    """Reparametrize distributed-lag coefficients into an event-study path.

    The path at horizon h >= 0 is the partial sum of lag coefficients 0..h;
    at h <= -2 it is minus the partial sum of lead coefficients 1..(-h-1);
    horizon -1 is pinned to zero with zero variance.  Variances are the
    corresponding quadratic forms in the attached covariance.  The deepest
    lead coefficient cancels from every horizon (the binned endpoint), so
    first-differencing the path recovers all later coefficients exactly.
    """
    share_var = dl.meta.get("share_var")
    if n_leads is None:
        n_leads = dl.meta["n_leads"]
    if n_lags is None:
        n_lags = dl.meta["n_lags"]
    if share_var is None:
        raise MissingCoefficient("fit does not record its share variable")
    if dl.covariance is None:
        raise ValueError("fit has no covariance; call cluster_covariance first")

    def coef_index(h: int) -> int:
        name = lag_name(share_var, h)
        if name not in dl.retained:
            raise MissingCoefficient(f"coefficient for horizon {h} ({name!r}) absent or aliased")
        return dl.index_of(name)

    horizons = list(range(min(-1, -n_leads), n_lags + 1))
    beta = dl.beta()
    k = len(beta)
    estimates, variances = [], []
    for h in horizons:
        w = np.zeros(k)
        if h >= 0:
            for j in range(0, h + 1):
                w[coef_index(j)] = 1.0
        elif h <= -2:
            for j in range(h + 1, 0):
                w[coef_index(j)] = -1.0
        estimates.append(float(w @ beta))
        variances.append(float(w @ dl.covariance @ w))
    return EventStudyPath(
        horizons=tuple(horizons),
        estimates=np.array(estimates),
        variances=np.array(variances),
        kind="instantaneous",
    )


def fit_regime_distributed_lag(d: PanelDataset, spec: DistributedLagSpec) -> FitResult:
    """Estimate the regime-specific distributed-lag model.

    Every lag j = 0..n_lags enters as a pair: the lagged share (landowner
    slope) and its kink term above ``regime_split`` (nonagrarian slope
    change); jump indicators are excluded unless ``include_jump`` is set,
    and lead terms are excluded (no-anticipation restriction; see
    :func:`pretrend_test` for the leads-augmented check).
    """
    if spec.regime_split is None:
        raise ValueError("fit_regime_distributed_lag needs spec.regime_split")
    gamma = spec.regime_split
    d2 = ensure_lags_leads(d, spec.share_var, 0, spec.n_lags)
    lag_cols = [lag_name(spec.share_var, j) for j in range(0, spec.n_lags + 1)]

    base_sample = build_estimation_sample(d2, [spec.y_var, spec.share_var, *spec.controls], spec.fe)
    n_before = base_sample.n_obs

    def build(sample):
        cols, names = [], []
        for c in lag_cols:
            raw = sample.raw[c]
            cols.append(raw)
            names.append(c)
            cols.append(np.clip(raw - gamma, 0.0, None))
            names.append(_kink_name(c))
            if spec.include_jump:
                cols.append((raw > gamma).astype(np.float64))
                names.append(_jump_name(c))
        cols.extend(sample.raw[c] for c in spec.controls)
        names.extend(spec.controls)
        return cols, names

    fit, sample = _fit_design(
        d2, spec, build,
        {"sample_vars": list(dict.fromkeys(lag_cols + list(spec.controls))),
         "share_var": spec.share_var, "n_lags": spec.n_lags, "n_leads": 0,
         "gamma": gamma, "include_jump": spec.include_jump,
         "model": "regime_distributed_lag", "controls": list(spec.controls),
         "lag_structure": f"symmetric regime pairs at lags 0..{spec.n_lags}"},
    )
    if sample.n_obs < n_before:
        warnings.warn(
            f"lags shrank the estimation sample from {n_before} to {sample.n_obs} rows",
            SampleShrinkWarning,
            stacklevel=2,
        )
    fit.meta["n_before_lags"] = n_before
    return fit


def cumulative_effects(rf: FitResult, regime: str, gamma: float | None = None) -> EventStudyPath:
    """Cumulative dynamic treatment path for one regime from an Eq.-style
    regime-specific fit.

    The landowner path at horizon h sums the lagged-share coefficients
    0..h; the nonagrarian path sums the full upper-regime slopes (share
    plus kink coefficients).  Horizon -1 is pinned to zero; variances come
    from the cluster-robust covariance; intervals are estimate +/- 1.96 se.
    """
    if regime not in ("landowner", "nonagrarian"):
        raise ValueError("regime must be 'landowner' or 'nonagrarian'")
    share_var = rf.meta.get("share_var")
    n_lags = rf.meta.get("n_lags")
    if share_var is None or n_lags is None:
        raise MissingCoefficient("fit does not record its lag structure")
    if rf.covariance is None:
        raise ValueError("fit has no covariance; call cluster_covariance first")

    beta = rf.beta()
    k = len(beta)

    def index(name: str) -> int:
        if name not in rf.retained:
            raise MissingCoefficient(f"coefficient {name!r} absent or aliased")
        return rf.index_of(name)

    horizons = list(range(-1, n_lags + 1))
    estimates, variances = [], []
    for h in horizons:
        w = np.zeros(k)
        for j in range(0, h + 1):
            col = lag_name(share_var, j)
            w[index(col)] += 1.0
            if regime == "nonagrarian":
                w[index(_kink_name(col))] += 1.0
        estimates.append(float(w @ beta))
        variances.append(float(w @ rf.covariance @ w))
    return EventStudyPath(
        horizons=tuple(horizons),
        estimates=np.array(estimates),
        variances=np.array(variances),
        kind="cumulative",
    )


@dataclass(frozen=True)
class PretrendResult:
    """Lead coefficients added to the regime model plus their joint test."""

    leads: dict[int, tuple[float, float]]
    wald: WaldResult | None
    fit: FitResult
    vacuous: bool = False

    def to_dict(self) -> dict:
        return {
            "leads": {str(k): {"estimate": est, "se": se} for k, (est, se) in self.leads.items()},
            "joint_test": self.wald.to_dict() if self.wald else None,
            "vacuous": self.vacuous,
        }


def pretrend_test(d: PanelDataset, spec: DistributedLagSpec, extra_leads: int) -> PretrendResult:
    """Augment the regime-specific model with linear lead terms and test them.

    Leads enter linearly (no regime split), matching the appendix-style
    check; the joint Wald tests that all lead coefficients are zero with
    G - 1 denominator degrees of freedom.  ``extra_leads = 0`` returns an
    empty lead set flagged vacuous.
    """
    if spec.regime_split is None:
        raise ValueError("pretrend_test needs spec.regime_split")
    if extra_leads < 0:
        raise ValueError("extra_leads must be non-negative")
    gamma = spec.regime_split
    d2 = ensure_lags_leads(d, spec.share_var, extra_leads, spec.n_lags)
    lag_cols = [lag_name(spec.share_var, j) for j in range(0, spec.n_lags + 1)]
    lead_cols = [lag_name(spec.share_var, -k) for k in range(extra_leads, 0, -1)]

    def build(sample):
        cols = [sample.raw[c] for c in lead_cols]
        names = list(lead_cols)
        for c in lag_cols:
            raw = sample.raw[c]
            cols.append(raw)
            names.append(c)
            cols.append(np.clip(raw - gamma, 0.0, None))
            names.append(_kink_name(c))
            if spec.include_jump:
                cols.append((raw > gamma).astype(np.float64))
                names.append(_jump_name(c))
        cols.extend(sample.raw[c] for c in spec.controls)
        names.extend(spec.controls)
        return cols, names

    fit, _ = _fit_design(
        d2, spec, build,
        {"sample_vars": list(dict.fromkeys(lead_cols + lag_cols + list(spec.controls))),
         "share_var": spec.share_var, "n_lags": spec.n_lags, "n_leads": extra_leads,
         "gamma": gamma, "include_jump": spec.include_jump,
         "model": "regime_distributed_lag_with_leads", "controls": list(spec.controls)},
    )
    se = fit.standard_errors()
    leads = {k: (fit.coefficients[lag_name(spec.share_var, -k)],
                 se[lag_name(spec.share_var, -k)])
             for k in range(1, extra_leads + 1)}
    if extra_leads == 0:
        return PretrendResult(leads={}, wald=None, fit=fit, vacuous=True)
    R = restriction_matrix(fit, [{lag_name(spec.share_var, -k): 1.0} for k in range(1, extra_leads + 1)])
    return PretrendResult(leads=leads, wald=wald_test(fit, R), fit=fit)
