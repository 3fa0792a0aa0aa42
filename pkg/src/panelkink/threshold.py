"""Discontinuous threshold regression: fixed-point fits, SSR-profile search,
likelihood-ratio intervals for the threshold, and regime tests.

The regression at threshold g uses the share s, the kink term
(s - g) * 1[s > g], optionally the jump indicator 1[s > g], and the ratio
controls, with two-way fixed effects absorbed and cluster-robust inference.
``beta_L`` is the slope below the threshold; ``beta_N`` is the full slope
above it (below-slope plus kink coefficient).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateGrid,
    EmptyProfile,
    EmptyRegime,
    MissingClusterId,
)
from .panel import EstimationSample, FixedEffectsSpec, PanelDataset, build_estimation_sample
from .regression import (
    DesignMatrix,
    FitResult,
    WaldResult,
    cluster_covariance,
    ols_fit,
    restriction_matrix,
    wald_test,
)
from .dgp import substream

#: Ratio-problem controls plus log population, per the baseline model.
STANDARD_CONTROLS = ("votes_nonagr", "inv_total_votes", "log_population")

DEFAULT_TRIM = 0.10
GRID_STEP = 0.005  # candidate quantile spacing: every 0.5th percentile
MIN_CANDIDATES = 10


@dataclass(frozen=True)
class ThresholdSpec:
    """What to regress, where to split, and how to cluster."""

    share_var: str = "vote_share"
    y_var: str = "log_spend_pc"
    gamma: float | None = 0.5
    include_jump: bool = True
    controls: tuple[str, ...] = STANDARD_CONTROLS
    fe: FixedEffectsSpec = field(default_factory=FixedEffectsSpec)
    cluster_var: str = "entity_id"

    def __post_init__(self):
        if self.gamma is not None and not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie strictly inside (0, 1)")
        object.__setattr__(self, "controls", tuple(self.controls))

    @property
    def kink_name(self) -> str:
        return f"{self.share_var}.kink"

    @property
    def jump_name(self) -> str:
        return f"{self.share_var}.jump"


@dataclass(frozen=True)
class ThresholdCI:
    """Likelihood-ratio inversion interval for the threshold point."""

    low: float
    high: float
    critical_value: float
    alpha: float
    accepted: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "low": self.low,
            "high": self.high,
            "critical_value": self.critical_value,
            "alpha": self.alpha,
            "n_accepted": len(self.accepted),
        }


@dataclass
class ThresholdFit:
    """Estimates from the discontinuous threshold regression."""

    beta_L: float
    se_beta_L: float
    beta_N: float
    se_beta_N: float
    delta: float | None
    se_delta: float | None
    gamma: float
    ssr: float
    fit: FitResult
    spec: ThresholdSpec
    profile: tuple[tuple[float, float], ...] | None = None
    meta: dict = field(default_factory=dict)

    def confidence_interval(self, alpha: float = 0.05) -> ThresholdCI:
        """LR inversion interval using this fit's own residual variance."""
        if self.profile is None:
            raise EmptyProfile("fit carries no SSR profile; use estimate_threshold")
        df = self.fit.n_obs - self.fit.n_params
        sigma2 = self.ssr / df if df > 0 else 0.0
        return threshold_confidence_interval(self.profile, sigma2, self.fit.n_obs, alpha)

    def to_dict(self) -> dict:
        out = {
            "threshold_point": self.gamma,
            "slope_landowners_beta_L": self.beta_L,
            "se_beta_L": self.se_beta_L,
            "slope_nonagrarian_beta_N": self.beta_N,
            "se_beta_N": self.se_beta_N,
            "jump_delta": self.delta,
            "se_delta": self.se_delta,
            "ssr": self.ssr,
            "n_obs": self.fit.n_obs,
            "n_clusters": self.fit.cluster_count,
            "fit": self.fit.to_dict(),
        }
        if self.meta:
            out["meta"] = dict(self.meta)
        return out


@dataclass(frozen=True)
class _Prepared:
    """Shared demeaned base for one dataset/spec pair, reused across the grid."""

    sample: EstimationSample
    y_w: np.ndarray
    base_w: np.ndarray           # demeaned [share, controls...]
    base_names: tuple[str, ...]
    share_raw: np.ndarray
    clusters: np.ndarray


def _cluster_values(d: PanelDataset, sample: EstimationSample, cluster_var: str) -> np.ndarray:
    if cluster_var == "entity_id":
        return sample.entity_ids
    if cluster_var == "year":
        return sample.years
    d.require([cluster_var])
    vals = d.values(cluster_var)[sample.rows]
    if not np.all(np.isfinite(vals)):
        raise MissingClusterId(f"cluster column {cluster_var!r} missing on estimation rows")
    return vals


def _prepare(d: PanelDataset, spec: ThresholdSpec) -> _Prepared:
    variables = [spec.y_var, spec.share_var, *spec.controls]
    sample = build_estimation_sample(d, variables, spec.fe)
    base = np.column_stack([sample.raw[spec.share_var]] +
                           [sample.raw[c] for c in spec.controls])
    stacked, _ = sample.demean(np.column_stack([sample.raw[spec.y_var], base]))
    return _Prepared(
        sample=sample,
        y_w=stacked[:, 0],
        base_w=stacked[:, 1:],
        base_names=(spec.share_var, *spec.controls),
        share_raw=sample.raw[spec.share_var],
        clusters=_cluster_values(d, sample, spec.cluster_var),
    )


def _threshold_columns(prep: _Prepared, gamma: float, include_jump: bool) -> np.ndarray:
    s = prep.share_raw
    cols = [np.clip(s - gamma, 0.0, None)]
    if include_jump:
        cols.append((s > gamma).astype(np.float64))
    extra, _ = prep.sample.demean(np.column_stack(cols))
    return extra


def _fit_at_gamma(prep: _Prepared, spec: ThresholdSpec, gamma: float) -> FitResult:
    extra = _threshold_columns(prep, gamma, spec.include_jump)
    names = [spec.share_var, spec.kink_name]
    if spec.include_jump:
        names.append(spec.jump_name)
    names.extend(spec.controls)
    values = np.column_stack([
        prep.base_w[:, :1],          # share
        extra,                       # kink (+ jump)
        prep.base_w[:, 1:],          # controls
    ])
    X = DesignMatrix(values, tuple(names),
                     entity_ids=prep.sample.entity_ids, years=prep.sample.years)
    return ols_fit(X, prep.y_w)


def _check_regimes(prep: _Prepared, gamma: float) -> None:
    above = prep.share_raw > gamma
    for side, mask in (("below", ~above), ("above", above)):
        if mask.sum() == 0 or len(np.unique(prep.clusters[mask])) < 2:
            raise EmptyRegime(f"regime {side} threshold {gamma} has fewer than 2 clusters")


def _wrap_fit(prep: _Prepared, spec: ThresholdSpec, gamma: float,
              fit: FitResult, profile=None, meta=None) -> ThresholdFit:
    cluster_covariance(fit, prep.clusters)
    se = fit.standard_errors()
    beta_L = fit.coefficients[spec.share_var]
    est_N, var_N = fit.linear_combination({spec.share_var: 1.0, spec.kink_name: 1.0})
    delta = se_delta = None
    if spec.include_jump:
        delta = fit.coefficients[spec.jump_name]
        se_delta = se[spec.jump_name]
    return ThresholdFit(
        beta_L=beta_L,
        se_beta_L=se[spec.share_var],
        beta_N=est_N,
        se_beta_N=math.sqrt(var_N),
        delta=delta,
        se_delta=se_delta,
        gamma=gamma,
        ssr=fit.ssr,
        fit=fit,
        spec=spec,
        profile=profile,
        meta=meta or {},
    )


def fit_threshold(d: PanelDataset, spec: ThresholdSpec) -> ThresholdFit:
    """Estimate the threshold regression at the spec's fixed threshold.

    Regressors are the share, the kink term, the jump indicator when
    ``include_jump`` is set, and the controls; fixed effects are absorbed
    and a CR1 cluster-robust covariance is attached.  ``beta_N`` is
    reported as the full upper-regime slope with a delta-method standard
    error.
    """
    if spec.gamma is None:
        raise ValueError("fit_threshold needs spec.gamma; use estimate_threshold to search")
    prep = _prepare(d, spec)
    _check_regimes(prep, spec.gamma)
    fit = _fit_at_gamma(prep, spec, spec.gamma)
    return _wrap_fit(prep, spec, spec.gamma, fit)


def candidate_grid(share: np.ndarray, trim: float, step: float = GRID_STEP) -> np.ndarray:
    """Unique empirical quantiles of ``share`` between trim and 1 - trim."""
    if not (0.0 < trim < 0.5):
        raise ValueError("trim must lie strictly inside (0, 0.5)")
    levels = np.arange(trim, 1.0 - trim + 1e-12, step)
    cands = np.unique(np.quantile(share, levels, method="inverted_cdf"))
    if len(cands) < MIN_CANDIDATES:
        raise DegenerateGrid(f"only {len(cands)} candidate thresholds after trimming")
    return cands


def estimate_threshold(d: PanelDataset, spec: ThresholdSpec, trim: float = DEFAULT_TRIM) -> ThresholdFit:
    """Grid-search the threshold by SSR and refit at the minimizer.

    Candidates are the unique empirical quantiles of the share between
    ``trim`` and ``1 - trim`` at every 0.5th percentile.  Exact SSR ties
    break toward 0.5 (the institutional majority point), then toward the
    smaller candidate.  The returned fit carries the full (gamma, SSR)
    profile; its SSR is the profile minimum by construction.
    """
    prep = _prepare(d, spec)
    cands = candidate_grid(prep.share_raw, trim)
    ssrs = np.empty(len(cands))
    for i, g in enumerate(cands):
        ssrs[i] = _fit_at_gamma(prep, spec, float(g)).ssr
    best = ssrs.min()
    ties = cands[ssrs == best]
    order = np.lexsort((ties, np.abs(ties - 0.5)))
    gamma_hat = float(ties[order[0]])
    fit = _fit_at_gamma(prep, spec, gamma_hat)
    profile = tuple((float(g), float(s)) for g, s in zip(cands, ssrs))
    assert fit.ssr <= best  # exact: the refit repeats the profiled code path
    meta = {"trim": trim, "grid_step": GRID_STEP, "n_candidates": len(cands),
            "tie_break": "toward 0.5"}
    return _wrap_fit(prep, spec, gamma_hat, fit, profile=profile, meta=meta)


def lr_critical_value(alpha: float) -> float:
    """Closed-form threshold-LR critical value, -2 ln(1 - sqrt(1 - alpha))."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie strictly inside (0, 1)")
    return -2.0 * math.log(1.0 - math.sqrt(1.0 - alpha))


def threshold_confidence_interval(
    profile: Sequence[tuple[float, float]],
    sigma2: float,
    n_obs: int,
    alpha: float = 0.05,
) -> ThresholdCI:
    """Invert the SSR profile into an interval for the threshold point.

    LR(g) = (SSR(g) - SSR(g_hat)) / sigma2 is compared with the critical
    value c(alpha) = -2 ln(1 - sqrt(1 - alpha)); the interval is the convex
    hull of the accepted grid points.  With an exactly-zero sigma2 (a
    noiseless fit) only zero-excess-SSR candidates are accepted.
    """
    if len(profile) == 0:
        raise EmptyProfile("empty SSR profile")
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    gammas = np.array([g for g, _ in profile])
    ssrs = np.array([s for _, s in profile])
    best = ssrs.min()
    crit = lr_critical_value(alpha)
    excess = ssrs - best
    if sigma2 == 0.0:
        accepted = gammas[excess == 0.0]
    else:
        accepted = gammas[excess / sigma2 <= crit]
    return ThresholdCI(
        low=float(accepted.min()),
        high=float(accepted.max()),
        critical_value=crit,
        alpha=alpha,
        accepted=tuple(float(g) for g in accepted),
    )


def regime_difference_test(tf: ThresholdFit) -> WaldResult:
    """Joint Wald test that the slope change and the jump are both zero."""
    if not tf.spec.include_jump:
        raise ValueError("regime test needs the jump term; fit with include_jump=True")
    R = restriction_matrix(tf.fit, [{tf.spec.kink_name: 1.0}, {tf.spec.jump_name: 1.0}])
    return wald_test(tf.fit, R)


@dataclass(frozen=True)
class LinearityTestResult:
    """Bootstrap sup-F test of the linear null against a threshold."""

    sup_f: float
    p_value: float
    reps: int
    n_candidates: int
    observed_argmax: float

    def to_dict(self) -> dict:
        return {
            "sup_f": self.sup_f,
            "p_value": self.p_value,
            "reps": self.reps,
            "n_candidates": self.n_candidates,
            "observed_argmax": self.observed_argmax,
        }


def _ortho_basis(M: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the numerically full-rank columns of M."""
    if M.shape[1] == 0:
        return np.empty((M.shape[0], 0))
    Q, R, piv = scipy.linalg.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] <= 0.0:
        return np.empty((M.shape[0], 0))
    rank = int(np.sum(diag > diag[0] * 1e-10))
    return Q[:, :rank]


def bootstrap_linearity_test(
    d: PanelDataset,
    spec: ThresholdSpec,
    trim: float = DEFAULT_TRIM,
    reps: int = 199,
    seed: int = 0,
) -> LinearityTestResult:
    """Test "no threshold" by a fixed-regressor wild cluster bootstrap.

    The observed statistic is the sup over the candidate grid of the F
    statistic for adding the threshold terms to the linear model.  Cluster
    Rademacher weights perturb the null-model residuals to simulate the
    sup-F null distribution with the regressors held fixed; the p-value is
    the fraction of bootstrap sup-F at or above the observed one.
    Replication b draws from the (seed, b) substream, so the p-value is
    bit-identical across runs and schedules.
    """
    if reps < 99:
        raise ValueError("bootstrap needs at least 99 replications")
    prep = _prepare(d, spec)
    cands = candidate_grid(prep.share_raw, trim)
    n = prep.sample.n_obs

    null_basis = _ortho_basis(prep.base_w)
    k0 = null_basis.shape[1]
    bases = []
    for g in cands:
        extra = _threshold_columns(prep, float(g), spec.include_jump)
        bases.append(_ortho_basis(np.column_stack([prep.base_w, extra])))

    def sup_f(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # Y: (n, m) columns of outcomes; returns sup-F and its argmax per column.
        total = np.einsum("ij,ij->j", Y, Y)
        proj0 = null_basis.T @ Y
        ssr0 = total - np.einsum("ij,ij->j", proj0, proj0)
        best = np.full(Y.shape[1], -np.inf)
        arg = np.zeros(Y.shape[1])
        for g, Qg in zip(cands, bases):
            kg = Qg.shape[1]
            q = kg - k0
            if q <= 0:
                continue
            proj = Qg.T @ Y
            ssr_g = total - np.einsum("ij,ij->j", proj, proj)
            denom_df = max(n - kg, 1)
            with np.errstate(invalid="ignore", divide="ignore"):
                f = ((ssr0 - ssr_g) / q) / (ssr_g / denom_df)
            f = np.where(np.isfinite(f), f, np.where(ssr0 > ssr_g, np.inf, 0.0))
            better = f > best
            best = np.where(better, f, best)
            arg = np.where(better, g, arg)
        return best, arg

    y = prep.y_w[:, None]
    obs, obs_arg = sup_f(y)
    observed = float(obs[0])

    # Null-model fitted values and residuals in the demeaned space.
    fitted = null_basis @ (null_basis.T @ prep.y_w)
    resid = prep.y_w - fitted
    codes = np.unique(prep.clusters, return_inverse=True)[1]
    G = codes.max() + 1

    E = np.empty((n, reps))
    for b in range(reps):
        eta = substream(seed, b).integers(0, 2, G) * 2.0 - 1.0
        E[:, b] = resid * eta[codes]
    E_w, _ = prep.sample.demean(E)
    Y_boot = fitted[:, None] + E_w
    boot, _ = sup_f(Y_boot)
    p = float(np.mean(boot >= observed))
    return LinearityTestResult(
        sup_f=observed,
        p_value=p,
        reps=reps,
        n_candidates=len(cands),
        observed_argmax=float(obs_arg[0]),
    )
