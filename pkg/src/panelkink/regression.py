"""Least squares with rank handling, cluster-robust covariance, and Wald tests.

This is the inference backbone for every model module: pivoted-QR OLS with
aliased-column detection, the Liang-Zeger cluster sandwich with the CR1
small-sample factor, cluster-count-based F tests, and Frisch-Waugh-Lovell
residualization.  All functions are pure over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats

from .errors import (
    AllColumnsAliased,
    EmptyDesign,
    MissingClusterId,
    SingleCluster,
    SingularRestrictionVariance,
    ZeroResidualDf,
)
from .panel import FixedEffectsSpec, PanelDataset, build_estimation_sample

PIVOT_RTOL = 1e-10


@dataclass(frozen=True)
class DesignMatrix:
    """Named regressor columns with optional row identity."""

    values: np.ndarray
    columns: tuple[str, ...]
    entity_ids: np.ndarray | None = None
    years: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("design values must be 2-dimensional")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(self.columns))
        if len(self.columns) != values.shape[1]:
            raise ValueError("column names do not match design width")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("design column names must be unique")
        if values.size and not np.all(np.isfinite(values)):
            raise ValueError("design contains non-finite entries")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]


@dataclass
class FitResult:
    """Least-squares solution with optional cluster-robust covariance.

    ``coefficients`` maps every requested column to its estimate; aliased
    (rank-deficient, dropped) columns map to NaN and are listed in
    ``aliased``.  ``covariance`` is over retained columns only, in
    ``retained`` order, and is attached by :func:`cluster_covariance`.
    """

    coef_names: tuple[str, ...]
    coefficients: dict[str, float]
    aliased: tuple[str, ...]
    retained: tuple[str, ...]
    residuals: np.ndarray
    ssr: float
    n_obs: int
    n_params: int
    rank: int
    covariance: np.ndarray | None = None
    cluster_count: int | None = None
    meta: dict = field(default_factory=dict)
    _design: np.ndarray | None = None
    _xtx_inv: np.ndarray | None = None

    def beta(self) -> np.ndarray:
        return np.array([self.coefficients[c] for c in self.retained])

    def index_of(self, name: str) -> int:
        if name not in self.retained:
            raise KeyError(name)
        return self.retained.index(name)

    def standard_errors(self) -> dict[str, float]:
        if self.covariance is None:
            raise ValueError("no covariance attached; call cluster_covariance first")
        se = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))
        out = {c: float("nan") for c in self.coef_names}
        out.update({c: float(s) for c, s in zip(self.retained, se)})
        return out

    def linear_combination(self, weights: Mapping[str, float]) -> tuple[float, float]:
        """Estimate and variance of sum_w w_name * beta_name (retained names)."""
        if self.covariance is None:
            raise ValueError("no covariance attached; call cluster_covariance first")
        w = np.zeros(len(self.retained))
        for name, weight in weights.items():
            w[self.index_of(name)] = weight
        est = float(w @ self.beta())
        var = float(w @ self.covariance @ w)
        return est, max(var, 0.0)

    def to_dict(self, include_covariance: bool = False) -> dict:
        out = {
            "coefficients": {k: _json_float(v) for k, v in self.coefficients.items()},
            "aliased": list(self.aliased),
            "n_obs": self.n_obs,
            "n_params": self.n_params,
            "rank": self.rank,
            "ssr": _json_float(self.ssr),
            "cluster_count": self.cluster_count,
        }
        if self.covariance is not None:
            out["se"] = {k: _json_float(v) for k, v in self.standard_errors().items()}
            if include_covariance:
                out["covariance"] = [[_json_float(v) for v in row] for row in self.covariance]
                out["covariance_order"] = list(self.retained)
        if self.meta:
            out["meta"] = dict(self.meta)
        return out


def _json_float(x: float) -> float | None:
    x = float(x)
    return None if not np.isfinite(x) else x


def ols_fit(X: DesignMatrix, y: np.ndarray) -> FitResult:
    """Least squares via pivoted QR with rank-deficient columns dropped.

    Columns are equilibrated to unit norm before pivoting so that rank
    detection measures collinearity rather than scale; a column whose pivot
    falls below ``1e-10`` relative to the leading pivot is flagged aliased:
    its coefficient is NaN, not zero, and it takes no part in residuals or
    covariance.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    A = X.values
    n, k = A.shape
    if n == 0 or k == 0:
        raise EmptyDesign("design matrix has no rows or no columns")
    if len(y) != n:
        raise ValueError("y length does not match design rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains non-finite entries")

    norms = np.linalg.norm(A, axis=0)
    scale = np.where(norms > 0.0, norms, 1.0)
    A_s = A / scale

    _, R, piv = scipy.linalg.qr(A_s, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] <= 0.0:
        raise AllColumnsAliased("design has no usable columns")
    rank = int(np.sum(diag > diag[0] * PIVOT_RTOL))
    if rank == 0:
        raise AllColumnsAliased("design has no usable columns")

    retained_idx = np.sort(piv[:rank])
    aliased_idx = np.sort(piv[rank:])
    A_r = A_s[:, retained_idx]
    Q_r, R_r = scipy.linalg.qr(A_r, mode="economic")
    beta_s = scipy.linalg.solve_triangular(R_r, Q_r.T @ y)
    beta = beta_s / scale[retained_idx]
    residuals = y - A_r @ beta_s
    ssr = float(residuals @ residuals)

    r_inv = scipy.linalg.solve_triangular(R_r, np.eye(rank))
    xtx_inv_s = r_inv @ r_inv.T
    inv_scale = 1.0 / scale[retained_idx]
    xtx_inv = xtx_inv_s * np.outer(inv_scale, inv_scale)

    names = X.columns
    coefficients = {name: float("nan") for name in names}
    for i, idx in enumerate(retained_idx):
        coefficients[names[idx]] = float(beta[i])

    return FitResult(
        coef_names=names,
        coefficients=coefficients,
        aliased=tuple(names[i] for i in aliased_idx),
        retained=tuple(names[i] for i in retained_idx),
        residuals=residuals,
        ssr=ssr,
        n_obs=n,
        n_params=rank,
        rank=rank,
        _design=A[:, retained_idx],
        _xtx_inv=xtx_inv,
    )


def cluster_covariance(fit: FitResult, clusters: Sequence) -> np.ndarray:
    """Attach the CR1 cluster-robust sandwich covariance to ``fit``.

    V = c * (X'X)^-1 (sum_g X_g' e_g e_g' X_g) (X'X)^-1 with the CR1
    factor c = [G/(G-1)] * [(N-1)/(N-K)].  With singleton clusters this
    reduces exactly to HC1.  Accumulation runs in sorted-cluster order so
    results do not depend on row order beyond float round-off.
    """
    if fit._design is None or fit._xtx_inv is None:
        raise ValueError("fit does not carry its design; cannot form a sandwich")
    clusters = pd.array(clusters)
    if len(clusters) != fit.n_obs:
        raise MissingClusterId("cluster ids must cover every estimation row")
    if pd.isna(clusters).any():
        raise MissingClusterId("cluster id undefined for some estimation row")
    codes, uniques = pd.factorize(clusters, sort=True)
    G = len(uniques)
    if G < 2:
        raise SingleCluster("need at least two clusters")
    N, K = fit.n_obs, fit.n_params
    if N <= K:
        raise ZeroResidualDf("no residual degrees of freedom for CR1")

    Xe = fit._design * fit.residuals[:, None]
    S = np.zeros((G, K))
    for j in range(K):
        S[:, j] = np.bincount(codes, weights=Xe[:, j], minlength=G)
    meat = S.T @ S
    factor = (G / (G - 1.0)) * ((N - 1.0) / (N - K))
    V = factor * (fit._xtx_inv @ meat @ fit._xtx_inv)
    V = (V + V.T) / 2.0
    fit.covariance = V
    fit.cluster_count = G
    return V


def classical_covariance(fit: FitResult) -> np.ndarray:
    """Homoskedastic OLS covariance, sigma^2 (X'X)^-1 (not attached)."""
    if fit._xtx_inv is None:
        raise ValueError("fit does not carry its design")
    N, K = fit.n_obs, fit.n_params
    if N <= K:
        raise ZeroResidualDf("no residual degrees of freedom")
    sigma2 = fit.ssr / (N - K)
    return sigma2 * fit._xtx_inv


@dataclass(frozen=True)
class WaldResult:
    """Wald F test of R beta = r."""

    f_stat: float
    df_num: int
    df_den: int
    p_value: float
    zero_variance: bool = False

    def to_dict(self) -> dict:
        return {
            "f_stat": _json_float(self.f_stat),
            "df_num": self.df_num,
            "df_den": self.df_den,
            "p_value": _json_float(self.p_value),
            "zero_variance": self.zero_variance,
        }


def restriction_matrix(fit: FitResult, rows: Sequence[Mapping[str, float]]) -> np.ndarray:
    """Build R over the full coefficient order from name->weight mappings."""
    R = np.zeros((len(rows), len(fit.coef_names)))
    name_pos = {name: i for i, name in enumerate(fit.coef_names)}
    for i, row in enumerate(rows):
        for name, weight in row.items():
            R[i, name_pos[name]] = weight
    return R


def wald_test(fit: FitResult, R: np.ndarray, r: np.ndarray | None = None) -> WaldResult:
    """F test of the linear restrictions R beta = r.

    ``R`` is laid out over the full requested coefficient order (aliased
    columns included); any restriction touching an aliased coefficient has
    no defined variance and raises :class:`SingularRestrictionVariance`.
    The denominator df is G - 1 under cluster-robust covariance.
    """
    if fit.covariance is None:
        raise ValueError("fit has no covariance; call cluster_covariance first")
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    q = R.shape[0]
    if R.shape[1] != len(fit.coef_names):
        raise ValueError("restriction width does not match coefficient count")
    r = np.zeros(q) if r is None else np.asarray(r, dtype=np.float64).ravel()
    if len(r) != q:
        raise ValueError("restriction values length does not match rows of R")

    aliased_pos = [i for i, name in enumerate(fit.coef_names) if name in fit.aliased]
    if aliased_pos and np.any(R[:, aliased_pos] != 0.0):
        raise SingularRestrictionVariance("restriction involves an aliased coefficient")

    retained_pos = [i for i, name in enumerate(fit.coef_names) if name in fit.retained]
    Rr = R[:, retained_pos]
    discrepancy = Rr @ fit.beta() - r
    M = Rr @ fit.covariance @ Rr.T

    df_den = (fit.cluster_count - 1) if fit.cluster_count else (fit.n_obs - fit.n_params)
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    if scale == 0.0:
        if float(np.max(np.abs(discrepancy))) == 0.0:
            return WaldResult(float("nan"), q, df_den, float("nan"), zero_variance=True)
        return WaldResult(float("inf"), q, df_den, 0.0, zero_variance=True)
    try:
        solved = scipy.linalg.solve(M, discrepancy, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError):
        raise SingularRestrictionVariance("R V R' is singular")
    f_stat = float(discrepancy @ solved) / q
    if not np.isfinite(f_stat):
        raise SingularRestrictionVariance("R V R' is numerically singular")
    f_stat = max(f_stat, 0.0)
    p = float(stats.f.sf(f_stat, q, df_den))
    return WaldResult(f_stat, q, df_den, p)


@dataclass(frozen=True)
class Residualized:
    """Targets replaced by their residuals on controls plus fixed effects."""

    values: np.ndarray
    columns: tuple[str, ...]
    rows: np.ndarray
    entity_ids: np.ndarray
    years: np.ndarray


def _project_out(Y: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Residuals of each column of Y on the column space of X."""
    if X.shape[1] == 0:
        return Y
    Q, _ = scipy.linalg.qr(X, mode="economic")
    return Y - Q @ (Q.T @ Y)


def fwl_residualize(
    d: PanelDataset,
    targets: Sequence[str],
    controls: Sequence[str],
    fe: FixedEffectsSpec,
) -> Residualized:
    """Residualize ``targets`` on ``controls`` plus fixed effects (FWL step).

    The complete-case sample is shared across targets and controls.  With no
    controls and no fixed effects the targets come back unchanged.  When
    fixed effects are off but controls are present an intercept is included,
    so the two-step slope matches a joint regression with an intercept.
    """
    if not targets:
        raise ValueError("at least one target is required")
    variables = list(targets) + [c for c in controls if c not in targets]
    sample = build_estimation_sample(d, variables, fe)
    Y = np.column_stack([sample.raw[t] for t in targets])
    C = np.column_stack([sample.raw[c] for c in controls]) if controls else np.empty((sample.n_obs, 0))
    if fe.any_active:
        both, _ = sample.demean(np.hstack([Y, C]))
        Yw, Cw = both[:, : Y.shape[1]], both[:, Y.shape[1]:]
        resid = _project_out(Yw, Cw)
    elif controls:
        Cw = np.hstack([np.ones((sample.n_obs, 1)), C])
        resid = _project_out(Y, Cw)
    else:
        resid = Y
    return Residualized(
        values=resid,
        columns=tuple(targets),
        rows=sample.rows,
        entity_ids=sample.entity_ids,
        years=sample.years,
    )
