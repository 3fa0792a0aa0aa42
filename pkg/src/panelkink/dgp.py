"""Synthetic weighted-voting economy and brute-force verification oracles.

The simulator turns configured income processes into votes via the fixed
statutory formulas, votes into shares, and shares into outcomes with a
piecewise-linear (kink plus optional jump) response, distributed-lag
dynamics, fixed effects, and iid noise.  Every draw is a pure function of
the config seed, so identical configs reproduce bit-identical datasets.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigInvalid, NegativeValue, TooLargeForOracle
from .panel import FixedEffectsSpec, PanelDataset, build_estimation_sample
from .regression import DesignMatrix, FitResult, cluster_covariance, ols_fit

ORACLE_ROW_GUARD = 5_000

VOTE_RULES = ("printed", "prose")


def votes_landowner(assessed_value, rule: str = "printed"):
    """Votes from assessed agricultural property value.

    The statutory rule taxes 3% of the assessed value and converts taxable
    income to votes.  ``printed`` divides by 10; ``prose`` grants 2 votes
    per 0.10 krona.  Fractional votes are allowed.
    """
    v = np.asarray(assessed_value, dtype=np.float64)
    if np.any(v[np.isfinite(v)] < 0):
        raise NegativeValue("assessed value must be non-negative")
    if rule == "printed":
        out = 2.0 * (0.03 * v) / 10.0
    elif rule == "prose":
        out = 2.0 * (0.03 * v) / 0.10
    else:
        raise ValueError(f"unknown vote rule {rule!r}")
    return float(out) if np.isscalar(assessed_value) else out


def votes_nonagrarian(taxable_income, rule: str = "printed"):
    """Votes from nonagrarian taxable income.

    ``printed`` gives 2 * (income / 10); ``prose`` gives 1 vote per 0.10
    krona of income.  Fractional votes are allowed.
    """
    v = np.asarray(taxable_income, dtype=np.float64)
    if np.any(v[np.isfinite(v)] < 0):
        raise NegativeValue("taxable income must be non-negative")
    if rule == "printed":
        out = 2.0 * (v / 10.0)
    elif rule == "prose":
        out = v / 0.10
    else:
        raise ValueError(f"unknown vote rule {rule!r}")
    return float(out) if np.isscalar(taxable_income) else out


@dataclass(frozen=True)
class DgpConfig:
    """True parameters of a synthetic weighted-voting economy.

    ``beta_N`` and the per-lag ``lag_effects_nonagr`` entries are the full
    upper-regime slopes (the slope of the outcome in the share when the
    nonagrarian side holds the majority); the kink coefficients planted in
    the outcome are ``beta_N - beta_L`` and the per-lag differences.  When
    the lag-effect lists are empty the static ``beta_L`` / ``beta_N`` pair
    acts as a contemporaneous-only effect.

    Income processes are log-normal random walks: entity-level initial
    draws, common drift, per-entity drift heterogeneity for nonagrarian
    income, diffusion steps, and occasional industrialization jumps that
    move an entity across the majority threshold quickly.
    """

    n_entities: int = 200
    n_years: int = 29
    first_year: int = 1881

    beta_L: float = 0.04
    beta_N: float = 0.41
    delta: float = 0.02
    gamma: float = 0.5
    lag_effects_land: tuple[float, ...] = ()
    lag_effects_nonagr: tuple[float, ...] = ()
    lead_effects: tuple[float, ...] = ()

    entity_sd: float = 0.25
    year_sd: float = 0.10
    noise_sd: float = 0.30

    land_mu0: float = 13.75
    land_sd0: float = 0.80
    land_drift: float = 0.0
    land_step_sd: float = 0.08

    income_mu0: float = 8.75
    income_sd0: float = 0.80
    income_drift: float = 0.008
    income_step_sd: float = 0.10
    income_trend_sd: float = 0.0

    jump_prob: float = 0.015
    jump_down_prob: float = 0.0
    jump_mean: float = 1.10
    jump_sd: float = 0.30

    pop_mu0: float = 7.20
    pop_sd0: float = 0.60
    pop_drift: float = 0.004
    pop_step_sd: float = 0.02

    ctrl_votes_coef: float = 0.0
    ctrl_inv_total_coef: float = 0.0

    missing_rate: float = 0.0
    vote_rule: str = "printed"
    round_votes: bool = False
    high_conc_prob: float = 0.563
    seed: int = 0

    def __post_init__(self):
        if self.n_entities < 1 or self.n_years < 1:
            raise ConfigInvalid("panel dimensions must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise ConfigInvalid("gamma must lie strictly inside (0, 1)")
        for name in ("entity_sd", "year_sd", "noise_sd", "land_sd0", "land_step_sd",
                     "income_sd0", "income_step_sd", "income_trend_sd", "jump_sd",
                     "pop_sd0", "pop_step_sd"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be non-negative")
        if not (0.0 <= self.missing_rate < 1.0):
            raise ConfigInvalid("missing_rate must lie in [0, 1)")
        if not (0.0 <= self.jump_prob <= 1.0):
            raise ConfigInvalid("jump_prob must lie in [0, 1]")
        if not (0.0 <= self.jump_down_prob <= 1.0):
            raise ConfigInvalid("jump_down_prob must lie in [0, 1]")
        if not (0.0 <= self.high_conc_prob <= 1.0):
            raise ConfigInvalid("high_conc_prob must lie in [0, 1]")
        if self.vote_rule not in VOTE_RULES:
            raise ConfigInvalid(f"vote_rule must be one of {VOTE_RULES}")
        if self.lag_effects_land or self.lag_effects_nonagr:
            if len(self.lag_effects_land) != len(self.lag_effects_nonagr):
                raise ConfigInvalid("per-lag effect lists must have equal length")
        object.__setattr__(self, "lag_effects_land", tuple(self.lag_effects_land))
        object.__setattr__(self, "lag_effects_nonagr", tuple(self.lag_effects_nonagr))
        object.__setattr__(self, "lead_effects", tuple(self.lead_effects))

    @property
    def land_slopes(self) -> tuple[float, ...]:
        return self.lag_effects_land if self.lag_effects_land else (self.beta_L,)

    @property
    def nonagr_slopes(self) -> tuple[float, ...]:
        return self.lag_effects_nonagr if self.lag_effects_nonagr else (self.beta_N,)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for key in ("lag_effects_land", "lag_effects_nonagr", "lead_effects"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "DgpConfig":
        kwargs = dict(data)
        for key in ("lag_effects_land", "lag_effects_nonagr", "lead_effects"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigInvalid(f"unknown config fields: {sorted(unknown)}")
        return cls(**kwargs)


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for (seed, index); order/schedule invariant."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def rep_seed(seed: int, index: int) -> int:
    """Deterministic 63-bit child seed for replication ``index``."""
    state = np.random.SeedSequence(entropy=seed, spawn_key=(index,)).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


def simulate_panel(cfg: DgpConfig) -> tuple[PanelDataset, dict]:
    """Simulate a weighted-voting panel plus its true-parameter record.

    Incomes evolve per the configured processes over an internal horizon
    extended by the lag/lead orders, votes follow the statutory formulas,
    and the outcome applies the configured piecewise-linear response to
    current (and lagged) shares.  Missingness is applied cell-wise.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    N, T = cfg.n_entities, cfg.n_years
    n_lags = len(cfg.land_slopes) - 1
    n_leads = len(cfg.lead_effects)
    T_full = T + n_lags + n_leads

    alpha = rng.normal(0.0, cfg.entity_sd, N)
    lam = rng.normal(0.0, cfg.year_sd, T)

    land0 = rng.normal(cfg.land_mu0, cfg.land_sd0, N)
    land_steps = rng.normal(cfg.land_drift, cfg.land_step_sd, (N, T_full - 1)) if T_full > 1 else np.zeros((N, 0))
    log_land = np.concatenate([land0[:, None], land0[:, None] + np.cumsum(land_steps, axis=1)], axis=1)

    income0 = rng.normal(cfg.income_mu0, cfg.income_sd0, N)
    trend = rng.normal(0.0, cfg.income_trend_sd, N)
    steps = rng.normal(cfg.income_drift, cfg.income_step_sd, (N, T_full - 1)) if T_full > 1 else np.zeros((N, 0))
    # Industrialization regime: agrarian entities jump up into an industrial
    # income state with prob jump_prob per year; industrial entities fall
    # back with prob jump_down_prob (0 = one-way industrialization).
    jumps = np.zeros((N, T_full - 1))
    state = np.zeros(N, dtype=bool)
    level = np.zeros(N)
    for t in range(T_full - 1):
        up = ~state & (rng.random(N) < cfg.jump_prob)
        down = state & (rng.random(N) < cfg.jump_down_prob)
        new_level = rng.normal(cfg.jump_mean, cfg.jump_sd, N)
        jumps[:, t] = np.where(up, new_level, 0.0) - np.where(down, level, 0.0)
        level = np.where(up, new_level, np.where(down, 0.0, level))
        state = (state | up) & ~down
    increments = steps + jumps + trend[:, None]
    log_income = np.concatenate(
        [income0[:, None], income0[:, None] + np.cumsum(increments, axis=1)], axis=1
    ) if T_full > 1 else income0[:, None]

    pop0 = rng.normal(cfg.pop_mu0, cfg.pop_sd0, N)
    pop_steps = rng.normal(cfg.pop_drift, cfg.pop_step_sd, (N, T - 1)) if T > 1 else np.zeros((N, 0))
    log_pop = np.concatenate([pop0[:, None], pop0[:, None] + np.cumsum(pop_steps, axis=1)], axis=1)

    votes_land = votes_landowner(np.exp(log_land), rule=cfg.vote_rule)
    votes_na = votes_nonagrarian(np.exp(log_income), rule=cfg.vote_rule)
    if cfg.round_votes:
        votes_land = np.round(votes_land)
        votes_na = np.round(votes_na)
    total = votes_land + votes_na
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(total > 0, votes_na / total, np.nan)

    # Emitted window occupies internal columns n_lags .. n_lags+T-1.
    offset = n_lags
    y = np.tile(lam, (N, 1)) + alpha[:, None]
    for j, (bl, bn) in enumerate(zip(cfg.land_slopes, cfg.nonagr_slopes)):
        s_j = share[:, offset - j: offset - j + T]
        y = y + bl * s_j + (bn - bl) * np.clip(s_j - cfg.gamma, 0.0, None)
    s_now = share[:, offset: offset + T]
    y = y + cfg.delta * (s_now > cfg.gamma)
    for k, coef in enumerate(cfg.lead_effects, start=1):
        y = y + coef * share[:, offset + k: offset + k + T]
    if cfg.ctrl_votes_coef != 0.0:
        y = y + cfg.ctrl_votes_coef * votes_na[:, offset: offset + T]
    if cfg.ctrl_inv_total_coef != 0.0:
        with np.errstate(divide="ignore"):
            y = y + cfg.ctrl_inv_total_coef / total[:, offset: offset + T]
    y = y + rng.normal(0.0, cfg.noise_sd, (N, T))

    spend = np.exp(y + log_pop)  # so ln(spend / population) reproduces y
    high_conc = (rng.random(N) < cfg.high_conc_prob).astype(np.float64)

    entity_ids = np.array([f"{i:05d}" for i in range(1, N + 1)])
    frame = pd.DataFrame({
        "entity_id": np.repeat(entity_ids, T),
        "year": np.tile(np.arange(cfg.first_year, cfg.first_year + T), N),
        "school_spend": spend.ravel(),
        "population": np.exp(log_pop).ravel(),
        "votes_nonagr": votes_na[:, offset: offset + T].ravel(),
        "votes_land": votes_land[:, offset: offset + T].ravel(),
        "high_land_conc": np.repeat(high_conc, T),
    })
    if cfg.missing_rate > 0.0:
        value_cols = ["school_spend", "population", "votes_nonagr", "votes_land"]
        mask = rng.random((len(frame), len(value_cols))) < cfg.missing_rate
        for j, col in enumerate(value_cols):
            frame.loc[mask[:, j], col] = np.nan

    truth = {
        "beta_L": cfg.beta_L,
        "beta_N": cfg.beta_N,
        "delta": cfg.delta,
        "gamma": cfg.gamma,
        "land_slopes": list(cfg.land_slopes),
        "nonagr_slopes": list(cfg.nonagr_slopes),
        "lead_effects": list(cfg.lead_effects),
        "config": cfg.to_dict(),
    }
    return PanelDataset.from_frame(frame), truth


def oracle_dummy_ols(
    d: PanelDataset,
    y_var: str,
    x_vars: Sequence[str],
    fe: FixedEffectsSpec = FixedEffectsSpec(),
    cluster: bool = False,
) -> FitResult:
    """Fit ``y`` on ``x_vars`` with explicit entity/year indicator columns.

    This is the independent oracle for the within transform: slope
    coefficients and SSR must agree with the demeaned fit.  Guarded to
    panels of at most 5,000 rows.
    """
    if d.n_rows > ORACLE_ROW_GUARD:
        raise TooLargeForOracle(f"panel has {d.n_rows} rows; oracle guard is {ORACLE_ROW_GUARD}")
    sample = build_estimation_sample(d, [y_var] + list(x_vars), fe)
    y = sample.raw[y_var]
    cols = [sample.raw[v] for v in x_vars]
    names = list(x_vars)
    cols.append(np.ones(sample.n_obs))
    names.append("_intercept")
    if fe.entity_effects:
        uniq = np.unique(sample.entity_ids)
        for u in uniq[1:]:
            cols.append((sample.entity_ids == u).astype(np.float64))
            names.append(f"_ent={u}")
    if fe.time_effects:
        uniq = np.unique(sample.years)
        for u in uniq[1:]:
            cols.append((sample.years == u).astype(np.float64))
            names.append(f"_yr={u}")
    X = DesignMatrix(np.column_stack(cols), tuple(names),
                     entity_ids=sample.entity_ids, years=sample.years)
    fit = ols_fit(X, y)
    if cluster:
        cluster_covariance(fit, sample.entity_ids)
    fit.meta["oracle"] = "explicit-dummy"
    return fit


@dataclass(frozen=True)
class ParamEstimate:
    """One replication's estimate of one parameter."""

    estimate: float
    se: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    reject_null: bool | None = None


@dataclass(frozen=True)
class MonteCarloReport:
    """Aggregated bias / dispersion / coverage / rejection summary."""

    reps: int
    failures: int
    parameters: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {"reps": self.reps, "failures": self.failures, "parameters": self.parameters}


def monte_carlo(
    cfg: DgpConfig,
    estimator: Callable[[PanelDataset], Mapping[str, ParamEstimate]],
    true_values: Mapping[str, float],
    reps: int,
    seed: int,
) -> MonteCarloReport:
    """Run simulate -> estimate -> collect over seeded replications.

    Replication r draws from the (seed, r) substream, so reports do not
    depend on execution order.  A failing replication increments the
    failure count instead of aborting the run.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    draws: dict[str, list[ParamEstimate]] = {}
    failures = 0
    for r in range(reps):
        cfg_r = dataclasses.replace(cfg, seed=rep_seed(seed, r))
        try:
            d, _ = simulate_panel(cfg_r)
            result = estimator(d)
        except Exception:
            failures += 1
            continue
        for name, est in result.items():
            draws.setdefault(name, []).append(est)

    parameters: dict[str, dict[str, float]] = {}
    for name, items in draws.items():
        est = np.array([i.estimate for i in items])
        se = np.array([i.se for i in items])
        summary: dict[str, float] = {
            "n": int(len(items)),
            "mean_estimate": float(est.mean()),
            "sd_estimate": float(est.std(ddof=1)) if len(items) > 1 else float("nan"),
            "mean_se": float(np.nanmean(se)) if np.any(np.isfinite(se)) else float("nan"),
        }
        if name in true_values:
            true = true_values[name]
            summary["true"] = float(true)
            summary["mean_bias"] = float(est.mean() - true)
            lo = np.array([i.ci_low for i in items])
            hi = np.array([i.ci_high for i in items])
            cover = (lo <= true) & (true <= hi)
            if np.any(np.isfinite(lo)):
                summary["coverage"] = float(np.mean(cover))
        rejects = [i.reject_null for i in items if i.reject_null is not None]
        if rejects:
            summary["rejection_rate"] = float(np.mean(rejects))
        parameters[name] = summary
    return MonteCarloReport(reps=reps, failures=failures, parameters=parameters)
