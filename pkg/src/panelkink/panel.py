"""Panel container, CSV ingestion, derived variables, and the within transform.

A :class:`PanelDataset` is an immutable rectangular collection of
(entity, year) observations with named numeric variables.  Missing cells
are NaN.  Every derived column carries a lineage tag naming the operation
that created it.  All transformations return new datasets; nothing mutates
in place, so datasets are safe to share across threads.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import IO, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DuplicateKey,
    EmptyInput,
    EmptySample,
    InvalidKey,
    MissingColumn,
    NegativeVotes,
    NoConvergence,
    UnknownVariable,
)

KEY_COLUMNS = ("entity_id", "year")

#: Canonical input column names used by the CLI and the simulator.
CANONICAL_COLUMNS = (
    "entity_id",
    "year",
    "school_spend",
    "population",
    "votes_nonagr",
    "votes_land",
    "deflator",
    "high_land_conc",
)

MISSING_TOKENS = frozenset({"", "NA"})

WITHIN_TOL = 1e-10
WITHIN_MAX_ITER = 10_000


@dataclass(frozen=True)
class FixedEffectsSpec:
    """Which fixed-effect dimensions to absorb."""

    entity_effects: bool = True
    time_effects: bool = True

    @property
    def any_active(self) -> bool:
        return self.entity_effects or self.time_effects


@dataclass(frozen=True)
class NonPositiveCell:
    """A cell that violated a positivity precondition and was set missing."""

    entity_id: str
    year: int
    column: str
    value: float


@dataclass(frozen=True)
class PanelDataset:
    """Entity x year observations with named numeric variables.

    ``frame`` holds ``entity_id`` (string), ``year`` (int64) and one float64
    column per variable, sorted by (entity, year) with unique keys.
    ``lineage`` maps each derived variable to the operation that created it.
    """

    frame: pd.DataFrame
    lineage: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lineage", MappingProxyType(dict(self.lineage)))

    # --- construction -------------------------------------------------------

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, lineage: Mapping[str, str] | None = None) -> "PanelDataset":
        """Validate and normalize a raw frame into a dataset.

        Requires ``entity_id`` and ``year`` columns plus at least one
        variable column.  Variable columns are coerced to float64 (NaN for
        missing); rows are sorted by (entity, year); duplicate keys raise
        :class:`DuplicateKey`.
        """
        for key in KEY_COLUMNS:
            if key not in frame.columns:
                raise MissingColumn(f"required column {key!r} is absent")
        variables = [c for c in frame.columns if c not in KEY_COLUMNS]
        if not variables:
            raise MissingColumn("at least one variable column is required")
        if len(frame) == 0:
            raise EmptyInput("no data rows")

        out = pd.DataFrame(index=pd.RangeIndex(len(frame)))
        out["entity_id"] = frame["entity_id"].astype(str).to_numpy()
        years = pd.to_numeric(frame["year"], errors="coerce")
        if years.isna().any():
            bad = frame.loc[years.isna(), "year"].iloc[0]
            raise InvalidKey(f"unparseable year value {bad!r}")
        out["year"] = years.astype(np.int64).to_numpy()
        for name in variables:
            out[name] = pd.to_numeric(frame[name], errors="coerce").astype(np.float64).to_numpy()

        dup = out.duplicated(subset=list(KEY_COLUMNS))
        if dup.any():
            e, y = out.loc[dup.idxmax(), ["entity_id", "year"]]
            raise DuplicateKey(f"duplicate (entity, year) pair ({e!r}, {y})")
        out = out.sort_values(list(KEY_COLUMNS), kind="stable").reset_index(drop=True)
        return cls(frame=out, lineage=lineage or {})

    # --- basic queries -------------------------------------------------------

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(c for c in self.frame.columns if c not in KEY_COLUMNS)

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def entities(self) -> np.ndarray:
        return self.frame["entity_id"].unique()

    @property
    def n_entities(self) -> int:
        return self.frame["entity_id"].nunique()

    @property
    def years(self) -> np.ndarray:
        return np.sort(self.frame["year"].unique())

    def require(self, names: Sequence[str]) -> None:
        for name in names:
            if name not in self.frame.columns:
                raise UnknownVariable(f"variable {name!r} not in dataset")

    def values(self, name: str) -> np.ndarray:
        self.require([name])
        return self.frame[name].to_numpy()

    def entity_codes(self) -> tuple[np.ndarray, np.ndarray]:
        codes, uniques = pd.factorize(self.frame["entity_id"], sort=True)
        return codes.astype(np.int64), np.asarray(uniques)

    def year_codes(self) -> tuple[np.ndarray, np.ndarray]:
        codes, uniques = pd.factorize(self.frame["year"], sort=True)
        return codes.astype(np.int64), np.asarray(uniques)

    def year_gaps(self) -> dict[str, tuple[int, ...]]:
        """Missing calendar years strictly inside each entity's observed span."""
        gaps: dict[str, tuple[int, ...]] = {}
        for entity, group in self.frame.groupby("entity_id", sort=True):
            ys = group["year"].to_numpy()
            full = np.arange(ys.min(), ys.max() + 1)
            missing = np.setdiff1d(full, ys)
            if missing.size:
                gaps[str(entity)] = tuple(int(y) for y in missing)
        return gaps

    # --- derivation ----------------------------------------------------------

    def with_variable(self, name: str, values: np.ndarray, operation: str) -> "PanelDataset":
        """Return a new dataset with one added, lineage-tagged column."""
        if name in self.frame.columns:
            raise ValueError(f"column {name!r} already exists")
        if len(values) != len(self.frame):
            raise ValueError("value length does not match dataset rows")
        frame = self.frame.copy()
        frame[name] = np.asarray(values, dtype=np.float64)
        lineage = dict(self.lineage)
        lineage[name] = operation
        return PanelDataset(frame=frame, lineage=lineage)

    def filter_rows(self, mask: np.ndarray) -> "PanelDataset":
        frame = self.frame.loc[np.asarray(mask, dtype=bool)].reset_index(drop=True)
        if len(frame) == 0:
            raise EmptySample("filter removed every row")
        return PanelDataset(frame=frame, lineage=dict(self.lineage))


def default_schema(columns: Sequence[str]) -> dict[str, str]:
    """Identity schema over canonical column names present in ``columns``."""
    return {c: c for c in columns if c in CANONICAL_COLUMNS}


def load_panel(source: str | Path | IO[str], schema: Mapping[str, str] | None = None) -> PanelDataset:
    """Load a CSV stream into a :class:`PanelDataset`.

    ``schema`` maps dataset names to source column names and must name
    ``entity_id``, ``year`` and at least one variable column.  When omitted,
    canonical column names found in the header are used as-is.  Empty fields
    and ``NA`` are missing; any other unparseable numeric is recorded as a
    missing cell without dropping the row.
    """
    if isinstance(source, (str, Path)):
        raw = pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    else:
        raw = pd.read_csv(source, dtype=str, keep_default_na=False)
    if schema is None:
        schema = default_schema(raw.columns)
    for key in KEY_COLUMNS:
        if key not in schema:
            raise MissingColumn(f"schema must name a source column for {key!r}")
    if len(schema) < 3:
        raise MissingColumn("schema must name at least one variable column")
    for target, src in schema.items():
        if src not in raw.columns:
            raise MissingColumn(f"source column {src!r} (for {target!r}) not in input")
    if len(raw) == 0:
        raise EmptyInput("input holds a header but no data rows")

    frame = pd.DataFrame(index=pd.RangeIndex(len(raw)))
    frame["entity_id"] = raw[schema["entity_id"]].str.strip()
    frame["year"] = raw[schema["year"]].str.strip()
    for target, src in schema.items():
        if target in KEY_COLUMNS:
            continue
        col = raw[src].str.strip()
        col = col.where(~col.isin(MISSING_TOKENS), other="")
        frame[target] = col
    return PanelDataset.from_frame(frame)


def derive_vote_share(
    d: PanelDataset,
    nonagr_col: str = "votes_nonagr",
    land_col: str = "votes_land",
    out: str = "vote_share",
) -> PanelDataset:
    """Add the nonagrarian share of total votes, V^N / (V^N + V^L).

    The share is missing wherever either vote count is missing or the
    total is zero.  Negative vote counts raise :class:`NegativeVotes`.
    """
    d.require([nonagr_col, land_col])
    vn = d.values(nonagr_col)
    vl = d.values(land_col)
    for name, v in ((nonagr_col, vn), (land_col, vl)):
        if np.any(v[np.isfinite(v)] < 0):
            raise NegativeVotes(f"negative values in {name!r}")
    total = vn + vl
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(total > 0, vn / total, np.nan)
    return d.with_variable(out, share, "derive_vote_share")


def derive_log_per_capita(
    d: PanelDataset,
    spend_col: str = "school_spend",
    pop_col: str = "population",
    deflator_col: str | None = None,
    out: str = "log_spend_pc",
) -> tuple[PanelDataset, list[NonPositiveCell]]:
    """Add ln(spend / deflator / population); deflator defaults to 1.

    Non-positive inputs do not abort the derivation: each offending cell is
    reported with its coordinates, the derived cell is set missing, and the
    list of reports is returned alongside the new dataset.
    """
    cols = [spend_col, pop_col] + ([deflator_col] if deflator_col else [])
    d.require(cols)
    parts = {c: d.values(c) for c in cols}
    bad: list[NonPositiveCell] = []
    ok = np.ones(d.n_rows, dtype=bool)
    ents = d.frame["entity_id"].to_numpy()
    yrs = d.frame["year"].to_numpy()
    for c, v in parts.items():
        nonpos = np.isfinite(v) & (v <= 0)
        for i in np.flatnonzero(nonpos):
            bad.append(NonPositiveCell(str(ents[i]), int(yrs[i]), c, float(v[i])))
        ok &= ~nonpos
    if deflator_col:
        ratio = parts[spend_col] / parts[deflator_col] / parts[pop_col]
    else:
        ratio = parts[spend_col] / parts[pop_col]
    masked = np.where(ok, ratio, np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.log(masked)
    return d.with_variable(out, y, "derive_log_per_capita"), bad


def derive_log(d: PanelDataset, col: str, out: str | None = None) -> tuple[PanelDataset, list[NonPositiveCell]]:
    """Add ln(col) with the same non-positive reporting as per-capita logs."""
    d.require([col])
    out = out or f"log_{col}"
    v = d.values(col)
    bad: list[NonPositiveCell] = []
    ents = d.frame["entity_id"].to_numpy()
    yrs = d.frame["year"].to_numpy()
    nonpos = np.isfinite(v) & (v <= 0)
    for i in np.flatnonzero(nonpos):
        bad.append(NonPositiveCell(str(ents[i]), int(yrs[i]), col, float(v[i])))
    masked = np.where(nonpos, np.nan, v)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.log(masked)
    return d.with_variable(out, y, "derive_log"), bad


def derive_inverse_total(
    d: PanelDataset,
    nonagr_col: str = "votes_nonagr",
    land_col: str = "votes_land",
    out: str = "inv_total_votes",
) -> PanelDataset:
    """Add 1 / (V^N + V^L); missing when the total is zero or missing."""
    d.require([nonagr_col, land_col])
    total = d.values(nonagr_col) + d.values(land_col)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(total > 0, 1.0 / total, np.nan)
    return d.with_variable(out, inv, "derive_inverse_total")


def _shifted_values(d: PanelDataset, var: str, offset: int) -> np.ndarray:
    """Value of ``var`` at (entity, year + offset); NaN when that year is absent."""
    base = d.frame[["entity_id", "year", var]]
    shifted = base.rename(columns={var: "_v"}).assign(year=base["year"] - offset)
    merged = d.frame[["entity_id", "year"]].merge(shifted, on=["entity_id", "year"], how="left")
    return merged["_v"].to_numpy()


def lag_name(var: str, horizon: int) -> str:
    """Column name for the value of ``var`` at t - horizon (negative = lead)."""
    if horizon == 0:
        return var
    return f"{var}.lag{horizon}" if horizon > 0 else f"{var}.lead{-horizon}"


def build_lags_leads(d: PanelDataset, var: str, n_leads: int, n_lags: int) -> PanelDataset:
    """Add calendar-gap-aware lead/lag columns ``var.lagK`` / ``var.leadK``.

    Lag k at (i, t) is the value at (i, t-k) only when year t-k is observed
    for entity i; a lag never crosses a reporting gap.  Leads are symmetric.
    """
    d.require([var])
    if n_leads < 0 or n_lags < 0:
        raise ValueError("n_leads and n_lags must be non-negative")
    out = d
    for k in range(1, n_lags + 1):
        out = out.with_variable(lag_name(var, k), _shifted_values(d, var, -k), "build_lags_leads")
    for k in range(1, n_leads + 1):
        out = out.with_variable(lag_name(var, -k), _shifted_values(d, var, k), "build_lags_leads")
    return out


def ensure_lags_leads(d: PanelDataset, var: str, n_leads: int, n_lags: int) -> PanelDataset:
    """Like :func:`build_lags_leads` but reuses columns it built before."""
    d.require([var])
    out = d
    for k in list(range(1, n_lags + 1)) + [-k for k in range(1, n_leads + 1)]:
        name = lag_name(var, k)
        if name in out.frame.columns:
            if out.lineage.get(name) != "build_lags_leads":
                raise ValueError(f"column {name!r} exists but was not built by build_lags_leads")
            continue
        out = out.with_variable(name, _shifted_values(d, var, -k), "build_lags_leads")
    return out


# --- estimation samples and demeaning ---------------------------------------

def _group_info(codes: np.ndarray) -> tuple[np.ndarray, int, np.ndarray]:
    size = int(codes.max()) + 1 if codes.size else 0
    counts = np.bincount(codes, minlength=size).astype(np.float64)
    return codes, size, counts


def alternating_demean(
    values: np.ndarray,
    groups: Sequence[tuple[np.ndarray, int, np.ndarray]],
    tol: float = WITHIN_TOL,
    max_iter: int = WITHIN_MAX_ITER,
) -> tuple[np.ndarray, int]:
    """Iteratively demean columns within each group until changes < tol.

    ``groups`` holds (codes, n_groups, counts) per grouping dimension.  For
    two-way fixed effects this converges to the projection orthogonal to
    the combined entity/year indicator space.  The tolerance applies to the
    applied group means relative to each column's sup norm (floored at 1),
    so unit-scale data meets the absolute tolerance while large-scale
    columns are not held to sub-round-off precision.
    """
    X = np.array(values, dtype=np.float64, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    if not groups:
        return X, 0
    k = X.shape[1]
    scales = np.maximum(1.0, np.max(np.abs(X), axis=0)) if len(X) else np.ones(k)
    for iteration in range(1, max_iter + 1):
        shift = 0.0
        for codes, size, counts in groups:
            for j in range(k):
                means = np.bincount(codes, weights=X[:, j], minlength=size) / counts
                X[:, j] -= means[codes]
                m = float(np.max(np.abs(means))) / scales[j] if size else 0.0
                if m > shift:
                    shift = m
        if shift < tol:
            return X, iteration
    raise NoConvergence(f"demeaning did not reach tol={tol} in {max_iter} iterations")


@dataclass(frozen=True)
class EstimationSample:
    """Complete-case rows for a set of variables, with demeaning machinery.

    ``raw`` keeps the untransformed values on the sample so that nonlinear
    constructions (kink and jump terms) can be built before demeaning.
    """

    rows: np.ndarray
    raw: Mapping[str, np.ndarray]
    entity_ids: np.ndarray
    years: np.ndarray
    entity_code: np.ndarray
    year_code: np.ndarray
    fe: FixedEffectsSpec

    @property
    def n_obs(self) -> int:
        return len(self.rows)

    def groups(self) -> list[tuple[np.ndarray, int, np.ndarray]]:
        gs = []
        if self.fe.entity_effects:
            gs.append(_group_info(self.entity_code))
        if self.fe.time_effects:
            gs.append(_group_info(self.year_code))
        return gs

    def demean(self, values: np.ndarray) -> tuple[np.ndarray, int]:
        """Apply the within transform of this sample to extra columns."""
        if not self.fe.any_active:
            X = np.array(values, dtype=np.float64, copy=True)
            if X.ndim == 1:
                X = X[:, None]
            return X, 0
        return alternating_demean(values, self.groups())


def build_estimation_sample(d: PanelDataset, variables: Sequence[str], fe: FixedEffectsSpec) -> EstimationSample:
    """Listwise-deletion sample over ``variables`` plus group codes."""
    d.require(variables)
    mat = np.column_stack([d.values(v) for v in variables]) if variables else np.empty((d.n_rows, 0))
    keep = np.all(np.isfinite(mat), axis=1) if variables else np.ones(d.n_rows, dtype=bool)
    rows = np.flatnonzero(keep)
    if rows.size == 0:
        raise EmptySample(f"no complete-case rows over {list(variables)}")
    ents = d.frame["entity_id"].to_numpy()[rows]
    yrs = d.frame["year"].to_numpy()[rows]
    ecodes = pd.factorize(ents, sort=True)[0].astype(np.int64)
    ycodes = pd.factorize(yrs, sort=True)[0].astype(np.int64)
    raw = {v: mat[keep][:, i].copy() for i, v in enumerate(variables)}
    return EstimationSample(
        rows=rows,
        raw=raw,
        entity_ids=ents,
        years=yrs,
        entity_code=ecodes,
        year_code=ycodes,
        fe=fe,
    )


@dataclass(frozen=True)
class WithinResult:
    """Within-transformed columns on the complete-case sample."""

    values: np.ndarray
    columns: tuple[str, ...]
    rows: np.ndarray
    entity_ids: np.ndarray
    years: np.ndarray
    iterations: int


def within_transform(d: PanelDataset, variables: Sequence[str], fe: FixedEffectsSpec) -> WithinResult:
    """Demean ``variables`` by entity and/or year on their complete cases.

    Alternating demeaning is iterated to convergence (max absolute applied
    mean < 1e-10, cap 10,000), which handles unbalanced panels exactly:
    the result matches a regression on explicit indicator columns.
    """
    if not fe.any_active:
        raise ValueError("within transform requested with no active fixed-effect dimension")
    if not variables:
        raise ValueError("within transform needs at least one variable")
    sample = build_estimation_sample(d, variables, fe)
    mat = np.column_stack([sample.raw[v] for v in variables])
    demeaned, iterations = sample.demean(mat)
    return WithinResult(
        values=demeaned,
        columns=tuple(variables),
        rows=sample.rows,
        entity_ids=sample.entity_ids,
        years=sample.years,
        iterations=iterations,
    )
