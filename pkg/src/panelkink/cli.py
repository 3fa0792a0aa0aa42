"""Command-line entry point wiring ingestion, estimation, simulation, and
figure-data emission into reproducible runs.

Every run writes a ``run_meta.json`` capturing the resolved configuration,
seed, and sample accounting.  Artifacts are plain text (JSON, CSV, SVG)
with deterministic bytes: re-running with the same inputs, seed, and any
``--threads`` value reproduces every file exactly.  Stochastic subcommands
require an explicit seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .binscatter import binscatter
from .dgp import DgpConfig, ParamEstimate, monte_carlo, simulate_panel
from .errors import (
    NonBinaryIndicator,
    PanelDataError,
    PanelKinkError,
    PanelNumericalError,
    UnknownVariable,
)
from .eventstudy import (
    DistributedLagSpec,
    cumulative_effects,
    fit_distributed_lag,
    fit_regime_distributed_lag,
    pretrend_test,
    to_event_study,
)
from .figures import binscatter_svg, event_study_svg
from .panel import (
    FixedEffectsSpec,
    PanelDataset,
    derive_inverse_total,
    derive_log,
    derive_log_per_capita,
    derive_vote_share,
    load_panel,
)
from .threshold import (
    STANDARD_CONTROLS,
    ThresholdSpec,
    bootstrap_linearity_test,
    estimate_threshold,
    fit_threshold,
)


class UsageError(Exception):
    """Bad flag combination; maps to exit code 2."""


EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


# --- deterministic writers ---------------------------------------------------

def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n",
                    encoding="utf-8")


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, rows: Sequence[Mapping], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def write_panel_csv(path: Path, d: PanelDataset) -> None:
    columns = ["entity_id", "year", *d.variables]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in d.frame.itertuples(index=False):
            out = []
            for col, value in zip(columns, row):
                if col in ("entity_id", "year"):
                    out.append(str(value))
                elif isinstance(value, float) and not np.isfinite(value):
                    out.append("NA")
                else:
                    out.append(repr(float(value)))
            writer.writerow(out)


def _sanitize(obj):
    """Make numpy scalars and non-finite floats JSON-safe."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --- shared data plumbing ----------------------------------------------------

def prepare_analysis_panel(d: PanelDataset) -> PanelDataset:
    """Derive the standard analysis columns that the inputs support."""
    cols = set(d.frame.columns)
    if {"votes_nonagr", "votes_land"} <= cols:
        if "vote_share" not in cols:
            d = derive_vote_share(d)
        if "inv_total_votes" not in cols:
            d = derive_inverse_total(d)
    if {"school_spend", "population"} <= cols and "log_spend_pc" not in cols:
        deflator = "deflator" if "deflator" in cols else None
        d, _ = derive_log_per_capita(d, deflator_col=deflator)
    if "population" in cols and "log_population" not in cols:
        d, _ = derive_log(d, "population", "log_population")
    return d


def split_sample(d: PanelDataset, indicator_col: str, value: int) -> PanelDataset:
    """Filter the panel to rows where a binary indicator equals ``value``."""
    if indicator_col not in d.frame.columns:
        raise UnknownVariable(f"filter column {indicator_col!r} not in dataset")
    vals = d.values(indicator_col)
    finite = vals[np.isfinite(vals)]
    if not np.all(np.isin(finite, (0.0, 1.0))):
        raise NonBinaryIndicator(f"column {indicator_col!r} takes values outside {{0, 1}}")
    if value not in (0, 1):
        raise NonBinaryIndicator("filter value must be 0 or 1")
    mask = vals == float(value)
    return d.filter_rows(mask)


def _parse_filter(text: str) -> tuple[str, int]:
    if "=" not in text:
        raise UsageError("--filter expects column=value")
    col, _, val = text.partition("=")
    try:
        return col.strip(), int(val)
    except ValueError:
        raise UsageError("--filter value must be an integer 0/1")


def _parse_controls(text: str | None) -> tuple[str, ...]:
    if text is None:
        return STANDARD_CONTROLS
    if text.strip().lower() == "none":
        return ()
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _load_input(args) -> tuple[PanelDataset, dict]:
    schema = None
    if getattr(args, "schema_json", None):
        schema = json.loads(Path(args.schema_json).read_text(encoding="utf-8"))
    d = load_panel(args.input, schema)
    counts = {"input_rows": d.n_rows, "dropped_by_filter": 0}
    if getattr(args, "filter", None):
        col, value = _parse_filter(args.filter)
        d = split_sample(d, col, value)
        counts["dropped_by_filter"] = counts["input_rows"] - d.n_rows
        counts["filter"] = {"column": col, "value": value, "entities_kept": int(d.n_entities)}
    counts["rows_after_filter"] = d.n_rows
    d = prepare_analysis_panel(d)
    return d, counts


def _finish_meta(counts: dict, used: int) -> dict:
    counts = dict(counts)
    counts["used"] = int(used)
    counts["dropped_by_missingness"] = int(counts["rows_after_filter"] - used)
    return counts


def _write_meta(out: Path, command: str, config: dict, counts: dict | None = None) -> None:
    meta = {
        "command": command,
        "version": __version__,
        "config": _sanitize(config),
    }
    if counts is not None:
        meta["sample"] = _sanitize(counts)
    write_json(out / "run_meta.json", meta)


def _fe_from_args(args) -> FixedEffectsSpec:
    return FixedEffectsSpec(entity_effects=not args.no_entity_effects,
                            time_effects=not args.no_time_effects)


# --- subcommands --------------------------------------------------------------

def _cmd_simulate(args) -> int:
    if args.seed is None and "seed" not in _config_file(args):
        raise UsageError("simulate requires --seed (or a seed in --config)")
    cfg = DgpConfig.from_dict(_config_file(args))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    d, truth = simulate_panel(cfg)
    out = _out_dir(args)
    write_panel_csv(out / "panel.csv", d)
    write_json(out / "truth.json", _sanitize(truth))
    _write_meta(out, "simulate", {"dgp": cfg.to_dict(), "threads": args.threads},
                {"rows": d.n_rows, "entities": int(d.n_entities)})
    return 0


def _cmd_threshold(args) -> int:
    if args.gamma is None and not args.estimate:
        raise UsageError("threshold needs --gamma or --estimate")
    if args.gamma is not None and args.estimate:
        raise UsageError("--gamma and --estimate are mutually exclusive")
    if args.bootstrap and args.seed is None:
        raise UsageError("--bootstrap requires --seed")
    d, counts = _load_input(args)
    spec = ThresholdSpec(
        gamma=args.gamma,
        include_jump=not args.no_jump,
        controls=_parse_controls(args.controls),
        fe=_fe_from_args(args),
        cluster_var=args.cluster,
    )
    out = _out_dir(args)
    if args.estimate:
        tf = estimate_threshold(d, spec, trim=args.trim)
        ci = tf.confidence_interval(alpha=0.05)
        write_csv(out / "profile.csv",
                  [{"gamma": g, "ssr": s} for g, s in tf.profile], ["gamma", "ssr"])
        write_json(out / "threshold_ci.json", _sanitize(ci.to_dict()))
    else:
        tf = fit_threshold(d, replace(spec, gamma=args.gamma))
    write_json(out / "threshold_fit.json", _sanitize(tf.to_dict()))
    if args.bootstrap:
        lt = bootstrap_linearity_test(d, replace(spec, gamma=None), trim=args.trim,
                                      reps=args.bootstrap, seed=args.seed)
        write_json(out / "linearity_test.json", _sanitize(lt.to_dict()))
    config = {
        "input": args.input, "gamma": args.gamma, "estimate": args.estimate,
        "trim": args.trim, "include_jump": not args.no_jump,
        "controls": list(spec.controls), "cluster": args.cluster,
        "bootstrap": args.bootstrap, "seed": args.seed, "threads": args.threads,
    }
    _write_meta(out, "threshold", config, _finish_meta(counts, tf.fit.n_obs))
    return 0


def _cmd_event_study(args) -> int:
    d, counts = _load_input(args)
    spec = DistributedLagSpec(
        n_leads=args.leads,
        n_lags=args.lags,
        regime_split=args.regime,
        controls=_parse_controls(args.controls) if args.controls else (),
        fe=_fe_from_args(args),
        cluster_var=args.cluster,
    )
    out = _out_dir(args)
    if args.regime is None:
        fit = fit_distributed_lag(d, spec)
        path = to_event_study(fit)
        write_json(out / "distributed_lag.json", _sanitize(fit.to_dict()))
        write_csv(out / "event_study_path.csv", path.to_rows(),
                  ["horizon", "estimate", "se", "lo95", "hi95"])
        if args.svg:
            (out / "event_study.svg").write_text(event_study_svg(path), encoding="utf-8")
        used = fit.n_obs
    else:
        fit = fit_regime_distributed_lag(d, replace(spec, n_leads=0))
        write_json(out / "regime_distributed_lag.json", _sanitize(fit.to_dict()))
        for regime in ("nonagrarian", "landowner"):
            path = cumulative_effects(fit, regime)
            write_csv(out / f"cumulative_{regime}.csv", path.to_rows(),
                      ["horizon", "estimate", "se", "lo95", "hi95"])
            if args.svg:
                (out / f"cumulative_{regime}.svg").write_text(
                    event_study_svg(path, title=f"Cumulative effects: {regime}"),
                    encoding="utf-8")
        used = fit.n_obs
    if args.pretrend is not None:
        if args.regime is None:
            raise UsageError("--pretrend needs --regime")
        pt = pretrend_test(d, spec, extra_leads=args.pretrend)
        write_json(out / "pretrend.json", _sanitize(pt.to_dict()))
    config = {
        "input": args.input, "leads": args.leads, "lags": args.lags,
        "regime": args.regime, "controls": list(spec.controls),
        "cluster": args.cluster, "pretrend": args.pretrend,
        "svg": args.svg, "threads": args.threads,
    }
    _write_meta(out, "event-study", config, _finish_meta(counts, used))
    return 0


def _cmd_binscatter(args) -> int:
    d, counts = _load_input(args)
    controls = () if args.raw else _parse_controls(args.controls)
    fe = FixedEffectsSpec(False, False) if args.raw else _fe_from_args(args)
    bs = binscatter(d, args.y, args.x, controls=controls, fe=fe,
                    n_bins=args.bins, split_at=args.split)
    out = _out_dir(args)
    write_csv(out / "bins.csv", bs.to_rows(), ["x_mean", "y_mean", "count"])
    write_json(out / "lines.json", _sanitize(bs.to_dict()))
    if args.svg:
        (out / "binscatter.svg").write_text(binscatter_svg(bs), encoding="utf-8")
    config = {
        "input": args.input, "y": args.y, "x": args.x, "bins": args.bins,
        "split": args.split, "controls": list(controls), "raw": args.raw,
        "svg": args.svg, "threads": args.threads,
    }
    _write_meta(out, "binscatter", config, _finish_meta(counts, bs.n_obs))
    return 0


def _cmd_montecarlo(args) -> int:
    if args.seed is None:
        raise UsageError("montecarlo requires --seed")
    cfg = DgpConfig.from_dict(_config_file(args))
    if args.estimator != "threshold":
        raise UsageError(f"unknown estimator {args.estimator!r}")
    controls = _parse_controls(args.controls) if args.controls else ()
    spec = ThresholdSpec(gamma=cfg.gamma, controls=controls)

    def estimator(d: PanelDataset) -> dict[str, ParamEstimate]:
        d = prepare_analysis_panel(d)
        tf = fit_threshold(d, spec)
        z = 1.96
        return {
            "beta_L": ParamEstimate(tf.beta_L, tf.se_beta_L,
                                    tf.beta_L - z * tf.se_beta_L, tf.beta_L + z * tf.se_beta_L),
            "beta_N": ParamEstimate(tf.beta_N, tf.se_beta_N,
                                    tf.beta_N - z * tf.se_beta_N, tf.beta_N + z * tf.se_beta_N),
            "delta": ParamEstimate(tf.delta, tf.se_delta,
                                   tf.delta - z * tf.se_delta, tf.delta + z * tf.se_delta),
        }

    truth = {"beta_L": cfg.beta_L, "beta_N": cfg.beta_N, "delta": cfg.delta}
    report = monte_carlo(cfg, estimator, truth, reps=args.reps, seed=args.seed)
    out = _out_dir(args)
    write_json(out / "mc_report.json", _sanitize(report.to_dict()))
    config = {
        "dgp": cfg.to_dict(), "estimator": args.estimator, "reps": args.reps,
        "seed": args.seed, "controls": list(controls), "threads": args.threads,
    }
    _write_meta(out, "montecarlo", config)
    return 0


def _cmd_summary(args) -> int:
    d, counts = _load_input(args)
    rows = []
    for var in d.variables:
        v = d.values(var)
        finite = v[np.isfinite(v)]
        rows.append({
            "variable": var,
            "mean": float(finite.mean()) if finite.size else float("nan"),
            "sd": float(finite.std(ddof=1)) if finite.size > 1 else float("nan"),
            "min": float(finite.min()) if finite.size else float("nan"),
            "max": float(finite.max()) if finite.size else float("nan"),
            "n": int(finite.size),
        })
    out = _out_dir(args)
    write_csv(out / "summary.csv", rows, ["variable", "mean", "sd", "min", "max", "n"])
    write_json(out / "summary.json", _sanitize({r["variable"]: r for r in rows}))
    config = {"input": args.input, "threads": args.threads}
    _write_meta(out, "summary", config, _finish_meta(counts, counts["rows_after_filter"]))
    return 0


# --- wiring -------------------------------------------------------------------

def _config_file(args) -> dict:
    if getattr(args, "config", None):
        return json.loads(Path(args.config).read_text(encoding="utf-8"))
    return {}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_common(parser: argparse.ArgumentParser, needs_input: bool) -> None:
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="parallelism bound; never changes results")
    if needs_input:
        parser.add_argument("--input", required=True, help="input panel CSV")
        parser.add_argument("--schema-json", default=None,
                            help="JSON file mapping dataset names to CSV columns")
        parser.add_argument("--filter", default=None,
                            help="binary sample filter, e.g. high_land_conc=1")
        parser.add_argument("--cluster", default="entity_id", help="cluster id column")
        parser.add_argument("--no-entity-effects", action="store_true")
        parser.add_argument("--no-time-effects", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelkink",
        description="Panel threshold-kink and event-study analyses on entity-year data",
    )
    parser.add_argument("--version", action="version", version=f"panelkink {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic weighted-voting panel")
    _add_common(p, needs_input=False)
    p.add_argument("--config", default=None, help="DGP config JSON file")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("threshold", help="discontinuous threshold regression")
    _add_common(p, needs_input=True)
    p.add_argument("--gamma", type=float, default=None, help="fixed threshold point")
    p.add_argument("--estimate", action="store_true", help="grid-search the threshold")
    p.add_argument("--trim", type=float, default=0.10, help="grid trimming fraction")
    p.add_argument("--no-jump", action="store_true", help="drop the jump indicator")
    p.add_argument("--controls", default=None,
                   help="comma list of control columns, or 'none' (default: standard)")
    p.add_argument("--bootstrap", type=int, default=None,
                   help="linearity bootstrap replications")
    p.set_defaults(func=_cmd_threshold)

    p = sub.add_parser("event-study", help="distributed-lag / event-study estimation")
    _add_common(p, needs_input=True)
    p.add_argument("--leads", type=int, default=6)
    p.add_argument("--lags", type=int, default=6)
    p.add_argument("--regime", type=float, default=None,
                   help="regime split point activating per-lag regime terms")
    p.add_argument("--controls", default=None,
                   help="comma list of control columns, or 'none' (default: none)")
    p.add_argument("--pretrend", type=int, default=None,
                   help="number of extra leads for the pretrend test")
    p.add_argument("--svg", action="store_true", help="emit SVG figures")
    p.set_defaults(func=_cmd_event_study)

    p = sub.add_parser("binscatter", help="covariate-adjusted binned scatterplot")
    _add_common(p, needs_input=True)
    p.add_argument("--y", default="log_spend_pc")
    p.add_argument("--x", default="vote_share")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--split", type=float, default=0.5)
    p.add_argument("--controls", default=None,
                   help="comma list of control columns, or 'none' (default: standard)")
    p.add_argument("--raw", action="store_true", help="no adjustment at all")
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=_cmd_binscatter)

    p = sub.add_parser("montecarlo", help="simulate-estimate replication study")
    _add_common(p, needs_input=False)
    p.add_argument("--config", default=None, help="DGP config JSON file")
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--estimator", default="threshold")
    p.add_argument("--controls", default=None)
    p.set_defaults(func=_cmd_montecarlo)

    p = sub.add_parser("summary", help="per-variable summary statistics")
    _add_common(p, needs_input=True)
    p.set_defaults(func=_cmd_summary)

    return parser


def _error_json(kind: str, exc: Exception) -> str:
    return json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)},
                      sort_keys=True)


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, dispatch, and map errors to exit codes."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(_error_json("usage", exc), file=sys.stderr)
        return EXIT_USAGE
    except PanelDataError as exc:
        print(_error_json("data", exc), file=sys.stderr)
        return EXIT_DATA
    except PanelNumericalError as exc:
        print(_error_json("numerical", exc), file=sys.stderr)
        return EXIT_NUMERICAL
    except PanelKinkError as exc:  # any other package error
        print(_error_json("error", exc), file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv: Sequence[str] | None = None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
