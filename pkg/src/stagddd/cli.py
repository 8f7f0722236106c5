"""Command-line entry point: validate, estimate, event-study and simulate.

Exit codes: 0 success, 1 data/validation error, 2 estimation error, 3 configuration error.
Tables go to stdout (or ``--out``); warnings go to stderr.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .aggregate import AggregationError, event_study, overall_average
from .cells import AttCell
from .estimators import MIN_CELL_MEANS, EstimationError
from .influence import CombinationError
from .inference import MIN_DRAWS, InferenceError, multiplier_bootstrap
from .nuisance import NuisanceError
from .panel import (
    NEVER,
    ColumnSchema,
    PanelDataError,
    PanelDataset,
    cohort_index,
    cohort_label,
    load_csv,
    summarize_cells,
    trim_to_effective_sample,
)
from .pipeline import ComparisonMode, att_gt, parse_comparison_mode
from .simlab.dgp import FAMILIES, NU_VARIANTS, DgpSpec
from .simlab.montecarlo import RECOMMENDED_MIN_REPS, available_estimators, monte_carlo

__all__ = ["ConfigError", "RunConfig", "main", "build_parser", "load_config_file"]

EXIT_OK, EXIT_DATA, EXIT_ESTIMATION, EXIT_CONFIG = 0, 1, 2, 3
ESTIMANDS = ("dr", "ra", "ipw", "nocov")
ESTIMATE_COLUMNS = ("g", "t", "comparison", "estimate", "analytic_se", "boot_se", "ci_lo", "ci_hi", "n_cells", "warnings")
EVENT_COLUMNS = (
    "e", "estimate", "analytic_se", "boot_se", "ci_lo", "ci_hi", "band_lo", "band_hi", "crit_value", "degenerate",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    input: str | None = None
    id_col: str = "id"
    time_col: str = "time"
    outcome_col: str = "y"
    enabling_col: str = "s"
    eligible_col: str = "q"
    covariates: str | None = None
    cluster: str | None = None
    estimand: str = "dr"
    comparison: str = "gmm"
    e_min: int | None = None
    e_max: int | None = None
    alpha: float = 0.05
    B: int = 999
    seed: int = 0
    threads: int = os.cpu_count() or 1
    format: str = "csv"
    out: str | None = None
    estimation_effect: bool = True
    trim: bool = True
    family: str = "two-period"
    dgp: int = 1
    n: int = 1000
    reps: int = 1000
    nu_variant: str = "printed"
    estimators: str | None = None
    level: float = 0.95
    raw_out: str | None = None

    def schema(self) -> ColumnSchema:
        covs = None
        if self.covariates is not None:
            covs = tuple(c.strip() for c in self.covariates.split(",") if c.strip())
        return ColumnSchema(
            id=self.id_col,
            time=self.time_col,
            outcome=self.outcome_col,
            enabling=self.enabling_col,
            eligible=self.eligible_col,
            covariates=covs,
            cluster=self.cluster,
        )

    def check(self) -> "RunConfig":
        if self.command in ("validate", "estimate", "event-study") and not self.input:
            raise ConfigError(f"{self.command} needs an input CSV")
        if self.estimand not in ESTIMANDS:
            raise ConfigError(f"estimand must be one of {ESTIMANDS}")
        try:
            mode = parse_comparison_mode(self.comparison)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if mode.kind == "pooled-baseline" and self.estimand in ("ra", "ipw"):
            raise ConfigError("pooled-baseline supports only the dr and nocov estimands")
        if mode.kind == "pooled-baseline" and self.command == "event-study":
            raise ConfigError("pooled-baseline has no pre-treatment cells; use it with estimate")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.B < MIN_DRAWS:
            raise ConfigError(f"B must be at least {MIN_DRAWS}")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if self.e_min is not None and self.e_max is not None and self.e_min > self.e_max:
            raise ConfigError("e_min exceeds e_max")
        if self.command == "simulate":
            if self.family not in FAMILIES:
                raise ConfigError(f"family must be one of {FAMILIES}")
            if self.nu_variant not in NU_VARIANTS:
                raise ConfigError(f"nu_variant must be one of {NU_VARIANTS}")
            if self.reps < 1:
                raise ConfigError("reps must be positive")
            if not 0 < self.level < 1:
                raise ConfigError("level must lie in (0, 1)")
            if self.estimators:
                known = available_estimators(self.family)
                bad = [e for e in self.estimator_list() if e not in known]
                if bad:
                    raise ConfigError(f"unknown estimators {bad}; choose from {known}")
        return self

    def estimator_list(self):
        if not self.estimators:
            return None
        return [e.strip() for e in self.estimators.split(",") if e.strip()]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    text = value.strip()
    if "bool" in kind:
        if text.lower() in _TRUE:
            return True
        if text.lower() in _FALSE:
            return False
        raise ConfigError(f"{key} expects a boolean, got {value!r}")
    try:
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key} expects a number, got {value!r}") from None
    return text


def load_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use dashes or underscores."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES or key == "command":
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_data_args(p):
    p.add_argument("input", nargs="?", help="long-format panel CSV")
    p.add_argument("--id-col", dest="id_col")
    p.add_argument("--time-col", dest="time_col")
    p.add_argument("--outcome-col", dest="outcome_col")
    p.add_argument("--enabling-col", dest="enabling_col")
    p.add_argument("--eligible-col", dest="eligible_col")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: every x_ column)")
    p.add_argument("--cluster", help="cluster id column for clustered inference")
    p.add_argument("--no-trim", dest="trim", action="store_const", const=False,
                   help="keep periods after the last enabling date when no never-enabled group exists")


def _add_estimation_args(p):
    p.add_argument("--estimand", choices=ESTIMANDS)
    p.add_argument("--comparison", help="gmm, never, cohort:<g> or pooled-baseline")
    p.add_argument("--alpha", type=float)
    p.add_argument("--B", "--boot", dest="B", type=int, help="multiplier bootstrap draws")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--no-estimation-effect", dest="estimation_effect", action="store_const", const=False,
                   help="drop the nuisance estimation-effect terms from the influence function")


def _add_output_args(p):
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out", help="write the table here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stagddd", description="Staggered triple-differences estimation")
    parser.add_argument("--config", help="key=value file; flags override its values")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("validate", help="check a panel and print its cohort structure")
    _add_data_args(p)
    p.add_argument("--estimand", choices=ESTIMANDS)

    p = sub.add_parser("estimate", help="group-time ATT table")
    _add_data_args(p)
    _add_estimation_args(p)
    _add_output_args(p)

    p = sub.add_parser("event-study", help="event-study path with a simultaneous band")
    _add_data_args(p)
    _add_estimation_args(p)
    p.add_argument("--e-min", dest="e_min", type=int)
    p.add_argument("--e-max", dest="e_max", type=int)
    _add_output_args(p)

    p = sub.add_parser("simulate", help="Monte Carlo summary for one simulation design")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--dgp", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--nu-variant", dest="nu_variant", choices=NU_VARIANTS)
    p.add_argument("--estimators", help="comma-separated estimator names")
    p.add_argument("--level", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--raw-out", dest="raw_out", help="also write per-rep records to this CSV")
    _add_output_args(p)
    return parser


def parse_config(argv) -> RunConfig:
    ns = build_parser().parse_args(argv)
    if not ns.command:
        raise ConfigError("a command is required: validate, estimate, event-study or simulate")
    values = load_config_file(ns.config) if ns.config else {}
    for key, value in vars(ns).items():
        if key in _FIELD_TYPES and value is not None:
            values[key] = value
    values["command"] = ns.command
    return RunConfig(**values).check()


def _load(cfg: RunConfig) -> PanelDataset:
    data = load_csv(cfg.input, cfg.schema())
    if cfg.trim and not data.never.any():
        trimmed = trim_to_effective_sample(data)
        if trimmed.T != data.T:
            _note(f"no never-enabled units: dropped {data.T - trimmed.T} trailing period(s) "
                  "and treated the last-enabling cohort as the comparison")
        data = trimmed
    return data


def _note(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def _emit(table: pd.DataFrame, cfg: RunConfig) -> None:
    if cfg.format == "json":
        text = table.to_json(orient="records", indent=2, double_precision=15) + "\n"
    else:
        buf = io.StringIO()
        table.to_csv(buf, index=False, float_format="%.10g")
        text = buf.getvalue()
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)


def _cell_notes(cell: AttCell) -> str:
    diag = cell.diagnostics
    notes = []
    if diag.get("biased_baseline"):
        notes.append("biased baseline")
    extreme = diag.get("n_extreme_ps", 0)
    extreme = sum(extreme) if isinstance(extreme, list) else extreme
    if extreme:
        notes.append(f"{extreme} extreme propensity scores")
    if diag.get("converged") is False:
        notes.append("logit did not converge")
    if diag.get("ridge"):
        notes.append("ridge added to weighting matrix")
    if diag.get("pruned"):
        notes.append(f"pruned comparisons {[cohort_label(g) for g in diag['pruned']]}")
    return "; ".join(notes)


def _period_label(data: PanelDataset, index: int) -> int:
    return int(data.period_labels[index - 1])


def _comparison_mode(data: PanelDataset, cfg: RunConfig) -> ComparisonMode:
    """Parse ``--comparison``, mapping a calendar-period cohort onto the internal period index."""
    mode = parse_comparison_mode(cfg.comparison)
    if mode.kind != "cohort" or mode.cohort is NEVER:
        return mode
    if mode.cohort not in data.period_labels:
        raise ConfigError(f"comparison cohort {mode.cohort} is not a period of this panel")
    return ComparisonMode("cohort", data.period_labels.index(mode.cohort) + 1)


def _cells(data: PanelDataset, cfg: RunConfig) -> list[AttCell]:
    cells = att_gt(
        data,
        cfg.estimand,
        _comparison_mode(data, cfg),
        with_estimation_effect=cfg.estimation_effect,
    )
    if not cells:
        raise EstimationError("no estimable (g, t) cells")
    return cells


def cmd_validate(cfg: RunConfig) -> int:
    data = _load(cfg)
    index = cohort_index(data)
    minimum = MIN_CELL_MEANS if cfg.estimand in ("nocov", "ipw") else max(MIN_CELL_MEANS, data.d + 2)
    out = sys.stdout
    print(f"units: {data.n}  periods: {data.T}  covariates: {data.d}", file=out)
    print("cohort table (S, Q cell counts):", file=out)
    print(summarize_cells(data, index).to_string(index=False), file=out)
    print("estimable (g, t) cells:", file=out)
    grid = index.estimable_cells(post_only=False, min_cell=minimum)
    for g, t in grid:
        comps = ",".join(cohort_label(c) for c in index.usable_comparisons(g, t, minimum)) or "-"
        print(f"  g={_period_label(data, g)} t={_period_label(data, t)} e={t - g} comparisons={comps}", file=out)
    for (s, q), count in sorted(index.cell_counts.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        if 0 < count < minimum:
            _note(f"cell S={cohort_label(s)}, Q={q} has {count} units (< {minimum}); overlap is thin")
    if not index.treated_cohorts:
        _note("no treated cohort (S finite and Q = 1)")
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    data = _load(cfg)
    cells = _cells(data, cfg)
    psi = np.column_stack([c.influence for c in cells])
    est = np.array([c.estimate for c in cells])
    boot = multiplier_bootstrap(
        psi, B=cfg.B, alpha=cfg.alpha, seed=cfg.seed, cluster_ids=data.cluster_ids,
        simultaneous=False, estimates=est, threads=cfg.threads,
    )
    rows = []
    for j, cell in enumerate(cells):
        rows.append(
            {
                "g": _period_label(data, cell.g),
                "t": _period_label(data, cell.t),
                "comparison": cell.comparison_label,
                "estimate": cell.estimate,
                "analytic_se": float(boot.analytic_se[j]),
                "boot_se": float(boot.boot_se[j]),
                "ci_lo": float(boot.ci_lo[j]),
                "ci_hi": float(boot.ci_hi[j]),
                "n_cells": int(cell.diagnostics.get("k", 1)),
                "warnings": _cell_notes(cell),
            }
        )
    _emit(pd.DataFrame(rows, columns=ESTIMATE_COLUMNS), cfg)
    return EXIT_OK


def cmd_event_study(cfg: RunConfig) -> int:
    data = _load(cfg)
    cells = _cells(data, cfg)
    window = None
    if cfg.e_min is not None or cfg.e_max is not None:
        present = sorted({c.t - c.g for c in cells})
        lo = cfg.e_min if cfg.e_min is not None else present[0]
        hi = cfg.e_max if cfg.e_max is not None else present[-1]
        window = [e for e in present if lo <= e <= hi]
        if not window:
            raise AggregationError(f"no event times in [{lo}, {hi}]")
    es = event_study(cells, data, window)
    boot = multiplier_bootstrap(
        es.influence, B=cfg.B, alpha=cfg.alpha, seed=cfg.seed, cluster_ids=data.cluster_ids,
        simultaneous=True, estimates=es.estimates, threads=cfg.threads,
    )
    if boot.crit_floored:
        _note("simultaneous critical value fell below the pointwise quantile and was floored")
    rows = []
    for j, e in enumerate(es.event_times):
        rows.append(
            {
                "e": e,
                "estimate": float(es.estimates[j]),
                "analytic_se": float(boot.analytic_se[j]),
                "boot_se": float(boot.boot_se[j]),
                "ci_lo": float(boot.ci_lo[j]),
                "ci_hi": float(boot.ci_hi[j]),
                "band_lo": float(boot.band_lo[j]),
                "band_hi": float(boot.band_hi[j]),
                "crit_value": boot.crit_value,
                "degenerate": bool(boot.degenerate[j]),
            }
        )
    if any(e >= 0 for e in es.event_times):
        avg, _ = overall_average(es)
        print(f"overall post-treatment average: {avg:.10g}", file=sys.stderr)
    _emit(pd.DataFrame(rows, columns=EVENT_COLUMNS), cfg)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    try:
        spec = DgpSpec(cfg.family, cfg.dgp, cfg.n, cfg.seed, cfg.nu_variant)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.reps < RECOMMENDED_MIN_REPS:
        _note(f"reps={cfg.reps} is below the recommended minimum of {RECOMMENDED_MIN_REPS}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        summary = monte_carlo(spec, cfg.estimator_list(), cfg.reps, cfg.level, cfg.threads)
    for note in summary.notes:
        _note(note)
    if cfg.raw_out:
        summary.records.to_csv(cfg.raw_out, index=False, float_format="%.17g")
    if cfg.format == "json":
        text = summary.to_json() + "\n"
    else:
        buf = io.StringIO()
        summary.table.to_csv(buf, index=False, float_format="%.6f")
        text = buf.getvalue()
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "estimate": cmd_estimate,
    "event-study": cmd_event_study,
    "simulate": cmd_simulate,
}


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    previous = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PanelDataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, AggregationError, InferenceError, CombinationError, NuisanceError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    finally:
        warnings.showwarning = previous


if __name__ == "__main__":
    sys.exit(main())
