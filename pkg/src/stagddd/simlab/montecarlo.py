"""Monte Carlo harness: repeated generate-estimate loops summarized into bias/RMSE/coverage/ALCI tables."""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
from scipy.stats import norm

from ..cells import AttCell
from ..estimators import (
    att_3wfe_two_period_baselines,
    att_diff_of_drdids_baseline,
    att_dr,
    estimate_cell,
)
from ..influence import gmm_combine
from ..nuisance import Design, NuisanceCache
from ..panel import NEVER, PanelDataset, cohort_index, cohort_label
from ..pipeline import att_gt
from .dgp import DgpSpec, generate, make_rng, true_effects

__all__ = [
    "ESTIMATORS",
    "DEFAULT_ESTIMATORS",
    "RECOMMENDED_MIN_REPS",
    "McSummary",
    "available_estimators",
    "monte_carlo",
    "target_label",
]

RECOMMENDED_MIN_REPS = 50
SUMMARY_COLUMNS = ("estimator", "target", "truth", "Bias", "RMSE", "Cov.95", "ALCI", "reps", "failures", "failure_rate")

EstimatorFn = Callable[[PanelDataset], dict]


def target_label(g: int, t: int, g_c=None) -> str:
    base = f"ATT({g},{t})"
    return base if g_c is None else f"{base}|gc={cohort_label(g_c)}"


def _two_period_dr(data):
    return {target_label(2, 2): att_dr(data, 2, 2, NEVER)}


def _two_period_3wfe(data):
    return {target_label(2, 2): att_3wfe_two_period_baselines(data, "interacted")}


def _two_period_m3wfe(data):
    return {target_label(2, 2): att_3wfe_two_period_baselines(data, "mundlak")}


def _two_period_dif(data):
    return {target_label(2, 2): att_diff_of_drdids_baseline(data, 2, 2)}


def _two_period_dif_eligibility(data):
    return {target_label(2, 2): att_diff_of_drdids_baseline(data, 2, 2, split="eligibility")}


def _post_cells(estimand: str, comparison: str) -> EstimatorFn:
    def run(data):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cells = att_gt(data, estimand, comparison, include_pre=False)
        return {target_label(c.g, c.t): c for c in cells if c.t >= c.g}

    return run


def _dr_per_comparison(data):
    """Every post-treatment att_dr cell, one entry per comparison cohort, plus their GMM combination."""
    index = cohort_index(data)
    cache = NuisanceCache(data, Design.from_data(data))
    out = {}
    for g, t in index.estimable_cells(post_only=True):
        cells = [estimate_cell(data, g, t, gc, "dr", index=index, cache=cache) for gc in index.comparisons(g, t)]
        for cell in cells:
            out[target_label(g, t, cell.g_c)] = cell
        out[target_label(g, t)] = gmm_combine(cells)
    return out


ESTIMATORS: dict[str, dict[str, EstimatorFn]] = {
    "two-period": {
        "DRDDD": _two_period_dr,
        "3WFE": _two_period_3wfe,
        "M-3WFE": _two_period_m3wfe,
        "DRDID-DIF": _two_period_dif,
        "DRDID-DIF-ELIG": _two_period_dif_eligibility,
    },
    "staggered-nocov": {
        "DDD_gmm": _post_cells("nocov", "gmm"),
        "DDD_nev": _post_cells("nocov", "never"),
        "DDD_cs-nyt": _post_cells("nocov", "pooled-baseline"),
    },
    "staggered-cov": {
        "DRDDD_gmm": _post_cells("dr", "gmm"),
        "DRDDD_nev": _post_cells("dr", "never"),
        "DRDDD_cs-nyt": _post_cells("dr", "pooled-baseline"),
        "DRDDD_cells": _dr_per_comparison,
    },
}

DEFAULT_ESTIMATORS = {
    "two-period": ("DRDDD", "3WFE", "M-3WFE", "DRDID-DIF"),
    "staggered-nocov": ("DDD_gmm", "DDD_nev", "DDD_cs-nyt"),
    "staggered-cov": ("DRDDD_gmm", "DRDDD_nev", "DRDDD_cs-nyt"),
}


def available_estimators(family: str) -> tuple[str, ...]:
    return tuple(ESTIMATORS[family])


def _truth_for(target: str, effects: dict) -> float:
    head = target.split("|", 1)[0]
    g, t = (int(v) for v in head[4:-1].split(","))
    return float(effects.get((g, t), 0.0))


def _cell_rows(rep, name, cells, z):
    rows = []
    for target, cell in cells.items():
        se = cell.se
        rows.append(
            {
                "rep": rep,
                "estimator": name,
                "target": target,
                "estimate": cell.estimate,
                "se": se,
                "ci_lo": cell.estimate - z * se,
                "ci_hi": cell.estimate + z * se,
                "error": None,
            }
        )
    return rows


def _run_rep(spec: DgpSpec, rep: int, seed_seq, names, z: float) -> list[dict]:
    data = generate(spec, make_rng(seed_seq))
    rows = []
    for name in names:
        try:
            cells: dict[str, AttCell] = ESTIMATORS[spec.family][name](data)
            rows.extend(_cell_rows(rep, name, cells, z))
        except Exception as exc:  # noqa: BLE001 - any estimator failure is recorded, not fatal
            rows.append({"rep": rep, "estimator": name, "target": None, "error": f"{type(exc).__name__}: {exc}"})
    return rows


@dataclass(frozen=True, eq=False)
class McSummary:
    """Per estimator and target: bias, RMSE, empirical coverage, average CI length.

    ``records`` keeps one row per (rep, estimator, target) with the point
    estimate, analytic se and interval; failed estimations carry an error
    string instead.
    """

    spec: DgpSpec
    reps: int
    level: float
    table: pd.DataFrame
    records: pd.DataFrame
    notes: tuple = field(default_factory=tuple)

    def row(self, estimator: str, target: str = "ATT(2,2)") -> pd.Series:
        hit = self.table[(self.table.estimator == estimator) & (self.table.target == target)]
        if hit.empty:
            raise KeyError(f"no summary row for {estimator} / {target}")
        return hit.iloc[0]

    def estimates(self, estimator: str, target: str = "ATT(2,2)") -> np.ndarray:
        rec = self.records
        ok = (rec.estimator == estimator) & (rec.target == target) & rec.error.isna()
        return rec.loc[ok].sort_values("rep").estimate.to_numpy(dtype=float)

    def to_csv(self, path: str | Path, raw_path: str | Path | None = None) -> None:
        self.table.to_csv(path, index=False, float_format="%.6f")
        if raw_path is not None:
            self.records.to_csv(raw_path, index=False, float_format="%.17g")

    def to_dict(self) -> dict:
        return {
            "spec": {
                "family": self.spec.family,
                "dgp_id": self.spec.dgp_id,
                "n": self.spec.n,
                "seed": self.spec.seed,
                "nu_variant": self.spec.nu_variant,
            },
            "reps": self.reps,
            "level": self.level,
            "rows": json.loads(self.table.to_json(orient="records")),
            "notes": list(self.notes),
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _summarize(records: pd.DataFrame, names, effects: dict, reps: int, level: float):
    cov_col = "Cov.95" if math.isclose(level, 0.95) else f"Cov.{level * 100:g}"
    rows, notes = [], []
    for name in names:
        mine = records[records.estimator == name]
        failed_reps = int(mine.loc[mine.error.notna(), "rep"].nunique())
        good = mine[mine.error.isna()]
        for target in sorted(good.target.unique()):
            sub = good[good.target == target]
            truth = _truth_for(target, effects)
            err = sub.estimate.to_numpy(dtype=float) - truth
            width = (sub.ci_hi - sub.ci_lo).to_numpy(dtype=float)
            scale = max(1.0, abs(truth))
            covered = (sub.ci_lo.to_numpy() <= truth + 1e-12 * scale) & (truth - 1e-12 * scale <= sub.ci_hi.to_numpy())
            if np.all(width == 0) and np.all(np.abs(err) <= 1e-12 * scale):
                notes.append(f"{name} {target}: zero-width intervals at the truth; coverage reported as 1")
            missing = reps - len(sub)
            rows.append(
                {
                    "estimator": name,
                    "target": target,
                    "truth": truth,
                    "Bias": float(err.mean()),
                    "RMSE": float(np.sqrt(np.mean(err**2))),
                    cov_col: float(covered.mean()),
                    "ALCI": float(width.mean()),
                    "reps": int(len(sub)),
                    "failures": int(max(missing, failed_reps)),
                    "failure_rate": float(max(missing, failed_reps)) / reps,
                }
            )
        if good.empty:
            rows.append(
                {
                    "estimator": name, "target": None, "truth": np.nan, "Bias": np.nan, "RMSE": np.nan,
                    cov_col: np.nan, "ALCI": np.nan, "reps": 0, "failures": reps, "failure_rate": 1.0,
                }
            )
    columns = [c if c != "Cov.95" else cov_col for c in SUMMARY_COLUMNS]
    return pd.DataFrame(rows, columns=columns), notes


def monte_carlo(
    spec: DgpSpec,
    estimators=None,
    reps: int = 1000,
    level: float = 0.95,
    threads: int = 1,
) -> McSummary:
    """Run ``reps`` independent generate-and-estimate replications of ``spec``.

    Replication ``r`` draws from the ``r``-th child of ``SeedSequence(spec.seed)``,
    so the summary does not depend on ``threads``. Intervals are pointwise
    normal intervals with analytic standard errors.
    """
    names = tuple(estimators or DEFAULT_ESTIMATORS[spec.family])
    unknown = [e for e in names if e not in ESTIMATORS[spec.family]]
    if unknown:
        raise ValueError(f"unknown estimators for {spec.family}: {unknown}; choose from {available_estimators(spec.family)}")
    if reps < 1:
        raise ValueError("reps must be positive")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if reps < RECOMMENDED_MIN_REPS:
        warnings.warn(
            f"reps={reps} is below the recommended minimum of {RECOMMENDED_MIN_REPS}", UserWarning, stacklevel=2
        )

    z = float(norm.ppf(0.5 + level / 2))
    children = np.random.SeedSequence(spec.seed).spawn(reps)
    jobs = list(enumerate(children))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda job: _run_rep(spec, job[0], job[1], names, z), jobs))
    else:
        chunks = [_run_rep(spec, r, s, names, z) for r, s in jobs]

    columns = ["rep", "estimator", "target", "estimate", "se", "ci_lo", "ci_hi", "error"]
    records = pd.DataFrame([row for chunk in chunks for row in chunk], columns=columns)
    table, notes = _summarize(records, names, true_effects(spec.family), reps, level)
    return McSummary(spec=spec, reps=reps, level=level, table=table, records=records, notes=tuple(notes))
