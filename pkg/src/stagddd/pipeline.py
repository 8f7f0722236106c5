"""Group-time ATT tables over every estimable (g, t) for one comparison mode."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .cells import GMM, AttCell, Estimand, zero_cell
from .estimators import MIN_CELL_MEANS, EstimationError, att_pooled_nyt_baseline, estimate_cell
from .influence import gmm_combine
from .nuisance import Design, NuisanceCache
from .panel import NEVER, CohortIndex, PanelDataset, cohort_index, parse_cohort

__all__ = ["ComparisonMode", "parse_comparison_mode", "att_gt"]


@dataclass(frozen=True)
class ComparisonMode:
    kind: str  # gmm, never, cohort, pooled-baseline
    cohort: object = None

    @property
    def label(self) -> str:
        return f"cohort:{self.cohort}" if self.kind == "cohort" else self.kind


def parse_comparison_mode(text: str) -> ComparisonMode:
    text = text.strip().lower()
    if text in ("gmm", "never", "pooled-baseline"):
        return ComparisonMode(text)
    if text.startswith("cohort:"):
        return ComparisonMode("cohort", parse_cohort(text.split(":", 1)[1]))
    raise ValueError(f"comparison must be gmm, never, cohort:<g> or pooled-baseline, got {text!r}")


def _minimum(data: PanelDataset, estimand: Estimand) -> int:
    if estimand in (Estimand.NOCOV, Estimand.IPW):
        return MIN_CELL_MEANS
    return max(MIN_CELL_MEANS, data.d + 2)


def att_gt(
    data: PanelDataset,
    estimand: str = "dr",
    comparison: str | ComparisonMode = "gmm",
    *,
    with_estimation_effect: bool = True,
    include_pre: bool = True,
    index: CohortIndex | None = None,
) -> list[AttCell]:
    """One AttCell per estimable ``(g, t)``, ordered by ``(g, t)``.

    ``gmm`` combines every usable comparison cohort, ``never`` and
    ``cohort:<g>`` fix one, ``pooled-baseline`` runs the biased pooled
    not-yet-treated estimator (post-treatment only). Cells whose comparison
    cells are too small are skipped with a warning.
    """
    mode = comparison if isinstance(comparison, ComparisonMode) else parse_comparison_mode(comparison)
    estimand = Estimand(estimand)
    index = index or cohort_index(data)
    minimum = _minimum(data, estimand)
    if mode.kind == "never" and NEVER not in index.enabling_support:
        raise EstimationError("comparison=never requires never-enabled units")

    cache = None
    if estimand in (Estimand.DR, Estimand.RA, Estimand.IPW):
        cache = NuisanceCache(data, Design.from_data(data))

    out: list[AttCell] = []
    for g in index.treated_cohorts:
        for t in range(1, data.T + 1):
            if t < g and not include_pre:
                continue
            if mode.kind == "pooled-baseline":
                if t < g:
                    continue
                use_cov = data.d > 0 and estimand != Estimand.NOCOV
                out.append(
                    att_pooled_nyt_baseline(
                        data, g, t, covariates=use_cov, with_estimation_effect=with_estimation_effect
                    )
                )
                continue
            candidates = index.comparisons(g, t)
            if mode.kind == "never":
                candidates = tuple(c for c in candidates if c is NEVER)
            elif mode.kind == "cohort":
                candidates = tuple(c for c in candidates if c == mode.cohort)
            if not candidates:
                continue
            if t == g - 1:
                tag = {"gmm": GMM, "never": NEVER}.get(mode.kind, mode.cohort)
                out.append(zero_cell(g, t, tag, estimand, data.n))
                continue
            usable = tuple(c for c in index.usable_comparisons(g, t, minimum) if c in candidates)
            own = min(index.cell_counts.get((g, 1), 0), index.cell_counts.get((g, 0), 0))
            if not usable or own < minimum:
                warnings.warn(f"ATT({g},{t}) skipped: cells below {minimum} units", RuntimeWarning, stacklevel=2)
                continue
            cells = [
                estimate_cell(
                    data, g, t, gc, estimand, index=index, cache=cache, with_estimation_effect=with_estimation_effect
                )
                for gc in usable
            ]
            out.append(gmm_combine(cells) if mode.kind == "gmm" else cells[0])
    return out
