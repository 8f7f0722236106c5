"""Single-comparison ATT(g, t) estimators and the biased baselines kept for contrast."""

from __future__ import annotations

import warnings

import numpy as np

from .cells import POOLED, AttCell, Estimand, zero_cell
from .influence import CombinationError, ddd_components, did_component
from .nuisance import (
    Design,
    NuisanceBundle,
    NuisanceCache,
    NuisanceError,
    fit_bundle,
    fit_generalized_pscore,
    fit_outcome_regression,
    score_contributions,
)
from .panel import NEVER, Cohort, CohortIndex, PanelDataset, cohort_index, cohort_label

__all__ = [
    "EstimationError",
    "MIN_CELL_MEANS",
    "att_dr",
    "att_ra",
    "att_ipw",
    "att_no_covariates",
    "att_pooled_nyt_baseline",
    "att_diff_of_drdids_baseline",
    "DIFF_SPLITS",
    "att_3wfe_two_period_baselines",
    "estimate_cell",
]

MIN_CELL_MEANS = 3
EXTREME_PS_BOUND = 1e-3
EXTREME_PS_SHARE = 0.01


class EstimationError(ValueError):
    """An ATT cell cannot be computed on this data."""


def _check_comparison(data: PanelDataset, index: CohortIndex | None, g: int, t: int, g_c: Cohort) -> None:
    index = index or cohort_index(data)
    if g not in index.treated_cohorts:
        raise EstimationError(f"g={g} is not a treated cohort")
    if not 1 <= t <= data.T:
        raise EstimationError(f"t={t} outside 1..{data.T}")
    if g_c not in index.comparisons(g, t):
        raise EstimationError(
            f"g_c={cohort_label(g_c)} is not a valid comparison for ATT({g},{t}); "
            f"valid: {[cohort_label(c) for c in index.comparisons(g, t)]}"
        )


def _check_sizes(data: PanelDataset, cells, minimum: int, masks: dict | None = None) -> dict:
    sizes = {}
    for cell in cells:
        mask = masks[cell] if masks and cell in masks else data.cell_mask(*cell)
        sizes[cell] = int(mask.sum())
        if sizes[cell] < minimum:
            raise EstimationError(
                f"cell S={cohort_label(cell[0])}, Q={cell[1]} has {sizes[cell]} units; need at least {minimum}"
            )
    return sizes


def _overlap_warning(diag: dict, sizes: dict, g: int, t: int) -> None:
    smallest = min(sizes.values())
    count = diag.get("n_extreme_ps", 0)
    if count > EXTREME_PS_SHARE * smallest:
        msg = f"ATT({g},{t}): {count} propensity scores outside [{EXTREME_PS_BOUND}, {1 - EXTREME_PS_BOUND}]"
        diag.setdefault("warnings", []).append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def _covariate_att(
    estimand: Estimand,
    data: PanelDataset,
    g: int,
    t: int,
    g_c: Cohort,
    index: CohortIndex | None,
    bundle: NuisanceBundle | None,
    cache: NuisanceCache | None,
    with_estimation_effect: bool,
) -> AttCell:
    _check_comparison(data, index, g, t, g_c)
    if t == g - 1:
        return zero_cell(g, t, g_c, estimand, data.n)
    cells = [(g, 1), (g, 0), (g_c, 1), (g_c, 0)]
    minimum = MIN_CELL_MEANS if estimand == Estimand.IPW else max(MIN_CELL_MEANS, data.d + 2)
    sizes = _check_sizes(data, cells, minimum)
    if bundle is None:
        try:
            bundle = fit_bundle(
                data,
                g,
                t,
                g_c,
                cache,
                need_regression=estimand != Estimand.IPW,
                need_propensity=estimand != Estimand.RA,
            )
        except NuisanceError as exc:
            raise EstimationError(f"ATT({g},{t}) vs {cohort_label(g_c)}: {exc}") from exc
    design = cache.design if cache is not None else None
    try:
        est, psi, diag = ddd_components(data, bundle, estimand.value, with_estimation_effect, design)
    except CombinationError as exc:
        raise EstimationError(f"ATT({g},{t}) vs {cohort_label(g_c)}: {exc}") from exc
    diag["cell_sizes"] = sizes
    if estimand != Estimand.RA:
        _overlap_warning(diag, sizes, g, t)
    return AttCell(g, t, g_c, estimand, est, psi, diag)


def att_dr(
    data: PanelDataset,
    g: int,
    t: int,
    g_c: Cohort,
    *,
    index: CohortIndex | None = None,
    bundle: NuisanceBundle | None = None,
    cache: NuisanceCache | None = None,
    with_estimation_effect: bool = True,
) -> AttCell:
    """Doubly robust DDD estimate of ATT(g, t) against comparison cohort ``g_c``.

    Sum of three DR DiD terms: the treated cell ``(g, 1)`` against ``(g, 0)``
    and ``(g_c, 1)`` enters with a plus sign, against ``(g_c, 0)`` with a
    minus sign. Comparison units are reweighted by the Hajek-normalized odds
    ``p / (1 - p)`` of the pairwise propensity score and their outcome changes
    are residualized on the cell-specific outcome regression.
    """
    return _covariate_att(Estimand.DR, data, g, t, g_c, index, bundle, cache, with_estimation_effect)


def att_ra(
    data: PanelDataset,
    g: int,
    t: int,
    g_c: Cohort,
    *,
    index: CohortIndex | None = None,
    bundle: NuisanceBundle | None = None,
    cache: NuisanceCache | None = None,
    with_estimation_effect: bool = True,
) -> AttCell:
    """Regression-adjustment DDD: treated mean of ``dY - m(g,0) - m(g_c,1) + m(g_c,0)``."""
    return _covariate_att(Estimand.RA, data, g, t, g_c, index, bundle, cache, with_estimation_effect)


def att_ipw(
    data: PanelDataset,
    g: int,
    t: int,
    g_c: Cohort,
    *,
    index: CohortIndex | None = None,
    bundle: NuisanceBundle | None = None,
    cache: NuisanceCache | None = None,
    with_estimation_effect: bool = True,
) -> AttCell:
    """Hajek-weighted IPW DDD using the three pairwise propensity scores."""
    return _covariate_att(Estimand.IPW, data, g, t, g_c, index, bundle, cache, with_estimation_effect)


def _four_cell(dy: np.ndarray, masks: list[np.ndarray], signs) -> tuple[float, np.ndarray]:
    n = len(dy)
    est = 0.0
    psi = np.zeros(n)
    for sign, mask in zip(signs, masks):
        mu = dy[mask].mean()
        est += sign * mu
        psi += sign * np.where(mask, dy - mu, 0.0) / (mask.sum() / n)
    return float(est), psi


def att_no_covariates(
    data: PanelDataset, g: int, t: int, g_c: Cohort, *, index: CohortIndex | None = None
) -> AttCell:
    """Triple difference of the four cell means of ``Y_t - Y_{g-1}``."""
    _check_comparison(data, index, g, t, g_c)
    if t == g - 1:
        return zero_cell(g, t, g_c, Estimand.NOCOV, data.n)
    cells = [(g, 1), (g, 0), (g_c, 1), (g_c, 0)]
    sizes = _check_sizes(data, cells, MIN_CELL_MEANS)
    dy = data.delta_y(t, g - 1)
    est, psi = _four_cell(dy, [data.cell_mask(*c) for c in cells], (1, -1, -1, 1))
    return AttCell(g, t, g_c, Estimand.NOCOV, est, psi, {"cell_sizes": sizes})


def _baseline_diag(extra: dict | None = None) -> dict:
    diag = {"biased_baseline": True}
    diag.update(extra or {})
    return diag


def att_pooled_nyt_baseline(
    data: PanelDataset,
    g: int,
    t: int,
    *,
    covariates: bool = False,
    with_estimation_effect: bool = True,
) -> AttCell:
    """Baseline that pools every not-yet-enabled unit (``S > t``) into one comparison group.

    Without covariates this is the two-DiD form; with ``covariates=True`` the
    pooled cells replace ``(g_c, 1)`` and ``(g_c, 0)`` in the DR DDD machinery.
    Not valid under DDD parallel trends; kept to demonstrate the bias.
    """
    if t < g:
        raise EstimationError("the pooled baseline is defined for post-treatment periods only")
    pool = data.not_yet_enabled_mask(t)
    if not pool.any():
        raise EstimationError(f"no units with S > {t}")
    q1 = data.eligible == 1
    masks = {(POOLED, 1): pool & q1, (POOLED, 0): pool & ~q1}
    cells = [(g, 1), (g, 0), (POOLED, 1), (POOLED, 0)]
    if not covariates:
        sizes = _check_sizes(data, cells, MIN_CELL_MEANS, masks)
        dy = data.delta_y(t, g - 1)
        members = [data.cell_mask(g, 1), data.cell_mask(g, 0), masks[(POOLED, 1)], masks[(POOLED, 0)]]
        est, psi = _four_cell(dy, members, (1, -1, -1, 1))
        return AttCell(g, t, POOLED, Estimand.POOLED_NYT, est, psi, _baseline_diag({"cell_sizes": sizes}))

    sizes = _check_sizes(data, cells, max(MIN_CELL_MEANS, data.d + 2), masks)
    design = Design.from_data(data)
    props, regs = {}, {}
    try:
        for cell in cells[1:]:
            mask = masks.get(cell)
            regs[cell] = fit_outcome_regression(data, cell, t, g - 1, design, mask)
            props[cell] = fit_generalized_pscore(data, (g, 1), cell, design, mask)
    except NuisanceError as exc:
        raise EstimationError(f"pooled baseline ATT({g},{t}): {exc}") from exc
    bundle = NuisanceBundle(g=g, t=t, g_c=POOLED, propensity=props, regression=regs)
    est, psi, diag = ddd_components(data, bundle, "dr", with_estimation_effect, design, masks)
    diag["cell_sizes"] = sizes
    return AttCell(g, t, POOLED, Estimand.POOLED_NYT, est, psi, _baseline_diag(diag))


DIFF_SPLITS = ("enabling", "eligibility")


def att_diff_of_drdids_baseline(
    data: PanelDataset,
    g: int,
    t: int,
    *,
    with_estimation_effect: bool = True,
    split: str = "enabling",
) -> AttCell:
    """Difference of two DR DiDs, each integrating covariates over its own treated cell.

    ``split="enabling"``: ``Q=1`` vs ``Q=0`` among ``S=g`` minus the same among
    never-enabled units. ``split="eligibility"``: ``S=g`` vs never-enabled
    among ``Q=1`` minus the same among ``Q=0``. Both use the wrong reference
    population for the covariates and are kept as biased baselines.
    """
    if split not in DIFF_SPLITS:
        raise ValueError(f"split must be one of {DIFF_SPLITS}, got {split!r}")
    if not data.never.any():
        raise EstimationError("difference-of-DR-DiDs baseline needs a never-enabled group")
    cells = [(g, 1), (g, 0), (NEVER, 1), (NEVER, 0)]
    sizes = _check_sizes(data, cells, max(MIN_CELL_MEANS, data.d + 2))
    if t == g - 1:
        return AttCell(g, t, NEVER, Estimand.DIFF_DRDID, 0.0, np.zeros(data.n), _baseline_diag())
    design = Design.from_data(data)
    dy = data.delta_y(t, g - 1)
    x = design.matrix
    est = 0.0
    psi = np.zeros(data.n)
    try:
        if split == "enabling":
            pairs = ((1.0, (g, 1), (g, 0)), (-1.0, (NEVER, 1), (NEVER, 0)))
        else:
            pairs = ((1.0, (g, 1), (NEVER, 1)), (-1.0, (g, 0), (NEVER, 0)))
        for sign, treated, comparison in pairs:
            reg = fit_outcome_regression(data, comparison, t, g - 1, design)
            ps = fit_generalized_pscore(data, treated, comparison, design)
            res = did_component(
                dy,
                data.cell_mask(*treated),
                data.cell_mask(*comparison),
                x,
                "dr",
                gamma_reg=reg.gamma_reg,
                gamma_ps=ps.gamma_ps,
                reg_rows=score_contributions(reg, data) if with_estimation_effect else None,
                ps_rows=score_contributions(ps, data) if with_estimation_effect else None,
            )
            est += sign * res.estimate
            psi += sign * res.influence
    except (NuisanceError, CombinationError) as exc:
        raise EstimationError(f"difference-of-DR-DiDs ATT({g},{t}): {exc}") from exc
    diag = _baseline_diag({"cell_sizes": sizes, "split": split})
    return AttCell(g, t, NEVER, Estimand.DIFF_DRDID, est, psi, diag)


def _ols_coef_influence(z: np.ndarray, y: np.ndarray, unit: np.ndarray, n: int, col: int):
    """OLS coefficient ``col`` and its unit-level influence (cluster-by-unit sandwich)."""
    q, r = np.linalg.qr(z)
    diag = np.abs(np.diag(r))
    if diag.min() <= diag.max() * 1e-10:
        raise EstimationError("regression design is collinear")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - z @ beta
    # row col of (Z'Z)^{-1} = e_col' R^{-1} R^{-T}
    r_inv = np.linalg.solve(r, np.eye(r.shape[0]))
    bread_row = (r_inv @ r_inv.T)[col]
    per_row = (z @ bread_row) * resid
    psi = n * np.bincount(unit, weights=per_row, minlength=n)
    return float(beta[col]), psi


def att_3wfe_two_period_baselines(data: PanelDataset, variant: str = "interacted") -> AttCell:
    """Two-period three-way fixed-effects baselines with linear covariates.

    ``interacted`` regresses ``Y_2 - Y_1`` on an intercept, the enabling-group
    dummy, the eligibility dummy, treatment and ``X`` (unit effects differenced
    out). ``mundlak`` runs pooled OLS of ``Y`` on S-by-Q cell dummies, a period
    dummy, S-by-period and Q-by-period dummies, treatment and ``X``. The
    returned influence is the unit-clustered sandwich.
    """
    if data.T != 2:
        raise EstimationError(f"3WFE baselines need exactly two periods (T={data.T})")
    if not set(data.enabling_support()) <= {2, NEVER} or len(data.enabling_support()) != 2:
        raise EstimationError("3WFE baselines need enabling support {2, never}")
    n = data.n
    s2 = (data.enabling == 2) & ~data.never
    q = data.eligible == 1
    d = (s2 & q).astype(float)
    x = data.covariates
    if variant == "interacted":
        z = np.column_stack([np.ones(n), s2, q, d, x])
        y = data.delta_y(2, 1)
        unit = np.arange(n)
        col = 3
    elif variant == "mundlak":
        cells = [s2 & q, s2 & ~q, ~s2 & q, ~s2 & ~q]
        base = np.column_stack([np.column_stack(cells).astype(float), np.zeros((n, 4)), x])
        post = np.column_stack(
            [np.column_stack(cells).astype(float), np.ones(n), s2, q, d, x]
        )
        # columns: 4 cell dummies, post, S2*post, Q*post, D, X
        z = np.vstack([base, post])
        y = np.concatenate([data.outcomes[:, 0], data.outcomes[:, 1]])
        unit = np.concatenate([np.arange(n), np.arange(n)])
        col = 7
    else:
        raise ValueError(f"unknown variant {variant!r}; use 'interacted' or 'mundlak'")
    estimand = Estimand.THREE_WFE if variant == "interacted" else Estimand.MUNDLAK_3WFE
    est, psi = _ols_coef_influence(z, y, unit, n, col)
    return AttCell(2, 2, NEVER, estimand, est, psi, _baseline_diag({"variant": variant}))


_DISPATCH = {Estimand.DR: att_dr, Estimand.RA: att_ra, Estimand.IPW: att_ipw}


def estimate_cell(
    data: PanelDataset,
    g: int,
    t: int,
    g_c: Cohort,
    estimand: Estimand | str,
    *,
    index: CohortIndex | None = None,
    cache: NuisanceCache | None = None,
    with_estimation_effect: bool = True,
) -> AttCell:
    """Dispatch one ``(g, t, g_c)`` cell to the requested estimand."""
    estimand = Estimand(estimand)
    if estimand == Estimand.NOCOV:
        return att_no_covariates(data, g, t, g_c, index=index)
    if estimand not in _DISPATCH:
        raise ValueError(f"{estimand.value} is not a per-comparison estimand")
    return _DISPATCH[estimand](
        data, g, t, g_c, index=index, cache=cache, with_estimation_effect=with_estimation_effect
    )
