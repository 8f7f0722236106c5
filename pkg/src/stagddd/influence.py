"""Influence functions for the three-DiD estimators and GMM-optimal combination.

Each DDD estimate is a signed sum of three two-cell DiD components, treated
cell ``(g, 1)`` against ``(g, 0)`` (+), ``(g_c, 1)`` (+) and ``(g_c, 0)`` (-).
A component's influence function follows the usual M-estimation template:
treated part minus weighted comparison part minus the first-step
estimation effect of the outcome regression and/or propensity score.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from .cells import GMM, WEIGHTED, AttCell, Estimand
from .nuisance import Design, NuisanceBundle, comparison_cells, score_contributions
from .panel import PanelDataset

__all__ = [
    "COMPONENT_SIGNS",
    "ComponentResult",
    "did_component",
    "ddd_components",
    "influence_dr",
    "InfluenceMatrix",
    "OmegaHat",
    "GmmWeights",
    "CombinationError",
    "estimate_omega",
    "gmm_weights",
    "gmm_combine",
    "weighted_combine",
]

COMPONENT_SIGNS = (1.0, 1.0, -1.0)
CONDITION_LIMIT = 1e10
WEIGHT_FLOOR = 1e-12


class CombinationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ComponentResult:
    estimate: float
    influence: np.ndarray
    n_extreme: int = 0


def did_component(
    dy: np.ndarray,
    treated: np.ndarray,
    comparison: np.ndarray,
    x: np.ndarray,
    estimand: str,
    gamma_reg: np.ndarray | None = None,
    gamma_ps: np.ndarray | None = None,
    reg_rows: np.ndarray | None = None,
    ps_rows: np.ndarray | None = None,
) -> ComponentResult:
    """Two-cell panel DiD (treated vs one comparison cell) and its influence function.

    Parameters
    ----------
    dy : ndarray
        Outcome change ``Y_t - Y_{g-1}`` for all n units.
    treated, comparison : ndarray of bool
        Full-sample membership of the two cells.
    x : ndarray
        Standardized design ``(n, k)``.
    estimand : {"dr", "ra", "ipw"}
    gamma_reg, gamma_ps : ndarray, optional
        Working-model coefficients on the standardized design.
    reg_rows, ps_rows : ndarray, optional
        First-step influence rows; ``None`` switches the corresponding
        estimation-effect correction off.
    """
    n = len(dy)
    w_treat = treated.astype(float)
    mean_treat = w_treat.mean()
    if mean_treat == 0:
        raise CombinationError("treated cell is empty")
    use_reg = estimand in ("dr", "ra")
    use_ps = estimand in ("dr", "ipw")
    out_delta = x @ gamma_reg if use_reg else np.zeros(n)
    resid = dy - out_delta

    eta_treat = np.sum(w_treat * resid) / np.sum(w_treat)
    inf_treat = w_treat * (resid - eta_treat)
    if use_reg and reg_rows is not None:
        inf_treat = inf_treat - reg_rows @ np.mean(w_treat[:, None] * x, axis=0)
    inf_treat = inf_treat / mean_treat

    if estimand == "ra":
        return ComponentResult(float(eta_treat), inf_treat)

    if use_ps:
        ps = expit(x @ gamma_ps)
        n_extreme = int(np.sum(comparison & ((ps < 1e-3) | (ps > 1 - 1e-3))))
        w_cont = np.where(comparison, ps / (1.0 - ps), 0.0)
    else:
        n_extreme = 0
        w_cont = comparison.astype(float)
    mean_cont = w_cont.mean()
    if not mean_cont > WEIGHT_FLOOR:
        raise CombinationError("comparison-cell weights are all zero (degenerate propensity score)")
    eta_cont = np.sum(w_cont * resid) / np.sum(w_cont)
    inf_cont = w_cont * (resid - eta_cont)
    if use_ps and ps_rows is not None:
        m2 = np.mean((w_cont * (resid - eta_cont))[:, None] * x, axis=0)
        inf_cont = inf_cont + ps_rows @ m2
    if use_reg and reg_rows is not None:
        inf_cont = inf_cont - reg_rows @ np.mean(w_cont[:, None] * x, axis=0)
    inf_cont = inf_cont / mean_cont
    return ComponentResult(float(eta_treat - eta_cont), inf_treat - inf_cont, n_extreme)


def ddd_components(
    data: PanelDataset,
    bundle: NuisanceBundle,
    estimand: str = "dr",
    with_estimation_effect: bool = True,
    design: Design | None = None,
    masks: dict | None = None,
) -> tuple[float, np.ndarray, dict]:
    """Signed sum of the three DiD components for one ``(g, t, g_c)``.

    ``masks`` maps comparison-cell keys to membership vectors for cells that
    are not a single ``(S, Q)`` pair (the pooled baseline). Returns the
    estimate, the n-vector influence function and diagnostics.
    """
    masks = masks or {}
    g, t = bundle.g, bundle.t
    dy = data.delta_y(t, g - 1)
    treated = data.cell_mask(g, 1)
    design = design or _bundle_design(bundle) or Design.from_data(data)
    x = design.matrix
    total = 0.0
    psi = np.zeros(data.n)
    diag = {"n_extreme_ps": 0, "cell_sizes": {(g, 1): int(treated.sum())}, "converged": True}
    for sign, cell in zip(COMPONENT_SIGNS, comparison_cells(g, bundle.g_c)):
        comp = masks[cell] if cell in masks else data.cell_mask(*cell)
        fit_mask = masks.get(cell)
        diag["cell_sizes"][cell] = int(comp.sum())
        or_fit = bundle.regression.get(cell)
        ps_fit = bundle.propensity.get(cell)
        if estimand in ("dr", "ra") and or_fit is None:
            raise CombinationError(f"missing outcome regression for cell {cell}")
        if estimand in ("dr", "ipw") and ps_fit is None:
            raise CombinationError(f"missing propensity score for cell {cell}")
        reg_rows = ps_rows = None
        if with_estimation_effect:
            if or_fit is not None and estimand in ("dr", "ra"):
                reg_rows = score_contributions(or_fit, data, fit_mask)
            if ps_fit is not None and estimand in ("dr", "ipw"):
                ps_rows = score_contributions(ps_fit, data, fit_mask)
        res = did_component(
            dy,
            treated,
            comp,
            x,
            estimand,
            gamma_reg=None if or_fit is None else or_fit.gamma_reg,
            gamma_ps=None if ps_fit is None else ps_fit.gamma_ps,
            reg_rows=reg_rows,
            ps_rows=ps_rows,
        )
        total += sign * res.estimate
        psi += sign * res.influence
        diag["n_extreme_ps"] += res.n_extreme
        if ps_fit is not None and not ps_fit.converged:
            diag["converged"] = False
    return total, psi, diag


def _bundle_design(bundle: NuisanceBundle) -> Design | None:
    for fit in list(bundle.regression.values()) + list(bundle.propensity.values()):
        return fit.design
    return None


def influence_dr(
    data: PanelDataset, bundle: NuisanceBundle, with_estimation_effect: bool = True
) -> np.ndarray:
    """Influence function of the DR DDD estimate for one ``(g, t, g_c)``."""
    return ddd_components(data, bundle, "dr", with_estimation_effect)[1]


@dataclass(frozen=True, eq=False)
class InfluenceMatrix:
    """``(n, k)`` stack of per-comparison influence columns for one (g, t)."""

    values: np.ndarray
    labels: tuple
    estimand: Estimand | None = None

    @classmethod
    def from_cells(cls, cells: list[AttCell]) -> "InfluenceMatrix":
        if not cells:
            raise CombinationError("no cells to combine")
        if any(c.influence is None for c in cells):
            raise CombinationError("every cell needs an influence function")
        return cls(
            values=np.column_stack([c.influence for c in cells]),
            labels=tuple(c.g_c for c in cells),
            estimand=cells[0].estimand,
        )

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class OmegaHat:
    """``psi' psi / n`` over retained (non-collinear) columns."""

    matrix: np.ndarray
    mask: np.ndarray
    n: int

    @property
    def k_effective(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class GmmWeights:
    """Weights over all k columns (pruned columns get exactly 0)."""

    weights: np.ndarray
    variance: float
    ridge: float = 0.0
    labels: tuple = ()


def _condition(m: np.ndarray) -> float:
    eig = np.linalg.eigvalsh(m)
    if eig[0] <= 0:
        return np.inf
    return float(eig[-1] / eig[0])


def estimate_omega(infl: InfluenceMatrix) -> OmegaHat:
    """Covariance of the influence columns with greedy collinearity pruning.

    Columns are visited in order and dropped when adding them pushes the
    condition number of the retained block above 1e10.
    """
    psi = infl.values
    n, k = psi.shape
    if n <= k:
        raise CombinationError(f"need more units than comparisons (n={n}, k={k})")
    full = psi.T @ psi / n
    full = (full + full.T) / 2
    mask = np.zeros(k, dtype=bool)
    for j in range(k):
        trial = mask.copy()
        trial[j] = True
        block = full[np.ix_(trial, trial)]
        if _condition(block) <= CONDITION_LIMIT:
            mask = trial
    if not mask.any():
        raise CombinationError("all influence columns are degenerate; nothing to combine")
    return OmegaHat(matrix=full[np.ix_(mask, mask)], mask=mask, n=n)


def gmm_weights(omega: OmegaHat, labels: tuple = ()) -> GmmWeights:
    """``Omega^-1 1 / (1' Omega^-1 1)`` via Cholesky; ridge only as a fallback."""
    m = omega.matrix
    k = m.shape[0]
    ones = np.ones(k)
    ridge = 0.0
    try:
        factor = scipy.linalg.cho_factor(m)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * np.trace(m) / k
        warnings.warn(f"Omega not positive definite; adding ridge {ridge:.3g}", RuntimeWarning, stacklevel=2)
        try:
            factor = scipy.linalg.cho_factor(m + ridge * np.eye(k))
        except np.linalg.LinAlgError:
            raise CombinationError("Omega is singular even after ridge") from None
    solved = scipy.linalg.cho_solve(factor, ones)
    denom = float(ones @ solved)
    full = np.zeros(len(omega.mask))
    full[omega.mask] = solved / denom
    return GmmWeights(weights=full, variance=1.0 / denom, ridge=ridge, labels=labels)


def _check_cells(cells: list[AttCell]) -> None:
    if not cells:
        raise CombinationError("no cells to combine")
    key = (cells[0].g, cells[0].t, cells[0].estimand)
    for c in cells:
        if (c.g, c.t, c.estimand) != key:
            raise CombinationError("cells must share (g, t) and estimand")
    labels = [c.g_c for c in cells]
    if len(set(labels)) != len(labels):
        raise CombinationError("duplicate comparison cohorts")


def gmm_combine(cells: list[AttCell], omega: OmegaHat | None = None) -> AttCell:
    """Minimum-variance combination of per-comparison estimates of one ATT(g, t)."""
    _check_cells(cells)
    infl = InfluenceMatrix.from_cells(cells)
    if len(cells) == 1:
        only = cells[0]
        diag = dict(only.diagnostics, gmm_weights={only.g_c: 1.0}, k=1, k_effective=1, ridge=0.0)
        return AttCell(only.g, only.t, GMM, only.estimand, only.estimate, only.influence, diag)
    omega = omega or estimate_omega(infl)
    w = gmm_weights(omega, infl.labels)
    estimates = np.array([c.estimate for c in cells])
    diag = {
        "gmm_weights": dict(zip(infl.labels, w.weights.tolist())),
        "k": infl.k,
        "k_effective": omega.k_effective,
        "pruned": [lab for lab, keep in zip(infl.labels, omega.mask) if not keep],
        "ridge": w.ridge,
        "components": {c.g_c: (c.estimate, c.se) for c in cells},
    }
    for c in cells:
        for key in ("n_extreme_ps", "warnings"):
            if key in c.diagnostics:
                diag.setdefault(key, [])
                diag[key] = diag[key] + [c.diagnostics[key]]
    return AttCell(
        g=cells[0].g,
        t=cells[0].t,
        g_c=GMM,
        estimand=cells[0].estimand,
        estimate=float(w.weights @ estimates),
        influence=infl.values @ w.weights,
        diagnostics=diag,
    )


def weighted_combine(cells: list[AttCell], weights) -> AttCell:
    """Linear combination with user weights that sum to one."""
    _check_cells(cells)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(cells),):
        raise CombinationError("one weight per cell required")
    if abs(weights.sum() - 1.0) > 1e-10:
        raise CombinationError(f"weights must sum to 1 (got {weights.sum():.12g})")
    infl = InfluenceMatrix.from_cells(cells)
    estimates = np.array([c.estimate for c in cells])
    return AttCell(
        g=cells[0].g,
        t=cells[0].t,
        g_c=WEIGHTED,
        estimand=cells[0].estimand,
        estimate=float(weights @ estimates),
        influence=infl.values @ weights,
        diagnostics={"weights": dict(zip(infl.labels, weights.tolist()))},
    )
