"""Parametric working models: subgroup OLS outcome regressions and pairwise logits.

All fits share one standardized design (intercept plus covariates scaled to
mean 0 / sd 1 over the full sample). Coefficients are kept on that scale for
the influence-function algebra and back-transformed for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import expit

from .panel import Cohort, PanelDataset, cohort_label

__all__ = [
    "NuisanceError",
    "SeparationError",
    "Design",
    "OutcomeRegressionFit",
    "PropensityFit",
    "NuisanceBundle",
    "fit_outcome_regression",
    "fit_generalized_pscore",
    "predict_pscore",
    "predict_delta",
    "score_contributions",
    "fit_bundle",
    "NuisanceCache",
]

SEPARATION_BOUND = 30.0
IRLS_TOL = 1e-10
IRLS_MAXITER = 100
PSCORE_EXTREME = 1e-6


class NuisanceError(ValueError):
    """A working model cannot be fitted on the requested subgroup."""


class SeparationError(NuisanceError):
    pass


@dataclass(frozen=True, eq=False)
class Design:
    """Standardized design ``[1, (X - mean) / sd]`` for the full sample."""

    matrix: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    names: tuple[str, ...]

    @classmethod
    def from_covariates(cls, covariates: np.ndarray, names=None) -> "Design":
        covariates = np.asarray(covariates, dtype=float)
        n, d = covariates.shape
        names = tuple(names) if names is not None else tuple(f"x_{j + 1}" for j in range(d))
        means = covariates.mean(axis=0) if d else np.zeros(0)
        scales = covariates.std(axis=0) if d else np.zeros(0)
        flat = [names[j] for j in range(d) if not scales[j] > 0]
        if flat:
            raise NuisanceError(f"covariate column(s) {flat} are constant; drop them")
        z = (covariates - means) / scales if d else np.zeros((n, 0))
        matrix = np.column_stack([np.ones(n), z])
        matrix.setflags(write=False)
        return cls(matrix=matrix, means=means, scales=scales, names=names)

    @classmethod
    def from_data(cls, data: PanelDataset) -> "Design":
        return cls.from_covariates(data.covariates, data.covariate_names)

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    def transform(self, x_rows) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=float))
        if x_rows.shape[1] != len(self.means):
            raise ValueError(f"expected {len(self.means)} covariates, got {x_rows.shape[1]}")
        z = (x_rows - self.means) / self.scales if len(self.means) else x_rows
        return np.column_stack([np.ones(len(x_rows)), z])

    def to_original_scale(self, coef: np.ndarray) -> np.ndarray:
        """Map standardized-scale coefficients to the raw covariate scale."""
        slopes = coef[1:] / self.scales if len(self.scales) else coef[1:]
        intercept = coef[0] - np.dot(slopes, self.means) if len(self.means) else coef[0]
        return np.concatenate([[intercept], slopes])


@dataclass(frozen=True, eq=False)
class OutcomeRegressionFit:
    """OLS of ``Y_t - Y_base`` on the design within the subgroup ``S = s, Q = q``."""

    cell: tuple
    t: int
    base: int
    gamma_reg: np.ndarray
    design_gram_inv: np.ndarray
    n_cell: int
    design: Design = field(repr=False)

    @property
    def coefficients(self) -> np.ndarray:
        return self.design.to_original_scale(self.gamma_reg)


@dataclass(frozen=True, eq=False)
class PropensityFit:
    """Logit for the treated cell ``(g, 1)`` against one comparison cell."""

    treated: tuple
    comparison: tuple
    gamma_ps: np.ndarray
    fisher_info_inv: np.ndarray
    n_pair: int
    converged: bool
    iterations: int
    loglik_path: tuple
    n_extreme: int
    design: Design = field(repr=False)

    @property
    def coefficients(self) -> np.ndarray:
        return self.design.to_original_scale(self.gamma_ps)


@dataclass(frozen=True, eq=False)
class NuisanceBundle:
    """Working-model fits for one ``(g, t, g_c)`` cell, keyed by comparison cell."""

    g: int
    t: int
    g_c: Cohort
    propensity: dict
    regression: dict

    @property
    def base(self) -> int:
        return self.g - 1


def _rank_deficient_columns(x: np.ndarray, names) -> list[str]:
    _, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(x.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    labels = ("(intercept)",) + tuple(names)
    return [labels[j] for j in sorted(piv[rank:])]


def fit_outcome_regression(
    data: PanelDataset,
    cell: tuple,
    t: int,
    base: int,
    design: Design | None = None,
    mask: np.ndarray | None = None,
) -> OutcomeRegressionFit:
    """Least squares of the outcome change on ``(1, X)`` within one subgroup.

    ``mask`` overrides the subgroup membership (used for pooled baselines).
    """
    design = design or Design.from_data(data)
    member = data.cell_mask(*cell) if mask is None else mask
    x = design.matrix[member]
    n_cell, k = x.shape
    if n_cell < k + 1:
        raise NuisanceError(
            f"subgroup S={cohort_label(cell[0])}, Q={cell[1]} has {n_cell} units; need at least {k + 1}"
        )
    dy = data.delta_y(t, base)[member]
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    if diag.min() <= diag.max() * 1e-10:
        cols = _rank_deficient_columns(x, design.names)
        raise NuisanceError(
            f"collinear covariates in subgroup S={cohort_label(cell[0])}, Q={cell[1]}: {cols}"
        )
    gamma = scipy.linalg.solve_triangular(r, q.T @ dy)
    r_inv = scipy.linalg.solve_triangular(r, np.eye(k))
    gram_inv = n_cell * (r_inv @ r_inv.T)
    return OutcomeRegressionFit(
        cell=(cell[0], int(cell[1])),
        t=int(t),
        base=int(base),
        gamma_reg=gamma,
        design_gram_inv=gram_inv,
        n_cell=int(n_cell),
        design=design,
    )


def _loglik(x, y, gamma):
    eta = x @ gamma
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logit(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool, int, tuple]:
    """Logit MLE by IRLS with step halving; returns (coef, averaged-Hessian inverse, ...).

    Raises :class:`SeparationError` once any coefficient passes +/-30.
    """
    n, k = x.shape
    ybar = y.mean()
    gamma = np.zeros(k)
    gamma[0] = np.log(ybar / (1 - ybar))
    ll = _loglik(x, y, gamma)
    path = [ll]
    converged = False
    it = 0
    for it in range(1, IRLS_MAXITER + 1):
        p = expit(x @ gamma)
        w = p * (1 - p)
        hess = (x * w[:, None]).T @ x
        grad = x.T @ (y - p)
        try:
            step = scipy.linalg.solve(hess, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise SeparationError("logit Hessian is singular; covariates separate the two cells") from None
        new_ll = -np.inf
        scale = 1.0
        for _ in range(40):
            cand = gamma + scale * step
            new_ll = _loglik(x, y, cand)
            if new_ll >= ll - 1e-12 * abs(ll):
                break
            scale *= 0.5
        gamma = cand
        change = np.max(np.abs(scale * step))
        if new_ll < ll - 1e-8 * max(1.0, abs(ll)):
            raise NuisanceError("IRLS log-likelihood decreased")
        ll = max(ll, new_ll)
        path.append(new_ll)
        if np.any(np.abs(gamma) > SEPARATION_BOUND):
            raise SeparationError(
                "perfect separation: a logit coefficient diverged past +/-30 on the standardized "
                "scale; reduce the covariate set"
            )
        if change < IRLS_TOL:
            converged = True
            break
    p = expit(x @ gamma)
    hess = (x * (p * (1 - p))[:, None]).T @ x / n
    return gamma, np.linalg.inv(hess), converged, it, tuple(path)


def fit_generalized_pscore(
    data: PanelDataset,
    treated: tuple,
    comparison: tuple,
    design: Design | None = None,
    comparison_mask: np.ndarray | None = None,
) -> PropensityFit:
    """Pairwise logit of membership in ``treated`` versus ``comparison``."""
    design = design or Design.from_data(data)
    t_mask = data.cell_mask(*treated)
    c_mask = data.cell_mask(*comparison) if comparison_mask is None else comparison_mask
    if not t_mask.any() or not c_mask.any():
        raise NuisanceError(
            f"empty cell in propensity pair {cohort_label(treated[0])},{treated[1]} vs "
            f"{cohort_label(comparison[0])},{comparison[1]}"
        )
    pair = t_mask | c_mask
    x = design.matrix[pair]
    if x.shape[0] < design.k + 1:
        raise NuisanceError("propensity subsample smaller than d + 2")
    y = t_mask[pair].astype(float)
    gamma, h_inv, converged, iters, path = fit_logit(x, y)
    p = expit(x @ gamma)
    n_extreme = int(np.sum((p < PSCORE_EXTREME) | (p > 1 - PSCORE_EXTREME)))
    return PropensityFit(
        treated=(treated[0], int(treated[1])),
        comparison=(comparison[0], int(comparison[1])),
        gamma_ps=gamma,
        fisher_info_inv=h_inv,
        n_pair=int(pair.sum()),
        converged=converged,
        iterations=iters,
        loglik_path=path,
        n_extreme=n_extreme,
        design=design,
    )


def predict_pscore(fit: PropensityFit, x_rows) -> np.ndarray:
    """Logistic link on raw covariate rows (no clamping)."""
    return expit(fit.design.transform(x_rows) @ fit.gamma_ps)


def predict_delta(fit: OutcomeRegressionFit, x_rows) -> np.ndarray:
    return fit.design.transform(x_rows) @ fit.gamma_reg


def score_contributions(fit, data: PanelDataset, mask: np.ndarray | None = None) -> np.ndarray:
    """Per-unit M-estimation influence rows (n x k) for an OLS or logit fit.

    Rows vanish outside the fitting subsample; the full-sample mean is zero
    by the first-order conditions. ``mask`` supplies the fitting subsample
    for fits built on custom masks.
    """
    x = fit.design.matrix
    n = x.shape[0]
    if isinstance(fit, OutcomeRegressionFit):
        member = data.cell_mask(*fit.cell) if mask is None else mask
        resid = np.where(member, data.delta_y(fit.t, fit.base) - x @ fit.gamma_reg, 0.0)
        return (x * resid[:, None]) @ fit.design_gram_inv * (n / fit.n_cell)
    if isinstance(fit, PropensityFit):
        t_mask = data.cell_mask(*fit.treated)
        c_mask = data.cell_mask(*fit.comparison) if mask is None else mask
        pair = t_mask | c_mask
        p = expit(x @ fit.gamma_ps)
        resid = np.where(pair, t_mask - p, 0.0)
        return (x * resid[:, None]) @ fit.fisher_info_inv * (n / fit.n_pair)
    raise TypeError(f"unsupported fit type {type(fit).__name__}")


class NuisanceCache:
    """Memo of fits within one dataset; fits for (g, 0) recur across g_c."""

    def __init__(self, data: PanelDataset, design: Design | None = None):
        self.data = data
        self.design = design or Design.from_data(data)
        self._or: dict = {}
        self._ps: dict = {}

    def regression(self, cell: tuple, t: int, base: int) -> OutcomeRegressionFit:
        key = (cell, t, base)
        if key not in self._or:
            self._or[key] = fit_outcome_regression(self.data, cell, t, base, self.design)
        return self._or[key]

    def propensity(self, treated: tuple, comparison: tuple) -> PropensityFit:
        key = (treated, comparison)
        if key not in self._ps:
            self._ps[key] = fit_generalized_pscore(self.data, treated, comparison, self.design)
        return self._ps[key]


def comparison_cells(g: int, g_c: Cohort) -> tuple[tuple, tuple, tuple]:
    """The three comparison cells ``(g, 0), (g_c, 1), (g_c, 0)``."""
    return ((g, 0), (g_c, 1), (g_c, 0))


def fit_bundle(
    data: PanelDataset,
    g: int,
    t: int,
    g_c: Cohort,
    cache: NuisanceCache | None = None,
    need_regression: bool = True,
    need_propensity: bool = True,
) -> NuisanceBundle:
    """Fit the (up to) six working models for one ``(g, t, g_c)`` cell."""
    cache = cache or NuisanceCache(data)
    base = g - 1
    props, regs = {}, {}
    for cell in comparison_cells(g, g_c):
        if need_propensity:
            props[cell] = cache.propensity((g, 1), cell)
        if need_regression:
            regs[cell] = cache.regression(cell, t, base)
    return NuisanceBundle(g=g, t=t, g_c=g_c, propensity=props, regression=regs)
