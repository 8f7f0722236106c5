import numpy as np
import pytest

from stagddd.cells import POOLED, Estimand
from stagddd.estimators import (
    EstimationError,
    att_3wfe_two_period_baselines,
    att_diff_of_drdids_baseline,
    att_dr,
    att_ipw,
    att_no_covariates,
    att_pooled_nyt_baseline,
    att_ra,
    estimate_cell,
)
from stagddd.influence import CombinationError, did_component
from stagddd.panel import NEVER, PanelDataset

from helpers import random_panel


def panel(y, s, q, x=None):
    y = np.asarray(y, dtype=float)
    n, T = y.shape
    x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float).reshape(n, -1)
    return PanelDataset(
        unit_ids=np.arange(n),
        outcomes=y,
        enabling=np.array([0 if v is None else v for v in s]),
        never=np.array([v is None for v in s]),
        eligible=np.asarray(q),
        covariates=x,
        covariate_names=tuple(f"x_{j + 1}" for j in range(x.shape[1])),
        period_labels=tuple(range(1, T + 1)),
    )


# ----- independent oracle for the covariate estimators -------------------------------------------

def _ols(x, y):
    return np.linalg.lstsq(x, y, rcond=None)[0]


def _newton_logit(x, y):
    b = np.zeros(x.shape[1])
    for _ in range(100):
        p = 1 / (1 + np.exp(-x @ b))
        b = b + np.linalg.solve((x * (p * (1 - p))[:, None]).T @ x, x.T @ (y - p))
    return b


def oracle_ddd(data, g, t, g_c, kind):
    """Term-by-term triple difference: three reweighted DiDs against (g,0), (g_c,1), (g_c,0)."""
    x = np.column_stack([np.ones(data.n), data.covariates])
    dy = data.outcomes[:, t - 1] - data.outcomes[:, g - 2]
    treat = data.cell_mask(g, 1)
    total = 0.0
    for sign, cell in ((1, (g, 0)), (1, (g_c, 1)), (-1, (g_c, 0))):
        comp = data.cell_mask(*cell)
        m = x @ _ols(x[comp], dy[comp]) if kind in ("dr", "ra") else np.zeros(data.n)
        treated_term = np.mean(dy[treat] - m[treat])
        if kind == "ra":
            total += sign * treated_term
            continue
        pair = treat | comp
        gam = _newton_logit(x[pair], treat[pair].astype(float))
        odds = np.exp(x[comp] @ gam)
        control_term = np.sum(odds * (dy[comp] - m[comp])) / np.sum(odds)
        total += sign * (treated_term - control_term)
    return total


@pytest.fixture
def twelve_unit_panel():
    # three units per (S, Q) cell, one covariate interleaved across cells so no pair separates
    s = [2, 2, 2, 2, 2, 2, None, None, None, None, None, None]
    q = [1, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0]
    x = [0.1, 1.3, 2.2, 0.4, 1.0, 2.9, 0.2, 1.8, 2.5, 0.7, 1.1, 2.0]
    y1 = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0, 5.0, 8.0]
    y2 = [5.5, 4.0, 7.0, 2.0, 7.5, 13.0, 2.5, 9.0, 7.0, 4.0, 6.0, 12.0]
    return panel(np.column_stack([y1, y2]), s, q, x)


@pytest.mark.parametrize("kind,fn", [("dr", att_dr), ("ipw", att_ipw), ("ra", att_ra)])
def test_twelve_unit_panel_matches_oracle(twelve_unit_panel, kind, fn):
    cell = fn(twelve_unit_panel, 2, 2, NEVER)
    assert cell.estimate == pytest.approx(oracle_ddd(twelve_unit_panel, 2, 2, NEVER, kind), abs=1e-10)


def test_staggered_dr_matches_oracle(stag_cov):
    for g, t, g_c in [(2, 2, 3), (2, 2, NEVER), (2, 3, NEVER), (3, 3, NEVER), (3, 1, NEVER)]:
        for kind, fn in (("dr", att_dr), ("ipw", att_ipw), ("ra", att_ra)):
            got = fn(stag_cov, g, t, g_c).estimate
            assert got == pytest.approx(oracle_ddd(stag_cov, g, t, g_c, kind), abs=1e-8)


# ----- saturated equivalence ----------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_no_covariates_all_estimands_agree(seed):
    rng = np.random.default_rng(seed)
    data = random_panel(rng, n=150, T=4, support=(2, 3, None))
    for g, t, g_c in [(2, 2, 3), (2, 3, NEVER), (3, 4, NEVER), (3, 1, NEVER)]:
        base = att_no_covariates(data, g, t, g_c)
        for fn in (att_dr, att_ra, att_ipw):
            other = fn(data, g, t, g_c)
            assert other.estimate == pytest.approx(base.estimate, abs=1e-10)
            assert np.allclose(other.influence, base.influence, atol=1e-9)


def test_eight_unit_toy_by_hand():
    s = [2, 2, 2, 2, None, None, None, None]
    q = [1, 1, 0, 0, 1, 1, 0, 0]
    y = [[1, 4], [2, 7], [3, 4], [5, 8], [0, 1], [2, 5], [4, 4], [6, 8]]
    # changes: (2,1): 3, 5 -> 4; (2,0): 1, 3 -> 2; (inf,1): 1, 3 -> 2; (inf,0): 0, 2 -> 1
    data = panel(y, s, q)
    with pytest.raises(EstimationError, match="at least 3"):
        att_no_covariates(data, 2, 2, NEVER)
    y3 = y + [[0, 4], [0, 2], [0, 2], [0, 1]]
    s3 = s + [2, 2, None, None]
    q3 = q + [1, 0, 1, 0]
    # (2,1): 3,5,4 -> 4; (2,0): 1,3,2 -> 2; (inf,1): 1,3,2 -> 2; (inf,0): 0,2,1 -> 1
    cell = att_no_covariates(panel(y3, s3, q3), 2, 2, NEVER)
    assert cell.estimate == (4 - 2) - (2 - 1)


def test_equal_cell_means_give_zero(rng):
    data = random_panel(rng, n=60, T=2, effect=0.0)
    flat = data.with_outcomes(np.column_stack([np.zeros(60), np.full(60, 3.0)]))
    assert att_no_covariates(flat, 2, 2, NEVER).estimate == 0.0


def test_influence_mean_zero(stag_cov):
    for fn in (att_dr, att_ra, att_ipw, att_no_covariates):
        cell = fn(stag_cov, 2, 2, 3)
        assert abs(cell.influence.mean()) <= 1e-8 * cell.influence.std()
        assert np.isfinite(cell.estimate)


def test_baseline_period_is_exact_zero(stag_cov):
    cell = att_dr(stag_cov, 3, 2, NEVER)
    assert cell.estimate == 0.0
    assert not cell.influence.any()


def test_invalid_comparison_rejected(stag_cov):
    with pytest.raises(EstimationError, match="not a valid comparison"):
        att_dr(stag_cov, 2, 3, 3)
    with pytest.raises(EstimationError, match="not a treated cohort"):
        att_dr(stag_cov, 4, 3, NEVER)


def test_ra_recovers_planted_effect_without_noise():
    rng = np.random.default_rng(1)
    n = 400
    data = random_panel(rng, n=n, T=2, d=2, support=(2, None))
    beta = np.array([1.5, -2.0])
    shift = {(2, 1): 0.7, (2, 0): -0.3, (NEVER, 1): 1.1, (NEVER, 0): 0.2}
    dy = data.covariates @ beta
    for cell, a in shift.items():
        dy = dy + a * data.cell_mask(*cell)
    dy = dy + 2.5 * data.cell_mask(2, 1)
    clean = data.with_outcomes(np.column_stack([np.zeros(n), dy]))
    # no noise: the estimand is the planted effect plus the triple difference of cell shifts
    planted = 2.5 + (0.7 - (-0.3)) - (1.1 - 0.2)
    assert att_ra(clean, 2, 2, NEVER).estimate == pytest.approx(planted, abs=1e-8)
    assert att_dr(clean, 2, 2, NEVER).estimate == pytest.approx(planted, abs=1e-8)


def test_degenerate_propensity_weights_rejected():
    n = 10
    treated = np.arange(n) < 5
    with pytest.raises(CombinationError, match="weights are all zero"):
        did_component(np.ones(n), treated, ~treated, np.ones((n, 1)), "ipw", gamma_ps=np.array([-800.0]))


# ----- baselines -------------------------------------------------------------------------------

def test_pooled_with_single_comparison_equals_never(rng):
    data = random_panel(rng, n=100, T=3, support=(2, None))
    pooled = att_pooled_nyt_baseline(data, 2, 2)
    never = att_no_covariates(data, 2, 2, NEVER)
    assert pooled.estimate == pytest.approx(never.estimate, abs=1e-12)
    assert pooled.g_c == POOLED
    assert pooled.diagnostics["biased_baseline"]


def test_pooled_three_cohort_by_hand():
    s = [2] * 6 + [3] * 6 + [None] * 6
    q = [1, 1, 1, 0, 0, 0] * 3
    dy = np.array([5, 6, 7, 1, 2, 3, 2, 2, 2, 0, 0, 0, 4, 4, 4, 1, 1, 1], dtype=float)
    data = panel(np.column_stack([np.zeros(18), dy, dy]), s, q)
    # pool = S in {3, inf}: Q=1 mean (2+4)/2 = 3, Q=0 mean (0+1)/2 = 0.5
    assert att_pooled_nyt_baseline(data, 2, 2).estimate == pytest.approx((6 - 2) - (3 - 0.5))
    with pytest.raises(EstimationError, match="post-treatment"):
        att_pooled_nyt_baseline(data, 3, 2)


def test_pooled_needs_not_yet_treated(rng):
    data = random_panel(rng, n=60, T=3, support=(2, 3))
    with pytest.raises(EstimationError, match="no units"):
        att_pooled_nyt_baseline(data, 2, 3)


def test_pooled_with_covariates_runs(stag_cov):
    cell = att_pooled_nyt_baseline(stag_cov, 2, 2, covariates=True)
    assert np.isfinite(cell.estimate)
    assert abs(cell.influence.mean()) <= 1e-8 * cell.influence.std()


def test_difference_of_dids_without_covariates_is_ddd(rng):
    data = random_panel(rng, n=120, T=2)
    for split in ("enabling", "eligibility"):
        dif = att_diff_of_drdids_baseline(data, 2, 2, split=split)
        assert dif.estimate == pytest.approx(att_no_covariates(data, 2, 2, NEVER).estimate, abs=1e-10)


def test_difference_of_dids_unbiased_with_equal_covariate_laws():
    grid = np.linspace(-1, 1, 9)
    x = np.tile(grid, 4)
    cells = [(2, 1), (2, 0), (None, 1), (None, 0)]
    s = [c[0] for c in cells for _ in grid]
    q = [c[1] for c in cells for _ in grid]
    slopes = {0: 1.0, 1: -2.0, 2: 0.5, 3: 3.0}
    dy = np.concatenate([0.3 * k + slopes[k] * grid for k in range(4)])
    dy[: len(grid)] += 4.0
    data = panel(np.column_stack([np.zeros(len(x)), dy]), s, q, x)
    # the covariate law is the same in every cell, so the integration measure does not matter
    truth = oracle_ddd(data, 2, 2, NEVER, "ra")
    for split in ("enabling", "eligibility"):
        assert att_diff_of_drdids_baseline(data, 2, 2, split=split).estimate == pytest.approx(truth, abs=1e-8)


def test_difference_of_dids_needs_never_group(rng):
    data = random_panel(rng, n=60, T=3, support=(2, 3))
    with pytest.raises(EstimationError, match="never-enabled"):
        att_diff_of_drdids_baseline(data, 2, 2)


def test_3wfe_without_covariates_is_ddd(rng):
    data = random_panel(rng, n=120, T=2)
    ddd = att_no_covariates(data, 2, 2, NEVER).estimate
    for variant in ("interacted", "mundlak"):
        assert att_3wfe_two_period_baselines(data, variant).estimate == pytest.approx(ddd, abs=1e-10)


def test_3wfe_recovers_planted_coefficient():
    rng = np.random.default_rng(2)
    data = random_panel(rng, n=300, T=2, d=2)
    s2 = (~data.never).astype(float)
    q = data.eligible.astype(float)
    d = s2 * q
    x = data.covariates
    fd = 1.0 + 0.5 * s2 - 0.8 * q + 3.0 * d + x @ [0.4, -1.2]
    interacted = data.with_outcomes(np.column_stack([np.zeros(data.n), fd]))
    assert att_3wfe_two_period_baselines(interacted, "interacted").estimate == pytest.approx(3.0, abs=1e-8)
    cell_fe = 2.0 * s2 + 1.0 * q - 0.5 * s2 * q
    y1 = cell_fe + x @ [0.7, 0.1]
    y2 = cell_fe + 1.0 + 0.5 * s2 - 0.8 * q + 3.0 * d + x @ [0.7, 0.1]
    mundlak = data.with_outcomes(np.column_stack([y1, y2]))
    assert att_3wfe_two_period_baselines(mundlak, "mundlak").estimate == pytest.approx(3.0, abs=1e-8)


def test_3wfe_needs_two_periods(stag_cov):
    with pytest.raises(EstimationError, match="two periods"):
        att_3wfe_two_period_baselines(stag_cov)


def test_estimate_cell_dispatch(stag_cov):
    assert estimate_cell(stag_cov, 2, 2, 3, "ra").estimand == Estimand.RA
    assert estimate_cell(stag_cov, 2, 2, 3, "nocov").estimand == Estimand.NOCOV
    with pytest.raises(ValueError):
        estimate_cell(stag_cov, 2, 2, 3, "pooled_nyt")


def test_estimation_effect_flag_changes_only_influence(stag_cov):
    full = att_dr(stag_cov, 2, 2, 3)
    plain = att_dr(stag_cov, 2, 2, 3, with_estimation_effect=False)
    assert full.estimate == plain.estimate
    assert not np.allclose(full.influence, plain.influence)
