import warnings

import numpy as np
import pytest

from stagddd import att_gt
from stagddd.aggregate import AggregationError, cohort_share, event_study, overall_average
from stagddd.cells import AttCell, Estimand
from stagddd.panel import NEVER

from helpers import random_panel


def _cell(g, t, value, n, influence=None):
    psi = np.zeros(n) if influence is None else influence
    return AttCell(g=g, t=t, g_c=NEVER, estimand=Estimand.DR, estimate=float(value), influence=psi)


def test_single_cohort_has_unit_share_and_zero_xi(rng):
    data = random_panel(rng, n=120, T=3, support=(2, None))
    share, xi = cohort_share(data, 2, 0)
    assert share == 1.0
    assert np.all(xi == 0)


def test_equal_cohorts_split_evenly():
    rng = np.random.default_rng(0)
    data = random_panel(rng, n=400, T=4, support=(2, 3, None), min_cell=3)
    G = np.where((~data.never) & (data.eligible == 1), data.enabling, 0)
    for e in (0, 1):
        share, xi = cohort_share(data, 2, e, [2, 3])
        counts = {g: int((G == g).sum()) for g in (2, 3)}
        assert share == pytest.approx(counts[2] / (counts[2] + counts[3]), abs=1e-15)
        assert abs(xi.mean()) < 1e-12


def test_share_matches_counting(rng):
    data = random_panel(rng, n=500, T=5, support=(2, 3, 4, None))
    G = np.where((~data.never) & (data.eligible == 1), data.enabling, 0)
    for e in (0, 1, 2):
        pool = [g for g in (2, 3, 4) if g + e <= 5]
        direct = {g: (G == g).sum() / np.isin(G, pool).sum() for g in pool}
        got = {g: cohort_share(data, g, e)[0] for g in pool}
        assert got == pytest.approx(direct, abs=1e-15)
        assert sum(got.values()) == pytest.approx(1.0, abs=1e-15)
        for g in pool:
            assert abs(cohort_share(data, g, e)[1].mean()) < 1e-12


def test_constant_effects_aggregate_to_constant(rng):
    data = random_panel(rng, n=300, T=4, support=(2, 3, None))
    cells = {(g, t): _cell(g, t, 1.7, data.n) for g in (2, 3) for t in range(1, 5)}
    es = event_study(cells, data)
    for e, value in zip(es.event_times, es.estimates):
        assert value == (0.0 if e == -1 else pytest.approx(1.7, abs=1e-12))


def test_reference_period_is_zero(stag_cov):
    cells = att_gt(stag_cov, "dr", "gmm")
    es = event_study(cells, stag_cov)
    assert es.estimates[es.column(-1)] == 0.0


def test_one_cohort_event_study_is_the_att_path(rng):
    data = random_panel(rng, n=200, T=3, support=(2, None))
    cells = att_gt(data, "dr", "never")
    es = event_study(cells, data)
    for cell in cells:
        e = cell.t - cell.g
        assert es.estimates[es.column(e)] == pytest.approx(cell.estimate, abs=1e-15)
        assert np.allclose(es.influence[:, es.column(e)], cell.influence, atol=1e-12)


def test_instantaneous_effect_recomputed_by_hand(stag_cov):
    cells = {(c.g, c.t): c for c in att_gt(stag_cov, "dr", "gmm")}
    es = event_study(cells, stag_cov)
    G = np.where((~stag_cov.never) & (stag_cov.eligible == 1), stag_cov.enabling, 0)
    pool = [g for g in (2, 3) if (g, g) in cells]
    total = sum((G == g).sum() for g in pool)
    by_hand = sum((G == g).sum() / total * cells[(g, g)].estimate for g in pool)
    assert es.estimates[es.column(0)] == pytest.approx(by_hand, abs=1e-12)


def test_missing_cell_renormalizes_with_warning(rng):
    data = random_panel(rng, n=300, T=4, support=(2, 3, None))
    cells = {(g, t): _cell(g, t, float(g), data.n) for g in (2, 3) for t in range(1, 5)}
    del cells[(3, 3)]
    with pytest.warns(RuntimeWarning, match="renormalized"):
        es = event_study(cells, data, e_range=[0])
    assert es.shares[(2, 0)] == 1.0
    assert es.estimates[0] == pytest.approx(2.0)


def test_no_cells_for_event_time_raises(rng):
    data = random_panel(rng, n=120, T=3, support=(2, None))
    with pytest.raises(AggregationError):
        event_study({(2, 2): _cell(2, 2, 1.0, data.n)}, data, e_range=[5])


def test_overall_average_of_post_periods(rng):
    data = random_panel(rng, n=200, T=3, support=(2, None))
    psi0, psi1 = rng.normal(size=(2, data.n))
    psi0 -= psi0.mean()
    psi1 -= psi1.mean()
    cells = {(2, 1): _cell(2, 1, 0.0, data.n), (2, 2): _cell(2, 2, 1.0, data.n, psi0), (2, 3): _cell(2, 3, 3.0, data.n, psi1)}
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        es = event_study(cells, data)
    value, psi = overall_average(es)
    assert value == 2.0
    assert np.allclose(psi, (psi0 + psi1) / 2)
    assert abs(psi.mean()) < 1e-12


def test_share_influence_matches_numerical_derivative(rng):
    data = random_panel(rng, n=400, T=4, support=(2, 3, None))
    G = np.where((~data.never) & (data.eligible == 1), data.enabling, 0)
    share, xi = cohort_share(data, 2, 0, [2, 3])
    # reweighting one unit by (1 + h) moves the share by h * xi_i / n to first order
    h = 1e-6
    for i in np.flatnonzero(G > 0)[:5].tolist() + np.flatnonzero(G == 0)[:2].tolist():
        w = np.ones(data.n)
        w[i] += h
        num = np.sum(w * (G == 2)) / np.sum(w * np.isin(G, [2, 3]))
        assert (num - share) / h * data.n == pytest.approx(xi[i], rel=1e-4, abs=1e-8)
