import warnings

import numpy as np
import pytest

from stagddd import att_gt
from stagddd.cells import GMM
from stagddd.estimators import EstimationError, att_dr
from stagddd.panel import NEVER, cohort_index
from stagddd.pipeline import ComparisonMode, parse_comparison_mode

from helpers import random_panel


def test_parse_comparison_mode():
    assert parse_comparison_mode("GMM") == ComparisonMode("gmm")
    assert parse_comparison_mode("cohort:3") == ComparisonMode("cohort", 3)
    assert parse_comparison_mode("cohort:never").cohort is NEVER
    with pytest.raises(ValueError):
        parse_comparison_mode("nearest")


def test_grid_covers_every_estimable_cell(stag_cov):
    cells = att_gt(stag_cov, "dr", "gmm")
    keys = [(c.g, c.t) for c in cells]
    assert keys == sorted(keys)
    assert set(keys) == set(cohort_index(stag_cov).estimable_cells(post_only=False))
    assert all(c.g_c is GMM for c in cells)


def test_reference_period_cell_is_exact_zero(stag_cov):
    for mode in ("gmm", "never"):
        cells = {(c.g, c.t): c for c in att_gt(stag_cov, "dr", mode)}
        assert cells[(3, 2)].estimate == 0.0
        assert np.all(cells[(3, 2)].influence == 0)


def test_never_mode_matches_direct_cell(stag_cov):
    cells = {(c.g, c.t): c for c in att_gt(stag_cov, "dr", "never")}
    direct = att_dr(stag_cov, 2, 3, NEVER)
    assert cells[(2, 3)].estimate == pytest.approx(direct.estimate, abs=1e-10)


def test_gmm_never_worse_than_never(stag_cov):
    gmm = {(c.g, c.t): c for c in att_gt(stag_cov, "dr", "gmm")}
    nev = {(c.g, c.t): c for c in att_gt(stag_cov, "dr", "never")}
    for key, cell in gmm.items():
        if cell.diagnostics.get("k", 1) >= 2:
            assert cell.se <= nev[key].se + 1e-12


def test_post_only_and_pooled_modes(stag_cov):
    post = att_gt(stag_cov, "dr", "gmm", include_pre=False)
    assert all(c.t >= c.g for c in post)
    pooled = att_gt(stag_cov, "dr", "pooled-baseline")
    assert {(c.g, c.t) for c in pooled} == {(2, 2), (2, 3), (3, 3)}


def test_never_mode_needs_never_group(rng):
    data = random_panel(rng, n=200, T=3, support=(2, 3))
    with pytest.raises(EstimationError):
        att_gt(data, "nocov", "never")


def test_thin_cells_are_skipped_with_warning(rng):
    data = random_panel(rng, n=300, T=3, support=(2, None))
    keep = ~data.cell_mask(2, 1)
    keep[np.flatnonzero(data.cell_mask(2, 1))[:1]] = True
    thin = data.subset(np.flatnonzero(keep))
    with pytest.warns(RuntimeWarning, match="skipped"):
        cells = att_gt(thin, "nocov", "never")
    assert all(c.t == c.g - 1 for c in cells)


def test_no_estimation_effect_flag_propagates(stag_cov):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        on = att_gt(stag_cov, "dr", "never", include_pre=False)
        off = att_gt(stag_cov, "dr", "never", include_pre=False, with_estimation_effect=False)
    for a, b in zip(on, off):
        assert a.estimate == b.estimate
        assert not np.array_equal(a.influence, b.influence)
