"""Data-generating processes for the Monte Carlo designs.

Three families: a two-period design with four covariates built from
Kang-Schafer transforms, a three-period staggered design without covariates,
and its covariate counterpart. Misspecification regimes swap whether the
propensity and outcome indices use the observed ``X`` or the latent ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import exp

import numpy as np
from scipy.special import softmax

from ..panel import NEVER, PanelDataset

__all__ = [
    "FAMILIES",
    "DgpSpec",
    "make_rng",
    "kang_schafer_covariates",
    "gen_two_period",
    "gen_staggered_nocov",
    "gen_staggered_cov",
    "generate",
    "true_effects",
]

FAMILIES = ("two-period", "staggered-nocov", "staggered-cov")

# Population mean and variance of the four raw transforms under Z ~ N(0, I).
# 1 and 4 are lognormal / noncentral chi-square closed forms, 3 is an exact
# polynomial moment, 2 is a one-dimensional quadrature of E[(1 + e^Z)^-2].
RAW_MEANS = np.array([exp(1 / 8), 10.0, 0.21888, 402.0])
RAW_VARS = np.array([exp(0.5) - exp(0.25), 0.293379035858093, 0.0019832832, 3208.0])

TWO_PERIOD_ALPHA = 2010.0
TWO_PERIOD_BETA = np.array([27.4, 13.7, 13.7, 13.7])
# softmax cells in cascade order; (2, 1) is the reference with a zero index
TWO_PERIOD_CELLS = ((NEVER, 0), (NEVER, 1), (2, 0), (2, 1))
TWO_PERIOD_PS = (
    (0.2, np.array([-1.0, 0.5, -0.25, -0.1])),
    (0.2, np.array([-0.5, 2.0, 0.5, -0.2])),
    (0.05, np.array([3.0, -1.5, 0.75, -0.3])),
    (0.0, np.zeros(4)),
)

NOCOV_ALPHA = 278.5
NOCOV_CELLS = ((2, 0), (2, 1), (3, 0), (3, 1), (NEVER, 0), (NEVER, 1))
NOCOV_PROBS = (0.20, 0.15, 0.30, 0.20, 0.05, 0.10)

STAG_ALPHA = 210.0
STAG_BETA = np.array([27.4, 13.7, 13.7, 13.7])
STAG_CELLS = ((NEVER, 0), (NEVER, 1), (2, 0), (2, 1), (3, 0), (3, 1))
STAG_GAMMA = {
    2: np.array([-1.0, 0.5, -0.25, -0.1]),
    3: np.array([-0.5, 1.0, -0.1, -0.25]),
    NEVER: np.array([-0.25, 0.1, -1.0, -0.1]),
}
STAG_SCALE = {0: 0.4, 1: -0.4}

EFFECTS = {(2, 2): 10.0, (2, 3): 20.0, (3, 3): 25.0}
NU_VARIANTS = ("printed", "s3")


@dataclass(frozen=True)
class DgpSpec:
    """One simulation design.

    ``dgp_id``: 1 all working models correct, 2 outcome model correct and
    propensity wrong, 3 propensity correct and outcome wrong, 4 all wrong.
    ``nu_variant`` only affects the staggered no-covariate family: ``printed``
    sums the heterogeneity-mean terms exactly as published (the S=2 term
    appears twice), ``s3`` replaces the repeat by ``1{S=3}(3+Q)alpha``.
    """

    family: str = "two-period"
    dgp_id: int = 1
    n: int = 5000
    seed: int = 0
    nu_variant: str = "printed"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.dgp_id not in (1, 2, 3, 4):
            raise ValueError(f"dgp_id must be 1..4, got {self.dgp_id}")
        if self.n < 100:
            raise ValueError(f"n must be at least 100, got {self.n}")
        if self.nu_variant not in NU_VARIANTS:
            raise ValueError(f"nu_variant must be one of {NU_VARIANTS}")

    @property
    def ps_uses_x(self) -> bool:
        return self.dgp_id in (1, 3)

    @property
    def reg_uses_x(self) -> bool:
        return self.dgp_id in (1, 2)

    def with_seed(self, seed: int) -> "DgpSpec":
        return replace(self, seed=seed)


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox stream; ``seed`` may be an int or a SeedSequence."""
    return np.random.Generator(np.random.Philox(seed))


def kang_schafer_covariates(z: np.ndarray) -> np.ndarray:
    """Nonlinear transforms of standard normals, standardized by population moments."""
    z1, z2, z3, z4 = z.T
    raw = np.column_stack(
        [
            np.exp(0.5 * z1),
            10.0 + z2 / (1.0 + np.exp(z1)),
            (0.6 + z1 * z3 / 25.0) ** 3,
            (20.0 + z1 + z4) ** 2,
        ]
    )
    return (raw - RAW_MEANS) / np.sqrt(RAW_VARS)


def _assign(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Cascade assignment: index of the first cell whose cumulative probability reaches u."""
    cum = np.cumsum(probs, axis=1)
    idx = np.sum(u[:, None] > cum[:, :-1], axis=1)
    return idx


def _dataset(ids, outcomes, cells, idx, covariates, names) -> PanelDataset:
    s = np.array([cells[k][0] for k in idx], dtype=object)
    never = np.array([v is NEVER for v in s])
    enabling = np.array([0 if v is NEVER else int(v) for v in s], dtype=np.int64)
    eligible = np.array([cells[k][1] for k in idx], dtype=np.int64)
    T = outcomes.shape[1]
    return PanelDataset(
        unit_ids=ids,
        outcomes=outcomes,
        enabling=enabling,
        never=never,
        eligible=eligible,
        covariates=covariates,
        covariate_names=names,
        cluster_ids=None,
        period_labels=tuple(range(1, T + 1)),
    )


def gen_two_period(spec: DgpSpec, rng: np.random.Generator | None = None) -> PanelDataset:
    """Two periods, enabling groups {2, never}; true ATT(2, 2) is zero."""
    rng = rng or make_rng(spec.seed)
    n = spec.n
    z = rng.standard_normal((n, 4))
    x = kang_schafer_covariates(z)
    o_ps = x if spec.ps_uses_x else z
    o_reg = x if spec.reg_uses_x else z

    index = np.column_stack([c * (o_ps @ gamma) for c, gamma in TWO_PERIOD_PS])
    idx = _assign(softmax(index, axis=1), rng.uniform(size=n))
    s2 = np.array([TWO_PERIOD_CELLS[k][0] == 2 for k in idx])
    q = np.array([TWO_PERIOD_CELLS[k][1] for k in idx], dtype=float)

    lin = TWO_PERIOD_ALPHA + o_reg @ TWO_PERIOD_BETA
    f_reg = np.where(s2, lin, TWO_PERIOD_ALPHA + o_reg @ (0.5 * TWO_PERIOD_BETA))
    nu = rng.normal(q * f_reg, 1.0)
    eps = rng.standard_normal((n, 2))
    y = np.column_stack([f_reg + nu + eps[:, 0], 2.0 * f_reg + nu + eps[:, 1]])
    return _dataset(np.arange(1, n + 1), y, TWO_PERIOD_CELLS, idx, x, ("x_1", "x_2", "x_3", "x_4"))


def _nocov_nu_mean(s2, s3, never, q, variant: str) -> np.ndarray:
    a = NOCOV_ALPHA
    first = s2 * (2 + q) * a
    second = s2 * (2 + q) * a if variant == "printed" else s3 * (3 + q) * a
    return first + second + never * q * a


def gen_staggered_nocov(spec: DgpSpec, rng: np.random.Generator | None = None) -> PanelDataset:
    """Three periods, enabling groups {2, 3, never}, no covariates."""
    rng = rng or make_rng(spec.seed)
    n = spec.n
    idx = rng.choice(len(NOCOV_CELLS), size=n, p=NOCOV_PROBS)
    s = np.array([NOCOV_CELLS[k][0] for k in idx], dtype=object)
    s2 = np.array([v == 2 for v in s], dtype=float)
    s3 = np.array([v == 3 for v in s], dtype=float)
    never = np.array([v is NEVER for v in s], dtype=float)
    q = np.array([NOCOV_CELLS[k][1] for k in idx], dtype=float)

    a = NOCOV_ALPHA
    nu = rng.normal(_nocov_nu_mean(s2, s3, never, q, spec.nu_variant), 1.0)
    eps = rng.standard_normal((n, 3))
    d2 = s2 * q
    d3 = s3 * q
    y = np.column_stack(
        [
            (1 + q) * a + nu + eps[:, 0],
            (2 + q) * a + 1.1 * nu + EFFECTS[(2, 2)] * d2 + eps[:, 1],
            (3 + q) * a + 1.2 * nu + EFFECTS[(2, 3)] * d2 + EFFECTS[(3, 3)] * d3 + eps[:, 2],
        ]
    )
    return _dataset(np.arange(1, n + 1), y, NOCOV_CELLS, idx, np.zeros((n, 0)), ())


def gen_staggered_cov(spec: DgpSpec, rng: np.random.Generator | None = None) -> PanelDataset:
    """Three periods, enabling groups {2, 3, never}, four Kang-Schafer covariates."""
    rng = rng or make_rng(spec.seed)
    n = spec.n
    z = rng.standard_normal((n, 4))
    x = kang_schafer_covariates(z)
    o_ps = x if spec.ps_uses_x else z
    o_reg = x if spec.reg_uses_x else z

    index = np.column_stack([STAG_SCALE[qq] * (o_ps @ STAG_GAMMA[g]) for g, qq in STAG_CELLS])
    idx = _assign(softmax(index, axis=1), rng.uniform(size=n))
    s = [STAG_CELLS[k][0] for k in idx]
    s2 = np.array([v == 2 for v in s], dtype=float)
    s3 = np.array([v == 3 for v in s], dtype=float)
    q = np.array([STAG_CELLS[k][1] for k in idx], dtype=float)

    f = STAG_ALPHA + o_reg @ STAG_BETA
    m = 2 * s2 + 3 * s3
    nu = rng.normal(m * f + q * f, 1.0)
    eps = rng.standard_normal((n, 3))
    d2 = s2 * q
    d3 = s3 * q
    y = np.column_stack(
        [
            (1 + q) * f + nu + eps[:, 0],
            (2 + q) * f + 2 * nu + EFFECTS[(2, 2)] * d2 + eps[:, 1],
            (3 + q) * f + 3 * nu + EFFECTS[(2, 3)] * d2 + EFFECTS[(3, 3)] * d3 + eps[:, 2],
        ]
    )
    return _dataset(np.arange(1, n + 1), y, STAG_CELLS, idx, x, ("x_1", "x_2", "x_3", "x_4"))


_GENERATORS = {
    "two-period": gen_two_period,
    "staggered-nocov": gen_staggered_nocov,
    "staggered-cov": gen_staggered_cov,
}


def generate(spec: DgpSpec, rng: np.random.Generator | None = None) -> PanelDataset:
    return _GENERATORS[spec.family](spec, rng)


def true_effects(family: str) -> dict:
    """Planted ATT(g, t) values for a family."""
    if family == "two-period":
        return {(2, 2): 0.0}
    return dict(EFFECTS)
