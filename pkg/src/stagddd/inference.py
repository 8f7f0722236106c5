"""Analytic and multiplier-bootstrap inference from influence functions."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

__all__ = [
    "InferenceError",
    "InferenceResult",
    "analytic_se",
    "cluster_sums",
    "draw_multipliers",
    "multiplier_bootstrap",
    "MIN_DRAWS",
]

MIN_DRAWS = 199
IQR_NORMAL = norm.ppf(0.75) - norm.ppf(0.25)
_GOLDEN = (1 + math.sqrt(5)) / 2
MAMMEN_LOW = 1 - _GOLDEN
MAMMEN_HIGH = _GOLDEN
MAMMEN_P_LOW = _GOLDEN / math.sqrt(5)
CHUNK = 64


class InferenceError(ValueError):
    pass


def _as_matrix(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    return psi[:, None] if psi.ndim == 1 else psi


def cluster_sums(psi: np.ndarray, cluster_ids) -> np.ndarray:
    """Sum influence rows within clusters; returns ``(C, k)``."""
    _, codes = np.unique(np.asarray(cluster_ids), return_inverse=True)
    n_clusters = codes.max() + 1
    if n_clusters < 2:
        raise InferenceError("clustered inference needs at least 2 clusters")
    out = np.zeros((n_clusters, psi.shape[1]))
    np.add.at(out, codes, psi)
    return out


def analytic_se(psi, cluster_ids=None):
    """``sqrt(sum psi^2) / n``, or with clusters ``sqrt(sum_c (sum_{i in c} psi_i)^2) / n``.

    Accepts a vector (returns a float) or an ``(n, k)`` matrix (returns an array).
    """
    raw = np.asarray(psi, dtype=float)
    mat = _as_matrix(raw)
    n = mat.shape[0]
    if cluster_ids is not None:
        mat = cluster_sums(mat, cluster_ids)
    se = np.sqrt(np.sum(mat**2, axis=0)) / n
    return float(se[0]) if raw.ndim == 1 else se


def draw_multipliers(seed: int, b: int, size: int, kind: str = "mammen") -> np.ndarray:
    """Multiplier weights for draw ``b``; a Philox stream keyed by ``seed`` with counter ``b``.

    Each draw owns its own counter block, so any partition of draws across
    threads reproduces the same numbers.
    """
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, b]))
    u = rng.random(size)
    if kind == "mammen":
        return np.where(u < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)
    if kind == "rademacher":
        return np.where(u < 0.5, -1.0, 1.0)
    raise ValueError(f"unknown multiplier kind {kind!r}")


@dataclass(frozen=True, eq=False)
class InferenceResult:
    """Per-statistic standard errors, pointwise intervals and a simultaneous band.

    Intervals use the bootstrap scale; ``crit_value`` is the sup-t critical
    value, floored at the pointwise normal quantile.
    """

    estimates: np.ndarray
    analytic_se: np.ndarray
    boot_se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    crit_value: float
    band_lo: np.ndarray
    band_hi: np.ndarray
    alpha: float
    B: int
    seed: int
    clustered: bool
    degenerate: np.ndarray
    crit_floored: bool
    multipliers: str = "mammen"

    @property
    def pointwise_z(self) -> float:
        return float(norm.ppf(1 - self.alpha / 2))


def _draw_block(psi, seed, draws, kind):
    n = psi.shape[0]
    v = np.stack([draw_multipliers(seed, b, n, kind) for b in draws])
    return v @ psi


def multiplier_bootstrap(
    psi,
    B: int = 999,
    alpha: float = 0.05,
    seed: int = 0,
    cluster_ids=None,
    simultaneous: bool = True,
    estimates=None,
    multipliers: str = "mammen",
    threads: int = 1,
) -> InferenceResult:
    """Multiplier bootstrap over the columns of an ``(n, k)`` influence matrix.

    Each draw perturbs unit (or cluster-summed) influence rows by iid
    multipliers; the bootstrap statistic is their mean. The scale is the
    normalized interquartile range of the draws.
    """
    if B < MIN_DRAWS:
        raise InferenceError(f"B must be at least {MIN_DRAWS} (got {B})")
    if not 0 < alpha < 1:
        raise InferenceError("alpha must lie in (0, 1)")
    mat = _as_matrix(psi)
    n, k = mat.shape
    est = np.zeros(k) if estimates is None else np.asarray(estimates, dtype=float).reshape(k)
    rows = mat if cluster_ids is None else cluster_sums(mat, cluster_ids)

    blocks = [range(s, min(s + CHUNK, B)) for s in range(0, B, CHUNK)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda d: _draw_block(rows, seed, d, multipliers), blocks))
    else:
        parts = [_draw_block(rows, seed, d, multipliers) for d in blocks]
    draws = np.vstack(parts) / n

    q75, q25 = np.quantile(draws, [0.75, 0.25], axis=0)
    boot_se = (q75 - q25) / IQR_NORMAL
    degenerate = ~(boot_se > 0)
    z = norm.ppf(1 - alpha / 2)

    crit = z
    floored = False
    if simultaneous and (~degenerate).any():
        live = ~degenerate
        t_max = np.max(np.abs(draws[:, live]) / boot_se[live], axis=1)
        crit = float(np.quantile(t_max, 1 - alpha))
        if crit < z:
            crit, floored = z, True
    scale = np.where(degenerate, 0.0, boot_se)
    return InferenceResult(
        estimates=est,
        analytic_se=analytic_se(mat, cluster_ids),
        boot_se=scale,
        ci_lo=est - z * scale,
        ci_hi=est + z * scale,
        crit_value=float(crit),
        band_lo=est - crit * scale,
        band_hi=est + crit * scale,
        alpha=alpha,
        B=B,
        seed=seed,
        clustered=cluster_ids is not None,
        degenerate=degenerate,
        crit_floored=floored,
        multipliers=multipliers,
    )
