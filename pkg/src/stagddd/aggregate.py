"""Event-study aggregation of group-time effects and the overall post-treatment average."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .panel import PanelDataset

__all__ = ["AggregationError", "EventStudyResult", "cohort_share", "event_study", "overall_average"]


class AggregationError(ValueError):
    pass


def _treated_cohort(data: PanelDataset) -> np.ndarray:
    """``G`` as an int array with 0 for never-treated (ineligible or never-enabled)."""
    return np.where((~data.never) & (data.eligible == 1), data.enabling, 0)


def cohort_share(
    data: PanelDataset, g: int, e: int, cohorts=None
) -> tuple[float, np.ndarray]:
    """Share of cohort ``g`` among cohorts observed at event time ``e``, and its influence rows.

    ``cohorts`` restricts the pool (defaults to every treated cohort with
    ``1 <= g' + e <= T``).
    """
    G = _treated_cohort(data)
    if cohorts is None:
        cohorts = [c for c in np.unique(G[G > 0]) if 1 <= c + e <= data.T]
    avail = np.isin(G, np.asarray(list(cohorts), dtype=np.int64)) & (G > 0)
    n_avail = int(avail.sum())
    if n_avail == 0:
        raise AggregationError(f"no treated units are observed at event time {e}")
    member = avail & (G == g)
    share = member.sum() / n_avail
    p_avail = n_avail / data.n
    xi = (member.astype(float) - share * avail) / p_avail
    return float(share), xi


@dataclass(frozen=True, eq=False)
class EventStudyResult:
    """ES(e) for each requested event time, with ``(n, E)`` influence columns."""

    event_times: tuple
    estimates: np.ndarray
    influence: np.ndarray
    shares: dict
    base_convention: str = "e = -1 is the reference period and is identically 0"
    warnings: tuple = field(default_factory=tuple)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.sum(self.influence**2, axis=0)) / self.influence.shape[0]

    def column(self, e: int) -> int:
        return self.event_times.index(e)


def event_study(
    cells: dict | list,
    data: PanelDataset,
    e_range=None,
) -> EventStudyResult:
    """Cohort-share weighted averages ``ES(e) = sum_g share(g, e) ATT(g, g + e)``.

    ``cells`` maps ``(g, t)`` to one AttCell per group-time (already combined
    across comparisons). The influence of ES(e) adds the share-estimation
    term ``xi * ATT`` to the share-weighted cell influences. Cohorts without
    a cell at some ``e`` are dropped for that ``e`` and the remaining shares
    renormalized.
    """
    if not isinstance(cells, dict):
        cells = {(c.g, c.t): c for c in cells}
    cohorts = sorted({g for g, _ in cells})
    if not cohorts:
        raise AggregationError("no ATT cells to aggregate")
    T = data.T
    if e_range is None:
        e_values = sorted({t - g for g, t in cells})
    else:
        e_values = sorted(set(int(e) for e in e_range))

    estimates, columns, shares, notes = [], [], {}, []
    for e in e_values:
        window = [g for g in cohorts if 1 <= g + e <= T]
        present = [g for g in window if (g, g + e) in cells]
        if not present:
            raise AggregationError(f"no ATT(g, g{e:+d}) cells available for event time {e}")
        if len(present) < len(window):
            missing = sorted(set(window) - set(present))
            msg = f"event time {e}: cohorts {missing} lack a cell; shares renormalized"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        total = 0.0
        psi = np.zeros(data.n)
        for g in present:
            cell = cells[(g, g + e)]
            share, xi = cohort_share(data, g, e, present)
            shares[(g, e)] = share
            total += share * cell.estimate
            psi += share * cell.influence + xi * cell.estimate
        if e == -1:
            total = 0.0
        estimates.append(total)
        columns.append(psi)
    return EventStudyResult(
        event_times=tuple(e_values),
        estimates=np.array(estimates),
        influence=np.column_stack(columns),
        shares=shares,
        warnings=tuple(notes),
    )


def overall_average(es: EventStudyResult) -> tuple[float, np.ndarray]:
    """Simple mean of ES(e) over post-treatment ``e >= 0``."""
    post = [j for j, e in enumerate(es.event_times) if e >= 0]
    if not post:
        raise AggregationError("no post-treatment event times")
    return float(np.mean(es.estimates[post])), es.influence[:, post].mean(axis=1)
