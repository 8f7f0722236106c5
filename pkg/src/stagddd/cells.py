"""Result container for a single group-time ATT estimate."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .panel import NEVER, Cohort, cohort_label


class Estimand(str, Enum):
    DR = "dr"
    RA = "ra"
    IPW = "ipw"
    NOCOV = "nocov"
    POOLED_NYT = "pooled_nyt"
    DIFF_DRDID = "diff_drdid"
    THREE_WFE = "3wfe"
    MUNDLAK_3WFE = "m3wfe"


BASELINES = frozenset({Estimand.POOLED_NYT, Estimand.DIFF_DRDID, Estimand.THREE_WFE, Estimand.MUNDLAK_3WFE})

# comparison tags that are not a single cohort
GMM = "gmm"
POOLED = "pooled"
WEIGHTED = "weighted"


@dataclass(frozen=True, eq=False)
class AttCell:
    """One ATT(g, t) estimate with its per-unit influence values.

    ``influence`` is scaled so that ``estimate - ATT ~ mean(influence)``; the
    analytic standard error is ``sqrt(sum(influence**2)) / n``.
    """

    g: int
    t: int
    g_c: Cohort | str
    estimand: Estimand
    estimate: float
    influence: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return 0 if self.influence is None else len(self.influence)

    @property
    def se(self) -> float:
        if self.influence is None:
            return float("nan")
        return float(np.sqrt(np.sum(self.influence**2)) / len(self.influence))

    @property
    def event_time(self) -> int:
        return self.t - self.g

    @property
    def comparison_label(self) -> str:
        if isinstance(self.g_c, str):
            return self.g_c
        return cohort_label(self.g_c)

    @property
    def is_baseline(self) -> bool:
        return self.estimand in BASELINES


def zero_cell(g: int, t: int, g_c, estimand: Estimand, n: int) -> AttCell:
    """The normalized ``t = g - 1`` cell: exactly zero with zero influence."""
    return AttCell(
        g=g,
        t=t,
        g_c=g_c,
        estimand=estimand,
        estimate=0.0,
        influence=np.zeros(n),
        diagnostics={"reference_period": True},
    )


def parse_comparison(label: str) -> Cohort | str:
    text = str(label).strip().lower()
    if text in ("inf", "never", "nev"):
        return NEVER
    if text in (GMM, POOLED, WEIGHTED):
        return text
    return int(text)
