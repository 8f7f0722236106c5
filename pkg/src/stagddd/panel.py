"""Balanced panel container, CSV ingestion/validation and cohort bookkeeping.

Enabling periods use an explicit :data:`NEVER` tag for never-enabled units.
Internally a dataset stores an integer array of enabling periods together with
a boolean ``never`` mask; the integer entry of a never-enabled unit is
meaningless and is never read without the mask.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np
import pandas as pd

__all__ = [
    "NEVER",
    "NeverEnabled",
    "Cohort",
    "PanelDataError",
    "ColumnSchema",
    "PanelDataset",
    "CohortIndex",
    "load_csv",
    "save_csv",
    "from_frame",
    "trim_to_effective_sample",
    "cohort_index",
]

NEVER_SENTINELS = {"", "0", "inf", "Inf", "INF", "never", "Never", "NEVER", "nan", "NaN"}


class PanelDataError(ValueError):
    """Structural problem with the input panel (exit code 1 territory)."""


@functools.total_ordering
class NeverEnabled:
    """Tag for units whose group never enables treatment (``S = inf``).

    Compares greater than every integer period and equal only to itself.
    """

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __eq__(self, other):
        return other is self

    def __lt__(self, other):
        return False

    def __gt__(self, other):
        return other is not self

    def __hash__(self):
        return hash("NeverEnabled")

    def __repr__(self):
        return "NEVER"

    def __str__(self):
        return "inf"

    def __reduce__(self):
        return (NeverEnabled, ())


NEVER = NeverEnabled()
Cohort = Union[int, NeverEnabled]


def cohort_label(g: Cohort) -> str:
    if isinstance(g, str):
        return g
    return "inf" if g is NEVER else str(int(g))


def parse_cohort(value) -> Cohort:
    """Decode an enabling-period cell (``0``, empty, ``inf``, ``never`` -> NEVER)."""
    if value is None or value is NEVER:
        return NEVER
    if isinstance(value, (int, np.integer)):
        return NEVER if int(value) == 0 else int(value)
    if isinstance(value, (float, np.floating)):
        if math.isnan(value) or math.isinf(value) or value == 0:
            return NEVER
        if float(value).is_integer():
            return int(value)
        raise PanelDataError(f"enabling period {value!r} is not an integer")
    text = str(value).strip()
    if text in NEVER_SENTINELS:
        return NEVER
    try:
        number = float(text)
    except ValueError:
        raise PanelDataError(f"cannot parse enabling period {value!r}") from None
    return parse_cohort(number)


@dataclass(frozen=True)
class ColumnSchema:
    """Column names for long-format panel CSV input.

    ``covariates=None`` means "every column prefixed ``x_``".
    """

    id: str = "id"
    time: str = "time"
    outcome: str = "y"
    enabling: str = "s"
    eligible: str = "q"
    covariates: tuple[str, ...] | None = None
    cluster: str | None = "cluster"

    def resolve_covariates(self, columns: Iterable[str]) -> tuple[str, ...]:
        if self.covariates is not None:
            return tuple(self.covariates)
        return tuple(c for c in columns if c.startswith("x_"))


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Immutable balanced unit-by-period panel.

    Attributes
    ----------
    unit_ids : ndarray
        Opaque unit identifiers, length n.
    outcomes : ndarray
        ``(n, T)`` outcomes; column ``j`` is re-indexed period ``j + 1``.
    enabling : ndarray
        Integer enabling period per unit, valid only where ``~never``.
    never : ndarray
        Boolean mask of never-enabled units.
    eligible : ndarray
        Eligibility ``Q`` in {0, 1}.
    covariates : ndarray
        ``(n, d)`` time-invariant covariates; ``d = 0`` is allowed.
    period_labels : tuple
        Original calendar labels of periods ``1..T``.
    """

    unit_ids: np.ndarray
    outcomes: np.ndarray
    enabling: np.ndarray
    never: np.ndarray
    eligible: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    cluster_ids: np.ndarray | None = None
    period_labels: tuple = ()

    def __post_init__(self):
        outcomes = np.array(self.outcomes, dtype=float)
        if outcomes.ndim != 2:
            raise PanelDataError("outcomes must be an (n, T) matrix")
        n, T = outcomes.shape
        enabling = np.asarray(self.enabling, dtype=np.int64).reshape(n)
        never = np.array(self.never, dtype=bool).reshape(n)
        eligible = np.array(self.eligible, dtype=np.int64).reshape(n)
        covariates = np.array(self.covariates, dtype=float)
        if covariates.size == 0:
            covariates = np.zeros((n, 0))
        covariates = covariates.reshape(n, -1)
        labels = tuple(self.period_labels) if self.period_labels else tuple(range(1, T + 1))
        enabling = np.where(never, 0, enabling)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "enabling", enabling)
        object.__setattr__(self, "never", never)
        object.__setattr__(self, "eligible", eligible)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "unit_ids", np.asarray(self.unit_ids))
        object.__setattr__(self, "period_labels", labels)
        if not self.covariate_names or len(self.covariate_names) != covariates.shape[1]:
            object.__setattr__(
                self, "covariate_names", tuple(f"x_{j + 1}" for j in range(covariates.shape[1]))
            )
        if self.cluster_ids is not None:
            object.__setattr__(self, "cluster_ids", np.asarray(self.cluster_ids).reshape(n))
        for arr in (outcomes, enabling, never, eligible, covariates):
            arr.setflags(write=False)
        self._validate()

    def _validate(self):
        n, T = self.outcomes.shape
        if len(self.unit_ids) != n:
            raise PanelDataError("unit_ids length does not match outcomes")
        if len(self.period_labels) != T:
            raise PanelDataError("period_labels length does not match outcomes")
        if not np.all(np.isfinite(self.outcomes)):
            bad = self.unit_ids[~np.all(np.isfinite(self.outcomes), axis=1)]
            raise PanelDataError(f"non-finite outcomes for unit(s) {list(bad[:5])}")
        if not np.all(np.isin(self.eligible, (0, 1))):
            raise PanelDataError("eligibility must be 0/1")
        finite = self.enabling[~self.never]
        if finite.size and (finite.min() < 2 or finite.max() > T):
            bad = self.unit_ids[~self.never & ((self.enabling < 2) | (self.enabling > T))]
            raise PanelDataError(
                f"enabling periods must lie in 2..{T} on the re-indexed scale "
                f"(unit(s) {list(bad[:5])} have no pre-period or enable after the panel ends)"
            )
        if not np.all(np.isfinite(self.covariates)):
            raise PanelDataError("non-finite covariate values")

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def T(self) -> int:
        return self.outcomes.shape[1]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def periods(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    def enabling_of(self, i: int) -> Cohort:
        return NEVER if self.never[i] else int(self.enabling[i])

    def enabling_labels(self) -> list[Cohort]:
        return [self.enabling_of(i) for i in range(self.n)]

    def group(self) -> list[Cohort]:
        """Treatment cohort ``G``: ``S`` if eligible, NEVER otherwise."""
        return [self.enabling_of(i) if self.eligible[i] == 1 else NEVER for i in range(self.n)]

    def treatment(self) -> np.ndarray:
        """``(n, T)`` absorbing treatment indicator ``1{t >= S, Q = 1}``."""
        t = self.periods[None, :]
        on = (~self.never[:, None]) & (t >= self.enabling[:, None])
        return (on & (self.eligible[:, None] == 1)).astype(np.int8)

    def enabling_mask(self, s: Cohort) -> np.ndarray:
        if s is NEVER:
            return self.never.copy()
        return (~self.never) & (self.enabling == int(s))

    def cell_mask(self, s: Cohort, q: int) -> np.ndarray:
        """Units with ``S = s`` and ``Q = q``."""
        return self.enabling_mask(s) & (self.eligible == q)

    def not_yet_enabled_mask(self, t: int) -> np.ndarray:
        """Units with ``S > t`` (never-enabled included)."""
        return self.never | (self.enabling > t)

    def delta_y(self, t: int, base: int) -> np.ndarray:
        """``Y_t - Y_base`` on the re-indexed (1-based) period scale."""
        return self.outcomes[:, t - 1] - self.outcomes[:, base - 1]

    def enabling_support(self) -> list[Cohort]:
        values: list[Cohort] = sorted(int(s) for s in np.unique(self.enabling[~self.never]))
        if self.never.any():
            values.append(NEVER)
        return values

    def subset(self, rows: np.ndarray) -> "PanelDataset":
        rows = np.asarray(rows)
        return PanelDataset(
            unit_ids=self.unit_ids[rows],
            outcomes=self.outcomes[rows],
            enabling=self.enabling[rows],
            never=self.never[rows],
            eligible=self.eligible[rows],
            covariates=self.covariates[rows],
            covariate_names=self.covariate_names,
            cluster_ids=None if self.cluster_ids is None else self.cluster_ids[rows],
            period_labels=self.period_labels,
        )

    def with_outcomes(self, outcomes: np.ndarray) -> "PanelDataset":
        return PanelDataset(
            unit_ids=self.unit_ids,
            outcomes=outcomes,
            enabling=self.enabling,
            never=self.never,
            eligible=self.eligible,
            covariates=self.covariates,
            covariate_names=self.covariate_names,
            cluster_ids=self.cluster_ids,
            period_labels=self.period_labels,
        )

    def equals(self, other: "PanelDataset") -> bool:
        """Field-by-field equality (exact for arrays)."""
        same_clusters = (self.cluster_ids is None and other.cluster_ids is None) or (
            self.cluster_ids is not None
            and other.cluster_ids is not None
            and np.array_equal(self.cluster_ids.astype(str), other.cluster_ids.astype(str))
        )
        return (
            np.array_equal(self.unit_ids.astype(str), other.unit_ids.astype(str))
            and np.array_equal(self.outcomes, other.outcomes)
            and np.array_equal(self.enabling, other.enabling)
            and np.array_equal(self.never, other.never)
            and np.array_equal(self.eligible, other.eligible)
            and np.array_equal(self.covariates, other.covariates)
            and tuple(self.covariate_names) == tuple(other.covariate_names)
            and tuple(map(str, self.period_labels)) == tuple(map(str, other.period_labels))
            and same_clusters
        )


@dataclass(frozen=True)
class CohortIndex:
    """Treated cohorts, enabling support and admissible comparison cohorts."""

    treated_cohorts: tuple[int, ...]
    enabling_support: tuple[Cohort, ...]
    comparison_sets: dict = field(default_factory=dict)
    cell_counts: dict = field(default_factory=dict)
    T: int = 0

    def comparisons(self, g: int, t: int) -> tuple[Cohort, ...]:
        return self.comparison_sets.get((g, t), ())

    def usable_comparisons(self, g: int, t: int, min_cell: int = 1) -> tuple[Cohort, ...]:
        """Comparison cohorts whose (g_c, 1) and (g_c, 0) cells both have units."""
        return tuple(
            gc
            for gc in self.comparisons(g, t)
            if self.cell_counts.get((gc, 1), 0) >= min_cell and self.cell_counts.get((gc, 0), 0) >= min_cell
        )

    def is_estimable(self, g: int, t: int, min_cell: int = 1) -> bool:
        if t == g - 1:
            return True
        own = self.cell_counts.get((g, 1), 0) >= min_cell and self.cell_counts.get((g, 0), 0) >= min_cell
        return own and bool(self.usable_comparisons(g, t, min_cell))

    def estimable_cells(self, post_only: bool = True, min_cell: int = 1) -> list[tuple[int, int]]:
        cells = []
        for g in self.treated_cohorts:
            for t in range(1, self.T + 1):
                if post_only and t < g:
                    continue
                if t == g - 1 or self.is_estimable(g, t, min_cell):
                    cells.append((g, t))
        return cells


def cohort_index(data: PanelDataset) -> CohortIndex:
    """Build treated cohorts and comparison sets ``{g_c in S : g_c > max(g, t)}``.

    Pre-treatment periods (``t < g``) use ``g_c > g`` so the same comparison
    cohorts stay valid at the ``g - 1`` baseline.
    """
    support = tuple(data.enabling_support())
    finite_treated = data.enabling[(~data.never) & (data.eligible == 1)]
    treated = tuple(sorted(int(g) for g in np.unique(finite_treated)))
    counts = {}
    for s in support:
        for q in (0, 1):
            counts[(s, q)] = int(data.cell_mask(s, q).sum())
    comparison_sets = {}
    for g in treated:
        for t in range(1, data.T + 1):
            bound = max(g, t)
            comparison_sets[(g, t)] = tuple(gc for gc in support if gc > bound)
    return CohortIndex(
        treated_cohorts=treated,
        enabling_support=support,
        comparison_sets=comparison_sets,
        cell_counts=counts,
        T=data.T,
    )


def trim_to_effective_sample(data: PanelDataset) -> PanelDataset:
    """Drop periods from the last enabling date on when no never-enabled units exist.

    The last-enabling cohort is recoded as never-enabled. Identity when a
    never-enabled group is already present.
    """
    if data.never.any():
        return data
    last = int(data.enabling.max())
    keep = last - 1
    never = data.enabling == last
    return PanelDataset(
        unit_ids=data.unit_ids,
        outcomes=data.outcomes[:, :keep],
        enabling=np.where(never, 0, data.enabling),
        never=never,
        eligible=data.eligible,
        covariates=data.covariates,
        covariate_names=data.covariate_names,
        cluster_ids=data.cluster_ids,
        period_labels=data.period_labels[:keep],
    )


def _constant_within_unit(df: pd.DataFrame, col: str, id_col: str) -> pd.Series:
    nunique = df.groupby(id_col, sort=False)[col].nunique(dropna=False)
    varying = nunique[nunique > 1]
    if len(varying):
        raise PanelDataError(
            f"column {col!r} varies within unit(s) {list(varying.index[:5])}; it must be time-invariant"
        )
    return df.groupby(id_col, sort=False)[col].first()


def from_frame(df: pd.DataFrame, schema: ColumnSchema = ColumnSchema()) -> PanelDataset:
    """Validate a long-format frame and build a :class:`PanelDataset`."""
    required = [schema.id, schema.time, schema.outcome, schema.enabling, schema.eligible]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise PanelDataError(f"missing required column(s): {missing}")
    covariate_cols = schema.resolve_covariates(df.columns)
    missing_cov = [c for c in covariate_cols if c not in df.columns]
    if missing_cov:
        raise PanelDataError(f"missing covariate column(s): {missing_cov}")
    cluster_col = schema.cluster if schema.cluster and schema.cluster in df.columns else None

    df = df.copy()
    if df[schema.id].isna().any():
        raise PanelDataError("missing unit identifiers")
    try:
        times = pd.to_numeric(df[schema.time], errors="raise")
    except (ValueError, TypeError):
        raise PanelDataError(f"time column {schema.time!r} must be numeric") from None
    if not np.all(np.asarray(times, dtype=float) == np.round(np.asarray(times, dtype=float))):
        raise PanelDataError("calendar periods must be integers")
    df[schema.time] = times.astype(np.int64)
    y = pd.to_numeric(df[schema.outcome], errors="coerce")
    if y.isna().any():
        bad = df.loc[y.isna(), schema.id].unique()[:5]
        raise PanelDataError(f"non-numeric or missing outcome for unit(s) {list(bad)}")
    df[schema.outcome] = y.astype(float)

    if df.duplicated([schema.id, schema.time]).any():
        dup = df.loc[df.duplicated([schema.id, schema.time]), schema.id].unique()[:5]
        raise PanelDataError(f"duplicate (unit, period) rows for unit(s) {list(dup)}")

    labels = sorted(df[schema.time].unique())
    T = len(labels)
    counts = df.groupby(schema.id, sort=False)[schema.time].nunique()
    short = counts[counts != T]
    if len(short):
        raise PanelDataError(
            f"unbalanced panel: unit(s) {list(short.index[:5])} are not observed in all {T} periods"
        )

    s_raw = df[schema.enabling].map(lambda v: cohort_label(parse_cohort(v)))
    df["_s"] = s_raw
    s_unit = _constant_within_unit(df, "_s", schema.id)
    q_unit = _constant_within_unit(df, schema.eligible, schema.id)
    order = list(s_unit.index)
    q_num = pd.to_numeric(q_unit, errors="coerce")
    if q_num.isna().any() or not q_num.isin([0, 1]).all():
        raise PanelDataError("eligibility column must be 0/1")

    wide = df.pivot(index=schema.id, columns=schema.time, values=schema.outcome).loc[order, labels]
    label_to_index = {lab: j + 1 for j, lab in enumerate(labels)}

    never = np.zeros(len(order), dtype=bool)
    enabling = np.zeros(len(order), dtype=np.int64)
    for i, text in enumerate(s_unit.values):
        s = parse_cohort(text)
        if s is NEVER:
            never[i] = True
            continue
        if s not in label_to_index:
            if s > labels[-1]:
                # enables after the panel ends: untreated throughout the window
                never[i] = True
                continue
            raise PanelDataError(
                f"unit {order[i]!r} has enabling period {s} that is not an observed calendar period"
            )
        idx = label_to_index[s]
        if idx <= 1:
            raise PanelDataError(
                f"unit {order[i]!r} enables at or before the first period ({s}); no pre-period exists"
            )
        enabling[i] = idx

    covs = np.zeros((len(order), 0))
    if covariate_cols:
        cov_frames = []
        for c in covariate_cols:
            vals = pd.to_numeric(df[c], errors="coerce")
            if vals.isna().any():
                raise PanelDataError(f"non-numeric or missing covariate {c!r}")
            df[c] = vals
            cov_frames.append(_constant_within_unit(df, c, schema.id).loc[order].to_numpy(float))
        covs = np.column_stack(cov_frames)

    clusters = None
    if cluster_col:
        clusters = _constant_within_unit(df, cluster_col, schema.id).loc[order].to_numpy()

    return PanelDataset(
        unit_ids=np.asarray(order),
        outcomes=wide.to_numpy(float),
        enabling=enabling,
        never=never,
        eligible=q_num.to_numpy(np.int64),
        covariates=covs,
        covariate_names=tuple(covariate_cols),
        cluster_ids=clusters,
        period_labels=tuple(int(x) for x in labels),
    )


def load_csv(path: str | Path, schema: ColumnSchema = ColumnSchema()) -> PanelDataset:
    """Read a long-format CSV (one row per unit-period) into a validated panel."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(
        path, dtype={schema.enabling: str}, keep_default_na=False, na_values=[""], float_precision="round_trip"
    )
    if schema.enabling in df.columns:
        df[schema.enabling] = df[schema.enabling].fillna("")
    return from_frame(df, schema)


def to_frame(data: PanelDataset, schema: ColumnSchema = ColumnSchema()) -> pd.DataFrame:
    """Long-format frame using original calendar labels."""
    n, T = data.outcomes.shape
    s_labels = []
    for i in range(n):
        s_labels.append("inf" if data.never[i] else str(data.period_labels[data.enabling[i] - 1]))
    frame = {
        schema.id: np.repeat(data.unit_ids, T),
        schema.time: np.tile(np.asarray(data.period_labels), n),
        schema.outcome: data.outcomes.reshape(-1),
        schema.enabling: np.repeat(np.asarray(s_labels, dtype=object), T),
        schema.eligible: np.repeat(data.eligible, T),
    }
    for j, name in enumerate(data.covariate_names):
        frame[name] = np.repeat(data.covariates[:, j], T)
    if data.cluster_ids is not None:
        frame[schema.cluster or "cluster"] = np.repeat(data.cluster_ids, T)
    return pd.DataFrame(frame)


def save_csv(data: PanelDataset, path: str | Path, schema: ColumnSchema = ColumnSchema()) -> None:
    """Write the panel in long format with 17 significant digits (bit-stable)."""
    frame = to_frame(data, schema)
    names = data.covariate_names
    if schema.covariates is None and any(not c.startswith("x_") for c in names):
        warnings.warn("covariate names lack the x_ prefix; reload with an explicit schema", stacklevel=2)
    frame.to_csv(path, index=False, float_format="%.17g")


def summarize_cells(data: PanelDataset, index: CohortIndex | None = None) -> pd.DataFrame:
    """Cohort table: unit counts per (S, Q) cell."""
    index = index or cohort_index(data)
    rows = []
    for s in index.enabling_support:
        label = cohort_label(s) if s is NEVER else str(data.period_labels[int(s) - 1])
        rows.append(
            {
                "s": label,
                "s_index": cohort_label(s),
                "n_q0": index.cell_counts[(s, 0)],
                "n_q1": index.cell_counts[(s, 1)],
            }
        )
    return pd.DataFrame(rows)
