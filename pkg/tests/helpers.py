import numpy as np

from stagddd.panel import PanelDataset


def random_panel(rng, n=200, T=3, support=(2, None), d=0, min_cell=3, effect=1.0):
    """Balanced panel with every (S, Q) cell populated; ``None`` in ``support`` is never-enabled."""
    cells = [(s, q) for s in support for q in (0, 1)]
    if n < min_cell * len(cells):
        raise ValueError("n too small for the requested cells")
    assign = np.concatenate([np.repeat(np.arange(len(cells)), min_cell),
                             rng.integers(0, len(cells), n - min_cell * len(cells))])
    rng.shuffle(assign)
    s = [cells[k][0] for k in assign]
    never = np.array([v is None for v in s])
    enabling = np.array([0 if v is None else v for v in s], dtype=np.int64)
    eligible = np.array([cells[k][1] for k in assign], dtype=np.int64)
    x = rng.normal(size=(n, d))
    level = rng.normal(size=n) + (x.sum(axis=1) if d else 0)
    trend = rng.normal(size=(1, T)).cumsum(axis=1)
    treated = (~never)[:, None] & (eligible[:, None] == 1) & (np.arange(1, T + 1)[None, :] >= enabling[:, None])
    y = level[:, None] + trend + 0.3 * enabling[:, None] * np.arange(T)[None, :] \
        + 0.2 * eligible[:, None] * np.arange(T)[None, :] + effect * treated + rng.normal(size=(n, T))
    return PanelDataset(
        unit_ids=np.arange(n),
        outcomes=y,
        enabling=enabling,
        never=never,
        eligible=eligible,
        covariates=x,
        covariate_names=tuple(f"x_{j + 1}" for j in range(d)),
        cluster_ids=None,
        period_labels=tuple(range(1, T + 1)),
    )
