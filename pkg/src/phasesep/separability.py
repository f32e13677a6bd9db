"""Factorizability tests on transformed data, candidate selection and recursion."""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .coordmap import evaluate_map
from .signal_io import TimeSeries

DEFAULT_THRESHOLD = 0.05
MIN_SAMPLES = 1000
ORDERS = (1, 2, 3)


@dataclass
class IndependenceReport:
    """Cross-statistics between two standardized components.

    ``position`` and ``velocity`` hold corr(z1**p, z2**q) for p, q in 1..3.
    ``rank`` holds the same for centered ranks and their squares
    (rows/cols: rank, rank**2); these entries depend only on the ordering
    of each component.
    """

    position: np.ndarray
    velocity: np.ndarray
    rank: np.ndarray
    max_stat: float
    threshold: float
    n_samples: int
    verdict: bool = field(init=False)

    def __post_init__(self):
        self.verdict = bool(self.max_stat <= self.threshold)

    @property
    def fluctuation_scale(self):
        return 3.0 / np.sqrt(self.n_samples)

    def as_dict(self):
        out = {"verdict": "separable" if self.verdict else "inseparable",
               "max_stat": self.max_stat, "threshold": self.threshold,
               "n_samples": self.n_samples, "fluctuation_scale": self.fluctuation_scale}
        for name, table, labels in (("position", self.position, ORDERS),
                                    ("velocity", self.velocity, ORDERS),
                                    ("rank", self.rank, (1, 2))):
            for i, p in enumerate(labels):
                for j, q in enumerate(labels):
                    out[f"{name}_{p}{q}"] = float(table[i, j])
        return out


def _power_table(z1, z2, orders):
    g1 = [_standardize(z1 ** p) for p in orders]
    g2 = [_standardize(z2 ** q) for q in orders]
    n = len(z1)
    return np.array([[float(a @ b) / n for b in g2] for a in g1])


def _standardize(x):
    x = x - x.mean()
    sd = np.sqrt(x @ x / len(x))
    if sd == 0 or not np.isfinite(sd):
        raise ValueError("degenerate (zero-variance) component")
    return x / sd


def independence_stats(u, rate=1.0, threshold=DEFAULT_THRESHOLD, valid=None):
    """Cross-statistics of a two-component series for a separability verdict.

    Parameters
    ----------
    u : TimeSeries or array of shape (T, 2)
    rate : float
        Sample rate, used for the central-difference velocity.
    valid : bool array, optional
        Samples to use; velocities use only samples whose two neighbours are
        valid.
    """
    if isinstance(u, TimeSeries):
        rate = u.sample_rate
        u = u.samples
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != 2:
        raise ValueError(f"expected a (T, 2) series, got {u.shape}")
    valid = np.ones(len(u), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    pos = u[valid]
    if len(pos) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {len(pos)}")
    vel_ok = valid[2:] & valid[:-2]
    vel = ((u[2:] - u[:-2]) * (rate / 2.0))[vel_ok]

    z = np.column_stack([_standardize(pos[:, 0]), _standardize(pos[:, 1])])
    zd = np.column_stack([_standardize(vel[:, 0]), _standardize(vel[:, 1])])
    p_tab = _power_table(z[:, 0], z[:, 1], ORDERS)
    v_tab = _power_table(zd[:, 0], zd[:, 1], ORDERS)
    r = np.column_stack([rankdata(pos[:, k]) for k in range(2)])
    r -= (len(r) + 1) / 2.0
    r_tab = _power_table(r[:, 0], r[:, 1], (1, 2))
    max_stat = float(max(np.abs(p_tab).max(), np.abs(v_tab).max(), np.abs(r_tab).max()))
    return IndependenceReport(position=p_tab, velocity=v_tab, rank=r_tab,
                              max_stat=max_stat, threshold=threshold, n_samples=len(pos))


@dataclass
class Verdict:
    separable: bool
    best_map: object
    report: IndependenceReport
    reports: list


def evaluate_on_series(cmap, x_series):
    """u at every sample of ``x_series`` plus the mask of defined samples."""
    x = x_series.samples if isinstance(x_series, TimeSeries) else np.asarray(x_series)
    ev = evaluate_map(cmap, x)
    u = np.full((len(x), 2), np.nan)
    u[ev.index] = ev.u
    ok = np.zeros(len(x), dtype=bool)
    ok[ev.index] = True
    return u, ok


def verdict_pipeline(x_series, candidates, threshold=DEFAULT_THRESHOLD):
    """Score each candidate map on the data and keep the best one.

    Returns a Verdict; ``separable`` is False when no candidate passes, in
    which case the best (lowest max-statistic) report is still attached.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate maps")
    rate = x_series.sample_rate if isinstance(x_series, TimeSeries) else 1.0
    reports = []
    for cmap in candidates:
        u, ok = evaluate_on_series(cmap, x_series)
        reports.append(independence_stats(u, rate, threshold, valid=ok))
    best = int(np.argmin([r.max_stat for r in reports]))
    return Verdict(reports[best].verdict, candidates[best], reports[best], reports)


@dataclass
class SeparationNode:
    """Result of recursive separation of a block of components.

    A leaf has no children. ``series`` is the block's time series (for
    children, the recovered coordinates of that subsystem).
    """

    series: TimeSeries
    children: list = field(default_factory=list)
    report: IndependenceReport = None
    note: str = ""

    @property
    def is_leaf(self):
        return not self.children

    def leaves(self):
        if self.is_leaf:
            return [self]
        return [leaf for c in self.children for leaf in c.leaves()]


def recurse(series, options=None):
    """Separate a block, then each separated subsystem, until no split passes.

    One-dimensional blocks are returned as leaves immediately. Blocks of more
    than two dimensions are returned as leaves because the map builder
    handles two-dimensional fields only.
    """
    from .pipeline import SeparationOptions, separate

    options = options or SeparationOptions()
    if series.n_channels == 1:
        return SeparationNode(series, note="one-dimensional")
    if series.n_channels > 2:
        return SeparationNode(series, note="map construction limited to 2 dimensions")
    result = separate(series, options)
    if not result.separable:
        return SeparationNode(series, report=result.report, note=result.reason)
    u, ok = result.u, result.u_valid
    children = []
    for k in range(2):
        comp = _fill_gaps(u[:, k], ok)
        children.append(recurse(TimeSeries(comp[:, None], series.sample_rate), options))
    return SeparationNode(series, children=children, report=result.report)


def _fill_gaps(values, ok):
    """Hold the last defined value across undefined samples."""
    idx = np.where(ok, np.arange(len(values)), 0)
    np.maximum.accumulate(idx, out=idx)
    first = int(np.argmax(ok)) if ok.any() else 0
    idx[:first] = first
    return values[idx]


@dataclass
class RecoveryScore:
    """Spearman agreement between recovered components and reference sources.

    ``perm``/``signs`` map recovered component i to source ``perm[i]``;
    ``matched[i]`` is |rho| for that pairing and ``cross`` the largest |rho|
    among the other pairings.
    """

    perm: np.ndarray
    signs: np.ndarray
    matched: np.ndarray
    cross: float
    rho: np.ndarray


def spearman_matrix(a, b):
    """Spearman correlation of every column of ``a`` with every column of ``b``."""
    ra = np.column_stack([rankdata(c) for c in np.asarray(a, dtype=float).T])
    rb = np.column_stack([rankdata(c) for c in np.asarray(b, dtype=float).T])
    ra = (ra - ra.mean(axis=0)) / ra.std(axis=0)
    rb = (rb - rb.mean(axis=0)) / rb.std(axis=0)
    return ra.T @ rb / len(ra)


def recovery_score(u, sources, valid=None):
    """Match recovered components to sources up to a signed permutation."""
    u = np.asarray(u, dtype=float)
    s = sources.samples if isinstance(sources, TimeSeries) else np.asarray(sources, dtype=float)
    if valid is not None:
        u, s = u[valid], s[valid]
    rho = spearman_matrix(u, s)
    n = rho.shape[0]
    best = max(itertools.permutations(range(n)),
               key=lambda p: np.abs(rho[np.arange(n), list(p)]).sum())
    perm = np.array(best)
    signs = np.sign(rho[np.arange(n), perm])
    matched = np.abs(rho[np.arange(n), perm])
    off = np.ones_like(rho, dtype=bool)
    off[np.arange(n), perm] = False
    cross = float(np.abs(rho[off]).max()) if off.any() else 0.0
    return RecoveryScore(perm, signs, matched, cross, rho)
