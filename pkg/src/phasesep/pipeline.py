"""Library-level separation pipeline shared by the CLI and the recursion."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .binning import build_grid, estimate_velocity
from .coordmap import build_map
from .errors import NoValidBinsError
from .frames import align_frames, build_frames
from .separability import evaluate_on_series, verdict_pipeline
from .signal_io import pca_normalize
from .weights import compute_weights, enumerate_partitions, weight_correlation

log = logging.getLogger(__name__)


@dataclass
class SeparationOptions:
    bins_per_dim: int = 16
    min_count: int = 50
    margin: float = 1e-6
    degeneracy_tol: float = 1e-3
    partition_threshold: float = 0.05
    step: float = None
    cross_tol: float = None
    refine: int = 1
    separability_threshold: float = 0.05
    threads: int = 1
    normalize: bool = True


@dataclass
class SeparationResult:
    x: object
    pca: object
    samples: object
    grid: object
    field: object
    weights: object
    corr: np.ndarray
    partitions: list
    maps: list = field(default_factory=list)
    verdict: object = None
    u: np.ndarray = None
    u_valid: np.ndarray = None
    reason: str = ""

    @property
    def separable(self):
        return self.verdict is not None and self.verdict.separable

    @property
    def report(self):
        return None if self.verdict is None else self.verdict.report


def frame_field(x, options):
    samples = estimate_velocity(x)
    grid = build_grid(samples, options.bins_per_dim, options.min_count, options.margin)
    frames = build_frames(grid, options.degeneracy_tol)
    if not frames:
        raise NoValidBinsError()
    return samples, grid, align_frames(grid, frames)


def separate(series, options=None, force_map=False):
    """Run normalize -> bin -> frames -> weights -> partitions -> map -> verdict.

    With ``force_map`` a candidate map is built from the least correlated
    bipartition even when no partition passes the weight threshold.
    """
    options = options or SeparationOptions()
    if options.normalize:
        x, pca = pca_normalize(series)
    else:
        x, pca = series, None
    samples, grid, fld = frame_field(x, options)
    weights = compute_weights(samples, fld)
    corr = weight_correlation(weights)
    parts = enumerate_partitions(corr, options.partition_threshold)
    res = SeparationResult(x=x, pca=pca, samples=samples, grid=grid, field=fld,
                           weights=weights, corr=corr, partitions=parts)
    candidates = parts
    if not parts:
        res.reason = "weight components do not split into uncorrelated groups"
        if not force_map:
            return res
        candidates = [min(enumerate_partitions(corr, np.inf), key=lambda p: p.score)]
    if x.n_channels != 2:
        res.reason = "map construction limited to 2 dimensions"
        return res
    res.maps = [build_map(fld, p, step=options.step, cross_tol=options.cross_tol,
                          refine=options.refine, threads=options.threads)
                for p in candidates]
    verdict = verdict_pipeline(x, res.maps, options.separability_threshold)
    res.verdict = verdict
    if not parts:
        verdict.separable = False
    elif not verdict.separable:
        res.reason = "no candidate map factorizes the cross-statistics"
    res.u, res.u_valid = evaluate_on_series(verdict.best_map, x)
    return res


def subsystem_weights(sources, blocks, options=None):
    """Weights computed from each block of separable coordinates on its own.

    Each block of ``sources`` gets its own grid and frames; the weight
    columns are concatenated in block order. Returns (t_index, w).
    """
    options = options or SeparationOptions()
    cols = []
    t_index = None
    for block in blocks:
        sub = sources.select(block)
        samples, _, fld = frame_field(sub, options)
        w = compute_weights(samples, fld)
        if t_index is None:
            t_index = w.t_index
        elif not np.array_equal(t_index, w.t_index):
            common = np.intersect1d(t_index, w.t_index)
            cols = [c[np.searchsorted(t_index, common)] for c in cols]
            w_sel = w.w[np.searchsorted(w.t_index, common)]
            t_index = common
            cols.append(w_sel)
            continue
        cols.append(w.w)
    return t_index, np.hstack(cols)
