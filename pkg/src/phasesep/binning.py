"""Velocity estimation and per-bin velocity moment accumulation over x-space."""

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._backend import kernels
from .errors import NoValidBinsError, OutOfBoundsError


class PhaseSample(NamedTuple):
    t_index: int
    x: np.ndarray
    v: np.ndarray


@dataclass
class PhaseSamples:
    """Struct-of-arrays collection of (x, v) pairs with their time indices."""

    t_index: np.ndarray
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.t_index = np.asarray(self.t_index, dtype=np.intp)
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if not (len(self.t_index) == len(self.x) == len(self.v)):
            raise ValueError("t_index, x and v must have equal length")
        if self.x.shape != self.v.shape:
            raise ValueError("x and v must have the same shape")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("phase samples must be finite")

    def __len__(self):
        return len(self.t_index)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return PhaseSample(int(self.t_index[i]), self.x[i], self.v[i])
        return PhaseSamples(self.t_index[i], self.x[i], self.v[i])

    @property
    def dim(self):
        return self.x.shape[1]


def estimate_velocity(series):
    """Central-difference velocities; the two endpoint samples are dropped."""
    x = series.samples
    if len(x) < 3:
        raise ValueError(f"need at least 3 samples, got {len(x)}")
    v = (x[2:] - x[:-2]) * (series.sample_rate / 2.0)
    return PhaseSamples(np.arange(1, len(x) - 1), x[1:-1].copy(), v)


def symmetric_multisets(dim, order=4):
    """Sorted index tuples naming the distinct entries of a symmetric tensor."""
    return np.array(list(itertools.combinations_with_replacement(range(dim), order)),
                    dtype=np.intp).reshape(-1, order)


def unpack_symmetric(packed, dim, multisets=None):
    """Rebuild the full fourth-order tensor(s) from the multiset representation."""
    ms = symmetric_multisets(dim) if multisets is None else multisets
    packed = np.asarray(packed)
    full = np.zeros(packed.shape[:-1] + (dim,) * 4)
    for j, idx in enumerate(ms):
        for perm in set(itertools.permutations(idx)):
            full[(...,) + perm] = packed[..., j]
    return full


def pack_symmetric(full):
    """Symmetrize a fourth-order tensor and keep its distinct entries."""
    full = np.asarray(full, dtype=float)
    dim = full.shape[-1]
    ms = symmetric_multisets(dim)
    out = np.empty(full.shape[:-4] + (len(ms),))
    for j, idx in enumerate(ms):
        perms = set(itertools.permutations(idx))
        out[..., j] = sum(full[(...,) + p] for p in perms) / len(perms)
    return out


@dataclass
class BinGrid:
    """Rectangular partition of x-space with per-bin velocity moments.

    Per-bin arrays are indexed by the C-order flat bin index. ``c4`` holds the
    distinct entries of the symmetric fourth-moment tensor, in the order of
    ``symmetric_multisets(dim)``. ``sample_bin`` maps each input sample to
    its flat bin (-1 if it fell outside the bounds).
    """

    lower: np.ndarray
    upper: np.ndarray
    shape: tuple
    counts: np.ndarray
    mean: np.ndarray
    c2: np.ndarray
    c4: np.ndarray
    resid: np.ndarray
    min_count: int
    sample_bin: np.ndarray = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.shape = tuple(int(s) for s in self.shape)
        self._nearest = None

    @property
    def dim(self):
        return len(self.shape)

    @property
    def n_bins(self):
        return int(np.prod(self.shape))

    @property
    def width(self):
        return (self.upper - self.lower) / np.array(self.shape)

    @property
    def valid(self):
        return self.counts >= self.min_count

    @property
    def multisets(self):
        return symmetric_multisets(self.dim)

    def c4_full(self, b):
        return unpack_symmetric(self.c4[b], self.dim)

    def index_of(self, flat):
        return np.unravel_index(flat, self.shape)

    def flat_of(self, idx):
        return int(np.ravel_multi_index(tuple(int(i) for i in idx), self.shape))

    def centers(self):
        """Bin centers, shape (n_bins, dim), in flat-index order."""
        idx = np.indices(self.shape).reshape(self.dim, -1).T
        return self.lower + (idx + 0.5) * self.width

    def bin_indices(self, points):
        """Flat bin index for each point; -1 where the point is out of bounds."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.all((points >= self.lower) & (points <= self.upper), axis=1)
        f = (points - self.lower) / self.width
        idx = np.clip(np.floor(f).astype(np.intp), 0, np.array(self.shape) - 1)
        flat = np.ravel_multi_index(idx.T, self.shape)
        return np.where(inside, flat, -1)

    def nearest_valid_table(self):
        """For every bin, the nearest valid bin by center distance.

        Distances are evaluated on integer bin offsets scaled by the bin width,
        so symmetric neighbours tie exactly; ties go to the lowest flat index.
        """
        if self._nearest is None:
            valid = np.flatnonzero(self.valid)
            if len(valid) == 0:
                raise NoValidBinsError()
            idx = np.indices(self.shape).reshape(self.dim, -1).T
            diff = (idx[:, None, :] - idx[None, valid, :]) * self.width
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            self._nearest = valid[np.argmin(d2, axis=1)]
        return self._nearest

    def to_arrays(self):
        return dict(lower=self.lower, upper=self.upper, shape=np.array(self.shape),
                    counts=self.counts, mean=self.mean, c2=self.c2, c4=self.c4,
                    resid=self.resid, min_count=np.array(self.min_count),
                    sample_bin=(self.sample_bin if self.sample_bin is not None
                                else np.zeros(0, dtype=np.intp)))

    @classmethod
    def from_arrays(cls, a):
        return cls(lower=a["lower"], upper=a["upper"], shape=tuple(a["shape"]),
                   counts=a["counts"], mean=a["mean"], c2=a["c2"], c4=a["c4"],
                   resid=a["resid"], min_count=int(a["min_count"]),
                   sample_bin=a["sample_bin"])


def grid_bounds(x, margin):
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = hi - lo
    if np.any(span <= 0):
        raise ValueError(f"zero-width dimension(s): {np.flatnonzero(span <= 0).tolist()}")
    return lo - margin * span, hi + margin * span


def build_grid(samples, bins_per_dim=16, min_count=50, margin=1e-6, bounds=None):
    """Sort phase samples into a rectangular grid and accumulate moments.

    Parameters
    ----------
    samples : PhaseSamples
    bins_per_dim : int or sequence of int
    min_count : int
        Bins with fewer samples are flagged invalid.
    margin : float
        Fraction of the data range added on each side of the bounds.
    bounds : (lower, upper), optional
        Explicit bounds; samples outside them are left unassigned.
    """
    if len(samples) == 0:
        raise ValueError("no phase samples")
    dim = samples.dim
    shape = ((int(bins_per_dim),) * dim if np.isscalar(bins_per_dim)
             else tuple(int(b) for b in bins_per_dim))
    if len(shape) != dim or min(shape) < 2:
        raise ValueError(f"bins_per_dim must give >= 2 bins in each of {dim} dims")
    if bounds is None:
        if len(samples) == 1:
            lo, hi = samples.x[0] - 0.5, samples.x[0] + 0.5
        else:
            lo, hi = grid_bounds(samples.x, margin)
    else:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        if np.any(hi <= lo):
            raise ValueError("zero-width dimension in explicit bounds")

    grid = BinGrid(lower=lo, upper=hi, shape=shape, counts=None, mean=None, c2=None,
                   c4=None, resid=None, min_count=int(min_count))
    sample_bin = grid.bin_indices(samples.x)
    keep = sample_bin >= 0
    counts, mean, c2, c4, resid = kernels.accumulate_moments(
        samples.v[keep], sample_bin[keep], grid.n_bins, symmetric_multisets(dim))
    grid.counts, grid.mean, grid.c2, grid.c4, grid.resid = counts, mean, c2, c4, resid
    grid.sample_bin = sample_bin
    return grid


def bin_lookup(grid, x):
    """Containing bin of ``x``, or the nearest valid bin if that one is invalid."""
    b = int(grid.bin_indices(x)[0])
    if b < 0:
        raise OutOfBoundsError(f"point {np.asarray(x).tolist()} lies outside the grid")
    if grid.valid[b]:
        return b
    return int(grid.nearest_valid_table()[b])
