"""Sensor-independent weight series and partitioning of their components."""

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import NoValidBinsError

MAX_MATCH_WIDTH = 8


@dataclass
class WeightSeries:
    """Per-sample weights ``w`` (shape (n, N)) with their time indices.

    ``dropped`` counts input samples that fell outside the frame grid.
    """

    t_index: np.ndarray
    w: np.ndarray
    dropped: int = 0

    def __post_init__(self):
        self.t_index = np.asarray(self.t_index, dtype=np.intp)
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if len(self.t_index) != len(self.w):
            raise ValueError("t_index and w must have equal length")

    def __len__(self):
        return len(self.t_index)

    @property
    def width(self):
        return self.w.shape[1]


@dataclass
class Partition:
    groups: tuple
    score: float

    def __post_init__(self):
        a, b = (tuple(sorted(int(i) for i in g)) for g in self.groups)
        if not a or not b or set(a) & set(b):
            raise ValueError(f"invalid bipartition {self.groups}")
        self.groups = (a, b)

    def swapped(self):
        return Partition((self.groups[1], self.groups[0]), self.score)


def nearest_valid_bins(field, bins):
    """Replace indices of bins without a frame by the nearest framed bin
    (center distance on integer offsets, lowest flat index on ties)."""
    valid = np.flatnonzero(field.valid)
    if len(valid) == 0:
        raise NoValidBinsError()
    out = np.asarray(bins).copy()
    bad = ~field.valid[out]
    if bad.any():
        idx = np.indices(field.shape).reshape(field.dim, -1).T
        uniq = np.unique(out[bad])
        diff = (idx[uniq][:, None, :] - idx[valid][None, :, :]) * field.width
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        table = dict(zip(uniq.tolist(), valid[np.argmin(d2, axis=1)].tolist()))
        out[bad] = [table[b] for b in out[bad]]
    return out


def compute_weights(samples, field):
    """Express each velocity in the local frame: w = M(bin(x)) @ v.

    Samples outside the grid are dropped and counted; samples in bins
    without a frame use the nearest framed bin.
    """
    if not field.valid.any():
        raise NoValidBinsError()
    bins = field.bin_indices(samples.x)
    keep = bins >= 0
    b = nearest_valid_bins(field, bins[keep])
    w = np.einsum("nij,nj->ni", field.M[b], samples.v[keep])
    return WeightSeries(samples.t_index[keep], w, dropped=int(np.count_nonzero(~keep)))


def weight_correlation(w):
    """Pearson correlation matrix of the weight components."""
    x = w.w if isinstance(w, WeightSeries) else np.atleast_2d(np.asarray(w, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    xc = x - x.mean(axis=0)
    sd = np.sqrt(np.einsum("ij,ij->j", xc, xc) / len(x))
    flat = (sd == 0) | (sd <= 1e-12 * np.abs(x).max(axis=0))
    if flat.any():
        raise ValueError(f"zero-variance weight component(s): {np.flatnonzero(flat).tolist()}")
    z = xc / sd
    corr = z.T @ z / len(x)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr


def enumerate_partitions(corr, threshold=0.05):
    """All bipartitions whose largest |cross-group correlation| is at most
    ``threshold``, best first. An empty list means no acceptable split."""
    corr = np.asarray(corr, dtype=float)
    n = corr.shape[0]
    if n < 2:
        raise ValueError("need at least 2 components to partition")
    out = []
    rest = tuple(range(1, n))
    # component 0 always in the first group, so each split is listed once
    for r in range(0, n - 1):
        for extra in itertools.combinations(rest, r):
            a = (0,) + extra
            b = tuple(i for i in range(n) if i not in a)
            score = float(np.abs(corr[np.ix_(a, b)]).max())
            if score <= threshold:
                out.append(Partition((a, b), score))
    out.sort(key=lambda p: (p.score, p.groups))
    return out


def signed_permutations(n):
    for perm in itertools.permutations(range(n)):
        for signs in itertools.product((1.0, -1.0), repeat=n):
            yield np.array(perm), np.array(signs)


def match_signed_permutation(a, b):
    """Signed permutation P minimizing |a - P b| over samples.

    Returns ``(perm, signs, residual)`` with ``(P b)[:, i] = signs[i] *
    b[:, perm[i]]`` and ``residual = rms(a - P b) / rms(a)``.
    """
    A = a.w if isinstance(a, WeightSeries) else np.atleast_2d(np.asarray(a, dtype=float))
    B = b.w if isinstance(b, WeightSeries) else np.atleast_2d(np.asarray(b, dtype=float))
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    n = A.shape[1]
    if n > MAX_MATCH_WIDTH:
        raise ValueError(f"width {n} exceeds the exhaustive-search cap {MAX_MATCH_WIDTH}")
    # |a - Pb|^2 = |a|^2 + |b|^2 - 2 sum_i s_i <a_i, b_perm(i)>, so for a given
    # permutation the best signs are sign(<a_i, b_perm(i)>)
    G = A.T @ B
    best = None
    for perm in itertools.permutations(range(n)):
        g = G[np.arange(n), list(perm)]
        score = np.abs(g).sum()
        if best is None or score > best[0] + 1e-12 * abs(best[0]):
            best = (score, np.array(perm), np.where(g < 0, -1.0, 1.0))
    _, perm, signs = best
    resid = np.sqrt(np.mean((A - signs * B[:, perm]) ** 2)) / np.sqrt(np.mean(A ** 2))
    return perm, signs, float(resid)


def apply_signed_permutation(b, perm, signs):
    B = b.w if isinstance(b, WeightSeries) else np.asarray(b)
    return signs * B[:, perm]
