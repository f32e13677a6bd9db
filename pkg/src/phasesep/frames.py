"""Local frame matrices built from velocity moments, and their aligned field."""

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._backend import kernels
from .binning import unpack_symmetric
from .errors import NoStencilError, NoValidBinsError, NotPositiveDefiniteError, OutOfBoundsError
from .signal_io import sym_eigh

DEGENERACY_TOL = 1e-3
PD_TOL = 1e-10


@dataclass
class LocalFrame:
    """Frame matrix ``M`` of one bin.

    ``V`` holds the columns of ``M^-1`` (one local vector per column) and
    ``D`` the diagonal of the contracted transformed quartic.
    """

    M: np.ndarray
    V: np.ndarray
    D: np.ndarray
    degenerate: bool
    valid: bool = True


def _as_full_c4(c4, dim):
    c4 = np.asarray(c4, dtype=float)
    if c4.ndim == 1:
        return unpack_symmetric(c4, dim)
    if c4.shape != (dim,) * 4:
        raise ValueError(f"C4 has shape {c4.shape}, expected {(dim,) * 4}")
    return c4


def quartic_contraction(M, c4_full):
    """Sum over m of the M-transformed fourth moment with indices (k, l, m, m)."""
    G = M.T @ M
    return M @ np.einsum("abcd,cd->ab", c4_full, G) @ M.T


def transformed_correlations(M, C2, C4):
    """Return (I2, Q): the M-transformed second moment and the contraction
    Q_kl = sum_m I_klmm of the M-transformed fourth moment."""
    M = np.asarray(M, dtype=float)
    C2 = np.asarray(C2, dtype=float)
    dim = C2.shape[0]
    if M.shape != (dim, dim) or C2.shape != (dim, dim):
        raise ValueError(f"shape mismatch: M {M.shape}, C2 {C2.shape}")
    c4 = _as_full_c4(C4, dim)
    return M @ C2 @ M.T, quartic_contraction(M, c4)


def _check_symmetric(C2, c4):
    scale = max(np.abs(C2).max(), np.finfo(float).tiny)
    if np.abs(C2 - C2.T).max() > 1e-12 * scale:
        raise ValueError("C2 is not symmetric")
    scale4 = max(np.abs(c4).max(), np.finfo(float).tiny)
    for perm in ((1, 0, 2, 3), (0, 2, 1, 3), (0, 1, 3, 2)):
        if np.abs(c4 - c4.transpose(perm)).max() > 1e-12 * scale4:
            raise ValueError("C4 is not fully symmetric")


def build_frame(C2, C4, degeneracy_tol=DEGENERACY_TOL, pd_tol=PD_TOL):
    """Frame matrix that whitens ``C2`` and diagonalizes the contracted quartic.

    M = R2 @ diag(lam)**-1/2 @ R1.T, where R1 holds the eigenvectors of C2
    (eigenvalues lam) and R2 the eigenvectors (as rows) of the contraction of
    the whitened fourth moment. Eigenvalues are taken in descending order and
    eigenvector signs are fixed so the largest-magnitude component is
    positive.
    """
    C2 = np.asarray(C2, dtype=float)
    if C2.ndim != 2 or C2.shape[0] != C2.shape[1]:
        raise ValueError(f"C2 must be square, got {C2.shape}")
    dim = C2.shape[0]
    c4 = _as_full_c4(C4, dim)
    _check_symmetric(C2, c4)

    lam, R1 = sym_eigh(C2)
    floor = pd_tol * np.trace(C2) / dim
    if lam[-1] <= floor or not np.all(np.isfinite(lam)):
        raise NotPositiveDefiniteError(
            f"C2 is not positive definite (smallest eigenvalue {lam[-1]:.3g})")
    W = R1.T / np.sqrt(lam)[:, None]
    Q = quartic_contraction(W, c4)
    D, R2 = sym_eigh(0.5 * (Q + Q.T))
    M = R2.T @ W
    return LocalFrame(M=M, V=np.linalg.inv(M), D=D,
                      degenerate=is_degenerate(D, degeneracy_tol))


def is_degenerate(D, tol=DEGENERACY_TOL):
    D = np.asarray(D, dtype=float)
    if len(D) < 2:
        return False
    gaps = np.abs(D[:, None] - D[None, :])[np.triu_indices(len(D), 1)]
    return bool(gaps.min() < tol * np.abs(D).max())


def _unit_rows(M):
    return M / np.linalg.norm(M, axis=1, keepdims=True)


def match_rows(M, ref_rows):
    """Signed permutation of the rows of ``M`` best matching ``ref_rows``.

    Maximizes sum_i |cos| between row perm[i] of M and ref row i, then flips
    signs so every matched pair has a positive dot product. Returns
    (perm, signs).
    """
    dim = M.shape[0]
    cos = _unit_rows(M) @ ref_rows.T  # cos[j, i]: row j of M vs ref row i
    if dim <= 4:
        best, best_score = None, -np.inf
        for perm in itertools.permutations(range(dim)):
            score = sum(abs(cos[perm[i], i]) for i in range(dim))
            if score > best_score + 1e-15:
                best, best_score = perm, score
        perm = np.array(best)
    else:
        rows, cols = linear_sum_assignment(-np.abs(cos))
        perm = np.empty(dim, dtype=int)
        perm[cols] = rows
    signs = np.where(cos[perm, np.arange(dim)] < 0, -1.0, 1.0)
    return perm, signs


def _procrustes_frame(target, W):
    """Orthogonal R minimizing |R W - target|; returns R W (still whitens C2)."""
    U, _, Vt = np.linalg.svd(target @ W.T)
    return U @ Vt @ W


def _neighbors(flat, shape):
    idx = np.unravel_index(flat, shape)
    out = []
    for d in range(len(shape)):
        for step in (-1, 1):
            j = list(idx)
            j[d] += step
            if 0 <= j[d] < shape[d]:
                out.append(int(np.ravel_multi_index(j, shape)))
    return sorted(out)


@dataclass
class FrameField:
    """Aligned per-bin frames on a rectangular grid.

    Arrays are indexed by flat bin; entries of bins without a frame are NaN.
    ``raw_M`` keeps each bin's frame before alignment and interpolation.
    ``perm``/``signs`` record the signed permutation applied to the raw rows
    (``M = signs[:, None] * raw_M[perm]``) for bins aligned directly;
    degenerate bins whose frame was replaced have ``replaced`` set.
    """

    lower: np.ndarray
    upper: np.ndarray
    shape: tuple
    M: np.ndarray
    D: np.ndarray
    raw_M: np.ndarray
    valid: np.ndarray
    degenerate: np.ndarray
    replaced: np.ndarray
    perm: np.ndarray
    signs: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.shape = tuple(int(s) for s in self.shape)
        self._unit_V = None
        self._V = None

    @property
    def dim(self):
        return len(self.shape)

    @property
    def width(self):
        return (self.upper - self.lower) / np.array(self.shape)

    @property
    def V(self):
        """Columns of the inverse of each aligned frame matrix."""
        if self._V is None:
            V = np.full_like(self.M, np.nan)
            ok = self.valid
            V[ok] = np.linalg.inv(self.M[ok])
            self._V = V
        return self._V

    def unit_vectors(self, group):
        """Unit-normalized local vector ``group`` of every bin, shape (n_bins, dim)."""
        if self._unit_V is None:
            V = np.nan_to_num(self.V)
            nrm = np.linalg.norm(V, axis=1, keepdims=True)
            self._unit_V = np.divide(V, nrm, out=np.zeros_like(V), where=nrm > 0)
        return np.ascontiguousarray(self._unit_V[:, :, group])

    def centers(self):
        idx = np.indices(self.shape).reshape(self.dim, -1).T
        return self.lower + (idx + 0.5) * self.width

    def field_mask(self):
        return np.ascontiguousarray(self.valid, dtype=np.uint8)

    def bin_indices(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.all((points >= self.lower) & (points <= self.upper), axis=1)
        f = (points - self.lower) / self.width
        idx = np.clip(np.floor(f).astype(np.intp), 0, np.array(self.shape) - 1)
        return np.where(inside, np.ravel_multi_index(idx.T, self.shape), -1)

    def to_arrays(self):
        return dict(lower=self.lower, upper=self.upper, shape=np.array(self.shape),
                    M=self.M, D=self.D, raw_M=self.raw_M, valid=self.valid,
                    degenerate=self.degenerate, replaced=self.replaced,
                    perm=self.perm, signs=self.signs, counts=self.counts)

    @classmethod
    def from_arrays(cls, a):
        return cls(lower=a["lower"], upper=a["upper"], shape=tuple(a["shape"]),
                   M=a["M"], D=a["D"], raw_M=a["raw_M"], valid=a["valid"].astype(bool),
                   degenerate=a["degenerate"].astype(bool),
                   replaced=a["replaced"].astype(bool), perm=a["perm"],
                   signs=a["signs"], counts=a["counts"])

    @classmethod
    def from_matrices(cls, lower, upper, shape, M, valid=None, counts=None):
        """Field from given per-bin matrices (already aligned); for tests and
        synthetic fields."""
        M = np.asarray(M, dtype=float)
        n = M.shape[0]
        dim = M.shape[1]
        valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        M = M.copy()
        M[~valid] = np.nan
        return cls(lower=lower, upper=upper, shape=shape, M=M,
                   D=np.full((n, dim), np.nan), raw_M=M.copy(), valid=valid,
                   degenerate=np.zeros(n, dtype=bool), replaced=np.zeros(n, dtype=bool),
                   perm=np.tile(np.arange(dim), (n, 1)), signs=np.ones((n, dim)),
                   counts=np.ones(n, dtype=np.intp) if counts is None else counts)


def build_frames(grid, degeneracy_tol=DEGENERACY_TOL, pd_tol=PD_TOL):
    """Raw (unaligned) frames for every valid bin of a BinGrid.

    Returns a dict flat_index -> LocalFrame. Valid bins whose C2 is not
    positive definite are demoted (omitted).
    """
    frames = {}
    for b in np.flatnonzero(grid.valid):
        try:
            frames[int(b)] = build_frame(grid.c2[b], grid.c4_full(b), degeneracy_tol, pd_tol)
        except NotPositiveDefiniteError:
            continue
    return frames


def align_frames(grid, frames):
    """Make frames continuous across the grid.

    Breadth-first from the densest non-degenerate bin, each bin's rows are
    signed-permuted to agree with its already-aligned neighbours. Degenerate
    bins then take the whitening frame closest to the mean of their aligned
    neighbours.
    """
    if not frames:
        raise NoValidBinsError()
    shape, n, dim = grid.shape, grid.n_bins, grid.dim
    M = np.full((n, dim, dim), np.nan)
    raw = np.full((n, dim, dim), np.nan)
    D = np.full((n, dim), np.nan)
    valid = np.zeros(n, dtype=bool)
    degenerate = np.zeros(n, dtype=bool)
    replaced = np.zeros(n, dtype=bool)
    perm = np.tile(np.arange(dim), (n, 1))
    signs = np.ones((n, dim))
    for b, fr in frames.items():
        raw[b] = fr.M
        D[b] = fr.D
        valid[b] = True
        degenerate[b] = fr.degenerate
    counts = np.asarray(grid.counts)
    aligned = np.zeros(n, dtype=bool)

    def settle(b, ref_rows):
        p, s = match_rows(raw[b], ref_rows)
        perm[b], signs[b] = p, s
        M[b] = s[:, None] * raw[b][p]
        D[b] = D[b][p]
        aligned[b] = True

    def ref_from(bins):
        return sum(_unit_rows(M[j]) for j in bins)

    usable = valid & ~degenerate
    global_ref = None
    while True:
        todo = np.flatnonzero(usable & ~aligned)
        if len(todo) == 0:
            break
        # densest remaining bin, lowest flat index on ties
        seed = int(todo[np.argmax(counts[todo])])
        if global_ref is None:
            M[seed] = raw[seed]
            aligned[seed] = True
            global_ref = _unit_rows(M[seed])
        else:
            settle(seed, global_ref)
        queue = deque([seed])
        while queue:
            b = queue.popleft()
            for nb in _neighbors(b, shape):
                if usable[nb] and not aligned[nb]:
                    settle(nb, ref_from([j for j in _neighbors(nb, shape) if aligned[j]]))
                    queue.append(nb)

    # degenerate bins: fill from aligned neighbours, growing inward
    pending = set(np.flatnonzero(valid & degenerate).tolist())
    while pending:
        progress = []
        for b in sorted(pending):
            nbs = [j for j in _neighbors(b, shape) if aligned[j]]
            if nbs:
                progress.append((b, nbs))
        if not progress:
            # an isolated region of degenerate bins: keep the raw frame, aligned
            # to the global reference if there is one
            b = min(pending)
            if global_ref is None:
                M[b] = raw[b]
                aligned[b] = True
                global_ref = _unit_rows(M[b])
            else:
                settle(b, global_ref)
            pending.discard(b)
            continue
        for b, nbs in progress:
            target = np.mean([M[j] for j in nbs], axis=0)
            W = _whitener(grid.c2[b])
            M[b] = _procrustes_frame(target, W)
            replaced[b] = True
            aligned[b] = True
            pending.discard(b)

    return FrameField(lower=grid.lower, upper=grid.upper, shape=shape, M=M, D=D,
                      raw_M=raw, valid=valid, degenerate=degenerate, replaced=replaced,
                      perm=perm, signs=signs, counts=counts.copy())


def _whitener(C2):
    lam, R1 = sym_eigh(C2)
    return R1.T / np.sqrt(lam)[:, None]


def field_at(field, x, group):
    """Interpolated unit direction of local vector ``group`` at ``x``."""
    if not np.isscalar(group):
        group = list(group)
        if len(group) != 1:
            raise ValueError("field_at expects a single-vector group")
        group = group[0]
    x = np.asarray(x, dtype=float)
    if np.any(x < field.lower) or np.any(x > field.upper):
        raise OutOfBoundsError(f"point {x.tolist()} lies outside the grid")
    d = kernels.interp_grid(field.lower, field.width, field.shape,
                            field.unit_vectors(group), field.field_mask(), x)
    if d is None:
        raise NoStencilError(f"no valid bin in the interpolation stencil at {x.tolist()}")
    return d


def frame_residuals(field, grid):
    """Per valid bin: max |M C2 M^T - I| and the relative off-diagonal size of
    the contracted quartic, evaluated on the raw frames."""
    out = {}
    for b in np.flatnonzero(field.valid):
        Mb = field.raw_M[b]
        I2, Q = transformed_correlations(Mb, grid.c2[b], grid.c4_full(b))
        off = Q - np.diag(np.diag(Q))
        out[int(b)] = (np.abs(I2 - np.eye(len(Mb))).max(),
                       np.abs(off).max() / np.abs(np.diag(Q)).max())
    return out
