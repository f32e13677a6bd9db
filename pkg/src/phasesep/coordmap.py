"""Separable coordinates from streamlines of the grouped local vector fields.

For a bipartition of the local vectors into groups 1 and 2, a reference curve
is traced through a base point ``x0`` along each group's field. A point gets
``u1`` from where the group-2 streamline through it meets the group-1
reference curve (arc length along that curve), and ``u2`` symmetrically.
"""

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from ._backend import kernels
from ._kernels_py import rk4_trace
from .errors import NoValidBinsError, OutOfBoundsError

MAX_STEPS = 10_000
STEP_FRACTION = 0.01
CROSS_TOL_BINS = 0.25


@dataclass
class Streamline:
    """Polyline with a strictly monotone signed arc-length parameter."""

    points: np.ndarray
    params: np.ndarray

    def __len__(self):
        return len(self.params)

    @property
    def endpoint(self):
        return self.points[-1]


def default_step(lower, upper):
    return STEP_FRACTION * float(np.linalg.norm(np.asarray(upper) - np.asarray(lower)))


def _group_index(group):
    if np.isscalar(group):
        return int(group)
    group = list(group)
    if len(group) != 1:
        raise NotImplementedError("map construction supports one vector per group")
    return int(group[0])


def trace_streamline(field, start, group=0, direction=1, max_param=None, step=None,
                     max_steps=MAX_STEPS, bounds=None):
    """Fixed-step RK4 streamline of a unit vector field.

    Parameters
    ----------
    field : FrameField or callable
        A FrameField (its ``group`` local vector is used), or a callable
        ``f(x) -> direction or None`` in which case ``bounds`` is required.
    start : array_like
    direction : +1 or -1
        Follow the field or its reverse. Parameters carry this sign.
    max_param : float, optional
        Arc length at which to stop; defaults to ``max_steps * step``.
    step : float, optional
        Defaults to 1% of the domain diagonal.

    The trace also stops when it would leave the domain (after a last,
    shortened step onto the boundary) or when the field is undefined.
    """
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    start = np.asarray(start, dtype=float)
    if callable(field):
        if bounds is None:
            raise ValueError("bounds are required for a callable field")
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    else:
        lo, hi = field.lower, field.upper
    if np.any(start < lo) or np.any(start > hi):
        raise OutOfBoundsError(f"start {start.tolist()} lies outside the domain")
    step = default_step(lo, hi) if step is None else float(step)
    if max_param is None:
        max_param = step * max_steps
    if callable(field):
        def func(x):
            d = field(x)
            return None if d is None else direction * np.asarray(d, dtype=float)
        pts, par = rk4_trace(func, start, step, max_param, max_steps, lo, hi)
    else:
        g = _group_index(group)
        pts, par = kernels.trace_grid(field.lower, field.width, field.shape,
                                      field.unit_vectors(g), field.field_mask(), start,
                                      float(direction), step, float(max_param),
                                      int(max_steps), lo, hi)
    return Streamline(pts, direction * par)


def trace_both(field, start, group, step, max_steps=MAX_STEPS):
    """Streamline through ``start`` in both directions, ordered by parameter."""
    fw = trace_streamline(field, start, group, +1, step=step, max_steps=max_steps)
    bw = trace_streamline(field, start, group, -1, step=step, max_steps=max_steps)
    pts = np.concatenate([bw.points[:0:-1], fw.points])
    par = np.concatenate([bw.params[:0:-1], fw.params])
    return Streamline(pts, par)


def _closest_segment_points(p0, p1, q0, q1):
    """Parameters (s, t) in [0, 1] of the closest points between segments
    p0-p1 and q0-q1, and their distance."""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    eps = 1e-300
    if a <= eps and e <= eps:
        return 0.0, 0.0, float(np.linalg.norm(r))
    if a <= eps:
        s, t = 0.0, min(max(f / e, 0.0), 1.0)
    else:
        c = d1 @ r
        if e <= eps:
            t, s = 0.0, min(max(-c / a, 0.0), 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t, s = 1.0, min(max((b - c) / a, 0.0), 1.0)
    gap = (p0 + s * d1) - (q0 + t * d2)
    return s, t, float(np.sqrt(gap @ gap))


class _Reference:
    """A reference curve with a KD-tree over its vertices."""

    def __init__(self, line):
        self.line = line
        self.tree = cKDTree(line.points)

    def crossing(self, traced):
        """(distance, parameter) of the closest approach of ``traced``."""
        P, R, par = traced.points, self.line.points, self.line.params
        dist, j = self.tree.query(P)
        i = int(np.argmin(dist))
        j = int(j[i])
        best = (float(dist[i]), float(par[j]))
        for ii in range(max(i - 1, 0), min(i + 1, len(P) - 1)):
            for jj in range(max(j - 1, 0), min(j + 1, len(R) - 1)):
                _, t, d = _closest_segment_points(P[ii], P[ii + 1], R[jj], R[jj + 1])
                if d < best[0]:
                    best = (d, float(par[jj] + t * (par[jj + 1] - par[jj])))
        if len(P) == 1:
            for jj in range(max(j - 1, 0), min(j + 1, len(R) - 1)):
                _, t, d = _closest_segment_points(P[0], P[0], R[jj], R[jj + 1])
                if d < best[0]:
                    best = (d, float(par[jj] + t * (par[jj + 1] - par[jj])))
        return best


@dataclass
class CoordinateMap:
    """Separable coordinates ``u`` sampled on a node lattice.

    Nodes sit on bin corners (``refine`` nodes per bin edge). ``u`` has shape
    (n_nodes, 2); ``defined`` marks nodes whose streamlines met both
    reference curves; ``support`` marks nodes touching a valid bin.
    """

    x0: np.ndarray
    gamma1: Streamline
    gamma2: Streamline
    node_lower: np.ndarray
    node_spacing: np.ndarray
    node_shape: tuple
    u: np.ndarray
    defined: np.ndarray
    support: np.ndarray
    groups: tuple
    step: float
    cross_tol: float

    def __post_init__(self):
        self.node_shape = tuple(int(s) for s in self.node_shape)

    def nodes(self):
        idx = np.indices(self.node_shape).reshape(len(self.node_shape), -1).T
        return self.node_lower + idx * self.node_spacing

    @property
    def node_upper(self):
        return self.node_lower + (np.array(self.node_shape) - 1) * self.node_spacing

    def defined_fraction(self):
        n = np.count_nonzero(self.support)
        return float(np.count_nonzero(self.defined & self.support) / n) if n else 0.0

    def remap(self, component, func):
        """Copy with ``func`` applied to the node values of one component."""
        u = self.u.copy()
        u[:, component] = func(u[:, component])
        return CoordinateMap(self.x0, self.gamma1, self.gamma2, self.node_lower,
                             self.node_spacing, self.node_shape, u, self.defined,
                             self.support, self.groups, self.step, self.cross_tol)

    def to_arrays(self):
        return dict(x0=self.x0, g1_points=self.gamma1.points, g1_params=self.gamma1.params,
                    g2_points=self.gamma2.points, g2_params=self.gamma2.params,
                    node_lower=self.node_lower, node_spacing=self.node_spacing,
                    node_shape=np.array(self.node_shape), u=self.u, defined=self.defined,
                    support=self.support, groups=np.array(self.groups),
                    step=np.array(self.step), cross_tol=np.array(self.cross_tol))

    @classmethod
    def from_arrays(cls, a):
        return cls(x0=a["x0"], gamma1=Streamline(a["g1_points"], a["g1_params"]),
                   gamma2=Streamline(a["g2_points"], a["g2_params"]),
                   node_lower=a["node_lower"], node_spacing=a["node_spacing"],
                   node_shape=tuple(a["node_shape"]), u=a["u"],
                   defined=a["defined"].astype(bool), support=a["support"].astype(bool),
                   groups=tuple(tuple(int(i) for i in g) for g in a["groups"]),
                   step=float(a["step"]), cross_tol=float(a["cross_tol"]))


def default_base_point(field):
    ok = np.flatnonzero(field.valid)
    if len(ok) == 0:
        raise NoValidBinsError()
    b = int(ok[np.argmax(field.counts[ok])])
    return field.centers()[b]


def _support_nodes(field, refine):
    """Nodes that are corners of, or lie inside, at least one valid bin."""
    node_shape = tuple(s * refine + 1 for s in field.shape)
    valid = field.valid.reshape(field.shape)
    support = np.zeros(node_shape, dtype=bool)
    for idx in np.ndindex(*node_shape):
        ranges = []
        for d, i in enumerate(idx):
            cand = {i // refine, (i - 1) // refine if i % refine == 0 else i // refine}
            ranges.append([b for b in cand if 0 <= b < field.shape[d]])
        support[idx] = any(valid[b] for b in itertools.product(*ranges))
    return node_shape, support.ravel()


def build_map(field, partition, x0=None, step=None, cross_tol=None, refine=1,
              max_steps=MAX_STEPS, threads=1):
    """Construct the coordinate map for a two-group partition of a 2-D field.

    Parameters
    ----------
    field : FrameField
    partition : Partition or pair of index groups
    x0 : array_like, optional
        Base point; defaults to the center of the most populated valid bin.
    step : float, optional
        RK4 step; defaults to 1% of the domain diagonal.
    cross_tol : float, optional
        Largest accepted closest-approach distance; defaults to a quarter of
        the smallest bin width.
    refine : int
        Nodes per bin edge.
    """
    groups = getattr(partition, "groups", partition)
    g1, g2 = (_group_index(g) for g in groups)
    if field.dim != 2:
        raise NotImplementedError("the map builder handles 2-dimensional fields only")
    if x0 is None:
        x0 = default_base_point(field)
    x0 = np.asarray(x0, dtype=float)
    b0 = int(field.bin_indices(x0)[0])
    if b0 < 0 or not field.valid[b0]:
        raise ValueError(f"base point {x0.tolist()} is not in a valid bin")
    step = default_step(field.lower, field.upper) if step is None else float(step)
    cross_tol = CROSS_TOL_BINS * float(field.width.min()) if cross_tol is None else float(cross_tol)

    gamma1 = trace_both(field, x0, g1, step, max_steps)
    gamma2 = trace_both(field, x0, g2, step, max_steps)
    if len(gamma1) < 2 or len(gamma2) < 2:
        raise ValueError("reference curve has fewer than 2 vertices")
    ref1, ref2 = _Reference(gamma1), _Reference(gamma2)

    node_shape, support = _support_nodes(field, refine)
    spacing = field.width / refine
    idx = np.indices(node_shape).reshape(2, -1).T
    nodes = field.lower + idx * spacing
    # keep nodes strictly inside the domain for tracing
    nodes = np.minimum(np.maximum(nodes, field.lower), field.upper)

    def solve(k):
        if not support[k]:
            return k, np.nan, np.nan, False
        across2 = trace_both(field, nodes[k], g2, step, max_steps)
        d1, u1 = ref1.crossing(across2)
        across1 = trace_both(field, nodes[k], g1, step, max_steps)
        d2, u2 = ref2.crossing(across1)
        ok = d1 < cross_tol and d2 < cross_tol
        return k, u1, u2, ok

    u = np.full((len(nodes), 2), np.nan)
    defined = np.zeros(len(nodes), dtype=bool)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, range(len(nodes))))
    else:
        results = [solve(k) for k in range(len(nodes))]
    for k, u1, u2, ok in results:
        if ok:
            u[k] = (u1, u2)
            defined[k] = True

    return CoordinateMap(x0=x0, gamma1=gamma1, gamma2=gamma2, node_lower=field.lower.copy(),
                         node_spacing=spacing, node_shape=node_shape, u=u, defined=defined,
                         support=support, groups=((g1,), (g2,)),
                         step=step, cross_tol=cross_tol)


class MapEvaluation(NamedTuple):
    u: np.ndarray
    index: np.ndarray
    dropped: int


def evaluate_map(cmap, points):
    """Interpolate ``u`` at each point; points without a defined stencil (or
    outside the node lattice) are dropped and counted."""
    if not cmap.defined.any():
        raise ValueError("coordinate map has no defined nodes")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.nan_to_num(cmap.u)
    u, ok = kernels.interp_scalar_many(cmap.node_lower, cmap.node_spacing, cmap.node_shape,
                                       vals, cmap.defined.astype(np.uint8), pts)
    inside = np.all((pts >= cmap.node_lower) & (pts <= cmap.node_upper), axis=1)
    ok = np.asarray(ok, dtype=bool) & inside
    # points sitting on a defined node (up to rounding of the node coordinates)
    # return that node's value exactly
    f = (pts - cmap.node_lower) / cmap.node_spacing
    r = np.rint(f)
    on_node = inside & np.all(np.abs(f - r) <= 1e-9, axis=1)
    if on_node.any():
        k = np.ravel_multi_index(r[on_node].astype(np.intp).T, cmap.node_shape)
        hit = cmap.defined[k]
        rows = np.flatnonzero(on_node)[hit]
        u = np.array(u, dtype=float, copy=True)
        u[rows] = cmap.u[k[hit]]
        ok[rows] = True
    index = np.flatnonzero(ok)
    return MapEvaluation(u[index], index, int(len(pts) - len(index)))


def constant_u_curves(field, cmap, n_lines=9):
    """Polylines of constant u1 and constant u2 for overlay plots.

    Returns a list of (component, u_value, Streamline). Curves of constant
    u1 are group-2 streamlines started on the group-1 reference curve.
    """
    out = []
    g1, g2 = cmap.groups[0][0], cmap.groups[1][0]
    for comp, ref, across in ((0, cmap.gamma1, g2), (1, cmap.gamma2, g1)):
        levels = np.linspace(ref.params[0], ref.params[-1], n_lines + 2)[1:-1]
        for lev in levels:
            p = np.array([np.interp(lev, ref.params, ref.points[:, d])
                          for d in range(ref.points.shape[1])])
            out.append((comp, float(lev), trace_both(field, p, across, cmap.step)))
    return out
