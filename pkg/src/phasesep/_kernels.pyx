# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: per-bin moment accumulation and grid streamline tracing.

Signatures and semantics match ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, fabs

cnp.import_array()

cdef double FAIL_WEIGHT = 1e-12
cdef enum:
    MAXDIM = 8


cdef inline void _neumaier(double* s, double* c, double x) noexcept nogil:
    cdef double t = s[0] + x
    if fabs(s[0]) >= fabs(x):
        c[0] += (s[0] - t) + x
    else:
        c[0] += (x - t) + s[0]
    s[0] = t


def accumulate_moments(v, bins, Py_ssize_t nbins, multisets):
    cdef double[:, ::1] V = np.ascontiguousarray(v, dtype=np.float64)
    cdef cnp.intp_t[::1] B = np.ascontiguousarray(bins, dtype=np.intp)
    cdef cnp.intp_t[:, ::1] MS = np.ascontiguousarray(multisets, dtype=np.intp)
    cdef Py_ssize_t n = V.shape[0], dim = V.shape[1], K = MS.shape[0]
    cdef Py_ssize_t i, k, l, j, b, m

    counts_a = np.zeros(nbins, dtype=np.intp)
    mean_a = np.zeros((nbins, dim))
    c2_a = np.zeros((nbins, dim, dim))
    c4_a = np.zeros((nbins, K))
    resid_a = np.zeros((nbins, dim))
    cdef cnp.intp_t[::1] counts = counts_a
    cdef double[:, ::1] mean = mean_a
    cdef double[:, :, ::1] c2 = c2_a
    cdef double[:, ::1] c4 = c4_a
    cdef double[:, ::1] resid = resid_a

    cdef double[:, ::1] s1 = np.zeros((nbins, dim)), e1 = np.zeros((nbins, dim))
    cdef double[:, :, ::1] s2 = np.zeros((nbins, dim, dim)), e2 = np.zeros((nbins, dim, dim))
    cdef double[:, ::1] s4 = np.zeros((nbins, K)), e4 = np.zeros((nbins, K))
    cdef double[:, ::1] sr = np.zeros((nbins, dim)), er = np.zeros((nbins, dim))
    cdef double cbuf[MAXDIM]
    cdef double p

    if dim > MAXDIM:
        raise ValueError("dimension exceeds compiled limit")

    with nogil:
        for i in range(n):
            b = B[i]
            counts[b] += 1
            for k in range(dim):
                _neumaier(&s1[b, k], &e1[b, k], V[i, k])
        for b in range(nbins):
            if counts[b] > 0:
                for k in range(dim):
                    mean[b, k] = (s1[b, k] + e1[b, k]) / counts[b]
        for i in range(n):
            b = B[i]
            for k in range(dim):
                cbuf[k] = V[i, k] - mean[b, k]
                _neumaier(&sr[b, k], &er[b, k], cbuf[k])
            for k in range(dim):
                for l in range(k, dim):
                    _neumaier(&s2[b, k, l], &e2[b, k, l], cbuf[k] * cbuf[l])
            for j in range(K):
                p = cbuf[MS[j, 0]] * cbuf[MS[j, 1]] * cbuf[MS[j, 2]] * cbuf[MS[j, 3]]
                _neumaier(&s4[b, j], &e4[b, j], p)
        for b in range(nbins):
            m = counts[b]
            if m == 0:
                continue
            for k in range(dim):
                resid[b, k] = (sr[b, k] + er[b, k]) / m
                for l in range(k, dim):
                    c2[b, k, l] = (s2[b, k, l] + e2[b, k, l]) / m
                    c2[b, l, k] = c2[b, k, l]
            for j in range(K):
                c4[b, j] = (s4[b, j] + e4[b, j]) / m
    return counts_a, mean_a, c2_a, c4_a, resid_a


cdef struct Grid:
    int dim
    int nvec
    double lower[MAXDIM]
    double width[MAXDIM]
    Py_ssize_t shape[MAXDIM]


cdef int _interp(Grid* g, double[:, ::1] vecs, const unsigned char[::1] mask,
                 double* x, double* out) noexcept nogil:
    """Write the unit interpolated direction to ``out``; return 0 on failure."""
    cdef Py_ssize_t i0[MAXDIM]
    cdef double t[MAXDIM]
    cdef double f, w, wsum = 0.0, nrm = 0.0
    cdef Py_ssize_t d, i, flat, corner, bit, k
    cdef int skip
    for k in range(g.nvec):
        out[k] = 0.0
    for d in range(g.dim):
        if g.shape[d] == 1:
            i0[d] = 0
            t[d] = 0.0
            continue
        f = (x[d] - g.lower[d]) / g.width[d] - 0.5
        i = <Py_ssize_t>floor(f)
        if i < 0:
            i = 0
        if i > g.shape[d] - 2:
            i = g.shape[d] - 2
        i0[d] = i
        f = f - i
        if f < 0.0:
            f = 0.0
        if f > 1.0:
            f = 1.0
        t[d] = f
    for corner in range(1 << g.dim):
        w = 1.0
        flat = 0
        skip = 0
        for d in range(g.dim):
            bit = (corner >> d) & 1
            if g.shape[d] == 1 and bit:
                skip = 1
                break
            if bit:
                w *= t[d]
            else:
                w *= 1.0 - t[d]
            flat = flat * g.shape[d] + i0[d] + bit
        if skip or w <= 0.0 or not mask[flat]:
            continue
        for k in range(g.nvec):
            out[k] += w * vecs[flat, k]
        wsum += w
    if wsum <= FAIL_WEIGHT:
        return 0
    for k in range(g.nvec):
        nrm += out[k] * out[k]
    nrm = sqrt(nrm)
    if nrm <= FAIL_WEIGHT * wsum:
        return 0
    for k in range(g.nvec):
        out[k] /= nrm
    return 1


cdef Grid _make_grid(lower, width, shape, Py_ssize_t nvec) except *:
    cdef Grid g
    cdef Py_ssize_t d
    g.dim = len(shape)
    if g.dim > MAXDIM:
        raise ValueError("dimension exceeds compiled limit")
    g.nvec = nvec
    for d in range(g.dim):
        g.lower[d] = lower[d]
        g.width[d] = width[d]
        g.shape[d] = shape[d]
    return g


def interp_grid(lower, width, shape, vecs, mask, x):
    cdef double[:, ::1] V = np.ascontiguousarray(vecs, dtype=np.float64)
    cdef const unsigned char[::1] MK = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Grid g = _make_grid(lower, width, shape, V.shape[1])
    cdef double xb[MAXDIM]
    cdef double ob[MAXDIM]
    cdef Py_ssize_t d
    for d in range(g.dim):
        xb[d] = x[d]
    if not _interp(&g, V, MK, xb, ob):
        return None
    return np.array([ob[d] for d in range(g.nvec)])


def interp_scalar_many(lower, width, shape, values, mask, points):
    cdef double[:, ::1] VAL = np.ascontiguousarray(values, dtype=np.float64)
    cdef const unsigned char[::1] MK = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef Grid g = _make_grid(lower, width, shape, VAL.shape[1])
    cdef Py_ssize_t n = P.shape[0], i, d, corner, bit, flat, k, ii
    out_a = np.zeros((n, g.nvec))
    ok_a = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] out = out_a
    cdef unsigned char[::1] ok = ok_a
    cdef Py_ssize_t i0[MAXDIM]
    cdef double t[MAXDIM]
    cdef double f, w, wsum
    with nogil:
        for i in range(n):
            for d in range(g.dim):
                f = (P[i, d] - g.lower[d]) / g.width[d]
                ii = <Py_ssize_t>floor(f)
                if ii < 0:
                    ii = 0
                if ii > g.shape[d] - 2:
                    ii = g.shape[d] - 2
                i0[d] = ii
                f = f - ii
                if f < 0.0:
                    f = 0.0
                if f > 1.0:
                    f = 1.0
                t[d] = f
            wsum = 0.0
            for corner in range(1 << g.dim):
                w = 1.0
                flat = 0
                for d in range(g.dim):
                    bit = (corner >> d) & 1
                    if bit:
                        w *= t[d]
                    else:
                        w *= 1.0 - t[d]
                    flat = flat * g.shape[d] + i0[d] + bit
                if w <= 0.0 or not MK[flat]:
                    continue
                for k in range(g.nvec):
                    out[i, k] += w * VAL[flat, k]
                wsum += w
            if wsum > FAIL_WEIGHT:
                ok[i] = 1
                for k in range(g.nvec):
                    out[i, k] /= wsum
    return out_a, ok_a.astype(bool)


cdef int _rk4(Grid* g, double[:, ::1] V, const unsigned char[::1] MK, double sign,
              double* x, double h, double* out) noexcept nogil:
    cdef double k1[MAXDIM]
    cdef double k2[MAXDIM]
    cdef double k3[MAXDIM]
    cdef double k4[MAXDIM]
    cdef double xs[MAXDIM]
    cdef Py_ssize_t d
    cdef int dim = g.dim
    if not _interp(g, V, MK, x, k1):
        return 0
    for d in range(dim):
        k1[d] *= sign
        xs[d] = x[d] + 0.5 * h * k1[d]
    if not _interp(g, V, MK, xs, k2):
        return 0
    for d in range(dim):
        k2[d] *= sign
        xs[d] = x[d] + 0.5 * h * k2[d]
    if not _interp(g, V, MK, xs, k3):
        return 0
    for d in range(dim):
        k3[d] *= sign
        xs[d] = x[d] + h * k3[d]
    if not _interp(g, V, MK, xs, k4):
        return 0
    for d in range(dim):
        k4[d] *= sign
        out[d] = x[d] + (h / 6.0) * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d])
    return 1


def trace_grid(lower, width, shape, vecs, mask, start, double sign, double step,
               double max_param, Py_ssize_t max_steps, lo, hi):
    cdef double[:, ::1] V = np.ascontiguousarray(vecs, dtype=np.float64)
    cdef const unsigned char[::1] MK = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Grid g = _make_grid(lower, width, shape, V.shape[1])
    cdef int dim = g.dim
    cdef double x[MAXDIM]
    cdef double xn[MAXDIM]
    cdef double blo[MAXDIM]
    cdef double bhi[MAXDIM]
    cdef Py_ssize_t d, it, npts = 1
    cdef double t = 0.0, h, alpha, delta
    cdef double eps = 1e-12 * (max_param if max_param > 1.0 else 1.0)
    cdef int outside

    pts_a = np.empty((max_steps + 1, dim))
    par_a = np.empty(max_steps + 1)
    cdef double[:, ::1] pts = pts_a
    cdef double[::1] par = par_a
    for d in range(dim):
        x[d] = start[d]
        blo[d] = lo[d]
        bhi[d] = hi[d]
        pts[0, d] = x[d]
    par[0] = 0.0

    with nogil:
        for it in range(max_steps):
            h = max_param - t
            if h > step:
                h = step
            if h <= eps:
                break
            if not _rk4(&g, V, MK, sign, x, h, xn):
                break
            outside = 0
            for d in range(dim):
                if xn[d] < blo[d] or xn[d] > bhi[d]:
                    outside = 1
            if outside:
                alpha = 1.0
                for d in range(dim):
                    delta = xn[d] - x[d]
                    if xn[d] < blo[d]:
                        if (blo[d] - x[d]) / delta < alpha:
                            alpha = (blo[d] - x[d]) / delta
                    elif xn[d] > bhi[d]:
                        if (bhi[d] - x[d]) / delta < alpha:
                            alpha = (bhi[d] - x[d]) / delta
                if alpha < 0.0:
                    alpha = 0.0
                h = alpha * h
                if h > eps and _rk4(&g, V, MK, sign, x, h, xn):
                    t += h
                    for d in range(dim):
                        if xn[d] < blo[d]:
                            xn[d] = blo[d]
                        if xn[d] > bhi[d]:
                            xn[d] = bhi[d]
                        pts[npts, d] = xn[d]
                    par[npts] = t
                    npts += 1
                break
            t += h
            for d in range(dim):
                x[d] = xn[d]
                pts[npts, d] = x[d]
            par[npts] = t
            npts += 1
    return pts_a[:npts].copy(), par_a[:npts].copy()
