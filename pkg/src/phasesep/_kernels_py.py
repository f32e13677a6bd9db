"""Pure-Python/NumPy implementations of the hot kernels.

These mirror ``_kernels.pyx`` function for function and are used when the
compiled extension is unavailable (or ``PHASESEP_PURE=1``).
"""

import math

import numpy as np

_FAIL_WEIGHT = 1e-12


def accumulate_moments(v, bins, nbins, multisets):
    """Per-bin count, mean, centered 2nd moments and centered 4th moments.

    ``multisets`` is a (K, 4) index array naming the distinct entries of the
    fully symmetric fourth-order tensor. Sums are exactly rounded (fsum), so
    the result does not depend on sample order. ``resid`` holds the mean of
    the centered velocities per bin, which should vanish.
    """
    v = np.ascontiguousarray(v, dtype=float)
    bins = np.asarray(bins, dtype=np.intp)
    n, dim = v.shape
    counts = np.bincount(bins, minlength=nbins).astype(np.intp)
    mean = np.zeros((nbins, dim))
    c2 = np.zeros((nbins, dim, dim))
    c4 = np.zeros((nbins, len(multisets)))
    resid = np.zeros((nbins, dim))
    order = np.argsort(bins, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)])
    ms = np.asarray(multisets)
    for b in np.flatnonzero(counts):
        vb = v[order[starts[b]:starts[b + 1]]]
        m = len(vb)
        mu = np.array([math.fsum(vb[:, k].tolist()) / m for k in range(dim)])
        c = vb - mu
        mean[b] = mu
        resid[b] = [math.fsum(c[:, k].tolist()) / m for k in range(dim)]
        for k in range(dim):
            for l in range(k, dim):
                c2[b, k, l] = c2[b, l, k] = math.fsum((c[:, k] * c[:, l]).tolist()) / m
        prods = c[:, ms[:, 0]] * c[:, ms[:, 1]] * c[:, ms[:, 2]] * c[:, ms[:, 3]]
        for j in range(len(ms)):
            c4[b, j] = math.fsum(prods[:, j].tolist()) / m
    return counts, mean, c2, c4, resid


def _stencil(lower, width, shape, x):
    dim = len(shape)
    i0 = np.empty(dim, dtype=np.intp)
    t = np.empty(dim)
    for d in range(dim):
        if shape[d] == 1:
            i0[d], t[d] = 0, 0.0
            continue
        f = (x[d] - lower[d]) / width[d] - 0.5
        i = int(math.floor(f))
        i = min(max(i, 0), shape[d] - 2)
        i0[d] = i
        t[d] = min(max(f - i, 0.0), 1.0)
    return i0, t


def interp_grid(lower, width, shape, vecs, mask, x):
    """Masked multilinear interpolation of bin-center vectors, renormalized.

    Returns the unit vector, or None when no valid bin carries weight or the
    interpolated vector vanishes.
    """
    dim = len(shape)
    i0, t = _stencil(lower, width, shape, x)
    acc = np.zeros(vecs.shape[1])
    wsum = 0.0
    for corner in range(1 << dim):
        w = 1.0
        flat = 0
        for d in range(dim):
            bit = (corner >> d) & 1
            if shape[d] == 1 and bit:
                w = 0.0
                break
            w *= t[d] if bit else 1.0 - t[d]
            flat = flat * shape[d] + i0[d] + bit
        if w <= 0.0 or not mask[flat]:
            continue
        acc += w * vecs[flat]
        wsum += w
    if wsum <= _FAIL_WEIGHT:
        return None
    nrm = math.sqrt(float(acc @ acc))
    if nrm <= _FAIL_WEIGHT * wsum:
        return None
    return acc / nrm


def interp_scalar(lower, width, shape, values, mask, x):
    """Masked multilinear interpolation of node values (nodes at bin corners).

    ``lower`` is the first node, ``width`` the node spacing, ``shape`` the
    node counts. Returns (value_vector, ok).
    """
    dim = len(shape)
    i0 = np.empty(dim, dtype=np.intp)
    t = np.empty(dim)
    for d in range(dim):
        f = (x[d] - lower[d]) / width[d]
        i = min(max(int(math.floor(f)), 0), shape[d] - 2)
        i0[d] = i
        t[d] = min(max(f - i, 0.0), 1.0)
    acc = np.zeros(values.shape[1])
    wsum = 0.0
    for corner in range(1 << dim):
        w = 1.0
        flat = 0
        for d in range(dim):
            bit = (corner >> d) & 1
            w *= t[d] if bit else 1.0 - t[d]
            flat = flat * shape[d] + i0[d] + bit
        if w <= 0.0 or not mask[flat]:
            continue
        acc += w * values[flat]
        wsum += w
    if wsum <= _FAIL_WEIGHT:
        return acc, False
    return acc / wsum, True


def interp_scalar_many(lower, width, shape, values, mask, points):
    out = np.zeros((len(points), values.shape[1]))
    ok = np.zeros(len(points), dtype=bool)
    for i, p in enumerate(points):
        out[i], ok[i] = interp_scalar(lower, width, shape, values, mask, p)
    return out, ok


def _rk4_step(func, x, h):
    k1 = func(x)
    if k1 is None:
        return None
    k2 = func(x + 0.5 * h * k1)
    if k2 is None:
        return None
    k3 = func(x + 0.5 * h * k2)
    if k3 is None:
        return None
    k4 = func(x + h * k3)
    if k4 is None:
        return None
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _exit_fraction(x, xn, lo, hi):
    """Fraction of the step x -> xn that stays inside the box."""
    alpha = 1.0
    for d in range(len(x)):
        delta = xn[d] - x[d]
        if xn[d] < lo[d]:
            alpha = min(alpha, (lo[d] - x[d]) / delta)
        elif xn[d] > hi[d]:
            alpha = min(alpha, (hi[d] - x[d]) / delta)
    return max(alpha, 0.0)


def rk4_trace(func, start, step, max_param, max_steps, lo, hi):
    """Fixed-step RK4 integration of a unit vector field.

    ``func(x)`` returns a direction or None (no field there). Integration
    stops at ``max_param``, when a stage leaves the field, or at the box
    [lo, hi]; a step that would leave the box is replaced by a shortened
    step ending on the boundary. Returns (points, params).
    """
    x = np.array(start, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pts = [x.copy()]
    params = [0.0]
    t = 0.0
    eps = 1e-12 * max(max_param, 1.0)
    for _ in range(max_steps):
        h = min(step, max_param - t)
        if h <= eps:
            break
        xn = _rk4_step(func, x, h)
        if xn is None:
            break
        if np.any(xn < lo) or np.any(xn > hi):
            h = _exit_fraction(x, xn, lo, hi) * h
            if h > eps:
                xn = _rk4_step(func, x, h)
                if xn is not None:
                    x = np.minimum(np.maximum(xn, lo), hi)
                    t += h
                    pts.append(x.copy())
                    params.append(t)
            break
        x = xn
        t += h
        pts.append(x.copy())
        params.append(t)
    return np.array(pts), np.array(params)


def trace_grid(lower, width, shape, vecs, mask, start, sign, step, max_param,
               max_steps, lo, hi):
    lower = np.asarray(lower, dtype=float)
    width = np.asarray(width, dtype=float)
    shape = tuple(int(s) for s in shape)

    def func(p):
        d = interp_grid(lower, width, shape, vecs, mask, p)
        return None if d is None else sign * d

    return rk4_trace(func, start, step, max_param, max_steps, lo, hi)
