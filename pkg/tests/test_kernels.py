import os
import subprocess
import sys

import numpy as np
import pytest

from phasesep import _kernels_py
from phasesep.binning import symmetric_multisets

compiled = pytest.importorskip("phasesep._kernels", reason="compiled kernels not built")


def test_moment_accumulation_parity():
    rng = np.random.default_rng(0)
    n, nbins = 20_000, 37
    v = rng.standard_t(4, size=(n, 3)) * 1e4 + 50.0
    bins = rng.integers(0, nbins - 2, size=n)  # leave some bins empty
    ms = symmetric_multisets(3)
    a = _kernels_py.accumulate_moments(v, bins, nbins, ms)
    b = compiled.accumulate_moments(v, bins, nbins, ms)
    np.testing.assert_array_equal(a[0], b[0])
    for x, y in zip(a[1:4], b[1:4]):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-13 * np.abs(x).max())
    assert np.abs(b[4]).max() < 1e-12 * np.abs(a[1]).max()


def _field(rng, shape=(6, 5)):
    n = int(np.prod(shape))
    vecs = rng.standard_normal((n, 2))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    vecs[:, 0] = np.abs(vecs[:, 0]) + 0.5  # a field that flows in +x
    mask = (rng.uniform(size=n) > 0.15).astype(np.uint8)
    return np.array([-1.0, 0.0]), np.array([0.4, 0.3]), shape, vecs, mask


def test_vector_interpolation_parity():
    rng = np.random.default_rng(1)
    lower, width, shape, vecs, mask = _field(rng)
    upper = lower + width * np.array(shape)
    for x in rng.uniform(lower, upper, size=(500, 2)):
        a = _kernels_py.interp_grid(lower, width, shape, vecs, mask, x)
        b = compiled.interp_grid(lower, width, shape, vecs, mask, x)
        assert (a is None) == (b is None)
        if a is not None:
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_scalar_interpolation_parity():
    rng = np.random.default_rng(2)
    node_shape = (7, 6)
    values = rng.standard_normal((42, 2))
    mask = (rng.uniform(size=42) > 0.2).astype(np.uint8)
    lower, spacing = np.array([0.0, 0.0]), np.array([0.5, 0.25])
    pts = rng.uniform([-0.2, -0.2], [3.2, 1.5], size=(400, 2))
    a_u, a_ok = _kernels_py.interp_scalar_many(lower, spacing, node_shape, values, mask, pts)
    b_u, b_ok = compiled.interp_scalar_many(lower, spacing, node_shape, values, mask, pts)
    np.testing.assert_array_equal(np.asarray(a_ok, bool), np.asarray(b_ok, bool))
    ok = np.asarray(a_ok, bool)
    np.testing.assert_allclose(a_u[ok], b_u[ok], rtol=0, atol=1e-13)


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_grid_trace_parity(sign):
    rng = np.random.default_rng(3)
    lower, width, shape, vecs, mask = _field(rng)
    mask[:] = 1
    upper = lower + width * np.array(shape)
    start = lower + 0.5 * (upper - lower)
    a = _kernels_py.trace_grid(lower, width, shape, vecs, mask, start, sign, 0.01, 5.0,
                               10_000, lower, upper)
    b = compiled.trace_grid(lower, width, shape, vecs, mask, start, sign, 0.01, 5.0,
                            10_000, lower, upper)
    assert len(a[0]) == len(b[0]) > 10
    np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=0, atol=1e-12)


def test_fallback_is_selected_when_forced():
    env = dict(os.environ, PHASESEP_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import phasesep; print(phasesep.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_compiled_is_selected_by_default():
    import phasesep
    if os.environ.get("PHASESEP_PURE") != "1":
        assert phasesep.BACKEND == "compiled"
