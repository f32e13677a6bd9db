import itertools
import time
from dataclasses import dataclass

import numpy as np
import pytest

from phasesep import _kernels_py
from phasesep.pipeline import SeparationOptions, separate
from phasesep.signal_io import MixingParams, generate_sources, mix_sources

DESK_T = 500_000
DESK_SEED = 7
RATE = 16_000.0


@dataclass
class DeskRun:
    sources: object
    mixture: object
    result: object
    seconds: float


def _desk(kind, seed=DESK_SEED, T=DESK_T):
    t0 = time.perf_counter()
    s = generate_sources(kind, 2, T, RATE, seed)
    x = mix_sources(s, MixingParams())
    res = separate(x, SeparationOptions())
    return DeskRun(s, x, res, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def desk_run():
    """Two independent synthetic sources, mixed and separated at desk scale."""
    return _desk("ar2-noise")


@pytest.fixture(scope="session")
def coupled_run():
    """Cross-coupled sources run through the same pipeline."""
    return _desk("coupled-ar2")


def _compiled():
    try:
        from phasesep import _kernels
    except ImportError:
        return None
    return _kernels


BACKENDS = [pytest.param(_kernels_py, id="python"),
            pytest.param(_compiled(), id="compiled",
                         marks=pytest.mark.skipif(_compiled() is None,
                                                  reason="compiled kernels not built"))]


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def isserlis_c4(dim):
    """Fourth moment of a standard normal vector by explicit pair partitions."""
    c4 = np.zeros((dim,) * 4)
    pairings = (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)))
    for idx in itertools.product(range(dim), repeat=4):
        c4[idx] = sum(float(idx[a] == idx[b] and idx[c] == idx[d])
                      for (a, b), (c, d) in pairings)
    return c4


def product_moments(marginals):
    """Exact C2 and full C4 of independent zero-mean channels.

    ``marginals`` is a list of (var, fourth_moment) per channel.
    """
    dim = len(marginals)
    var = np.array([m[0] for m in marginals], dtype=float)
    m4 = np.array([m[1] for m in marginals], dtype=float)
    c2 = np.diag(var)
    c4 = np.zeros((dim,) * 4)
    for idx in itertools.product(range(dim), repeat=4):
        counts = np.bincount(idx, minlength=dim)
        if np.any(counts % 2):
            continue  # an odd power of a zero-mean independent channel
        val = 1.0
        for k, c in enumerate(counts):
            val *= {0: 1.0, 2: var[k], 4: m4[k]}[int(c)]
        c4[idx] = val
    return c2, c4
