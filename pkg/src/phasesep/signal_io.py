"""Time series containers, synthetic sources, nonlinear mixing, PCA and file I/O."""

import csv
import logging
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, MalformedFileError, SingularCovarianceError

log = logging.getLogger(__name__)

AMPLITUDE = 2.0 ** 15
INT16_MIN, INT16_MAX = -32768, 32767

# Real pole pairs of the AR(2) generators, one row per channel (cycled).
# Every channel is strongly oversampled (correlation time of tens of samples).
AR2_POLES = (
    (0.95, 0.35),
    (0.93, 0.55),
    (0.96, 0.20),
    (0.94, 0.45),
)
# Innovation distributions, cycled over channels. Their kurtoses differ
# (6, 1.8, 3, 1) so that the fourth-moment contraction is nondegenerate.
AR2_DRIVERS = ("laplace", "uniform", "gaussian", "rademacher")

SOURCE_KINDS = ("constant-zero", "ar2-noise", "coupled-ar2")


@dataclass
class TimeSeries:
    """Uniformly sampled N-channel signal.

    ``samples`` has shape (T, N).
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[1] < 1:
            raise ValueError(f"samples must have shape (T, N), got {s.shape}")
        if s.shape[0] < 3:
            raise ValueError(f"need at least 3 samples, got {s.shape[0]}")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples contain non-finite values")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = s
        self.sample_rate = float(self.sample_rate)

    @property
    def n_channels(self):
        return self.samples.shape[1]

    def __len__(self):
        return self.samples.shape[0]

    def channel(self, k):
        return TimeSeries(self.samples[:, [k]], self.sample_rate)

    def select(self, channels):
        return TimeSeries(self.samples[:, list(channels)], self.sample_rate)


def _drive(kind, rng, n):
    if kind == "laplace":
        return rng.laplace(size=n)
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, size=n)
    if kind == "gaussian":
        return rng.standard_normal(n)
    if kind == "rademacher":
        return rng.choice((-1.0, 1.0), size=n)
    raise ValueError(f"unknown innovation distribution {kind!r}")


def _ar2(innovations, poles):
    return lfilter([1.0], np.poly(poles), innovations)


def to_amplitude(x):
    """Remove the mean and scale so the peak magnitude is 2**15 - 1."""
    x = x - x.mean()
    peak = np.abs(x).max()
    if peak == 0:
        return x
    return x * ((AMPLITUDE - 1.0) / peak)


def generate_sources(kind, n_channels, T, rate, seed, coupling=0.8):
    """Generate N synthetic source channels.

    Parameters
    ----------
    kind : {"constant-zero", "ar2-noise", "coupled-ar2"}
        ``ar2-noise`` gives independent AR(2) low-pass channels with distinct
        pole pairs and innovation distributions. ``coupled-ar2`` (2 channels)
        drives channel 2 by channel 1, producing an inseparable pair; the
        strength is set by ``coupling``.
    n_channels, T : int
    rate : float
        Sample rate in Hz.
    seed : int
        Fixes all randomness; equal seeds give bit-identical output.

    Returns
    -------
    TimeSeries
        Channels scaled so that the peak magnitude is just under 2**15.
    """
    if kind not in SOURCE_KINDS:
        raise ValueError(f"unknown source kind {kind!r}; expected one of {SOURCE_KINDS}")
    if T < 3:
        raise ValueError(f"T must be at least 3, got {T}")
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if n_channels < 1:
        raise ValueError("n_channels must be >= 1")

    if kind == "constant-zero":
        return TimeSeries(np.zeros((T, n_channels)), rate)

    burn = 2000
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_channels)]
    out = np.empty((T, n_channels))

    if kind == "ar2-noise":
        for k, rng in enumerate(streams):
            e = _drive(AR2_DRIVERS[k % len(AR2_DRIVERS)], rng, T + burn)
            out[:, k] = to_amplitude(_ar2(e, AR2_POLES[k % len(AR2_POLES)])[burn:])
        return TimeSeries(out, rate)

    # coupled-ar2
    if n_channels != 2:
        raise ValueError("coupled-ar2 generates exactly 2 channels")
    e1 = _drive(AR2_DRIVERS[0], streams[0], T + burn)
    s1 = _ar2(e1, AR2_POLES[0])
    z1 = s1 / s1.std()
    # channel 2: innovation amplitude modulated by, and mean driven by, channel 1
    e2 = _drive(AR2_DRIVERS[1], streams[1], T + burn) * (1.0 + coupling * np.abs(z1))
    s2 = _ar2(e2 + coupling * 0.5 * e1, AR2_POLES[1])
    out[:, 0] = to_amplitude(s1[burn:])
    out[:, 1] = to_amplitude(s2[burn:])
    return TimeSeries(out, rate)


@dataclass(frozen=True)
class MixingParams:
    """Coefficients of the two-channel nonlinear mixing map.

    f1(s) = a1*s1 + (b1 - c1*s2)**p1
    f2(s) = a2*s2 + (b2 - c2*s1 - d2*s2)**p2

    The defaults are the constants used for the two-speaker demonstration,
    on the domain [-2**15, 2**15] for both inputs.
    """

    a1: float = 0.763
    b1: float = 958.0
    c1: float = 0.0225
    p1: float = 1.5
    a2: float = 0.153
    b2: float = 3.75e7
    c2: float = 763.0
    d2: float = 229.0
    p2: float = 0.5
    lo: tuple = (-AMPLITUDE, -AMPLITUDE)
    hi: tuple = (AMPLITUDE, AMPLITUDE)

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != 2 or len(self.hi) != 2:
            raise ValueError("domain bounds must have two entries")
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValueError("domain bounds must satisfy lo < hi")
        # radicands are affine, so their minimum over the box is at a corner
        corners = np.array([[s1, s2] for s1 in (self.lo[0], self.hi[0])
                            for s2 in (self.lo[1], self.hi[1])])
        r1, r2 = self.radicands(corners)
        if r1.min() <= 0 or r2.min() <= 0:
            raise DomainError("mixing radicands are not positive over the domain box")

    def radicands(self, s):
        s = np.asarray(s, dtype=float)
        r1 = self.b1 - self.c1 * s[:, 1]
        r2 = self.b2 - self.c2 * s[:, 0] - self.d2 * s[:, 1]
        return r1, r2

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("a1", "b1", "c1", "p1", "a2", "b2", "c2", "d2", "p2", "lo", "hi")}


def mix_sources(s, params=None):
    """Apply the nonlinear two-channel mixing map sample by sample."""
    params = params or MixingParams()
    if s.n_channels != 2:
        raise ValueError(f"mixing needs 2 channels, got {s.n_channels}")
    x = s.samples
    lo, hi = np.array(params.lo), np.array(params.hi)
    bad = (x < lo) | (x > hi)
    if bad.any():
        t, k = np.argwhere(bad)[0]
        raise DomainError(
            f"sample {t} channel {k} = {x[t, k]!r} is outside [{lo[k]}, {hi[k]}]")
    r1, r2 = params.radicands(x)
    if r1.min() <= 0 or r2.min() <= 0:
        t = int(np.argmin(np.minimum(r1, r2)))
        raise DomainError(f"non-positive radicand at sample {t}")
    f1 = params.a1 * x[:, 0] + r1 ** params.p1
    f2 = params.a2 * x[:, 1] + r2 ** params.p2
    return TimeSeries(np.column_stack([f1, f2]), s.sample_rate)


def _fix_signs(vecs):
    # largest-magnitude component of each column positive, ties -> lowest index
    vecs = vecs.copy()
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vecs


def sym_eigh(a):
    """Eigen-decomposition with descending eigenvalues and fixed vector signs."""
    vals, vecs = np.linalg.eigh(a)
    order = np.argsort(vals, kind="stable")[::-1]
    return vals[order], _fix_signs(vecs[:, order])


@dataclass
class PcaRecord:
    mean: np.ndarray
    rotation: np.ndarray
    scales: np.ndarray

    def apply(self, samples):
        return (np.asarray(samples) - self.mean) @ self.rotation / self.scales

    def invert(self, samples):
        return (np.asarray(samples) * self.scales) @ self.rotation.T + self.mean


def pca_normalize(mix, rel_tol=1e-12):
    """Project onto variance-normalized principal components.

    The output has zero mean and identity (population) covariance. Components
    are ordered by decreasing variance of the input.
    """
    x = mix.samples
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / len(x)
    vals, vecs = sym_eigh(cov)
    if vals[-1] <= rel_tol * max(vals[0], 0.0) or vals[0] <= 0:
        raise SingularCovarianceError(
            f"sample covariance is singular (eigenvalues {vals.tolist()})")
    rec = PcaRecord(mean=mean, rotation=vecs, scales=np.sqrt(vals))
    return TimeSeries(rec.apply(x), mix.sample_rate), rec


def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "wav16"):
            raise ValueError(f"unknown format {fmt!r}")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix == ".wav":
        return "wav16"
    raise ValueError(f"cannot infer format from {path!r}")


def store_series(series, path, fmt=None, channel_names=None):
    """Write a series as CSV (lossless) or 16-bit PCM WAV.

    WAV output rounds to integers and clamps to the int16 range; the number of
    clamped values is logged as a warning and returned.
    """
    fmt = _infer_format(path, fmt)
    path = Path(path)
    x = series.samples
    if fmt == "csv":
        names = channel_names or [f"ch{k + 1}" for k in range(series.n_channels)]
        if len(names) != series.n_channels:
            raise ValueError("channel_names length does not match channel count")
        with open(path, "w", newline="") as fh:
            fh.write(f"# sample_rate={series.sample_rate!r}\n")
            w = csv.writer(fh)
            w.writerow(names)
            for row in x:
                w.writerow([repr(float(v)) for v in row])
        return 0

    q = np.rint(x)
    clamped = int(np.count_nonzero((q < INT16_MIN) | (q > INT16_MAX)))
    if clamped:
        log.warning("wav16: clamped %d values to the int16 range", clamped)
    q = np.clip(q, INT16_MIN, INT16_MAX).astype("<i2")
    rate = int(round(series.sample_rate))
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(series.n_channels)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(q.tobytes())
    return clamped


def load_series(path, fmt=None, n_channels=None):
    """Read a series written by :func:`store_series` (or any PCM16 WAV)."""
    fmt = _infer_format(path, fmt)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if fmt == "wav16":
        try:
            with wave.open(str(path), "rb") as wf:
                nch, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
                raw = wf.readframes(wf.getnframes())
        except (wave.Error, EOFError) as exc:
            raise MalformedFileError(f"{path}: {exc}") from exc
        if width != 2:
            raise MalformedFileError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
        data = np.frombuffer(raw, dtype="<i2").astype(float).reshape(-1, nch)
    else:
        rate = None
        rows = []
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key.strip() == "sample_rate":
                    rate = float(val)
            elif line.strip():
                body.append(line)
        if rate is None:
            raise MalformedFileError(f"{path}: missing '# sample_rate=' line")
        if not body:
            raise MalformedFileError(f"{path}: missing header row")
        reader = csv.reader(body)
        header = next(reader)
        nch = len(header)
        for i, row in enumerate(reader, start=1):
            if len(row) != nch:
                raise MalformedFileError(
                    f"{path}: row {i} has {len(row)} fields, expected {nch}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise MalformedFileError(f"{path}: row {i}: {exc}") from exc
        data = np.array(rows, dtype=float).reshape(-1, nch)
    if n_channels is not None and data.shape[1] != n_channels:
        raise MalformedFileError(
            f"{path}: expected {n_channels} channels, found {data.shape[1]}")
    try:
        return TimeSeries(data, rate)
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
