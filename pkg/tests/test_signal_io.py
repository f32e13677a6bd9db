import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import lfilter

from phasesep.errors import DomainError, MalformedFileError, SingularCovarianceError
from phasesep.signal_io import (AR2_POLES, MixingParams, TimeSeries, generate_sources, load_series,
                                mix_sources, pca_normalize, store_series)


def test_time_series_validation():
    with pytest.raises(ValueError):
        TimeSeries(np.zeros((2, 1)), 1.0)
    with pytest.raises(ValueError):
        TimeSeries(np.zeros((5, 1)), 0.0)
    with pytest.raises(ValueError):
        TimeSeries(np.array([[0.0], [np.nan], [1.0]]), 1.0)


def test_constant_zero_generator():
    s = generate_sources("constant-zero", 2, 10, 16000.0, 0)
    assert s.samples.shape == (10, 2)
    assert not s.samples.any()


def test_generator_is_bit_identical_for_equal_seeds():
    a = generate_sources("ar2-noise", 2, 5000, 16000.0, 7)
    b = generate_sources("ar2-noise", 2, 5000, 16000.0, 7)
    assert a.samples.tobytes() == b.samples.tobytes()
    c = generate_sources("ar2-noise", 2, 5000, 16000.0, 8)
    assert a.samples.tobytes() != c.samples.tobytes()


def _bartlett_sigma(T, poles_a, poles_b, n=4000):
    """Standard deviation of the sample correlation of two independent AR
    processes: sqrt(sum_k r_a(k) r_b(k) / T) over all lags."""
    def acf(poles):
        h = lfilter([1.0], np.poly(poles), np.r_[1.0, np.zeros(n - 1)])
        r = np.correlate(h, h, "full")[n - 1:]
        return r / r[0]
    ra, rb = acf(poles_a), acf(poles_b)
    return np.sqrt((1.0 + 2.0 * np.sum(ra[1:] * rb[1:])) / T)


@pytest.mark.xfail(strict=True, reason="strongly oversampled channels: the sampling "
                   "scale of rho at T=200000 is about 0.0096, so the fixed 0.01 bound "
                   "is exceeded on this seed (|rho| = 0.0125, 1.3 sigma)")
def test_generated_channels_correlation_below_fixed_bound():
    s = generate_sources("ar2-noise", 2, 200_000, 16000.0, 7)
    rho = np.corrcoef(s.samples.T)[0, 1]
    assert abs(rho) < 0.01


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 7])
def test_generated_channels_are_uncorrelated(seed):
    T = 200_000
    s = generate_sources("ar2-noise", 2, T, 16000.0, seed)
    rho = np.corrcoef(s.samples.T)[0, 1]
    sigma = _bartlett_sigma(T, AR2_POLES[0], AR2_POLES[1])
    assert 0.005 < sigma < 0.015
    assert abs(rho) < 3 * sigma


def test_generated_channel_kurtoses_differ():
    s = generate_sources("ar2-noise", 2, 200_000, 16000.0, 7).samples
    z = (s - s.mean(0)) / s.std(0)
    kurt = (z ** 4).mean(0) - 3.0
    assert abs(kurt[0] - kurt[1]) > 0.1


def test_generated_amplitude_convention():
    s = generate_sources("ar2-noise", 3, 20_000, 16000.0, 3)
    peak = np.abs(s.samples).max(axis=0)
    assert np.all(peak <= 2 ** 15) and np.all(peak > 0.99 * 2 ** 15 - 1)


@pytest.mark.parametrize("kwargs", [dict(kind="pink"), dict(T=2), dict(rate=0.0),
                                    dict(rate=-5.0)])
def test_generator_rejects_bad_arguments(kwargs):
    args = dict(kind="ar2-noise", n_channels=2, T=100, rate=16000.0, seed=0)
    args.update(kwargs)
    with pytest.raises(ValueError):
        generate_sources(**args)


def test_mixing_at_origin():
    f = mix_sources(TimeSeries(np.zeros((3, 2)), 1.0)).samples[0]
    assert f[0] == pytest.approx(958.0 ** 1.5)
    assert f[1] == pytest.approx(3.75e7 ** 0.5)
    assert f == pytest.approx([29651.6, 6123.72], abs=0.05)


def test_mixing_at_positive_corner():
    s = TimeSeries(np.tile([32768.0, 0.0], (3, 1)), 1.0)
    f1 = mix_sources(s).samples[0, 0]
    assert f1 == pytest.approx(0.763 * 32768 + 958 ** 1.5)
    assert f1 == pytest.approx(54653.6, abs=0.05)


def test_mixing_outside_domain_reports_sample_and_channel():
    s = np.zeros((4, 2))
    s[2, 1] = 50000.0
    with pytest.raises(DomainError, match="sample 2 channel 1"):
        mix_sources(TimeSeries(s, 1.0))


def test_mixing_params_check_radicands_at_construction():
    with pytest.raises(DomainError):
        MixingParams(b1=100.0)  # b1 - c1*s2 < 0 at s2 = 2**15
    with pytest.raises(ValueError):
        MixingParams(lo=(1.0, 0.0), hi=(0.0, 1.0))


def test_mixing_preserves_length_and_rate():
    s = generate_sources("ar2-noise", 2, 1000, 8000.0, 1)
    x = mix_sources(s)
    assert len(x) == len(s) and x.sample_rate == 8000.0


@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
@settings(max_examples=20, deadline=None)
def test_mixing_is_pointwise(seed):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-2 ** 15, 2 ** 15, size=(50, 2))
    perm = rng.permutation(50)
    a = mix_sources(TimeSeries(s, 1.0)).samples
    b = mix_sources(TimeSeries(s[perm], 1.0)).samples
    np.testing.assert_array_equal(a[perm], b)


def test_pca_fixed_point_up_to_orthogonal_ambiguity():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((5000, 2))
    z -= z.mean(axis=0)
    L = np.linalg.cholesky(np.cov(z.T, bias=True))
    z = z @ np.linalg.inv(L).T  # exactly zero mean, identity covariance
    out, rec = pca_normalize(TimeSeries(z, 1.0))
    # output equals input up to a signed permutation of channels
    P = np.round(rec.rotation)
    assert np.allclose(np.abs(P).sum(axis=0), 1.0)
    np.testing.assert_allclose(out.samples, z @ P, atol=1e-8)


def test_pca_of_known_covariance():
    rng = np.random.default_rng(1)
    C = np.array([[2.0, 1.0], [1.0, 2.0]])
    z = rng.standard_normal((20000, 2))
    z = (z - z.mean(0)) @ np.linalg.inv(np.linalg.cholesky(np.cov(z.T, bias=True))).T
    x = z @ np.linalg.cholesky(C).T
    np.testing.assert_allclose(np.cov(x.T, bias=True), C, atol=1e-10)
    out, rec = pca_normalize(TimeSeries(x, 1.0))
    np.testing.assert_allclose(np.cov(out.samples.T, bias=True), np.eye(2), atol=1e-8)
    np.testing.assert_allclose(rec.scales ** 2, [3.0, 1.0], rtol=1e-10)


def test_pca_rejects_constant_channel():
    x = np.column_stack([np.arange(100.0), np.full(100, 3.0)])
    with pytest.raises(SingularCovarianceError):
        pca_normalize(TimeSeries(x, 1.0))


@st.composite
def full_rank_series(draw):
    n = draw(st.integers(min_value=2, max_value=4))
    seed = draw(st.integers(min_value=0, max_value=2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    while abs(np.linalg.det(A)) < 1e-2:
        A = rng.standard_normal((n, n))
    scale = 10.0 ** rng.uniform(-3, 3)
    shift = rng.uniform(-1e3, 1e3, size=n)
    return (rng.standard_normal((400, n)) @ A.T) * scale + shift


@given(full_rank_series())
@settings(max_examples=40, deadline=None)
def test_pca_output_has_identity_covariance(x):
    out, rec = pca_normalize(TimeSeries(x, 1.0))
    y = out.samples
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-8)
    np.testing.assert_allclose(np.cov(y.T, bias=True), np.eye(x.shape[1]), atol=1e-8)
    np.testing.assert_allclose(rec.rotation.T @ rec.rotation, np.eye(x.shape[1]),
                               atol=1e-10)
    assert np.all(rec.scales > 0)
    back = rec.invert(y)
    assert np.abs(back - x).max() <= 1e-8 * np.abs(x).max()


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((200, 3)) * 10.0 ** rng.uniform(-200, 200, size=(200, 3))
    s = TimeSeries(x, 44100.5)
    store_series(s, tmp_path / "a.csv")
    back = load_series(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.samples, x)
    assert back.sample_rate == 44100.5


def test_wav_round_trip_of_integers(tmp_path):
    rng = np.random.default_rng(3)
    x = rng.integers(-32768, 32768, size=(500, 2)).astype(float)
    assert store_series(TimeSeries(x, 16000.0), tmp_path / "a.wav") == 0
    back = load_series(tmp_path / "a.wav")
    np.testing.assert_array_equal(back.samples, x)
    assert back.sample_rate == 16000.0


def test_wav_clamps_with_warning(tmp_path, caplog):
    x = np.array([[0.0], [40000.0], [-40000.0], [1.4]])
    with caplog.at_level("WARNING"):
        n = store_series(TimeSeries(x, 8000.0), tmp_path / "c.wav")
    assert n == 2 and "clamped 2" in caplog.text
    np.testing.assert_array_equal(load_series(tmp_path / "c.wav").samples[:, 0],
                                  [0, 32767, -32768, 1])


def test_csv_with_ragged_rows_is_malformed(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("# sample_rate=1.0\nch1,ch2\n1,2\n3\n4,5\n")
    with pytest.raises(MalformedFileError):
        load_series(p)


def test_load_checks_channel_count(tmp_path):
    store_series(TimeSeries(np.zeros((5, 2)), 1.0), tmp_path / "a.csv")
    with pytest.raises(MalformedFileError):
        load_series(tmp_path / "a.csv", n_channels=3)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_series(tmp_path / "nope.wav")
