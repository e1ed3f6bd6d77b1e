import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import signal

from mkthermo import dsp
from mkthermo.dsp import ComplexSweep, FitError, Spectrum, TimeSeries


def test_welch_matches_scipy():
    rng = np.random.default_rng(1)
    ts = TimeSeries(rng.standard_normal(10_000) + 0.3, 500.0)
    ours = dsp.welch_psd(ts, 1024)
    f, p = signal.welch(ts.samples, fs=500.0, window="hann", nperseg=1024, noverlap=512,
                        detrend="constant", scaling="density")
    np.testing.assert_allclose(ours.freqs, f, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ours.values, p, rtol=1e-10, atol=0)
    assert ours.n_averages == (10_000 - 1024) // 512 + 1


def _window_weighted_variance(x, n, step):
    w = signal.get_window("hann", n)
    segs = [x[i:i + n] for i in range(0, len(x) - n + 1, step)]
    return np.mean([np.sum((w * (s - s.mean())) ** 2) / np.sum(w**2) for s in segs]) / n


@settings(max_examples=40, deadline=None)
@given(x=arrays(np.float64, st.integers(64, 600), elements=st.floats(-1e3, 1e3)),
       n=st.sampled_from([16, 32, 64]), fs=st.floats(1.0, 1e4))
def test_parseval_arbitrary_input(x, n, fs):
    ts = TimeSeries(x, fs)
    s = dsp.welch_psd(ts, n)
    total = s.total_power()
    expected = _window_weighted_variance(x, n, n // 2) * n
    assert total == pytest.approx(expected, rel=1e-9, abs=1e-9 * (1 + np.max(np.abs(x))) ** 2)


def test_parseval_white_noise_variance():
    rng = np.random.default_rng(2)
    ts = TimeSeries(rng.normal(0, 2.0, 1 << 18), 1000.0)
    s = dsp.welch_psd(ts, 4096)
    assert s.total_power() == pytest.approx(4.0, rel=0.005)


def test_welch_rejects_short_and_complex():
    with pytest.raises(ValueError):
        dsp.welch_psd(TimeSeries(np.ones(10), 1.0), 16)
    with pytest.raises(ValueError):
        dsp.welch_psd(TimeSeries(np.ones(64, complex), 1.0), 16)


def test_spectrum_validation():
    with pytest.raises(ValueError):
        Spectrum([0, 1, 1], [1, 1, 1])
    with pytest.raises(ValueError):
        Spectrum([0, 1], [1, -1])


def test_lorentzian_exact_recovery():
    f = np.linspace(690, 710, 401)
    truth = dict(amplitude=2e-3, center=700.1, width=0.5, offset=1e-4)
    fit0 = dsp.LorentzianFit(**truth)
    fit = dsp.fit_lorentzian(Spectrum(f, fit0(f)), (690, 710))
    assert fit.converged
    assert fit.center == pytest.approx(700.1, abs=1e-9)
    assert fit.width == pytest.approx(0.5, rel=1e-8)
    assert fit.area == pytest.approx(2 * math.pi * 2e-3 / 0.5, rel=1e-8)
    assert fit.peak_height == pytest.approx(4 * 2e-3 / 0.25, rel=1e-8)


def test_lorentzian_noisy_within_errors():
    rng = np.random.default_rng(3)
    f = np.linspace(690, 710, 801)
    model = dsp.LorentzianFit(1e-3, 700.0, 0.4, 1e-5)(f)
    # Welch-like scatter: chi-square with 2*16 degrees of freedom
    y = model * rng.chisquare(32, len(f)) / 32
    fit = dsp.fit_lorentzian(Spectrum(f, y), (690, 710))
    assert abs(fit.center - 700.0) < 4 * fit.center_err
    assert abs(fit.width - 0.4) < 4 * fit.width_err


def test_lorentzian_window_too_small():
    f = np.linspace(0, 10, 11)
    with pytest.raises(FitError):
        dsp.fit_lorentzian(Spectrum(f, np.ones(11)), (2.1, 3.9))


def test_circle_exact():
    phi = np.linspace(0, 5, 50)
    z = (0.3 - 0.2j) + 0.7 * np.exp(1j * phi)
    c = dsp.fit_circle(ComplexSweep(np.arange(50.0), z))
    assert c.center == pytest.approx(0.3 - 0.2j, abs=1e-12)
    assert c.radius == pytest.approx(0.7, rel=1e-12)
    assert c.rms_residual < 1e-12


def test_circle_degenerate():
    with pytest.raises(FitError):
        dsp.fit_circle(np.array([1 + 1j, 2 + 2j, 3 + 3j, 4 + 4j]))
    with pytest.raises(FitError):
        dsp.fit_circle(np.array([1 + 1j] * 5))


@settings(max_examples=40, deadline=None)
@given(cx=st.floats(-10, 10), cy=st.floats(-10, 10), r=st.floats(0.01, 10),
       rot=st.floats(-math.pi, math.pi), scale=st.floats(0.1, 10), seed=st.integers(0, 1000))
def test_circle_similarity_equivariance(cx, cy, r, rot, scale, seed):
    rng = np.random.default_rng(seed)
    phi = np.sort(rng.uniform(0, 2 * math.pi, 40))
    z = complex(cx, cy) + r * np.exp(1j * phi) * (1 + 0.01 * rng.standard_normal(40))
    a = dsp.fit_circle(z)
    g = scale * np.exp(1j * rot)
    b = dsp.fit_circle(g * z + (1 - 2j))
    assert b.radius == pytest.approx(scale * a.radius, rel=1e-6)
    assert abs(b.center - (g * a.center + (1 - 2j))) <= 1e-6 * scale * (r + abs(a.center))


def test_fit_linear_against_polyfit():
    rng = np.random.default_rng(4)
    x = np.linspace(0, 10, 30)
    w = rng.uniform(0.5, 2.0, 30)
    y = 2.5 * x - 1.0 + rng.standard_normal(30) / np.sqrt(w)
    fit = dsp.fit_linear(x, y, w, absolute_weights=True)
    p, cov = np.polyfit(x, y, 1, w=np.sqrt(w), cov="unscaled")
    assert fit.slope == pytest.approx(p[0], rel=1e-12)
    assert fit.intercept == pytest.approx(p[1], rel=1e-12)
    np.testing.assert_allclose(fit.covariance, cov, rtol=1e-9)
    scaled = dsp.fit_linear(x, y, w)
    _, cov_s = np.polyfit(x, y, 1, w=np.sqrt(w), cov=True)
    assert scaled.slope_err == pytest.approx(math.sqrt(cov_s[0, 0]), rel=1e-9)


def test_fit_linear_degenerate():
    with pytest.raises(FitError):
        dsp.fit_linear([1, 1, 1], [1, 2, 3])
    with pytest.raises(FitError):
        dsp.fit_linear([1], [1])


def test_gaussian_hist_recovers_parameters():
    rng = np.random.default_rng(5)
    v = rng.normal(3.2, 0.05, 5000)
    g = dsp.fit_gaussian_hist(v)
    assert g.mu == pytest.approx(3.2, abs=3 * g.mu_err + 1e-12)
    assert g.sigma == pytest.approx(0.05, rel=0.05)
    assert g.reduced_chi2 < 3


def test_gaussian_hist_needs_data():
    with pytest.raises(FitError):
        dsp.fit_gaussian_hist(np.ones(10))
    with pytest.raises(FitError):
        dsp.fit_gaussian_hist(np.ones(100))


def test_normalize_background_linear():
    f = np.linspace(0, 2000, 1001)
    v = 3.0 + 0.002 * f
    np.testing.assert_allclose(dsp.normalize_background(f, v, 500.0), 1.0, rtol=1e-12)
    stack = np.array([v, 2 * v])
    np.testing.assert_allclose(dsp.normalize_background(f, stack, 500.0), 1.0, rtol=1e-12)


def test_find_peaks_prominence():
    f = np.arange(0, 1000, 1.0)
    v = np.ones_like(f)
    v[300] = 5.0
    v[700] = 1.5
    assert dsp.find_peaks_prominence(Spectrum(f, v), 2.0) == [300.0]


def test_block_average_and_decimation_factor():
    x = np.arange(10.0)
    np.testing.assert_allclose(dsp.block_average(x, 3), [1.0, 4.0, 7.0])
    assert dsp.decimation_factor(3000.0, 100.0) == 30
    with pytest.raises(ValueError):
        dsp.decimation_factor(1000.0, 300.0)


def test_lowpass_decimate_response():
    fs = 1000.0
    t = np.arange(100_000) / fs
    dc = dsp.lowpass_decimate(TimeSeries(np.full_like(t, 2.0), fs), 5.0, 20.0)
    np.testing.assert_allclose(dc.samples[50:-50], 2.0, rtol=1e-9)
    tone = dsp.lowpass_decimate(TimeSeries(np.sin(2 * np.pi * 50 * t), fs), 5.0, 20.0)
    assert np.max(np.abs(tone.samples[50:-50])) < 1e-6
    with pytest.raises(ValueError):
        dsp.lowpass_decimate(TimeSeries(t, fs), 15.0, 20.0)
