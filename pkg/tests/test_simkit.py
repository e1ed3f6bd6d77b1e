import math

import numpy as np
import pytest

from mkthermo import physmodel as pm
from mkthermo import simkit
from mkthermo.simkit import ConfigError, InterferencePeak, MfftSimConfig, SimConfig, SweepConfig

RES = pm.ResonatorParams(669.7, 15400, m_eff=1.5e-12)


def sim(**kw):
    base = dict(resonator=RES, bath_temperature=10.3e-3, kappa=5.26e4, sample_rate=2800.0,
                duration=200.0, rng_seed=0)
    base.update(kw)
    return SimConfig(**base)


def test_length_and_determinism():
    a = simkit.simulate_thermal_trace(sim())
    b = simkit.simulate_thermal_trace(sim())
    c = simkit.simulate_thermal_trace(sim(rng_seed=1))
    assert len(a) == 200 * 2800
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_equipartition_variance():
    # average over independent seeds; each 2000 s run has ~270 correlation times
    var = [np.var(simkit.simulate_thermal_trace(sim(duration=2000.0, rng_seed=s)).samples)
           for s in range(5)]
    expected = 5.26e4**2 * pm.K_B * 10.3e-3 / RES.stiffness
    assert np.mean(var) == pytest.approx(expected, rel=0.05)


def test_envelope_autocorrelation_matches_ou():
    ts = simkit.simulate_thermal_trace(sim(duration=400.0, sample_rate=2800.0))
    n = len(ts)
    z = ts.samples * np.exp(-2j * math.pi * RES.f0 * np.arange(n) / ts.sample_rate)
    # crude envelope: mean over one-second blocks kills the 2 f0 image
    env = z[: n // 280 * 280].reshape(-1, 280).mean(axis=1)
    tau = pm.correlation_time(RES)
    lag = 10  # blocks of 0.1 s -> 1 s
    r = np.real(np.mean(env[lag:] * np.conj(env[:-lag]))) / np.mean(np.abs(env) ** 2)
    assert r == pytest.approx(math.exp(-1.0 / tau), abs=0.08)


def test_chunking_does_not_change_noise_free_output(monkeypatch):
    cfg = sim(duration=20.0)
    ref = simkit.simulate_thermal_trace(cfg).samples
    monkeypatch.setattr(simkit, "CHUNK", 5000)
    chunked = simkit.simulate_thermal_trace(cfg).samples
    np.testing.assert_allclose(chunked, ref, rtol=0, atol=1e-9 * np.max(np.abs(ref)))


def test_detection_noise_adds_white_floor():
    quiet = simkit.simulate_thermal_trace(sim(bath_temperature=0.0, detection_noise_asd=3e-7,
                                              duration=100.0))
    # one-sided white PSD of asd^2 over fs/2 -> variance asd^2 fs/2
    assert np.var(quiet.samples) == pytest.approx(9e-14 * 1400, rel=0.01)


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        sim(sample_rate=2000.0)
    with pytest.raises(ConfigError):
        sim(duration=0.0)
    with pytest.raises(ConfigError):
        sim(detection_noise_asd=-1.0)


def test_lorentzian_response_geometry():
    f = np.linspace(660, 680, 1001)
    h = simkit.lorentzian_response(f, 669.7, 15400)
    # the locus is the circle |h - 1/2| = 1/2
    np.testing.assert_allclose(np.abs(h - 0.5), 0.5, rtol=1e-12)
    assert simkit.lorentzian_response([669.7], 669.7, 15400)[0] == pytest.approx(1.0)


def test_sweep_circle_and_noise():
    lw = RES.linewidth_hz
    cfg = SweepConfig(RES.f0 - 5 * lw, RES.f0 + 5 * lw, 201, 1.0, 5e-3, 0.3, 2e-3)
    sw = simkit.simulate_sweep(RES, cfg)
    ct, d = simkit.sweep_circle(RES, cfg)
    np.testing.assert_allclose(np.abs(sw.values - (ct + d / 2)), abs(d) / 2, rtol=1e-12)
    assert sw.warnings == ()
    down = simkit.simulate_sweep(RES, SweepConfig(RES.f0 - 5 * lw, RES.f0 + 5 * lw, 201,
                                                  direction="down", drive_amplitude=1.0))
    assert down.freqs[0] > down.freqs[-1]
    narrow = simkit.simulate_sweep(RES, SweepConfig(RES.f0, RES.f0 + lw, 11, drive_amplitude=1.0))
    assert narrow.warnings


def test_mfft_spectra_statistics():
    cfg = MfftSimConfig(interference_peaks=(InterferencePeak(1000.0, 0.5, 0.0),),
                        noise_floor=1e-3, rng_seed=2)
    spectra = simkit.simulate_mfft_spectra(cfg, np.full(200, 5e-3))
    stack = np.array([s.values for s in spectra])
    mean = stack.mean(axis=0)
    expected = cfg.expected_psd(5e-3)
    np.testing.assert_allclose(mean, expected, rtol=0.2)
    # chi-square with 2 * n_averages dof normalised to mean one: variance 1/n_averages
    ratio = stack / expected
    assert np.var(ratio) == pytest.approx(1 / cfg.n_averages, rel=0.05)
    i = np.argmin(np.abs(cfg.freqs - 1000.0))
    assert expected[i] > 50 * expected[i + 1]


def test_mfft_config_validation():
    with pytest.raises(ConfigError):
        MfftSimConfig(band=(100.0, 9000.0))
    with pytest.raises(ConfigError):
        simkit.simulate_mfft_spectra(MfftSimConfig(), [0.0])


def test_temperature_pairs_truth_without_noise():
    t = np.array([3e-3, 6e-3, 10e-3, 40e-3])
    run = simkit.simulate_temperature_pairs(t, c=1.08, rel_err_cant=0.0)
    np.testing.assert_allclose(run.t_cant, 1.08 * t, rtol=1e-15)
    sat = simkit.simulate_temperature_pairs(t, t0=6e-3, n=4, rel_err_cant=0.0)
    np.testing.assert_allclose(sat.t_cant, (t**4 + 6e-3**4) ** 0.25, rtol=1e-12)
