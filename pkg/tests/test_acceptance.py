"""Acceptance suite: one test (or a few) per numbered criterion.

Run ``pytest tests/test_acceptance.py`` for the per-criterion PASS/FAIL
summary.  The Monte-Carlo criteria dominate the runtime (about 5 minutes
on one core, mostly the 100 two-hour thermal runs).
"""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mkthermo import analysis, cli, dispcal, dsp, lockin, mfft, simkit, thermo
from mkthermo import physmodel as pm
from mkthermo.dsp import TimeSeries
from mkthermo.simkit import InterferencePeak, MfftSimConfig, SimConfig, SweepConfig


def sig_figs_match(value, quoted, digits=2):
    """True when ``value`` approximates ``quoted`` to ``digits`` significant figures.

    Relative-error convention: |value - quoted| / |quoted| <= 5 * 10^-digits.
    """
    return abs(value - quoted) <= 5 * 10.0 ** (-digits) * abs(quoted)


# -- closed-form numbers --------------------------------------------------------------

@pytest.mark.criterion(1)
def test_force_noise(detail):
    a = pm.force_noise_asd(pm.ResonatorParams(700.0, 14000, m_eff=1.5e-12), 6.1e-3)
    b = pm.force_noise_asd(pm.ResonatorParams(700.0, 40000, m_eff=1.5e-12), 0.5e-3)
    detail(f"{a:.3g} vs 3.9e-19, {b:.3g} vs 6.8e-20 N/rtHz")
    assert sig_figs_match(a, 3.9e-19)
    assert sig_figs_match(b, 6.8e-20)


@pytest.mark.criterion(2)
def test_tip_mass(detail):
    m = pm.tip_mass(7.3e-6, 7450.0)
    detail(f"{m * 1e12:.4f} ng")
    assert m == pytest.approx(1.51e-12, rel=0.015)


@pytest.mark.criterion(3)
def test_correlation_time_and_sample_count(detail):
    tau = pm.correlation_time(pm.ResonatorParams(669.7, 15400, m_eff=1.5e-12))
    n = int(7200 // tau)
    detail(f"tau = {tau:.3f} s, 7200 s / tau = {n}; with tau rounded to 7 s: {7200 // 7}")
    assert round(tau) == 7
    # the quoted count uses tau rounded to 7 s
    assert 7200 // round(tau) == 1028
    assert n == pytest.approx(1028, rel=0.05)


@pytest.mark.criterion(4)
@pytest.mark.parametrize("q, beta, quoted, quoted_err", [
    (13200, 1.8e-3, 4.4e-2, 0.6e-2),
    (15400, 1.0e-3, 1.6e-2, 0.4e-2),
])
def test_q_beta_squared(q, beta, quoted, quoted_err, detail):
    qb2 = q * beta**2
    detail(f"Q={q}: {qb2:.3g} vs {quoted:g}({quoted_err:g})")
    assert abs(qb2 - quoted) <= quoted_err
    # the same number through the flux-coupling chain
    res = pm.ResonatorParams(746.6, q, m_eff=1.5e-12)
    l_tot = 2.875e-6
    dphi = pm.dphi_dx_from_ratio(q, l_tot, res.mass, res.omega0, qb2)
    assert q * pm.coupling_beta_sq(dphi, l_tot, res.mass, res.omega0) == pytest.approx(qb2)


# -- thermometry Monte Carlo ----------------------------------------------------------

RUN_B = pm.ResonatorParams(669.7, 15400, m_eff=1.5e-12)
RUN_B_T = 10.3e-3
RUN_B_DURATION = 7200.0
KAPPA_B = 5.26e4
N_SEEDS = 100
BAND_BINS = 100


@dataclasses.dataclass
class SeedResult:
    mean: thermo.TemperatureEstimate
    slope: thermo.TemperatureEstimate
    band: thermo.BandCheck
    band_hot: thermo.BandCheck


@pytest.fixture(scope="module")
def run_b_seeds():
    tau = pm.correlation_time(RUN_B)
    out = []
    for seed in range(N_SEEDS):
        cfg = SimConfig(RUN_B, RUN_B_T, KAPPA_B, 3e-7, 2800.0, RUN_B_DURATION, seed)
        trace = lockin.energy_trace(simkit.simulate_thermal_trace(cfg),
                                    lockin.LockinConfig(RUN_B.f0), RUN_B, KAPPA_B)
        mean = thermo.temperature_from_mean(trace, tau)
        slope = thermo.temperature_from_slope(thermo.make_histogram(trace, tau))
        hist = thermo.make_histogram(trace, tau, BAND_BINS)
        out.append(SeedResult(mean, slope, thermo.boltzmann_band_check(hist, mean),
                              thermo.boltzmann_band_check(hist, 2 * mean.value)))
    return out


@pytest.mark.slow
@pytest.mark.criterion(5)
def test_end_to_end_thermometry(run_b_seeds, detail):
    tau = pm.correlation_time(RUN_B)
    bound = 3 * math.sqrt(tau / RUN_B_DURATION) * RUN_B_T
    within = [abs(r.mean.value - RUN_B_T) <= bound for r in run_b_seeds]
    agree = [thermo.estimates_agree(r.mean, r.slope) for r in run_b_seeds]
    ok = [a and b for a, b in zip(within, agree)]
    detail(f"bound {bound * 1e3:.2f} mK: recovered {sum(within)}/{N_SEEDS}, "
           f"methods agree {sum(agree)}/{N_SEEDS}, both {sum(ok)}/{N_SEEDS}")
    assert sum(ok) >= 0.95 * N_SEEDS


@pytest.mark.slow
@pytest.mark.criterion(6)
def test_boltzmann_band_check(run_b_seeds, detail):
    passed = [r.band.passed() for r in run_b_seeds]
    hot_rejected = [not r.band_hot.passed() for r in run_b_seeds]
    detail(f"{BAND_BINS} bins: {sum(passed)}/{N_SEEDS} pass, 2x-hotter rejected "
           f"{sum(hot_rejected)}/{N_SEEDS}")
    assert sum(passed) >= 0.90 * N_SEEDS
    assert sum(hot_rejected) >= 0.95 * N_SEEDS


# -- PSD ------------------------------------------------------------------------------

RUN_A = pm.ResonatorParams(746.6, 13200, m_eff=1.5e-12)
KAPPA_A = 1 / 9.6e-6  # V/m


@pytest.fixture(scope="module")
def run_a_psd():
    cfg = SimConfig(RUN_A, 6.1e-3, KAPPA_A, 3e-7, 3000.0, 20_300.0, 7)
    ts = simkit.simulate_thermal_trace(cfg)
    return ts, dsp.welch_psd(ts, 1 << 20)


@pytest.mark.criterion(7)
def test_psd_lorentzian_and_equipartition(run_a_psd, detail):
    ts, spec = run_a_psd
    lw = RUN_A.linewidth_hz
    fit = dsp.fit_lorentzian(spec, (RUN_A.f0 - 25 * lw, RUN_A.f0 + 25 * lw))
    area_expected = KAPPA_A**2 * pm.K_B * 6.1e-3 / RUN_A.stiffness
    detail(f"df0 = {fit.center - RUN_A.f0:.2g} Hz, gamma {fit.width / lw - 1:+.3f}, "
           f"area {fit.area / area_expected - 1:+.3f}")
    assert fit.converged
    assert abs(fit.center - RUN_A.f0) <= 0.01
    assert fit.width == pytest.approx(lw, rel=0.10)
    assert fit.area == pytest.approx(area_expected, rel=0.05)


@pytest.mark.criterion(7)
def test_parseval_on_simulated_record(run_a_psd):
    ts, spec = run_a_psd
    assert spec.total_power() == pytest.approx(np.var(ts.samples), rel=0.005)


def _segment_power(x, seg):
    """Mean Hann-weighted, mean-removed segment power: what Welch integrates to."""
    from scipy.signal import get_window
    w = get_window("hann", seg)
    parts = [x[i:i + seg] for i in range(0, len(x) - seg + 1, seg // 2)]
    return float(np.mean([np.sum((w * (p - p.mean())) ** 2) / np.sum(w**2) for p in parts]))


@pytest.mark.criterion(7)
@settings(max_examples=40, deadline=None)
@given(x=arrays(np.float64, st.integers(256, 5000),
                elements=st.floats(-1e6, 1e6, allow_subnormal=False)),
       seg=st.sampled_from([64, 128, 256]), fs=st.floats(1.0, 1e5))
def test_parseval_on_arbitrary_input(x, seg, fs):
    spec = dsp.welch_psd(TimeSeries(x, fs), seg)
    expected = _segment_power(x, seg)
    assert spec.total_power() == pytest.approx(expected, rel=0.005,
                                               abs=1e-9 * (1 + np.max(np.abs(x))) ** 2)


# -- displacement calibration -------------------------------------------------------

CIRC = pm.CircuitParams(l_fi=0.2e-6, l_inp=1.8e-6, l_par1=0.1e-6, l_par2=0.1e-6, l_t1=1e-6,
                        l_t2=1e-6, l_pl=0.5e-6, m_12=0.6e-6)


def _sweep(seed, **kw):
    lw = RUN_A.linewidth_hz
    base = dict(crosstalk_amplitude=5e-3, crosstalk_phase=0.3, drive_amplitude=2e-3,
                noise_asd=2e-5, rng_seed=seed)
    base.update(kw)
    return simkit.simulate_sweep(RUN_A, SweepConfig(RUN_A.f0 - 5 * lw, RUN_A.f0 + 5 * lw, 201,
                                                    1.0, **base))


@pytest.mark.criterion(8)
def test_displacement_calibration_round_trip(detail):
    ratio_true = 2e-3 / 5e-3
    l_tot = pm.total_inductance(CIRC)
    dphi_true = pm.dphi_dx_from_ratio(RUN_A.q_factor, l_tot, RUN_A.mass, RUN_A.omega0,
                                      ratio_true)
    worst_ratio = worst_dphi = 0.0
    for seed in range(20):
        a = dispcal.analyze_sweep(_sweep(seed), RUN_A, CIRC)
        worst_ratio = max(worst_ratio, abs(a.drive_ratio / ratio_true - 1))
        worst_dphi = max(worst_dphi, abs(a.dphi_dx / dphi_true - 1))
    detail(f"worst ratio error {worst_ratio:.4f}, worst dPhi/dx error {worst_dphi:.4f}")
    assert worst_ratio <= 0.01
    assert worst_dphi <= 0.02


@pytest.mark.criterion(8)
def test_electrostatic_fixture_flagged(detail):
    grounded = _sweep(30, crosstalk_amplitude=0.0, drive_amplitude=0.0,
                      electrostatic_amplitude=1e-3, electrostatic_phase=math.pi / 4)
    chk = dispcal.detect_electrostatic(grounded, _sweep(31))
    detail(f"grounded offset {abs(chk.offset):.2g} V ({abs(chk.offset) / chk.offset_sigma:.1f} "
           f"sigma), radius {chk.radius:.2g} V")
    assert chk.flagged
    assert abs(chk.offset) <= 3 * chk.offset_sigma
    # an ordinary flux-driven sweep is not flagged
    assert not dispcal.detect_electrostatic(_sweep(32)).flagged


# -- MFFT ------------------------------------------------------------------------------

PEAKS = tuple(InterferencePeak(f, 0.03, 0.0) for f in (1000.0, 1732.0, 2500.0, 3999.0, 5210.0))
MFFT_SEEDS = 100
HOLDOUT_T = (3.1e-3, 3.2e-3, 3.3e-3, 3.4e-3)


@pytest.mark.slow
@pytest.mark.criterion(9)
def test_mfft_pipeline(detail):
    base = MfftSimConfig(true_slope=1.0, base_temperature=3e-3, interference_peaks=PEAKS)
    f = np.linspace(*base.band, 400_001)
    slope_true = np.trapezoid(base.thermal_shape(f), f)
    band_bins = np.count_nonzero((base.freqs >= base.band[0]) & (base.freqs <= base.band[1]))
    cal_t = np.geomspace(15e-3, 1.0, 20)
    masked_ok = fp_ok = hold_ok = 0
    worst_slope = worst_fp = 0.0
    for seed in range(MFFT_SEEDS):
        cfg = dataclasses.replace(base, rng_seed=seed)
        mask = mfft.build_mask(simkit.simulate_mfft_spectra(cfg, np.full(1000, 3e-3)))
        near = [np.abs(mask.masked_frequencies - p.freq) <= base.freq_resolution for p in PEAKS]
        masked_ok += all(np.any(m) for m in near)
        fp = np.count_nonzero(~np.any(near, axis=0)) / band_bins
        worst_fp = max(worst_fp, fp)
        fp_ok += fp <= 0.02
        ref = simkit.simulate_mfft_spectra(dataclasses.replace(cfg, rng_seed=seed + 1000), cal_t)
        cal = mfft.calibrate(zip(ref, cal_t), mask)
        worst_slope = max(worst_slope, abs(cal.slope / slope_true - 1))
        t_hold = HOLDOUT_T[seed % len(HOLDOUT_T)]
        hold = simkit.simulate_mfft_spectra(dataclasses.replace(cfg, rng_seed=seed + 2000),
                                            np.full(119, t_hold))
        it = mfft.interval_uncertainty(hold, cal)
        hold_ok += abs(it.mean - t_hold) <= it.total_two_sigma
    detail(f"masked {masked_ok}/{MFFT_SEEDS}, worst false-positive fraction {worst_fp:.4f}, "
           f"worst slope error {worst_slope:.4f}, hold-out within 2 sigma "
           f"{hold_ok}/{MFFT_SEEDS}")
    assert masked_ok >= 0.98 * MFFT_SEEDS
    assert fp_ok == MFFT_SEEDS
    assert worst_slope <= 0.02
    # a 2 sigma interval covers ~95%; allow for Monte-Carlo scatter over 100 seeds
    assert hold_ok >= 0.90 * MFFT_SEEDS


# -- model fits ------------------------------------------------------------------------

T_PROP = np.array([9e-3, 12e-3, 18e-3, 25e-3, 40e-3, 60e-3])
T_SAT = np.geomspace(3e-3, 60e-3, 12)


@pytest.mark.criterion(10)
@pytest.mark.parametrize("c", [1.08, 1.35])
def test_proportionality_fixtures(c, detail):
    fits = [analysis.fit_proportionality(simkit.simulate_temperature_pairs(
        T_PROP, c=c, rel_err_cant=0.05, rel_err_mfft=0.05, rng_seed=s)) for s in range(100)]
    errs = np.array([f.c_err for f in fits])
    hits = sum(abs(f.c - c) <= 2 * f.c_err for f in fits)
    detail(f"c={c}: median c_err {np.median(errs):.3f}, within 2 sigma {hits}/100")
    assert 0.02 <= np.median(errs) <= 0.06
    assert hits >= 90


@pytest.mark.criterion(10)
def test_saturation_fixture(detail):
    fits = [analysis.fit_saturation(simkit.simulate_temperature_pairs(
        T_SAT, t0=6e-3, n=4.0, rel_err_cant=0.05, rel_err_mfft=0.05, rng_seed=s))
        for s in range(100)]
    dt0 = np.array([abs(f.t0 - 6e-3) for f in fits])
    detail(f"T0 within 1 mK {np.count_nonzero(dt0 <= 1e-3)}/100, median |dT0| "
           f"{np.median(dt0) * 1e3:.2f} mK")
    assert np.count_nonzero(dt0 <= 1e-3) >= 95


# -- determinism -------------------------------------------------------------------------

PIPELINE_CFG = """\
resonator.f0 = 746.6
resonator.q_factor = 13200
resonator.m_eff = 1.5e-12
circuit.l_fi = 0.2e-6
circuit.l_inp = 1.8e-6
circuit.l_par1 = 0.1e-6
circuit.l_par2 = 0.1e-6
circuit.l_t1 = 1e-6
circuit.l_t2 = 1e-6
circuit.l_pl = 0.5e-6
circuit.m_12 = 0.6e-6
sim.outputs = thermal sweep sweep-down grounded mfft run
sim.bath_temperature = 6.1e-3
sim.kappa = 1.0417e5
sim.detection_noise_asd = 3e-7
sim.duration = 200
sim.sample_rate = 3200
sim.rng_seed = 11
sweep.crosstalk_amplitude = 5e-3
sweep.crosstalk_phase = 0.3
sweep.drive_amplitude = 2e-3
sweep.noise_asd = 2e-5
mfft.peaks = 1000:0.03:0, 2500:0.03:0
mfft.n_mask_spectra = 200
mfft.min_spectra = 200
mfft.temperatures = 0.015 0.03 0.08 0.2 0.5 1.0
mfft.holdout_temperature = 3.2e-3
mfft.holdout_count = 40
run.t_mfft = 0.003 0.005 0.008 0.012 0.02 0.03 0.045 0.06
run.t0 = 0.006
"""


def _run_pipeline(root, cfg):
    def call(*argv):
        assert cli.main([str(a) for a in argv]) == 0, argv

    sim = root / "simulate"
    call("simulate", "--config", cfg, "--out", sim)
    call("psd", sim / "thermal.mkts", "--config", cfg, "--out", root / "psd")
    call("lockin", sim / "thermal.mkts", "--config", cfg, "--out", root / "lockin")
    call("temp", sim / "thermal.mkts", "--config", cfg, "--out", root / "temp")
    call("mfft-calibrate", sim / "mfft_calibration.csv", "--mask", sim / "mfft_mask.csv",
         "--config", cfg, "--out", root / "mcal")
    call("mfft-temp", sim / "mfft_holdout.csv", "--calibration", root / "mcal" / "calibration.txt",
         "--out", root / "mtemp")
    call("dispcal", sim / "sweep.csv", "--grounded", sim / "sweep_grounded.csv",
         "--down", sim / "sweep_down.csv", "--config", cfg, "--out", root / "dispcal")
    call("fit", sim / "run.csv", "--out", root / "fit")
    call("report", sim / "run.csv", "--out", root / "report")


@pytest.mark.criterion(11)
def test_every_command_byte_identical(tmp_path, detail):
    cfg = tmp_path / "pipeline.cfg"
    cfg.write_text(PIPELINE_CFG)
    _run_pipeline(tmp_path / "a", cfg)
    _run_pipeline(tmp_path / "b", cfg)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                     if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                     if p.is_file())
    assert files_a == files_b
    commands = {p.parts[0] for p in files_a}
    assert len(commands) == len(cli.COMMANDS)
    differing = [str(p) for p in files_a
                 if (tmp_path / "a" / p).read_bytes() != (tmp_path / "b" / p).read_bytes()]
    detail(f"{len(files_a)} files from {len(commands)} commands, {len(differing)} differ")
    assert not differing
