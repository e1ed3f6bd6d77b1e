"""Command-line front end: ``mkthermo <command> ...``.

Every command writes into an output directory (``--out``, else
``$MKTHERMO_OUTPUT_DIR``, else ``./mkthermo-out``) and finishes with a
``manifest.txt`` listing the toolkit version, the input files and config
with their SHA-256 hashes, and the hash of every file written.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
malformed input, invalid parameters, failed fit).
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, dispcal, lockin, mfft, simkit, thermo
from . import physmodel as pm
from .config import ConfigError, PipelineConfig
from .dsp import FitError, Spectrum, TimeSeries, fit_lorentzian, welch_psd
from .fileio import (read_series, read_spectra_bundle, read_sweep, sha256_file, write_csv,
                     write_kv, write_series, write_spectra_bundle, write_spectrum, write_sweep)
from .svg import COLORS, Figure

ENV_OUTPUT_DIR = "MKTHERMO_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "mkthermo-out"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SIM_OUTPUTS = ("thermal", "sweep", "sweep-down", "grounded", "mfft", "run")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Session:
    """Output directory bookkeeping for one command."""

    def __init__(self, command: str, out_dir, config: PipelineConfig | None):
        self.command = command
        self.out = Path(out_dir)
        self.config = config
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.warnings: list[str] = []

    def add_input(self, path) -> Path:
        path = Path(path)
        self.inputs.append(path)
        return path

    def path(self, name: str) -> Path:
        return self.out / name

    def wrote(self, path) -> Path:
        self.outputs.append(Path(path))
        return Path(path)

    def warn(self, message: str) -> None:
        self.warnings.append(message)
        print(f"warning: {message}", file=sys.stderr)

    def finish(self) -> Path:
        values = {"toolkit_version": __version__, "command": self.command}
        for i, p in enumerate(self.inputs):
            values[f"input.{i}.name"] = p.name
            values[f"input.{i}.sha256"] = sha256_file(p)
        if self.config is not None and self.config.digest:
            values["config.name"] = Path(self.config.source).name
            values["config.sha256"] = self.config.digest
        for p in sorted(self.outputs, key=lambda q: q.name):
            values[f"output.{p.name}"] = sha256_file(p)
        for i, w in enumerate(self.warnings):
            values[f"warning.{i}"] = w
        return write_kv(self.out / "manifest.txt", values, "mkthermo run manifest")


def _load_config(path) -> PipelineConfig:
    return PipelineConfig.from_file(path) if path else PipelineConfig()


def _output_dir(args) -> Path:
    return Path(args.out or os.environ.get(ENV_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR)


def _pow2_floor(n: int) -> int:
    return 1 << (int(n).bit_length() - 1)


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args, s: Session) -> None:
    cfg = s.config
    kinds = cfg.get("sim.outputs")
    unknown = [k for k in kinds if k not in SIM_OUTPUTS]
    if unknown:
        raise ConfigError(f"sim.outputs: unknown kind(s) {', '.join(unknown)}; "
                          f"choose from {', '.join(SIM_OUTPUTS)}")
    if "thermal" in kinds:
        ts = simkit.simulate_thermal_trace(cfg.sim_config())
        s.wrote(write_series(s.path("thermal.mkts"), ts, cfg.get("sim.start_epoch_ns")))
    if any(k in kinds for k in ("sweep", "sweep-down", "grounded")):
        res = cfg.resonator()
        if "sweep" in kinds:
            sw = simkit.simulate_sweep(res, cfg.sweep_config())
            s.wrote(write_sweep(s.path("sweep.csv"), sw))
        if "sweep-down" in kinds:
            seed = cfg.get("sweep.rng_seed") + 1
            sw = simkit.simulate_sweep(res, cfg.sweep_config(direction="down", rng_seed=seed))
            s.wrote(write_sweep(s.path("sweep_down.csv"), sw))
        if "grounded" in kinds:
            seed = cfg.get("sweep.rng_seed") + 2
            sw = simkit.simulate_sweep(res, cfg.sweep_config(
                crosstalk_amplitude=0.0, drive_amplitude=0.0, rng_seed=seed))
            s.wrote(write_sweep(s.path("sweep_grounded.csv"), sw))
    if "mfft" in kinds:
        _simulate_mfft(cfg, s)
    if "run" in kinds:
        t = cfg.get("run.t_mfft")
        if not t:
            raise ConfigError("run.t_mfft is required for the 'run' output")
        run = simkit.simulate_temperature_pairs(
            t, cfg.get("run.c"), cfg.get("run.t0"), cfg.get("run.n"), cfg.get("run.rel_err_cant"),
            cfg.get("run.rel_err_mfft"), cfg.get("run.rng_seed"), cfg.get("run.label"))
        s.wrote(_write_runs(s.path("run.csv"), [run]))


def _simulate_mfft(cfg: PipelineConfig, s: Session) -> None:
    base = cfg.mfft_sim_config()
    interval = cfg.get("mfft.spectrum_interval")
    n_mask = cfg.get("mfft.n_mask_spectra")
    if n_mask > 0:
        temps = np.full(n_mask, base.base_temperature)
        spectra = simkit.simulate_mfft_spectra(base, temps)
        s.wrote(write_spectra_bundle(s.path("mfft_mask.csv"), spectra, temps,
                                     np.arange(n_mask) * interval))
    temps = np.asarray(cfg.get("mfft.temperatures"), dtype=float)
    if temps.size:
        spectra = simkit.simulate_mfft_spectra(
            dataclasses.replace(base, rng_seed=base.rng_seed + 1), temps)
        s.wrote(write_spectra_bundle(s.path("mfft_calibration.csv"), spectra, temps,
                                     np.arange(temps.size) * interval))
    t_hold = cfg.get("mfft.holdout_temperature")
    if t_hold is not None:
        n = cfg.get("mfft.holdout_count")
        temps = np.full(n, t_hold)
        spectra = simkit.simulate_mfft_spectra(
            dataclasses.replace(base, rng_seed=base.rng_seed + 2), temps)
        s.wrote(write_spectra_bundle(s.path("mfft_holdout.csv"), spectra, temps,
                                     np.arange(n) * interval))


def _write_runs(path, runs) -> Path:
    cols = {"label": np.concatenate([[r.label] * len(r) for r in runs]).astype(object)}
    for name in ("t_mfft", "sigma_mfft", "t_cant", "sigma_cant"):
        cols[name] = np.concatenate([getattr(r, name) for r in runs])
    return write_csv(path, cols, {"units": "K"})


# -- spectra and thermometry ------------------------------------------------------

def _read_input_series(s: Session, path) -> TimeSeries:
    ts, _ = read_series(s.add_input(path))
    if len(ts) < 2:
        raise ValueError(f"{path}: series holds {len(ts)} samples")
    return ts


def _psd(cfg: PipelineConfig, ts: TimeSeries) -> Spectrum:
    seg = min(cfg.get("psd.segment_length"), _pow2_floor(len(ts)))
    return welch_psd(ts, seg, unit=f"{ts.unit}^2/Hz")


def _fit_peak(cfg: PipelineConfig, spec: Spectrum, res: pm.ResonatorParams):
    half = cfg.get("psd.fit_halfwidth")
    if half is None:
        half = max(25 * res.linewidth_hz, 50 * spec.resolution)
    return fit_lorentzian(spec, (res.f0 - half, res.f0 + half)), half


def _psd_figure(spec: Spectrum, center: float, half: float, fit=None) -> Figure:
    sel = (spec.freqs >= center - half) & (spec.freqs <= center + half)
    fig = Figure("Power spectral density", "frequency (Hz)", f"PSD ({spec.unit})", ylog=True)
    x = spec.freqs[sel]
    fig.line(x, spec.values[sel], color=COLORS[0], width=1.0, label="Welch PSD")
    if fit is not None and fit.converged:
        fig.line(x, fit(x), color=COLORS[1], label="Lorentzian fit")
    return fig


def _fit_values(fit, spec: Spectrum, res: pm.ResonatorParams, kappa: float | None) -> dict:
    out = {"f0_fit_hz": fit.center, "f0_fit_err_hz": fit.center_err, "width_hz": fit.width,
           "width_err_hz": fit.width_err, "q_fit": fit.center / fit.width if fit.width > 0
           else math.nan, "area": fit.area, "area_err": fit.area_err, "offset": fit.offset,
           "converged": fit.converged, "reduced_chi2": fit.reduced_chi2,
           "total_power": spec.total_power(), "resolution_hz": spec.resolution,
           "n_averages": spec.n_averages}
    if kappa is not None:
        # equipartition: area = kappa^2 kB T / k
        out["temperature_from_area_K"] = fit.area * res.stiffness / (kappa**2 * pm.K_B)
    return out


def cmd_psd(args, s: Session) -> None:
    cfg = s.config
    ts = _read_input_series(s, args.series)
    spec = _psd(cfg, ts)
    s.wrote(write_spectrum(s.path("psd.csv"), spec))
    if not (cfg.has("resonator.f0") and cfg.has("resonator.q_factor")):
        fig = Figure("Power spectral density", "frequency (Hz)", f"PSD ({spec.unit})", ylog=True)
        fig.line(spec.freqs[1:], spec.values[1:], width=1.0)
        s.wrote(fig.save(s.path("psd.svg")))
        return
    res = cfg.resonator()
    fit, half = _fit_peak(cfg, spec, res)
    kappa = cfg.get("lockin.kappa") or cfg.get("sim.kappa")
    s.wrote(write_kv(s.path("psd_fit.txt"), _fit_values(fit, spec, res, kappa),
                     "Lorentzian fit of the resonance"))
    s.wrote(_psd_figure(spec, res.f0, half, fit).save(s.path("psd.svg")))


def _energy(cfg: PipelineConfig, ts: TimeSeries, demod_freq=None) -> lockin.EnergyTrace:
    res = cfg.resonator()
    lcfg = cfg.lockin_config(demod_freq)
    return lockin.energy_trace(ts, lcfg, res, cfg.kappa())


def _write_energy(s: Session, trace: lockin.EnergyTrace) -> None:
    s.wrote(write_csv(s.path("energy.csv"), {"time_s": trace.times, "energy_J": trace.energies},
                      {"sample_rate": trace.sample_rate, "demod_freq": trace.demod_freq,
                       "background_energy_J": trace.background_energy,
                       "n_floored": trace.n_floored}))


def cmd_lockin(args, s: Session) -> None:
    cfg = s.config
    ts = _read_input_series(s, args.series)
    trace = _energy(cfg, ts)
    _write_energy(s, trace)
    lcfg = cfg.lockin_config()
    s.wrote(write_kv(s.path("lockin.txt"), {
        "demod_freq_hz": lcfg.demod_freq, "bandwidth_hz": lcfg.bandwidth,
        "output_rate": trace.sample_rate, "settle_time_s": lcfg.settle_time,
        "n_samples": len(trace.energies), "n_floored": trace.n_floored,
        "background_energy_J": trace.background_energy,
        "mean_energy_J": float(np.mean(trace.energies))}, "lock-in energy trace"))


def cmd_temp(args, s: Session) -> None:
    cfg = s.config
    ts = _read_input_series(s, args.series)
    res = cfg.resonator()
    kappa = cfg.kappa()
    lcfg = cfg.lockin_config()
    tau = cfg.tau()
    summary: dict = {"demod_freq_hz": lcfg.demod_freq, "tau_s": tau,
                     "duration_s": ts.duration, "kappa_v_per_m": kappa}

    spec = _psd(cfg, ts)
    s.wrote(write_spectrum(s.path("psd.csv"), spec))
    try:
        fit, half = _fit_peak(cfg, spec, res)
    except FitError as exc:
        fit, half = None, 25 * res.linewidth_hz
        s.warn(f"Lorentzian fit failed: {exc}")
    if fit is not None:
        summary.update({f"psd.{k}": v for k, v in _fit_values(fit, spec, res, kappa).items()})
        if fit.converged and abs(fit.center - lcfg.demod_freq) > lcfg.bandwidth:
            s.warn(f"fitted f0 {fit.center:.4f} Hz deviates from the lock-in frequency "
                   f"{lcfg.demod_freq:.4f} Hz by more than the {lcfg.bandwidth:g} Hz bandwidth")
    s.wrote(_psd_figure(spec, res.f0, half, fit).save(s.path("psd.svg")))

    trace = lockin.energy_trace(ts, lcfg, res, kappa)
    _write_energy(s, trace)
    mean = thermo.temperature_from_mean(trace, tau)
    summary.update({"mean.temperature_K": mean.value, "mean.uncertainty_K":
                    mean.statistical_uncertainty, "mean.flagged": mean.flagged,
                    "mean.note": mean.note or "NA",
                    "independent_samples": lockin.independent_count(trace, tau),
                    "n_floored": trace.n_floored})

    slope = band = None
    try:
        hist = thermo.make_histogram(trace, tau, cfg.get("thermo.bins"))
    except thermo.ThermoError as exc:
        hist = None
        s.warn(f"histogram: {exc}")
    if hist is not None:
        try:
            slope = thermo.temperature_from_slope(hist)
        except thermo.ThermoError as exc:
            s.warn(f"slope fit: {exc}")
    if slope is not None:
        summary.update({"slope.temperature_K": slope.value,
                        "slope.uncertainty_K": slope.statistical_uncertainty,
                        "slope.flagged": slope.flagged, "slope.note": slope.note or "NA",
                        "methods_agree": thermo.estimates_agree(mean, slope)})
    else:
        summary.update({"slope.temperature_K": math.nan, "slope.uncertainty_K": math.nan,
                        "slope.flagged": True, "slope.note": "no fit", "methods_agree": "NA"})
    if hist is not None and mean.value > 0:
        band = thermo.boltzmann_band_check(hist, mean, cfg.get("thermo.band_sigma"))
        summary.update({"band.fraction_inside": band.fraction,
                        "band.significant_bins": band.n_bins, "band.passed": band.passed()})
    if hist is not None:
        cols = {"e_lo_J": hist.bin_edges[:-1], "e_hi_J": hist.bin_edges[1:],
                "count": hist.counts, "significant": hist.significant}
        if band is not None:
            cols["expected"] = band.expected
            cols["delta_n"] = band.delta_n
        s.wrote(write_csv(s.path("histogram.csv"), cols,
                          {"lockin_rate": hist.lockin_rate, "tau_s": hist.tau,
                           "threshold": hist.threshold, "n_excluded": hist.n_excluded}))
        s.wrote(_histogram_figure(hist, band).save(s.path("histogram.svg")))
    for i, w in enumerate(s.warnings):
        summary[f"warning.{i}"] = w
    s.wrote(write_kv(s.path("temperature.txt"), summary, "cantilever temperature"))
    print(f"T(mean)  = {mean.value * 1e3:.4g} +/- {mean.statistical_uncertainty * 1e3:.2g} mK"
          + ("  [flagged]" if mean.flagged else ""))
    if slope is not None:
        print(f"T(slope) = {slope.value * 1e3:.4g} +/- {slope.statistical_uncertainty * 1e3:.2g} mK")


def _histogram_figure(hist: thermo.EnergyHistogram, band) -> Figure:
    fig = Figure("Energy distribution", "energy / kB (mK)", "counts", ylog=True)
    scale = 1e3 / pm.K_B
    keep = hist.counts > 0
    fig.scatter(hist.centers[keep] * scale, hist.counts[keep], radius=2.0, label="counts")
    if band is not None:
        x = hist.centers * scale
        lo = np.maximum(band.expected - band.n_sigma * band.delta_n, 1e-3)
        hi = band.expected + band.n_sigma * band.delta_n
        ok = band.expected > 0
        fig.band(x[ok], lo[ok], hi[ok], label=f"+/- {band.n_sigma:g} delta n")
        fig.line(x[ok], band.expected[ok], color=COLORS[1], label="Boltzmann")
    return fig


# -- MFFT ---------------------------------------------------------------------------

def cmd_mfft_calibrate(args, s: Session) -> None:
    cfg = s.config
    spectra, refs, _ = read_spectra_bundle(s.add_input(args.reference))
    if refs is None:
        raise ValueError(f"{args.reference}: bundle lacks reference_temperatures")
    manual = []
    for r in cfg.get("mfft.manual_mask"):
        if len(r) != 2:
            raise ConfigError("mfft.manual_mask entries need lo:hi")
        manual.append(r)
    if args.mask:
        mask_spectra, _, _ = read_spectra_bundle(s.add_input(args.mask))
        mask = mfft.build_mask(mask_spectra, cfg.get("mfft.bin_width"), cfg.get("mfft.prominence"),
                               cfg.get("mfft.flag_fraction"), manual, cfg.get("mfft.min_spectra"))
    else:
        mask = mfft.InterferenceMask(np.empty(0), manual=tuple(manual))
        s.warn("no mask bundle given; only manual mask ranges are applied")
    band = cfg.get("mfft.band")
    cal = mfft.calibrate(zip(spectra, refs), mask, band,
                         (cfg.get("mfft.reference_min"), cfg.get("mfft.reference_max")))
    s.wrote(mfft.write_calibration(s.path("calibration.txt"), cal))
    s.wrote(write_csv(s.path("mask.csv"), {"freq_hz": mask.masked_frequencies},
                      {"n_spectra": mask.n_spectra_used, "flag_fraction": mask.flag_fraction_threshold}))
    power = np.array([mfft.spectral_noise_power(sp, cal.band, mask) for sp in spectra])
    used = (refs >= cal.reference_range[0]) & (refs <= cal.reference_range[1])
    s.wrote(write_csv(s.path("calibration_points.csv"),
                      {"t_ref_K": refs, "band_power": power, "used": used}))
    fig = Figure("MFFT calibration", "reference temperature (mK)", f"band power ({cal.unit})")
    fig.scatter(refs * 1e3, power, label="spectra")
    t = np.linspace(0.0, float(refs.max()), 50)
    fig.line(t * 1e3, cal.slope * t + cal.intercept, color=COLORS[1], label="linear fit")
    s.wrote(fig.save(s.path("calibration.svg")))
    print(f"slope = {cal.slope:.6g} +/- {cal.slope_err:.2g} {cal.unit}/K, "
          f"intercept = {cal.intercept:.4g} +/- {cal.intercept_err:.2g}; "
          f"{len(mask)} masked bins")


def cmd_mfft_temp(args, s: Session) -> None:
    cal = mfft.read_calibration(s.add_input(args.calibration))
    spectra, _, times = read_spectra_bundle(s.add_input(args.bundle))
    results = [mfft.temperature(sp, cal) for sp in spectra]
    cols = {"index": np.arange(len(results)),
            "time_s": times if times is not None else np.full(len(results), math.nan),
            "temperature_K": np.array([r.value for r in results]),
            "band_power": np.array([r.power for r in results]),
            "nonphysical": np.array([r.nonphysical for r in results])}
    s.wrote(write_csv(s.path("mfft_temperatures.csv"), cols))
    n_bad = int(np.count_nonzero(cols["nonphysical"]))
    if n_bad:
        s.warn(f"{n_bad} spectra have band power below the calibration intercept")
    summary = {"n_spectra": len(results)}
    if len(results) >= mfft.MIN_INTERVAL_SPECTRA:
        it = mfft.interval_uncertainty(spectra, cal)
        summary.update({"mean_K": it.mean, "two_sigma_K": it.two_sigma,
                        "calibration_sigma_K": it.calibration_sigma,
                        "total_two_sigma_K": it.total_two_sigma, "poor_fit": it.poor_fit})
        print(f"T = {it.mean * 1e3:.4g} mK, 2 sigma = {it.total_two_sigma * 1e3:.2g} mK")
    else:
        s.warn(f"fewer than {mfft.MIN_INTERVAL_SPECTRA} spectra: no interval uncertainty")
        summary["mean_K"] = float(np.mean(cols["temperature_K"]))
    for i, w in enumerate(s.warnings):
        summary[f"warning.{i}"] = w
    s.wrote(write_kv(s.path("mfft_temperature.txt"), summary, "MFFT temperature"))


# -- displacement calibration ------------------------------------------------------

def cmd_dispcal(args, s: Session) -> None:
    cfg = s.config
    sweep = read_sweep(s.add_input(args.sweep))
    res, circ = cfg.resonator(), cfg.circuit()
    a = dispcal.analyze_sweep(sweep, res, circ, cfg.get("dispcal.q_source"),
                              cfg.get("dispcal.mass_rel_err"), cfg.get("dispcal.q_rel_err"),
                              cfg.get("dispcal.inductance_rel_err"))
    out = {"v_drive_V": a.v_drive, "v_drive_err_V": a.v_drive_err,
           "v_crosstalk_V": a.v_crosstalk, "v_crosstalk_err_V": a.v_crosstalk_err,
           "crosstalk_phase_rad": a.crosstalk_phase, "q_beta_sq": a.q_beta_sq,
           "q_beta_sq_err": a.q_beta_sq_err, "beta": a.beta, "dphi_dx_Wb_per_m": a.dphi_dx,
           "dphi_dx_err_Wb_per_m": a.dphi_dx_err, "kappa_V_per_m": a.kappa,
           "kappa_err_V_per_m": a.kappa_err, "f0_fit_hz": a.f0_fit, "q_fit": a.q_fit,
           "noise_sigma_V": a.noise_sigma, "total_inductance_H": pm.total_inductance(circ)}
    if a.circle is not None:
        out.update({"circle.center_re_V": a.circle.center.real,
                    "circle.center_im_V": a.circle.center.imag,
                    "circle.radius_V": a.circle.radius})
    for flag in a.flags:
        s.warn(flag)
    if args.grounded:
        g = dispcal.detect_electrostatic(read_sweep(s.add_input(args.grounded)), sweep)
        out.update({"grounded.flagged": g.flagged, "grounded.radius_V": g.radius,
                    "grounded.offset_V": abs(g.offset), "grounded.offset_sigma_V": g.offset_sigma,
                    "grounded.rotation_rad": g.rotation})
        if g.flagged:
            s.warn("grounded sweep shows a resonant circle at the origin: electrostatic drive")
    if args.down:
        c = dispcal.compare_updown(sweep, read_sweep(s.add_input(args.down)))
        out.update({"updown.metric": c.metric, "updown.noise_expectation": c.noise_expectation,
                    "updown.flagged": c.flagged})
        if c.flagged:
            s.warn("up and down sweeps differ beyond noise (hysteresis)")
    for i, w in enumerate(s.warnings):
        out[f"warning.{i}"] = w
    s.wrote(write_kv(s.path("dispcal.txt"), out, "displacement calibration"))
    s.wrote(_sweep_figure(sweep, a).save(s.path("dispcal.svg")))
    print(f"Q beta^2 = {a.q_beta_sq:.4g} +/- {a.q_beta_sq_err:.2g}, "
          f"kappa = {a.kappa:.4g} +/- {a.kappa_err:.2g} V/m")


def _sweep_figure(sweep, a: dispcal.SweepAnalysis) -> Figure:
    fig = Figure("Calibration sweep", "Re V (V)", "Im V (V)", equal_aspect=True)
    fig.scatter([0.0], [0.0], color="#000000", radius=2.0, label="origin")
    fig.scatter(sweep.values.real, sweep.values.imag, radius=2.0, label="sweep")
    if a.circle is not None:
        phi = np.linspace(0, 2 * np.pi, 181)
        z = a.circle.center + a.circle.radius * np.exp(1j * phi)
        fig.line(z.real, z.imag, color=COLORS[1], label="circle fit")
    ct, rp = a.crosstalk_point, a.resonance_point
    fig.arrow(0.0, 0.0, ct.real, ct.imag, color=COLORS[2], label="crosstalk")
    fig.arrow(ct.real, ct.imag, rp.real, rp.imag, color=COLORS[3], label="drive")
    return fig


# -- run fits --------------------------------------------------------------------------

def _read_runs(s: Session, paths) -> list:
    runs = []
    for p in paths:
        runs.extend(analysis.read_runs(s.add_input(p)))
    labels = [r.label for r in runs]
    if len(set(labels)) != len(labels):
        raise ValueError("run labels must be unique across input files")
    return runs


def cmd_fit(args, s: Session) -> None:
    cfg = s.config
    runs = _read_runs(s, [args.runs])
    if args.label:
        runs = [r for r in runs if r.label == args.label]
        if not runs:
            raise ValueError(f"no run labelled {args.label!r}")
    out = {}
    for r in runs:
        f = analysis.fit_run(r, cfg.get("fit.min_tmfft"), cfg.get("fit.fix_n"))
        for w in f.warnings:
            s.warn(w)
        p, sat = f.proportionality, f.saturation
        out[f"{r.label}.n_points"] = len(r)
        out[f"{r.label}.c"] = p.c if p else math.nan
        out[f"{r.label}.c_err"] = p.c_err if p else math.nan
        out[f"{r.label}.t0_K"] = sat.t0 if sat else math.nan
        out[f"{r.label}.t0_err_K"] = sat.t0_err if sat else math.nan
        out[f"{r.label}.n"] = sat.n if sat else math.nan
        out[f"{r.label}.n_err"] = sat.n_err if sat else math.nan
        out[f"{r.label}.saturation_degenerate"] = sat.degenerate if sat else "NA"
        line = f"run {r.label}: "
        line += f"c = {p.c:.4g} +/- {p.c_err:.2g}" if p else "c not fitted"
        if sat and not sat.degenerate:
            line += f"; T0 = {sat.t0 * 1e3:.3g} +/- {sat.t0_err * 1e3:.2g} mK, n = {sat.n:.3g}"
        print(line)
    for i, w in enumerate(s.warnings):
        out[f"warning.{i}"] = w
    s.wrote(write_kv(s.path("fit.txt"), out, "run fits"))


def cmd_report(args, s: Session) -> None:
    cfg = s.config
    runs = _read_runs(s, args.runs)
    rep = analysis.run_report(runs, s.out, cfg.get("fit.min_tmfft"), cfg.get("fit.fix_n"))
    for p in rep.files:
        s.wrote(p)
    for w in rep.warnings:
        s.warn(w)


# -- entry point --------------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate, "psd": cmd_psd, "lockin": cmd_lockin, "temp": cmd_temp,
    "mfft-calibrate": cmd_mfft_calibrate, "mfft-temp": cmd_mfft_temp, "dispcal": cmd_dispcal,
    "fit": cmd_fit, "report": cmd_report,
}
NEEDS_CONFIG = {"simulate", "psd", "lockin", "temp", "dispcal"}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mkthermo", description="Thermal-motion and flux-noise thermometry toolkit")
    p.add_argument("--version", action="version", version=f"mkthermo {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--out", "-o", help=f"output directory (default ${ENV_OUTPUT_DIR} "
                                            f"or ./{DEFAULT_OUTPUT_DIR})")
        cfg_required = name in NEEDS_CONFIG
        sp.add_argument("--config", "-c", required=cfg_required,
                        help="key = value configuration file")
        return sp

    add("simulate", "write simulated series, sweeps, MFFT spectra or run tables")
    add("psd", "Welch PSD of a raw series and Lorentzian fit of the resonance") \
        .add_argument("series")
    add("lockin", "demodulate a raw series into a resonator energy trace").add_argument("series")
    add("temp", "cantilever temperature from a raw series (PSD, lock-in, histogram)") \
        .add_argument("series")
    sp = add("mfft-calibrate", "MFFT interference mask and linear calibration")
    sp.add_argument("reference", help="spectra bundle with reference temperatures")
    sp.add_argument("--mask", help="spectra bundle used to build the interference mask")
    sp = add("mfft-temp", "MFFT temperatures of a spectra bundle")
    sp.add_argument("bundle")
    sp.add_argument("--calibration", required=True, help="calibration.txt from mfft-calibrate")
    sp = add("dispcal", "displacement calibration from a driven sweep")
    sp.add_argument("sweep")
    sp.add_argument("--grounded", help="sweep taken with the flux line grounded")
    sp.add_argument("--down", help="down sweep for the hysteresis check")
    sp = add("fit", "proportionality and saturation fits of run tables")
    sp.add_argument("runs")
    sp.add_argument("--label", help="fit only this run")
    add("report", "report (CSV, SVG, summary) over one or more run tables") \
        .add_argument("runs", nargs="+")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        config = _load_config(args.config)
        session = Session(args.command, _output_dir(args), config)
        COMMANDS[args.command](args, session)
        session.finish()
    except (ValueError, OSError, ArithmeticError) as exc:
        print(f"mkthermo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
