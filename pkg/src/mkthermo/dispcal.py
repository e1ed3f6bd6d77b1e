"""Displacement calibration from driven frequency sweeps.

A sweep through the resonance traces a circle in the complex plane.  Its
diameter is the resonant (drive) signal, and the point the sweep tends to
far off resonance is the directly coupled crosstalk.  Their length ratio
is Q beta^2, from which the flux per displacement and the voltage per
displacement follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import physmodel as pm
from .dsp import CircleFit, ComplexSweep, FitError, LorentzianFit, fit_circle, fit_lorentzian_xy

OUTER_FRACTION = 0.10  # share of points (farthest from resonance) defining the crosstalk
CROSSCHECK_TOLERANCE = 0.10
ZERO_OFFSET_SIGMAS = 3.0
SIGNIFICANT_RADIUS_SIGMAS = 10.0
HYSTERESIS_FACTOR = 3.0
MAD_TO_SIGMA = 1.482602218505602


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class SweepAnalysis:
    circle: CircleFit | None
    v_drive: float  # V, circle diameter
    v_drive_err: float
    v_crosstalk: float  # V
    v_crosstalk_err: float
    crosstalk_phase: float  # rad
    crosstalk_point: complex
    resonance_point: complex
    lorentzian: LorentzianFit | None
    q_beta_sq: float
    q_beta_sq_err: float
    beta: float
    dphi_dx: float  # Wb/m
    dphi_dx_err: float
    kappa: float  # V/m
    kappa_err: float
    f0_fit: float = math.nan
    q_fit: float = math.nan
    noise_sigma: float = 0.0  # V per quadrature, from circle residuals
    flags: tuple[str, ...] = ()

    @property
    def drive_ratio(self) -> float:
        return self.q_beta_sq

    def conversion(self) -> pm.Conversion:
        return pm.Conversion(self.kappa, "V/m", self.kappa_err)


@dataclass(frozen=True)
class ElectrostaticCheck:
    flagged: bool
    radius: float
    offset: complex  # crosstalk point of the grounded sweep
    offset_sigma: float
    noise_sigma: float
    rotation: float = math.nan  # rad, arg(D_grounded / D_reference)


@dataclass(frozen=True)
class UpDownComparison:
    metric: float  # rms |V_up - V_down| / radius
    noise_expectation: float
    flagged: bool
    n_points: int


def _noise_sigma(values: np.ndarray, circle: CircleFit) -> float:
    """Per-quadrature noise from the radial residuals (robust scale)."""
    radial = np.abs(values - circle.center) - circle.radius
    return float(MAD_TO_SIGMA * np.median(np.abs(radial - np.median(radial))))


def _outer_indices(n: int) -> np.ndarray:
    """Indices of the outer 10% of an ascending sweep, half from each end."""
    half = max(1, int(round(OUTER_FRACTION * n / 2)))
    return np.concatenate([np.arange(half), np.arange(n - half, n)])


def _crosstalk_point(sweep: ComplexSweep, circle: CircleFit) -> tuple[complex, int]:
    """Median direction of the far-off-resonance points, placed on the circle.

    For a window centred on the resonance the two ends sit symmetrically
    about the asymptotic point, so their median angle around the centre
    is unbiased.
    """
    outer = _outer_indices(len(sweep.freqs))
    rel = sweep.values[outer] - circle.center
    ref = np.mean(rel / np.abs(rel))
    ref = ref / abs(ref) if abs(ref) > 0 else 1.0
    ang = float(np.median(np.angle(rel / ref)))
    return complex(circle.center + circle.radius * ref * np.exp(1j * ang)), len(outer)


def _is_degenerate(values: np.ndarray) -> bool:
    scale = max(float(np.max(np.abs(values))), 1e-300)
    return float(np.max(np.abs(values - values[0]))) <= 1e-12 * scale


def analyze_sweep(sweep: ComplexSweep, res: pm.ResonatorParams, circ: pm.CircuitParams,
                  q_source: str = "resonator", mass_rel_err: float = 0.0,
                  q_rel_err: float = 0.0, inductance_rel_err: float = 0.0) -> SweepAnalysis:
    """Circle geometry, Q beta^2, dPhi/dx and kappa of a calibration sweep.

    ``q_source`` selects whether Q and f0 come from ``res`` or from the
    Lorentzian fitted to |V - V_crosstalk|^2.  Errors are propagated to
    first order; the relative errors of mass, Q and L_tot default to zero.
    """
    if q_source not in ("resonator", "fit"):
        raise CalibrationError("q_source must be 'resonator' or 'fit'")
    sweep = sweep.ascending()
    v = sweep.values
    l_tot = pm.total_inductance(circ)
    flags = list(sweep.warnings)

    if _is_degenerate(v):
        # no resonant response: a single point at the crosstalk vector
        ct = complex(v[0])
        return SweepAnalysis(None, 0.0, 0.0, abs(ct), 0.0, float(np.angle(ct)), ct, ct, None,
                             0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, flags=tuple(flags + ["no drive"]))
    try:
        circle = fit_circle(sweep)
    except FitError as exc:
        raise CalibrationError(f"circle fit failed: {exc}") from exc

    noise = _noise_sigma(v, circle)
    ct, n_outer = _crosstalk_point(sweep, circle)
    resonance = complex(2 * circle.center - ct)
    v_drive = 2 * circle.radius
    v_ct = abs(ct)
    # the crosstalk point is pinned to the circle; its error is the centre
    # error plus the angular scatter of the outer points
    v_drive_err = 2 * circle.radius_err if math.isfinite(circle.radius_err) else 0.0
    ct_err = math.hypot(circle.center_err if math.isfinite(circle.center_err) else 0.0,
                        noise / math.sqrt(n_outer))

    power = np.abs(v - ct) ** 2
    lor = fit_lorentzian_xy(sweep.freqs, power, relative_weights=False)
    f0_fit = lor.center
    q_fit = lor.center / lor.width if lor.width > 0 else math.nan
    if lor.converged and lor.peak_height > 0:
        d_lor = math.sqrt(lor.peak_height)
        if abs(d_lor - v_drive) > CROSSCHECK_TOLERANCE * v_drive:
            flags.append(f"Lorentzian diameter {d_lor:.4g} V differs from circle {v_drive:.4g} V")
    else:
        flags.append("Lorentzian cross-check did not converge")

    if v_ct <= ZERO_OFFSET_SIGMAS * ct_err:
        flags.append("crosstalk consistent with zero: electrostatic drive suspected")
        return SweepAnalysis(circle, v_drive, v_drive_err, v_ct, ct_err, float(np.angle(ct)), ct,
                             resonance, lor, math.inf, math.inf, math.inf, math.nan, math.nan,
                             math.nan, math.nan, f0_fit, q_fit, noise, tuple(flags))

    if q_source == "fit":
        q, f0 = q_fit, f0_fit
    else:
        q, f0 = res.q_factor, res.f0
    omega = 2 * math.pi * f0
    ratio = v_drive / v_ct
    ratio_rel = math.hypot(v_drive_err / v_drive if v_drive else 0.0, ct_err / v_ct)
    dphi = pm.dphi_dx_from_ratio(q, l_tot, res.mass, omega, ratio)
    dphi_rel = 0.5 * math.sqrt(ratio_rel**2 + q_rel_err**2 + mass_rel_err**2
                               + inductance_rel_err**2)
    kappa = pm.kappa_chain(circ, dphi)
    kappa_rel = dphi_rel  # kappa ~ dphi/L_tot ~ L_tot^(-1/2), same exponents
    beta = math.sqrt(ratio / q)
    return SweepAnalysis(circle, v_drive, v_drive_err, v_ct, ct_err, float(np.angle(ct)), ct,
                         resonance, lor, ratio, ratio * ratio_rel, beta, dphi, dphi * dphi_rel,
                         kappa, kappa * kappa_rel, f0_fit, q_fit, noise, tuple(flags))


def _diameter_vector(sweep: ComplexSweep) -> tuple[complex, CircleFit, complex, float, int]:
    sweep = sweep.ascending()
    circle = fit_circle(sweep)
    ct, n_outer = _crosstalk_point(sweep, circle)
    noise = _noise_sigma(sweep.values, circle)
    return complex(2 * (circle.center - ct)), circle, ct, noise, n_outer


def detect_electrostatic(sweep_grounded: ComplexSweep,
                         reference: ComplexSweep | None = None) -> ElectrostaticCheck:
    """Flag a resonant circle that is not offset from the origin.

    With no flux injected, any circle must come from a parasitic drive.  It
    is flagged when its radius exceeds ten noise sigmas while the crosstalk
    point is within three sigmas of zero.  Given a ``reference`` sweep, the
    rotation of the grounded circle's diameter vector relative to it is
    reported.
    """
    v = sweep_grounded.values
    if _is_degenerate(v):
        return ElectrostaticCheck(False, 0.0, complex(v[0]), 0.0, 0.0)
    try:
        diameter, circle, ct, noise, n_outer = _diameter_vector(sweep_grounded)
    except FitError:
        return ElectrostaticCheck(False, 0.0, complex(np.median(v.real) + 1j * np.median(v.imag)),
                                  0.0, float(np.std(v)))
    offset_sigma = math.hypot(circle.center_err if math.isfinite(circle.center_err) else 0.0,
                              noise / math.sqrt(n_outer))
    significant = circle.radius > SIGNIFICANT_RADIUS_SIGMAS * max(noise, 1e-300)
    at_origin = abs(ct) <= ZERO_OFFSET_SIGMAS * offset_sigma
    rotation = math.nan
    if reference is not None:
        d_ref, *_ = _diameter_vector(reference)
        rotation = float(np.angle(diameter / d_ref))
    return ElectrostaticCheck(bool(significant and at_origin), circle.radius, ct, offset_sigma,
                              noise, rotation)


def compare_updown(up: ComplexSweep, down: ComplexSweep) -> UpDownComparison:
    """RMS distance between up and down sweeps at matching frequencies, over the radius.

    Independent noise of sigma per quadrature gives an rms distance of
    2 sigma; the comparison is flagged above three times that.
    """
    a, b = up.ascending(), down.ascending()
    if len(a.freqs) != len(b.freqs) or not np.allclose(a.freqs, b.freqs, rtol=0,
                                                       atol=1e-9 * np.ptp(a.freqs)):
        raise CalibrationError("up and down sweeps are on different frequency grids")
    try:
        ca, cb = fit_circle(a), fit_circle(b)
    except FitError as exc:
        raise CalibrationError(f"circle fit failed: {exc}") from exc
    radius = 0.5 * (ca.radius + cb.radius)
    if not radius > 0:
        raise CalibrationError("zero circle radius")
    metric = float(np.sqrt(np.mean(np.abs(a.values - b.values) ** 2)) / radius)
    sigma = math.sqrt(0.5 * (_noise_sigma(a.values, ca) ** 2 + _noise_sigma(b.values, cb) ** 2))
    expectation = 2 * sigma / radius
    flagged = metric > HYSTERESIS_FACTOR * max(expectation, 1e-12)
    return UpDownComparison(metric, expectation, bool(flagged), len(a.freqs))
