"""Flux-noise (MFFT) thermometry: interference mask, band power, calibration.

The thermometer reads the Johnson-Nyquist flux noise of a conductor.  Its
geometry factor is not evaluated; the band power P is instead mapped
linearly onto a reference thermometer, P = m T + b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .dsp import FitError, Spectrum, fit_gaussian_hist, fit_linear, normalize_background

DEFAULT_BAND = (50.0, 6050.0)
DEFAULT_BIN_WIDTH = 500.0  # Hz, chunk for the linear background
DEFAULT_PROMINENCE = 2.0  # in units of the local background
DEFAULT_FLAG_FRACTION = 0.015
MIN_MASK_SPECTRA = 1000
MAX_MASKED_FRACTION = 0.5
REFERENCE_RANGE = (15e-3, 1.0)  # K
MIN_REFERENCE_SPAN = 10.0  # ratio max/min
MIN_INTERVAL_SPECTRA = 30
POOR_FIT_CHI2 = 3.0


class MfftError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InterferenceMask:
    masked_frequencies: np.ndarray  # Hz, sorted
    bin_width_used: float = DEFAULT_BIN_WIDTH
    flag_fraction_threshold: float = DEFAULT_FLAG_FRACTION
    n_spectra_used: int = 0
    prominence: float = DEFAULT_PROMINENCE
    manual: tuple = ()  # (lo, hi) Hz ranges masked by hand

    def __post_init__(self):
        if not 0 < self.flag_fraction_threshold < 1:
            raise MfftError("flag fraction must lie in (0, 1)")
        object.__setattr__(self, "masked_frequencies",
                           np.unique(np.asarray(self.masked_frequencies, dtype=float)))

    def __len__(self):
        return len(self.masked_frequencies)

    def bins(self, freqs) -> np.ndarray:
        """Boolean mask over ``freqs``."""
        freqs = np.asarray(freqs, dtype=float)
        out = np.zeros(len(freqs), dtype=bool)
        if len(self.masked_frequencies) and len(freqs) > 1:
            tol = 1e-6 * float(np.min(np.diff(freqs)))
            idx = np.searchsorted(freqs, self.masked_frequencies)
            for j in (idx - 1, idx):
                j = np.clip(j, 0, len(freqs) - 1)
                hit = np.abs(freqs[j] - self.masked_frequencies) <= tol
                out[j[hit]] = True
        for lo, hi in self.manual:
            out |= (freqs >= lo) & (freqs <= hi)
        return out

    def with_manual(self, lo: float, hi: float) -> "InterferenceMask":
        return InterferenceMask(self.masked_frequencies, self.bin_width_used,
                                self.flag_fraction_threshold, self.n_spectra_used,
                                self.prominence, self.manual + ((float(lo), float(hi)),))

    @classmethod
    def empty(cls) -> "InterferenceMask":
        return cls(np.empty(0))


@dataclass(frozen=True, eq=False)
class MfftCalibration:
    band: tuple[float, float]
    mask: InterferenceMask
    slope: float  # band power per K
    intercept: float  # band power
    slope_err: float
    intercept_err: float
    reference_range: tuple[float, float]
    n_points: int = 0
    unit: str = "phi0^2"
    covariance: float = 0.0  # cov(slope, intercept)

    def __post_init__(self):
        if not self.slope > 0:
            raise MfftError(f"calibration slope must be positive, got {self.slope}")

    def temperature_sigma(self, t: float) -> float:
        """Standard error of a temperature read off the calibration line at ``t``."""
        var = self.intercept_err**2 + t**2 * self.slope_err**2 + 2 * t * self.covariance
        return math.sqrt(max(var, 0.0)) / self.slope


@dataclass(frozen=True)
class MfftTemperature:
    value: float  # K
    power: float
    nonphysical: bool = False


@dataclass(frozen=True, eq=False)
class IntervalTemperature:
    mean: float  # K
    two_sigma: float  # K
    sigma: float
    n_spectra: int
    poor_fit: bool = False
    temperatures: np.ndarray = field(default=None, repr=False)
    calibration_sigma: float = 0.0  # K, shared by every spectrum of the interval

    @property
    def total_two_sigma(self) -> float:
        return 2 * math.hypot(self.sigma, self.calibration_sigma)


def _flag_counts(freqs: np.ndarray, stack: np.ndarray, bin_width: float,
                 prominence: float) -> np.ndarray:
    counts = np.zeros(len(freqs), dtype=np.int64)
    for norm in normalize_background(freqs, stack, bin_width):
        peaks, props = signal.find_peaks(norm, prominence=prominence)
        if len(peaks) == 0:
            continue
        _, _, left, right = signal.peak_widths(
            norm, peaks, rel_height=0.5,
            prominence_data=(props["prominences"], props["left_bases"], props["right_bases"]))
        # bins whose centres fall inside the half-prominence extent
        lo = np.clip(np.ceil(left).astype(int), 0, len(freqs) - 1)
        hi = np.clip(np.floor(right).astype(int), 0, len(freqs) - 1)
        hit = np.zeros(len(freqs) + 1, dtype=np.int64)
        np.add.at(hit, lo, 1)
        np.add.at(hit, hi + 1, -1)
        counts += np.cumsum(hit[:-1]) > 0
    return counts


def build_mask(spectra, bin_width: float = DEFAULT_BIN_WIDTH,
               prominence: float = DEFAULT_PROMINENCE,
               flag_fraction: float = DEFAULT_FLAG_FRACTION,
               manual=(), min_spectra: int = MIN_MASK_SPECTRA) -> InterferenceMask:
    """Frequencies flagged as interference in at least ``flag_fraction`` of spectra.

    Each spectrum is divided by a straight-line background fitted per
    ``bin_width`` chunk; peaks with prominence above ``prominence`` are
    flagged over their half-prominence extent.
    """
    spectra = list(spectra)
    if len(spectra) < min_spectra:
        raise MfftError(f"need at least {min_spectra} spectra, got {len(spectra)}")
    if not 0 < flag_fraction < 1:
        raise MfftError("flag fraction must lie in (0, 1)")
    freqs = spectra[0].freqs
    for s in spectra[1:]:
        if len(s.freqs) != len(freqs) or not np.allclose(s.freqs, freqs):
            raise MfftError("all spectra must share one frequency grid")
    stack = np.array([s.values for s in spectra])
    counts = _flag_counts(freqs, stack, bin_width, prominence)
    # integer comparison avoids 0.015*1000 = 15.000000000000002
    need = math.ceil(flag_fraction * len(spectra) - 1e-9)
    masked = freqs[counts >= need]
    return InterferenceMask(masked, bin_width, flag_fraction, len(spectra), prominence,
                            tuple((float(lo), float(hi)) for lo, hi in manual))


def _band_nodes(freqs: np.ndarray, values: np.ndarray, masked: np.ndarray, band):
    lo, hi = band
    if not (freqs[0] <= lo < hi <= freqs[-1]):
        raise MfftError(f"band {band} lies outside the spectrum [{freqs[0]}, {freqs[-1]}] Hz")
    inner = (freqs > lo) & (freqs < hi)
    f = np.concatenate([[lo], freqs[inner], [hi]])
    v = np.concatenate([[np.interp(lo, freqs, values)], values[inner],
                        [np.interp(hi, freqs, values)]])
    near = lambda x: masked[int(np.argmin(np.abs(freqs - x)))]  # noqa: E731
    m = np.concatenate([[near(lo)], masked[inner], [near(hi)]])
    w = np.empty(len(f))
    w[0] = (f[1] - f[0]) / 2
    w[-1] = (f[-1] - f[-2]) / 2
    w[1:-1] = (f[2:] - f[:-2]) / 2
    return v, m, w


def spectral_noise_power(s: Spectrum, cal_band=DEFAULT_BAND,
                         mask: InterferenceMask | None = None) -> float:
    """Trapezoidal integral of the PSD over ``cal_band``.

    Masked bins are left out of both the integral and the bandwidth, and
    the sum is rescaled to the full band width.
    """
    masked = mask.bins(s.freqs) if mask is not None else np.zeros(len(s.freqs), bool)
    v, m, w = _band_nodes(s.freqs, s.values, masked, cal_band)
    keep = ~m
    w_keep = w[keep].sum()
    if w_keep < (1 - MAX_MASKED_FRACTION) * w.sum():
        raise MfftError(f"{1 - w_keep / w.sum():.0%} of the band is masked")
    return float(np.sum(w[keep] * v[keep]) * (w.sum() / w_keep))


def calibrate(spectra_with_reference, mask: InterferenceMask | None = None,
              band=DEFAULT_BAND, reference_range=REFERENCE_RANGE) -> MfftCalibration:
    """Straight-line fit of band power against reference temperature.

    Points outside ``reference_range`` are ignored; the remaining ones must
    span at least a decade.  The scatter of P grows with P (chi-square
    statistics of the PSD bins), so points are weighted by 1/P^2 and the
    errors are scaled by the residuals.
    """
    mask = mask if mask is not None else InterferenceMask.empty()
    pairs = [(s, float(t)) for s, t in spectra_with_reference]
    lo, hi = reference_range
    used = [(s, t) for s, t in pairs if lo <= t <= hi]
    if len(used) < 2:
        raise MfftError(f"need at least two reference points inside {reference_range} K")
    temps = np.array([t for _, t in used])
    if temps.max() < MIN_REFERENCE_SPAN * temps.min():
        raise MfftError(f"reference temperatures span {temps.min():.3g}-{temps.max():.3g} K, "
                        "less than a decade")
    power = np.array([spectral_noise_power(s, band, mask) for s, _ in used])
    if np.any(power <= 0):
        raise MfftError("band power must be positive")
    try:
        fit = fit_linear(temps, power, 1.0 / power**2)
    except FitError as exc:
        raise MfftError(str(exc)) from exc
    errs = (fit.slope_err, fit.intercept_err, fit.covariance[0, 1])
    if len(used) == 2:
        errs = (0.0, 0.0, 0.0)
    return MfftCalibration(tuple(band), mask, fit.slope, fit.intercept, errs[0], errs[1],
                           (float(temps.min()), float(temps.max())), len(used),
                           used[0][0].unit.replace("/Hz", ""), float(errs[2]))


def temperature(s: Spectrum, cal: MfftCalibration) -> MfftTemperature:
    """T = (P - b)/m; flagged when P does not exceed the intercept."""
    p = spectral_noise_power(s, cal.band, cal.mask)
    t = (p - cal.intercept) / cal.slope
    return MfftTemperature(float(t), p, not p > cal.intercept)


def interval_uncertainty(spectra, cal: MfftCalibration) -> IntervalTemperature:
    """Mean temperature of an interval and its 2-sigma width from a Gaussian
    fit to the histogram of per-spectrum temperatures.

    The calibration error at the mean is reported separately; it is common
    to all spectra and does not average down.
    """
    spectra = list(spectra)
    if len(spectra) < MIN_INTERVAL_SPECTRA:
        raise MfftError(f"need at least {MIN_INTERVAL_SPECTRA} spectra, got {len(spectra)}")
    temps = np.array([temperature(s, cal).value for s in spectra])
    spread = float(np.std(temps))
    if spread <= 1e-12 * max(abs(float(np.mean(temps))), 1e-300):
        mean = float(np.mean(temps))
        return IntervalTemperature(mean, 0.0, 0.0, len(temps), False, temps,
                                   cal.temperature_sigma(mean))
    fit = fit_gaussian_hist(temps)
    poor = fit.reduced_chi2 > POOR_FIT_CHI2 or abs(fit.sigma - spread) > 0.5 * spread
    return IntervalTemperature(fit.mu, 2 * fit.sigma, fit.sigma, len(temps), bool(poor), temps,
                               cal.temperature_sigma(fit.mu))


def write_calibration(path, cal: MfftCalibration):
    from .fileio import write_kv

    m = cal.mask
    values = {
        "band": cal.band, "slope": cal.slope, "intercept": cal.intercept,
        "slope_err": cal.slope_err, "intercept_err": cal.intercept_err,
        "covariance": cal.covariance, "reference_range": cal.reference_range,
        "n_points": cal.n_points, "unit": cal.unit,
        "mask.bin_width": m.bin_width_used, "mask.flag_fraction": m.flag_fraction_threshold,
        "mask.n_spectra": m.n_spectra_used, "mask.prominence": m.prominence,
        "mask.manual": [v for pair in m.manual for v in pair],
        "mask.frequencies": m.masked_frequencies,
    }
    return write_kv(path, values, "MFFT calibration: band power = slope * T + intercept")


def read_calibration(path) -> MfftCalibration:
    from .fileio import FormatError, read_kv

    raw = read_kv(path)

    def get(key):
        if key not in raw:
            raise FormatError(f"{path}: calibration lacks {key!r}")
        return raw[key][0]

    def floats(key):
        text = get(key)
        return [float(v) for v in text.replace(",", " ").split()]

    try:
        manual = floats("mask.manual")
        mask = InterferenceMask(np.array(floats("mask.frequencies")), float(get("mask.bin_width")),
                                float(get("mask.flag_fraction")), int(get("mask.n_spectra")),
                                float(get("mask.prominence")),
                                tuple(zip(manual[::2], manual[1::2])))
        return MfftCalibration(tuple(floats("band")), mask, float(get("slope")),
                               float(get("intercept")), float(get("slope_err")),
                               float(get("intercept_err")), tuple(floats("reference_range")),
                               int(get("n_points")), get("unit"), float(get("covariance")))
    except (ValueError, MfftError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: bad calibration value: {exc}") from exc
