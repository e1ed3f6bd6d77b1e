"""Cantilever temperature from lock-in energy traces.

Two estimators are provided: the mean energy (equipartition) and the slope
of ln(counts) in an energy histogram (Boltzmann factor exp(-E/kB T)).  The
histogram is also compared bin by bin with the expected exponential
distribution, using a counting uncertainty that treats every correlation
time spent in a bin as one independent measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dsp import FitError, fit_linear
from .lockin import EnergyTrace
from .physmodel import K_B

MIN_DURATION_TAUS = 10
MIN_SIGNIFICANT_BINS = 5
SIGNIFICANCE_DIVISOR = 10  # bins need at least tau/10 worth of samples


class ThermoError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnergyHistogram:
    """Equal-width histogram of the non-floored samples of an energy trace.

    ``n_excluded`` counts samples left out of the bins (floored to zero by
    the background subtraction, or above the last edge).
    """

    bin_edges: np.ndarray  # J
    counts: np.ndarray
    total_samples: int
    lockin_rate: float
    tau: float
    n_excluded: int = 0

    def __post_init__(self):
        if len(self.bin_edges) != len(self.counts) + 1:
            raise ThermoError("need one more edge than bins")
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ThermoError("bin edges must be ascending")
        if int(np.sum(self.counts)) != self.total_samples:
            raise ThermoError("counts must sum to total_samples")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def threshold(self) -> int:
        return significance_threshold(self.tau, self.lockin_rate)

    @property
    def significant(self) -> np.ndarray:
        return self.counts >= self.threshold


@dataclass(frozen=True)
class TemperatureEstimate:
    value: float  # K
    statistical_uncertainty: float  # K
    method: str  # "mean-energy" or "slope"
    duration: float
    tau: float
    flagged: bool = False
    note: str = ""


@dataclass(frozen=True, eq=False)
class BandCheck:
    fraction: float  # of significant bins inside +/- n_sigma * delta_n
    n_bins: int  # significant bins considered
    n_sigma: float
    expected: np.ndarray = field(repr=False)
    delta_n: np.ndarray = field(repr=False)
    inside: np.ndarray = field(repr=False)
    significant: np.ndarray = field(repr=False)

    def passed(self, min_fraction: float = 0.95) -> bool:
        return self.n_bins > 0 and self.fraction >= min_fraction


def significance_threshold(tau: float, lockin_rate: float) -> int:
    """Minimum counts for a bin to carry information: ceil(tau/10 * rate)."""
    if not (tau > 0 and lockin_rate > 0):
        raise ThermoError("tau and lockin_rate must be positive")
    x = tau * lockin_rate / SIGNIFICANCE_DIVISOR
    # guard against 70.00000000001 rounding up to 71
    return int(math.ceil(x * (1 - 1e-12)))


def temperature_from_mean(trace: EnergyTrace, tau: float) -> TemperatureEstimate:
    """T = <E>/kB with uncertainty sqrt(tau/t) T.

    The estimate is flagged when the mean energy does not exceed the
    background energy removed by the lock-in, i.e. no resonator signal.
    """
    duration = trace.duration
    if duration < MIN_DURATION_TAUS * tau:
        raise ThermoError(f"trace of {duration:.3g} s is shorter than {MIN_DURATION_TAUS} tau")
    e_mean = float(np.mean(trace.energies))
    t = e_mean / K_B
    sigma = math.sqrt(tau / duration) * t
    flagged = not e_mean > trace.background_energy
    note = "mean energy below detection background" if flagged else ""
    return TemperatureEstimate(t, sigma, "mean-energy", duration, tau, flagged, note)


def make_histogram(trace: EnergyTrace, tau: float, bins: int | None = None,
                   e_max: float | None = None) -> EnergyHistogram:
    """Histogram of the energies above zero, from 0 to ``e_max`` (default: maximum).

    Bins default to round(sqrt(N)) for N non-floored samples.
    """
    e = np.asarray(trace.energies)
    positive = e[e > 0]
    if positive.size == 0:
        raise ThermoError("no positive energies to histogram")
    top = float(positive.max()) if e_max is None else float(e_max)
    n_bins = bins if bins is not None else max(1, int(round(math.sqrt(positive.size))))
    edges = np.linspace(0.0, top, n_bins + 1)
    counts, _ = np.histogram(positive, bins=edges)
    total = int(counts.sum())
    return EnergyHistogram(edges, counts, total, trace.sample_rate, tau, len(e) - total)


def histogram_from_counts(bin_edges, counts, lockin_rate: float, tau: float,
                          n_excluded: int = 0) -> EnergyHistogram:
    counts = np.asarray(counts)
    return EnergyHistogram(np.asarray(bin_edges, dtype=float), counts, int(counts.sum()),
                           lockin_rate, tau, n_excluded)


def temperature_from_slope(hist: EnergyHistogram) -> TemperatureEstimate:
    """Weighted straight-line fit of ln(counts) against bin centre.

    Only significant bins enter.  The variance of ln(n) is taken as
    tau*rate/n, the inverse of the number of independent measurements in
    the bin, so the slope error already accounts for sample correlation.
    """
    sig = hist.significant & (hist.counts > 0)
    if np.count_nonzero(sig) < MIN_SIGNIFICANT_BINS:
        raise ThermoError(f"need {MIN_SIGNIFICANT_BINS} significant bins, "
                          f"have {np.count_nonzero(sig)}")
    n = hist.counts[sig].astype(float)
    weights = n / (hist.tau * hist.lockin_rate)
    duration = (hist.total_samples + hist.n_excluded) / hist.lockin_rate
    try:
        fit = fit_linear(hist.centers[sig], np.log(n), weights, absolute_weights=True)
    except FitError as exc:
        raise ThermoError(str(exc)) from exc
    if not fit.slope < 0:
        return TemperatureEstimate(math.inf, math.inf, "slope", duration, hist.tau, True,
                                   "non-negative slope")
    t = -1.0 / (K_B * fit.slope)
    sigma = fit.slope_err / (K_B * fit.slope**2)
    return TemperatureEstimate(t, sigma, "slope", duration, hist.tau)


def expected_counts(hist: EnergyHistogram, temperature: float) -> np.ndarray:
    """Counts per bin for Exp(kB T) scaled to all samples of the trace."""
    n_all = hist.total_samples + hist.n_excluded
    kt = K_B * temperature
    return n_all * (np.exp(-hist.bin_edges[:-1] / kt) - np.exp(-hist.bin_edges[1:] / kt))


def delta_n(counts, tau: float, lockin_rate: float) -> np.ndarray:
    """Counting spread sqrt(n tau rate): n / sqrt(t_bin/tau) with t_bin = n/rate."""
    return np.sqrt(np.asarray(counts, dtype=float) * tau * lockin_rate)


def boltzmann_band_check(hist: EnergyHistogram, t: TemperatureEstimate | float,
                         n_sigma: float = 2.0) -> BandCheck:
    """Fraction of significant bins whose counts lie within n_sigma*delta_n of
    the Boltzmann expectation at temperature ``t``."""
    temperature = t.value if isinstance(t, TemperatureEstimate) else float(t)
    if not (temperature > 0 and math.isfinite(temperature)):
        raise ThermoError("band check needs a finite positive temperature")
    expected = expected_counts(hist, temperature)
    dn = delta_n(hist.counts, hist.tau, hist.lockin_rate)
    inside = np.abs(hist.counts - expected) <= n_sigma * dn
    sig = hist.significant
    n_sig = int(np.count_nonzero(sig))
    fraction = float(np.count_nonzero(inside & sig) / n_sig) if n_sig else 0.0
    return BandCheck(fraction, n_sig, n_sigma, expected, dn, inside, sig)


def estimates_agree(a: TemperatureEstimate, b: TemperatureEstimate, n_sigma: float = 2.0) -> bool:
    combined = math.hypot(a.statistical_uncertainty, b.statistical_uncertainty)
    return abs(a.value - b.value) <= n_sigma * combined


def energy_correlation_time(trace: EnergyTrace, max_lag: float | None = None,
                            min_lag: float | None = None) -> float:
    """Integrated autocorrelation time of the energy trace.

    The energy of a thermal mode decorrelates as exp(-2|t|/tau), so the
    integral of the two-sided autocorrelation equals tau.  The decay rate
    is fitted to ln(acf) over lags where the filter no longer matters
    (default from 1 s, or 5 output samples if longer) until the acf drops
    below 0.25, and converted to the integrated time 2/rate.
    """
    e = np.asarray(trace.energies, dtype=float)
    e = e - e.mean()
    n = len(e)
    fs = trace.sample_rate
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(e, nfft)
    acf = np.fft.irfft(spec * np.conj(spec), nfft)[:n]
    acf = acf / acf[0]
    lo = int(round((1.0 if min_lag is None else min_lag) * fs))
    lo = max(lo, 5)
    stop = np.flatnonzero(acf[lo:] < 0.25)
    hi = lo + (int(stop[0]) if stop.size else n - lo)
    if max_lag is not None:
        hi = min(hi, int(max_lag * fs))
    if hi - lo < 3:
        raise ThermoError("autocorrelation decays too fast to fit")
    lags = np.arange(lo, hi) / fs
    fit = fit_linear(lags, np.log(acf[lo:hi]))
    if not fit.slope < 0:
        raise ThermoError("autocorrelation does not decay")
    return 2.0 / -fit.slope
