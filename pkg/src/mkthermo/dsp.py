"""Numerical kernels shared by the thermometry pipelines.

Spectral estimation (Welch), zero-phase filtering with averaging
decimation, prominence peak finding and the least-squares fits used
downstream (Lorentzian, straight line, binned Gaussian, circle in the
complex plane).  Nonlinear fits use Levenberg-Marquardt with analytic
Jacobians, at most 200 iterations and a relative step tolerance of 1e-10.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

MAX_ITERATIONS = 200
STEP_TOLERANCE = 1e-10
LOWPASS_ORDER = 8


class FitError(ValueError):
    """Raised when a fit cannot be attempted (degenerate input)."""


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled signal; ``samples`` may be real or complex."""

    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0
    unit: str = "V"
    channel: str = "signal"

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", np.asarray(self.samples))

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.samples)) / self.sample_rate


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One-sided power spectral density on a uniform, ascending grid."""

    freqs: np.ndarray
    values: np.ndarray
    n_averages: int = 1
    window: str = "hann"
    overlap_fraction: float = 0.5
    unit: str = "V^2/Hz"
    segment_length: int | None = None

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "values", values)
        if freqs.shape != values.shape or freqs.ndim != 1:
            raise ValueError("freqs and values must be 1-d arrays of equal length")
        if len(freqs) > 1 and not np.all(np.diff(freqs) > 0):
            raise ValueError("freqs must be strictly increasing")
        if np.any(values < 0):
            raise ValueError("PSD values must be non-negative")
        if self.n_averages < 1:
            raise ValueError("n_averages must be >= 1")

    @property
    def resolution(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def total_power(self) -> float:
        """Sum of PSD * bin width."""
        return float(np.sum(self.values) * self.resolution)

    def scaled(self, factor: float) -> "Spectrum":
        return Spectrum(self.freqs, self.values * factor, self.n_averages, self.window,
                        self.overlap_fraction, self.unit, self.segment_length)


@dataclass(frozen=True, eq=False)
class ComplexSweep:
    """Driven frequency sweep: complex response at each frequency, in sweep order."""

    freqs: np.ndarray
    values: np.ndarray
    direction: str = "up"
    dwell: float = 1.0
    warnings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "freqs", np.asarray(self.freqs, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        if self.freqs.shape != self.values.shape:
            raise ValueError("freqs and values must have equal length")
        if self.direction not in ("up", "down"):
            raise ValueError("direction must be 'up' or 'down'")

    def ascending(self) -> "ComplexSweep":
        order = np.argsort(self.freqs, kind="stable")
        return ComplexSweep(self.freqs[order], self.values[order], "up", self.dwell,
                            self.warnings)


@dataclass(frozen=True)
class LorentzianFit:
    """S(f) = amplitude / ((f - center)^2 + (width/2)^2) + offset, f in Hz."""

    amplitude: float
    center: float
    width: float
    offset: float
    amplitude_err: float = math.nan
    center_err: float = math.nan
    width_err: float = math.nan
    offset_err: float = math.nan
    converged: bool = True
    reduced_chi2: float = math.nan
    n_points: int = 0

    @property
    def area(self) -> float:
        """Integral of the Lorentzian part over all frequencies."""
        return 2 * math.pi * self.amplitude / self.width

    @property
    def area_err(self) -> float:
        rel = math.hypot(self.amplitude_err / self.amplitude, self.width_err / self.width)
        return abs(self.area) * rel

    @property
    def peak_height(self) -> float:
        return 4 * self.amplitude / self.width**2

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        return self.amplitude / ((f - self.center) ** 2 + (self.width / 2) ** 2) + self.offset


@dataclass(frozen=True)
class CircleFit:
    center: complex
    radius: float
    rms_residual: float
    center_err: float = math.nan
    radius_err: float = math.nan
    n_points: int = 0


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    slope_err: float
    intercept_err: float
    covariance: np.ndarray = field(repr=False, compare=False, default=None)
    chi2: float = math.nan
    dof: int = 0

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float
    mu_err: float
    sigma_err: float
    reduced_chi2: float
    n_values: int
    n_bins: int


# -- spectra -------------------------------------------------------------------

def welch_psd(ts: TimeSeries, segment_length: int, overlap_fraction: float = 0.5,
              unit: str | None = None) -> Spectrum:
    """One-sided Welch PSD with a Hann window and per-segment mean removal.

    Density scaling 1/(fs * sum(w^2)) makes sum(PSD) * df equal the
    window-weighted segment variance, averaged over segments.
    """
    x = np.asarray(ts.samples)
    if np.iscomplexobj(x):
        raise ValueError("welch_psd expects a real-valued series")
    n = int(segment_length)
    if n < 2:
        raise ValueError("segment_length must be at least 2")
    if len(x) < n:
        raise ValueError(f"series of {len(x)} samples is shorter than one segment ({n})")
    step = n - int(round(n * overlap_fraction))
    n_seg = (len(x) - n) // step + 1
    window = signal.get_window("hann", n)
    scale = 1.0 / (ts.sample_rate * np.sum(window**2))

    segments = np.lib.stride_tricks.sliding_window_view(x.astype(float, copy=False), n)[::step]
    acc = np.zeros(n // 2 + 1)
    batch = max(1, (1 << 22) // n)
    for start in range(0, n_seg, batch):
        chunk = segments[start:start + batch]
        chunk = (chunk - chunk.mean(axis=1, keepdims=True)) * window
        acc += np.sum(np.abs(np.fft.rfft(chunk, axis=1)) ** 2, axis=0)
    psd = acc * scale / n_seg
    if n % 2 == 0:
        psd[1:-1] *= 2
    else:
        psd[1:] *= 2
    freqs = np.fft.rfftfreq(n, d=1.0 / ts.sample_rate)
    return Spectrum(freqs, psd, n_averages=n_seg, window="hann",
                    overlap_fraction=overlap_fraction,
                    unit=unit or f"{ts.unit}^2/Hz", segment_length=n)


def normalize_background(freqs: np.ndarray, values: np.ndarray,
                         bin_width: float | None = None) -> np.ndarray:
    """Divide by a straight-line background fitted per ``bin_width`` chunk.

    ``values`` may be a stack of spectra (frequency along the last axis).
    """
    freqs = np.asarray(freqs, dtype=float)
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    if bin_width is None:
        edges = np.array([0, len(freqs)])
    else:
        labels = np.floor((freqs - freqs[0]) / bin_width).astype(int)
        edges = np.concatenate([[0], np.flatnonzero(np.diff(labels)) + 1, [len(freqs)]])
    for lo, hi in zip(edges[:-1], edges[1:]):
        v = values[..., lo:hi]
        mean = v.mean(axis=-1, keepdims=True)
        if hi - lo >= 2:
            u = freqs[lo:hi] - freqs[lo:hi].mean()
            slope = (v * u).sum(axis=-1, keepdims=True) / np.dot(u, u)
            background = mean + slope * u
        else:
            background = np.broadcast_to(mean, v.shape)
        floor = np.where(mean != 0, np.abs(mean), 1.0)
        out[..., lo:hi] = v / np.where(background > 0, background, floor)
    return out


def prominent_peaks(normalized: np.ndarray, threshold: float):
    """Indices and half-prominence extents of peaks with prominence >= threshold."""
    peaks, props = signal.find_peaks(normalized, prominence=threshold, width=0,
                                     rel_height=0.5)
    return peaks, props["left_ips"], props["right_ips"]


def find_peaks_prominence(s: Spectrum, prominence_threshold: float,
                          background_bin: float | None = None) -> list[float]:
    """Frequencies of local maxima standing out by ``prominence_threshold``.

    Prominence is evaluated on values divided by a linear background (fitted
    over the whole spectrum, or per ``background_bin`` Hz chunk), so the
    threshold is in units of the local background level.
    """
    normalized = normalize_background(s.freqs, s.values, background_bin)
    peaks, _, _ = prominent_peaks(normalized, prominence_threshold)
    return [float(s.freqs[i]) for i in peaks]


# -- filtering -----------------------------------------------------------------

def lowpass_sos(cutoff: float, sample_rate: float, order: int = LOWPASS_ORDER) -> np.ndarray:
    """Butterworth low-pass in second-order sections (applied forward-backward)."""
    return signal.butter(order, cutoff, fs=sample_rate, output="sos")


def block_average(x: np.ndarray, factor: int, axis: int = 0) -> np.ndarray:
    """Mean over consecutive blocks of ``factor`` samples; trailing partial block dropped."""
    x = np.moveaxis(np.asarray(x), axis, 0)
    n = (x.shape[0] // factor) * factor
    out = x[:n].reshape((n // factor, factor) + x.shape[1:]).mean(axis=1)
    return np.moveaxis(out, 0, axis)


def decimation_factor(in_rate: float, out_rate: float) -> int:
    ratio = in_rate / out_rate
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * ratio:
        raise ValueError(f"input rate {in_rate} is not an integer multiple of {out_rate}")
    return factor


def lowpass_decimate(ts: TimeSeries, cutoff: float, out_rate: float,
                     order: int = LOWPASS_ORDER) -> TimeSeries:
    """Zero-phase Butterworth low-pass, then block-averaging down to ``out_rate``.

    The filter is order ``order`` applied forward and backward, so the
    magnitude response is |H|^2 of the single pass (-6 dB at ``cutoff``).
    """
    fs = ts.sample_rate
    if not (0 < cutoff < out_rate / 2 and out_rate <= fs):
        raise ValueError(f"need cutoff < out_rate/2 and out_rate <= input rate; got "
                         f"cutoff={cutoff}, out_rate={out_rate}, input rate={fs}")
    factor = decimation_factor(fs, out_rate)
    sos = lowpass_sos(cutoff, fs, order)
    filtered = signal.sosfiltfilt(sos, ts.samples, axis=0)
    out = block_average(filtered, factor)
    start = ts.start_time + (factor - 1) / (2 * fs)
    return TimeSeries(out, out_rate, start, ts.unit, ts.channel)


# -- least-squares fits --------------------------------------------------------

def _covariance(jac: np.ndarray, scale: float) -> np.ndarray:
    jtj = jac.T @ jac
    try:
        return np.linalg.inv(jtj) * scale
    except np.linalg.LinAlgError:
        return np.full_like(jtj, np.inf)


def _lm(residuals, jacobian, p0):
    return optimize.least_squares(residuals, p0, jac=jacobian, method="lm",
                                  xtol=STEP_TOLERANCE, ftol=1e-12, gtol=1e-12,
                                  max_nfev=MAX_ITERATIONS)


def _lorentz_model(p, u):
    a, u0, g, c = p
    return a / ((u - u0) ** 2 + (g / 2) ** 2) + c


def _lorentz_jac(p, u):
    a, u0, g, _ = p
    d = (u - u0) ** 2 + (g / 2) ** 2
    return np.column_stack([1 / d, 2 * a * (u - u0) / d**2, -a * (g / 2) / d**2,
                            np.ones_like(u)])


def _fwhm_guess(x, y, i_peak, offset):
    half = offset + (y[i_peak] - offset) / 2
    left = i_peak
    while left > 0 and y[left] > half:
        left -= 1
    right = i_peak
    while right < len(y) - 1 and y[right] > half:
        right += 1
    return max(x[right] - x[left], 2 * (x[1] - x[0]))


def fit_lorentzian_xy(x: np.ndarray, y: np.ndarray, relative_weights: bool = True) -> LorentzianFit:
    """Lorentzian-plus-offset fit to arbitrary (x, y) samples."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 5:
        raise FitError("need at least 5 points for a Lorentzian fit")
    span = np.ptp(y)
    if not np.all(np.isfinite(y)) or span <= 1e-12 * max(np.max(np.abs(y)), 1e-300):
        return LorentzianFit(0.0, float(x[np.argmax(y)]), math.nan, float(np.mean(y)),
                             converged=False, n_points=len(x))
    k = max(1, len(y) // 10)
    offset0 = float(np.median(np.concatenate([y[:k], y[-k:]])))
    offset0 = min(offset0, float(np.min(y)) + 0.5 * span)
    i_peak = int(np.argmax(y))
    height = y[i_peak] - offset0
    fw = _fwhm_guess(x, y, i_peak, offset0)
    f_ref, y_ref = x[i_peak], height
    u = (x - f_ref) / fw
    v = y / y_ref
    p0 = np.array([0.25, 0.0, 1.0, offset0 / y_ref])

    sigma = np.ones_like(v)
    result = None
    for _ in range(2 if relative_weights else 1):
        res = _lm(lambda p: (_lorentz_model(p, u) - v) / sigma,
                  lambda p: _lorentz_jac(p, u) / sigma[:, None], p0)
        result = res
        if relative_weights:
            model = _lorentz_model(res.x, u)
            floor = 1e-3 * np.max(np.abs(model))
            sigma = np.maximum(np.abs(model), floor)
            p0 = res.x
    p = result.x
    dof = max(len(v) - 4, 1)
    chi2 = float(np.sum(result.fun**2))
    cov = _covariance(result.jac, chi2 / dof)
    errs = np.sqrt(np.abs(np.diag(cov)))
    converged = bool(result.status > 0) and np.all(np.isfinite(errs)) and p[2] != 0
    a, u0, g, c = p
    return LorentzianFit(
        amplitude=float(a * y_ref * fw**2),
        center=float(u0 * fw + f_ref),
        width=float(abs(g) * fw),
        offset=float(c * y_ref),
        amplitude_err=float(errs[0] * y_ref * fw**2),
        center_err=float(errs[1] * fw),
        width_err=float(errs[2] * fw),
        offset_err=float(errs[3] * y_ref),
        converged=bool(converged),
        reduced_chi2=chi2 / dof,
        n_points=len(x),
    )


def fit_lorentzian(s: Spectrum, window: tuple[float, float]) -> LorentzianFit:
    """Weighted Lorentzian-plus-offset fit of a PSD inside ``window`` (Hz).

    The first pass is unweighted; the second weights each bin by the
    inverse of the first-pass model, since Welch estimates scatter in
    proportion to their expectation.  Non-convergence is reported through
    ``converged`` rather than raised.
    """
    lo, hi = window
    sel = (s.freqs >= lo) & (s.freqs <= hi)
    if np.count_nonzero(sel) < 5:
        raise FitError(f"window {window} holds fewer than 5 bins")
    return fit_lorentzian_xy(s.freqs[sel], s.values[sel])


def fit_circle(sweep) -> CircleFit:
    """Least-squares circle through complex points.

    Algebraic (Kasa) solution on centred, rescaled coordinates, refined by
    minimising geometric distances.  Accepts a :class:`ComplexSweep` or any
    array of complex values.
    """
    z = np.asarray(sweep.values if isinstance(sweep, ComplexSweep) else sweep, dtype=complex)
    if len(z) < 3:
        raise FitError("need at least 3 points for a circle")
    origin = z.mean()
    scale = np.sqrt(np.mean(np.abs(z - origin) ** 2))
    if scale == 0:
        raise FitError("points are coincident")
    w = (z - origin) / scale
    x, y = w.real, w.imag
    sv = np.linalg.svd(np.column_stack([x, y]), compute_uv=False)
    if sv[-1] <= 1e-9 * sv[0]:
        raise FitError("points are collinear")
    design = np.column_stack([x, y, np.ones_like(x)])
    (d, e, f), *_ = np.linalg.lstsq(design, -(x**2 + y**2), rcond=None)
    xc, yc = -d / 2, -e / 2
    r = math.sqrt(max(xc**2 + yc**2 - f, 1e-30))

    def residuals(p):
        return np.hypot(x - p[0], y - p[1]) - p[2]

    def jacobian(p):
        dist = np.maximum(np.hypot(x - p[0], y - p[1]), 1e-300)
        return np.column_stack([-(x - p[0]) / dist, -(y - p[1]) / dist, -np.ones_like(x)])

    if len(z) > 3:
        res = _lm(residuals, jacobian, np.array([xc, yc, r]))
        xc, yc, r = res.x
        jac = res.jac
        resid = res.fun
    else:
        jac = jacobian(np.array([xc, yc, r]))
        resid = residuals(np.array([xc, yc, r]))
    dof = len(z) - 3
    rss = float(np.sum(resid**2))
    if dof > 0:
        errs = np.sqrt(np.abs(np.diag(_covariance(jac, rss / dof))))
    else:
        errs = np.zeros(3)
    return CircleFit(
        center=complex(origin + scale * complex(xc, yc)),
        radius=float(abs(r) * scale),
        rms_residual=float(math.sqrt(rss / len(z)) * scale),
        center_err=float(math.hypot(errs[0], errs[1]) * scale),
        radius_err=float(errs[2] * scale),
        n_points=len(z),
    )


def fit_linear(x, y, weights=None, absolute_weights: bool = False) -> LinearFit:
    """Weighted straight-line fit y = slope*x + intercept.

    ``weights`` are inverse variances.  With ``absolute_weights`` the
    parameter errors come straight from them; otherwise they are rescaled
    by the reduced chi-square of the residuals.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise FitError("x and y differ in length")
    if len(x) < 2:
        raise FitError("need at least 2 points")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    sw = w.sum()
    xm = np.sum(w * x) / sw
    ym = np.sum(w * y) / sw
    sxx = np.sum(w * (x - xm) ** 2)
    if sxx <= 1e-300 or np.ptp(x) == 0:
        raise FitError("x values are degenerate")
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    chi2 = float(np.sum(w * resid**2))
    dof = len(x) - 2
    cov = np.array([[1 / sxx, -xm / sxx], [-xm / sxx, 1 / sw + xm**2 / sxx]])
    if not absolute_weights:
        cov = cov * (chi2 / dof if dof > 0 else math.nan)
    return LinearFit(float(slope), float(intercept), float(math.sqrt(cov[0, 0])),
                     float(math.sqrt(cov[1, 1])), cov, chi2, dof)


def _gauss_counts(p, centers, norm):
    mu, sig = p
    z = (centers - mu) / sig
    return norm / (math.sqrt(2 * math.pi) * sig) * np.exp(-0.5 * z**2)


def _gauss_jac(p, centers, norm):
    mu, sig = p
    z = (centers - mu) / sig
    f = _gauss_counts(p, centers, norm)
    return np.column_stack([f * z / sig, f * (z**2 - 1) / sig])


def fit_gaussian_hist(values, bins: int | None = None) -> GaussianFit:
    """Fit a normal density to the histogram of ``values``.

    Bins default to max(10, sqrt(N)).  Chi-square weights use the model
    counts of a first pass (floored at one count).
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 30:
        raise FitError(f"need at least 30 values, got {n}")
    spread = float(np.std(values))
    if spread == 0 or spread <= 1e-14 * abs(float(np.mean(values))):
        raise FitError("values have zero variance")
    n_bins = bins or max(10, int(round(math.sqrt(n))))
    counts, edges = np.histogram(values, bins=n_bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    norm = n * (edges[1] - edges[0])
    p = np.array([float(np.mean(values)), spread])
    sigma = np.sqrt(np.maximum(counts, 1.0))
    res = None
    for _ in range(2):
        res = _lm(lambda q: (_gauss_counts(q, centers, norm) - counts) / sigma,
                  lambda q: _gauss_jac(q, centers, norm) / sigma[:, None], p)
        p = res.x
        sigma = np.sqrt(np.maximum(_gauss_counts(p, centers, norm), 1.0))
    dof = max(n_bins - 2, 1)
    chi2 = float(np.sum(((_gauss_counts(p, centers, norm) - counts) / sigma) ** 2))
    cov = _covariance(_gauss_jac(p, centers, norm) / sigma[:, None], 1.0)
    errs = np.sqrt(np.abs(np.diag(cov)))
    return GaussianFit(float(p[0]), float(abs(p[1])), float(errs[0]), float(errs[1]),
                       chi2 / dof, n, n_bins)
