"""Synthetic ground-truth data.

Thermal traces are synthesised in the rotating frame: the complex envelope
a(t) of x(t) = Re[a(t) exp(i w0 t)] is a complex Ornstein-Uhlenbeck
process with correlation time tau = 2Q/w0 and <|a|^2> = 2 kB T / k,
discretised exactly (AR(1) with rho = exp(-dt/tau)).  No integration
step-size bias, and the cost is linear in the number of samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .dsp import ComplexSweep, Spectrum, TimeSeries
from .physmodel import K_B, ResonatorParams, correlation_time

CHUNK = 1 << 21  # samples per generation chunk; fixed so output never depends on memory
PHASOR_BLOCK = 1024


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    resonator: ResonatorParams
    bath_temperature: float
    kappa: float  # V/m
    detection_noise_asd: float = 0.0  # V/sqrt(Hz), white
    sample_rate: float = 2800.0
    duration: float = 7200.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.sample_rate > 4 * self.resonator.f0:
            raise ConfigError(f"sample_rate {self.sample_rate} must exceed 4*f0 = "
                              f"{4 * self.resonator.f0}")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        if self.detection_noise_asd < 0:
            raise ConfigError("detection_noise_asd must be non-negative")
        if self.bath_temperature < 0:
            raise ConfigError("bath_temperature must be non-negative")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass(frozen=True)
class SweepConfig:
    freq_start: float
    freq_stop: float
    n_points: int = 201
    dwell: float = 1.0
    crosstalk_amplitude: float = 0.0
    crosstalk_phase: float = 0.0
    drive_amplitude: float = 0.0
    electrostatic_amplitude: float = 0.0
    electrostatic_phase: float = 0.0
    direction: str = "up"
    noise_asd: float = 0.0  # V/sqrt(Hz) per quadrature
    rng_seed: int = 0
    frequency_shift: float = 0.0  # Hz, moves the resonance (hysteresis fixtures)

    def __post_init__(self):
        if not self.freq_start < self.freq_stop:
            raise ConfigError("freq_start must be below freq_stop")
        if self.n_points < 3:
            raise ConfigError("n_points must be at least 3")
        if min(self.crosstalk_amplitude, self.drive_amplitude,
               self.electrostatic_amplitude, self.noise_asd) < 0:
            raise ConfigError("amplitudes must be non-negative")
        if self.direction not in ("up", "down"):
            raise ConfigError("direction must be 'up' or 'down'")
        if not self.dwell > 0:
            raise ConfigError("dwell must be positive")


@dataclass(frozen=True)
class InterferencePeak:
    freq: float
    height: float  # PSD units, added on top of the background
    width: float  # Hz, Gaussian sigma; 0 puts all power in the nearest bin


@dataclass(frozen=True)
class MfftSimConfig:
    band: tuple[float, float] = (50.0, 6050.0)
    true_slope: float = 1.0  # PSD per K
    base_temperature: float = 3e-3
    noise_floor: float = 0.0
    rolloff_freq: float = 20e3
    rolloff_order: float = 2.0
    interference_peaks: tuple[InterferencePeak, ...] = field(default_factory=tuple)
    n_averages: int = 16
    rng_seed: int = 0
    freq_resolution: float = 2.0
    freq_max: float = 6100.0
    unit: str = "phi0^2/Hz"

    def __post_init__(self):
        lo, hi = self.band
        if not (0 <= lo < hi <= self.freq_max):
            raise ConfigError("band must lie inside [0, freq_max]")
        if any(p.height < 0 for p in self.interference_peaks):
            raise ConfigError("peak heights must be non-negative")
        if self.n_averages < 1:
            raise ConfigError("n_averages must be >= 1")

    @property
    def freqs(self) -> np.ndarray:
        n = int(round(self.freq_max / self.freq_resolution)) + 1
        return np.arange(n) * self.freq_resolution

    def thermal_shape(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return 1.0 / (1.0 + (f / self.rolloff_freq) ** self.rolloff_order)

    def peak_profile(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        for p in self.interference_peaks:
            if p.width <= 0:
                out[np.argmin(np.abs(f - p.freq))] += p.height
            else:
                out += p.height * np.exp(-0.5 * ((f - p.freq) / p.width) ** 2)
        return out

    def expected_psd(self, temperature: float, f=None) -> np.ndarray:
        f = self.freqs if f is None else np.asarray(f, dtype=float)
        return (self.true_slope * temperature * self.thermal_shape(f) + self.noise_floor
                + self.peak_profile(f))


def _phasor(start: int, n: int, omega_per_sample: float) -> np.ndarray:
    """exp(i*omega*k) for k = start .. start+n-1, without a transcendental per sample."""
    nb = -(-n // PHASOR_BLOCK)
    fine = np.exp(1j * omega_per_sample * np.arange(PHASOR_BLOCK))
    coarse = np.exp(1j * omega_per_sample * (start + PHASOR_BLOCK * np.arange(nb)))
    return (coarse[:, None] * fine[None, :]).ravel()[:n]


def simulate_thermal_trace(cfg: SimConfig) -> TimeSeries:
    """Detector voltage kappa*x(t) + white noise for a resonator in equilibrium at T."""
    res = cfg.resonator
    fs = cfg.sample_rate
    n = cfg.n_samples
    tau = correlation_time(res)
    rho = math.exp(-1.0 / (fs * tau))
    var_q = K_B * cfg.bath_temperature / res.stiffness  # per quadrature
    innov = math.sqrt(var_q * (1 - rho**2))
    noise_sigma = cfg.detection_noise_asd * math.sqrt(fs / 2)
    w = 2 * math.pi * res.f0 / fs

    rng = np.random.default_rng(cfg.rng_seed)
    out = np.empty(n)
    a_prev = complex(rng.standard_normal(), rng.standard_normal()) * math.sqrt(var_q)
    drive = np.empty(min(CHUNK, n), dtype=complex)
    noise = np.empty(min(CHUNK, n))
    for start in range(0, n, CHUNK):
        m = min(CHUNK, n - start)
        d = drive[:m]
        rng.standard_normal(out=d.view(float))  # interleaved re/im pairs
        d *= innov
        if start == 0:
            d[0] = a_prev
            env = signal.lfilter([1.0], [1.0, -rho], d)
        else:
            env, _ = signal.lfilter([1.0], [1.0, -rho], d, zi=[rho * a_prev])
        a_prev = env[-1]
        env *= _phasor(start, m, w)
        x = out[start:start + m]
        np.multiply(env.real, cfg.kappa, out=x)
        if noise_sigma > 0:
            rng.standard_normal(out=noise[:m])
            noise[:m] *= noise_sigma
            x += noise[:m]
    return TimeSeries(out, fs, 0.0, "V", "squid")


def lorentzian_response(freqs, f0: float, q_factor: float) -> np.ndarray:
    """Normalised complex response (g/2)/((g/2) + i(w - w0)); equals 1 at resonance."""
    w = 2 * math.pi * np.asarray(freqs, dtype=float)
    w0 = 2 * math.pi * f0
    half = w0 / q_factor / 2
    return half / (half + 1j * (w - w0))


def sweep_circle(res: ResonatorParams, cfg: SweepConfig) -> tuple[complex, complex]:
    """Ground-truth (crosstalk vector, resonant diameter vector) of a sweep."""
    crosstalk = cfg.crosstalk_amplitude * np.exp(1j * cfg.crosstalk_phase)
    diameter = cfg.drive_amplitude + cfg.electrostatic_amplitude * np.exp(1j * cfg.electrostatic_phase)
    return complex(crosstalk), complex(diameter)


def simulate_sweep(res: ResonatorParams, cfg: SweepConfig) -> ComplexSweep:
    """Complex response of a driven sweep with crosstalk and parasitic electrostatic drive.

    The locus is a circle of diameter |V_el e^{i phi_el} + V_drive| touching the
    crosstalk vector.  Each point carries complex Gaussian noise of variance
    noise_asd^2 / dwell per quadrature.
    """
    freqs = np.linspace(cfg.freq_start, cfg.freq_stop, cfg.n_points)
    if cfg.direction == "down":
        freqs = freqs[::-1]
    crosstalk, diameter = sweep_circle(res, cfg)
    values = crosstalk + diameter * lorentzian_response(freqs, res.f0 + cfg.frequency_shift,
                                                         res.q_factor)
    sigma = cfg.noise_asd / math.sqrt(cfg.dwell)
    if sigma > 0:
        rng = np.random.default_rng(cfg.rng_seed)
        noise = rng.standard_normal((2, cfg.n_points))
        values = values + sigma * (noise[0] + 1j * noise[1])
    warnings = []
    margin = 3 * res.linewidth_hz
    if not (cfg.freq_start <= res.f0 - margin and res.f0 + margin <= cfg.freq_stop):
        warnings.append(f"sweep window [{cfg.freq_start}, {cfg.freq_stop}] Hz does not cover "
                        f"f0 +/- 3 linewidths")
    return ComplexSweep(freqs, values, cfg.direction, cfg.dwell, tuple(warnings))


def simulate_mfft_spectra(cfg: MfftSimConfig, temperatures) -> list[Spectrum]:
    """Welch-like flux-noise spectra: each bin is the expected PSD times a
    chi-square variate with 2*n_averages degrees of freedom, normalised to mean 1."""
    temps = np.asarray(temperatures, dtype=float)
    if np.any(temps <= 0):
        raise ConfigError("temperatures must be positive")
    f = cfg.freqs
    shape = cfg.thermal_shape(f)
    fixed = cfg.noise_floor + cfg.peak_profile(f)
    rng = np.random.default_rng(cfg.rng_seed)
    k = cfg.n_averages
    draws = rng.gamma(k, 1.0 / k, size=(len(temps), len(f)))
    out = []
    for t, g in zip(temps, draws):
        mean = cfg.true_slope * t * shape + fixed
        out.append(Spectrum(f, mean * g, n_averages=k, window="hann", overlap_fraction=0.5,
                            unit=cfg.unit))
    return out


def simulate_temperature_pairs(t_mfft, c: float = 1.0, t0: float = 0.0, n: float = 4.0,
                               rel_err_cant: float = 0.05, rel_err_mfft: float = 0.0,
                               rng_seed: int = 0, label: str = "sim"):
    """Synthetic run record: T_cant = c (T^n + T0^n)^(1/n) at true bath temperatures T.

    Both temperatures get Gaussian errors proportional to their true value;
    the quoted sigmas are the true ones.
    """
    from .analysis import RunRecord, saturation_model

    t = np.asarray(t_mfft, dtype=float)
    if np.any(t <= 0):
        raise ConfigError("bath temperatures must be positive")
    truth = c * t if t0 == 0 else saturation_model(t, t0, n, c)
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((2, len(t)))
    s_cant = rel_err_cant * truth
    s_mfft = rel_err_mfft * t
    return RunRecord(label, t + s_mfft * z[1], s_mfft, truth + s_cant * z[0], s_cant)
