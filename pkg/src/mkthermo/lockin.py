"""Digital lock-in: demodulation, filtering, decimation and energy traces.

Each channel multiplies the record by cos and sin at its reference
frequency and recombines the quadratures as I + iQ, so a tone
a*cos(2 pi f t + phi) demodulates to a*exp(-i phi).  The product is first
averaged in blocks down to an intermediate rate (an integrate-and-dump
stage, computed as one matrix product per record), then low-pass filtered
forward-backward with an order-8 Butterworth at the lock-in bandwidth,
and finally block-averaged to the output rate.  Samples within five filter
time constants of either end are discarded, the time constant being the
decay time of the filter's slowest pole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .dsp import TimeSeries, block_average, decimation_factor, lowpass_sos
from .physmodel import Conversion, ResonatorParams

SETTLING_TIME_CONSTANTS = 5
MIN_INTERMEDIATE_OVERSAMPLING = 20  # intermediate rate >= 20 * bandwidth


class LockinError(ValueError):
    pass


@dataclass(frozen=True)
class LockinConfig:
    demod_freq: float
    bandwidth: float = 1.0
    output_rate: float = 100.0
    background_offsets: tuple[float, float] = (5.0, -5.0)

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise LockinError("bandwidth must be positive")
        if not self.output_rate >= 2 * self.bandwidth:
            raise LockinError("output_rate must be at least twice the bandwidth")
        for off in self.background_offsets:
            if not self.demod_freq + off > 0:
                raise LockinError("background channel frequency must be positive")
        if not self.demod_freq > 0:
            raise LockinError("demod_freq must be positive")

    @property
    def filter_time_constant(self) -> float:
        return filter_time_constant(self.bandwidth)

    @property
    def settle_time(self) -> float:
        return SETTLING_TIME_CONSTANTS * self.filter_time_constant


@dataclass(frozen=True, eq=False)
class EnergyTrace:
    times: np.ndarray
    energies: np.ndarray  # J, floored at zero
    sample_rate: float
    demod_freq: float
    background_energy: float  # J, mean off-resonance power in energy units
    resonator: ResonatorParams
    kappa: Conversion
    n_floored: int = 0

    @property
    def duration(self) -> float:
        return len(self.energies) / self.sample_rate

    @property
    def floored_mask(self) -> np.ndarray:
        return self.energies == 0


def filter_time_constant(bandwidth: float, order: int = 8) -> float:
    """Decay time of the slowest pole of the analog Butterworth prototype."""
    return 1.0 / (2 * math.pi * bandwidth * math.sin(math.pi / (2 * order)))


def _intermediate_factor(fs: float, cfg: LockinConfig) -> tuple[int, int]:
    total = decimation_factor(fs, cfg.output_rate)
    target = max(MIN_INTERMEDIATE_OVERSAMPLING * cfg.bandwidth, 2 * cfg.output_rate)
    first = 1
    for m in range(total, 0, -1):
        if total % m == 0 and fs / m >= target:
            first = m
            break
    return first, total // first


def demodulate_channels(ts: TimeSeries, freqs, cfg: LockinConfig) -> tuple[np.ndarray, float, float]:
    """Demodulate ``ts`` at several reference frequencies at once.

    Returns (z, output_rate, start_time) with ``z`` of shape (n_out, n_freqs).
    """
    fs = ts.sample_rate
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if fs < 4 * np.max(freqs):
        raise LockinError(f"sample rate {fs} is below 4x the demodulation frequency")
    x = np.asarray(ts.samples)
    if np.iscomplexobj(x):
        raise LockinError("lock-in input must be real")
    m1, m2 = _intermediate_factor(fs, cfg)
    nb = len(x) // m1
    if nb == 0:
        raise LockinError("record shorter than one decimation block")
    w = 2 * np.pi * freqs / fs

    # I + iQ = <V cos> + i<V sin> = <V exp(+i w k)>; split k = j*m1 + l
    fine = np.exp(1j * np.outer(np.arange(m1), w)) / m1
    blocks = x[:nb * m1].reshape(nb, m1).astype(float, copy=False)
    z = blocks @ fine.real + 1j * (blocks @ fine.imag)
    z *= np.exp(1j * np.outer(np.arange(nb) * m1, w))
    z *= 2.0

    mid_rate = fs / m1
    sos = lowpass_sos(cfg.bandwidth, mid_rate)
    z = signal.sosfiltfilt(sos, z, axis=0)
    z = block_average(z, m2, axis=0)
    start = ts.start_time + (m1 * m2 - 1) / (2 * fs)

    trim = int(math.ceil(cfg.settle_time * cfg.output_rate))
    if len(z) <= 2 * trim:
        raise LockinError("record too short for the lock-in settling time")
    z = z[trim:len(z) - trim]
    return z, cfg.output_rate, start + trim / cfg.output_rate


def demodulate(ts: TimeSeries, cfg: LockinConfig) -> TimeSeries:
    """Complex envelope at ``cfg.demod_freq``, sampled at ``cfg.output_rate``.

    A tone a*cos(2 pi f t + phi) at the reference frequency gives |z| = a and
    arg z = -phi once the filter has settled.
    """
    z, rate, start = demodulate_channels(ts, [cfg.demod_freq], cfg)
    return TimeSeries(z[:, 0], rate, start, ts.unit, f"{ts.channel}@{cfg.demod_freq:g}Hz")


def energy_trace(ts: TimeSeries, cfg: LockinConfig, res: ResonatorParams,
                 kappa: Conversion | float) -> EnergyTrace:
    """Background-corrected resonator energy E(t) = k/2 (|z|^2 - B) / kappa^2.

    B is the time-averaged power of the two off-resonance channels, averaged
    with equal weight.  Negative values are set to zero and counted.
    """
    if not isinstance(kappa, Conversion):
        kappa = Conversion(float(kappa), "V/m")
    for off in cfg.background_offsets:
        if abs(off) < 2 * cfg.bandwidth:
            raise LockinError(f"background offset {off} Hz overlaps the signal bandwidth")
    freqs = [cfg.demod_freq] + [cfg.demod_freq + off for off in cfg.background_offsets]
    z, rate, start = demodulate_channels(ts, freqs, cfg)
    power = np.abs(z) ** 2
    background = float(np.mean(power[:, 1:]))
    scale = 0.5 * res.stiffness / kappa.volts_per_meter**2
    energies = scale * (power[:, 0] - background)
    negative = energies < 0
    energies[negative] = 0.0
    times = start + np.arange(len(energies)) / rate
    return EnergyTrace(times, energies, rate, cfg.demod_freq, scale * background, res, kappa,
                       int(np.count_nonzero(negative)))


def independent_count(trace: EnergyTrace, tau: float) -> int:
    """Number of statistically independent energy samples, floor(duration / tau)."""
    return int(math.floor(trace.duration / tau + 1e-9))
