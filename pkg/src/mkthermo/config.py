"""Pipeline configuration from ``key = value`` text files.

Keys are dotted, ``section.name``; all values are SI.  Unknown keys and
malformed values are rejected with the file line number.  See
``KEYS`` for the complete list and defaults.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import physmodel as pm
from .fileio import FormatError, read_kv
from .lockin import LockinConfig
from .simkit import InterferencePeak, MfftSimConfig, SimConfig, SweepConfig


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _strings(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.replace(",", " ").split() if v.strip())


def _triples(text: str) -> tuple[tuple[float, ...], ...]:
    """``a:b:c, d:e:f`` -> ((a, b, c), (d, e, f))."""
    out = []
    for item in _strings(text):
        out.append(tuple(float(v) for v in item.split(":")))
    return tuple(out)


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str):
    return None if text.lower() in ("", "none", "auto") else float(text)


def _optional_int(text: str):
    return None if text.lower() in ("", "none", "auto") else int(text)


# key -> (parser, default); None defaults mean "required when used" or "derived"
KEYS: dict[str, tuple] = {
    "resonator.f0": (float, None),
    "resonator.q_factor": (float, None),
    "resonator.m_eff": (_optional_float, None),
    "resonator.k_spring": (_optional_float, None),
    "resonator.tip_diameter": (_optional_float, None),
    "resonator.tip_density": (_optional_float, None),
    "resonator.mass_tolerance": (float, pm.DEFAULT_MASS_TOLERANCE),

    "circuit.l_fi": (float, None),
    "circuit.l_inp": (float, None),
    "circuit.l_par1": (float, None),
    "circuit.l_par2": (float, None),
    "circuit.l_t1": (float, None),
    "circuit.l_t2": (float, None),
    "circuit.l_pl": (float, None),
    "circuit.m_12": (float, None),
    "circuit.squid_voltage_gain": (float, 0.43),
    "circuit.squid_current_coupling": (float, 5e-7),
    "circuit.coupling_unit": (str, "A/phi0"),

    "sim.outputs": (_strings, ("thermal",)),
    "sim.bath_temperature": (float, None),
    "sim.kappa": (float, None),
    "sim.detection_noise_asd": (float, 0.0),
    "sim.sample_rate": (float, 2800.0),
    "sim.duration": (float, 7200.0),
    "sim.rng_seed": (int, 0),
    "sim.start_epoch_ns": (int, 0),

    "sweep.freq_start": (float, None),
    "sweep.freq_stop": (float, None),
    "sweep.n_points": (int, 201),
    "sweep.dwell": (float, 1.0),
    "sweep.crosstalk_amplitude": (float, 0.0),
    "sweep.crosstalk_phase": (float, 0.0),
    "sweep.drive_amplitude": (float, 0.0),
    "sweep.electrostatic_amplitude": (float, 0.0),
    "sweep.electrostatic_phase": (float, 0.0),
    "sweep.direction": (str, "up"),
    "sweep.noise_asd": (float, 0.0),
    "sweep.rng_seed": (int, 0),
    "sweep.frequency_shift": (float, 0.0),

    "mfft.band": (_floats, (50.0, 6050.0)),
    "mfft.true_slope": (float, 1.0),
    "mfft.base_temperature": (float, 3e-3),
    "mfft.noise_floor": (float, 0.0),
    "mfft.rolloff_freq": (float, 20e3),
    "mfft.rolloff_order": (float, 2.0),
    "mfft.peaks": (_triples, ()),
    "mfft.n_averages": (int, 16),
    "mfft.rng_seed": (int, 0),
    "mfft.freq_resolution": (float, 2.0),
    "mfft.freq_max": (float, 6100.0),
    "mfft.unit": (str, "phi0^2/Hz"),
    "mfft.n_mask_spectra": (int, 1000),
    "mfft.temperatures": (_floats, ()),
    "mfft.holdout_temperature": (_optional_float, None),
    "mfft.holdout_count": (int, 119),
    "mfft.spectrum_interval": (float, 60.0),
    "mfft.bin_width": (float, 500.0),
    "mfft.prominence": (float, 2.0),
    "mfft.flag_fraction": (float, 0.015),
    "mfft.min_spectra": (int, 1000),
    "mfft.manual_mask": (_triples, ()),
    "mfft.reference_min": (float, 15e-3),
    "mfft.reference_max": (float, 1.0),

    "lockin.demod_freq": (_optional_float, None),
    "lockin.bandwidth": (float, 1.0),
    "lockin.output_rate": (float, 100.0),
    "lockin.background_offsets": (_floats, (5.0, -5.0)),
    "lockin.kappa": (_optional_float, None),

    "psd.segment_length": (int, 1 << 20),
    "psd.fit_halfwidth": (_optional_float, None),

    "thermo.bins": (_optional_int, None),
    "thermo.tau": (_optional_float, None),
    "thermo.band_sigma": (float, 2.0),

    "dispcal.q_source": (str, "resonator"),
    "dispcal.mass_rel_err": (float, 0.0),
    "dispcal.q_rel_err": (float, 0.0),
    "dispcal.inductance_rel_err": (float, 0.0),

    "fit.min_tmfft": (float, 8e-3),
    "fit.fix_n": (_optional_float, None),

    "run.label": (str, "sim"),
    "run.t_mfft": (_floats, ()),
    "run.c": (float, 1.0),
    "run.t0": (float, 0.0),
    "run.n": (float, 4.0),
    "run.rel_err_cant": (float, 0.05),
    "run.rel_err_mfft": (float, 0.0),
    "run.rng_seed": (int, 0),
}


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    source: str = "<defaults>"
    digest: str = ""

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            raw = read_kv(path)
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except FormatError as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls.from_mapping({k: v for k, (v, _) in raw.items()},
                               {k: n for k, (_, n) in raw.items()}, str(path))
        cfg.digest = hashlib.sha256(path.read_bytes()).hexdigest()
        return cfg

    @classmethod
    def from_mapping(cls, mapping: dict, lines: dict | None = None,
                     source: str = "<mapping>") -> "PipelineConfig":
        lines = lines or {}
        values = {}
        for key, text in mapping.items():
            where = f"{source}:{lines[key]}" if key in lines else source
            if key not in KEYS:
                raise ConfigError(f"{where}: unknown key {key!r}")
            parser = KEYS[key][0]
            if not isinstance(text, str):
                values[key] = text
                continue
            try:
                values[key] = parser(text)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from exc
        return cls(values, dict(lines), source)

    def has(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default=...):
        if key in self.values:
            return self.values[key]
        if key not in KEYS:
            raise KeyError(key)
        if default is not ...:
            return default
        return KEYS[key][1]

    def require(self, key: str):
        value = self.get(key)
        if value is None:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return value

    def _build(self, what: str, fn):
        try:
            return fn()
        except (pm.ParameterError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{self.source}: invalid {what}: {exc}") from exc

    # -- builders -----------------------------------------------------------
    def resonator(self) -> pm.ResonatorParams:
        return self._build("resonator", lambda: pm.ResonatorParams(
            self.require("resonator.f0"), self.require("resonator.q_factor"),
            self.get("resonator.m_eff"), self.get("resonator.k_spring"),
            self.get("resonator.tip_diameter"), self.get("resonator.tip_density"),
            self.get("resonator.mass_tolerance")))

    def circuit(self) -> pm.CircuitParams:
        names = ("l_fi", "l_inp", "l_par1", "l_par2", "l_t1", "l_t2", "l_pl", "m_12")
        return self._build("circuit", lambda: pm.CircuitParams(
            *(self.require(f"circuit.{n}") for n in names),
            self.get("circuit.squid_voltage_gain"), self.get("circuit.squid_current_coupling"),
            self.get("circuit.coupling_unit")))

    def sim_config(self) -> SimConfig:
        res = self.resonator()
        return self._build("sim", lambda: SimConfig(
            res, self.require("sim.bath_temperature"), self.require("sim.kappa"),
            self.get("sim.detection_noise_asd"), self.get("sim.sample_rate"),
            self.get("sim.duration"), self.get("sim.rng_seed")))

    def sweep_config(self, **overrides) -> SweepConfig:
        names = ("freq_start", "freq_stop", "n_points", "dwell", "crosstalk_amplitude",
                 "crosstalk_phase", "drive_amplitude", "electrostatic_amplitude",
                 "electrostatic_phase", "direction", "noise_asd", "rng_seed", "frequency_shift")
        kwargs = {n: self.get(f"sweep.{n}") for n in names}
        res = None
        for n in ("freq_start", "freq_stop"):
            if kwargs[n] is None:
                res = res or self.resonator()
                sign = -1 if n == "freq_start" else 1
                kwargs[n] = res.f0 + sign * 5 * res.linewidth_hz
        kwargs.update(overrides)
        return self._build("sweep", lambda: SweepConfig(**kwargs))

    def mfft_sim_config(self) -> MfftSimConfig:
        peaks = []
        for p in self.get("mfft.peaks"):
            if len(p) != 3:
                raise ConfigError(f"{self.source}: mfft.peaks entries need freq:height:width")
            peaks.append(InterferencePeak(*p))
        band = self.get("mfft.band")
        if len(band) != 2:
            raise ConfigError(f"{self.source}: mfft.band needs two frequencies")
        return self._build("mfft", lambda: MfftSimConfig(
            tuple(band), self.get("mfft.true_slope"), self.get("mfft.base_temperature"),
            self.get("mfft.noise_floor"), self.get("mfft.rolloff_freq"),
            self.get("mfft.rolloff_order"), tuple(peaks), self.get("mfft.n_averages"),
            self.get("mfft.rng_seed"), self.get("mfft.freq_resolution"),
            self.get("mfft.freq_max"), self.get("mfft.unit")))

    def lockin_config(self, demod_freq: float | None = None) -> LockinConfig:
        f = demod_freq if demod_freq is not None else self.get("lockin.demod_freq")
        if f is None:
            f = self.resonator().f0
        offsets = self.get("lockin.background_offsets")
        if len(offsets) != 2:
            raise ConfigError(f"{self.source}: lockin.background_offsets needs two values")
        return self._build("lockin", lambda: LockinConfig(
            f, self.get("lockin.bandwidth"), self.get("lockin.output_rate"), tuple(offsets)))

    def kappa(self) -> float:
        k = self.get("lockin.kappa")
        if k is None:
            k = self.get("sim.kappa")
        if k is None or not k > 0 or not math.isfinite(k):
            raise ConfigError(f"{self.source}: need lockin.kappa (V/m)")
        return k

    def tau(self) -> float:
        tau = self.get("thermo.tau")
        return tau if tau is not None else pm.correlation_time(self.resonator())
