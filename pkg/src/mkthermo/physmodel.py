"""Physical parameters of the resonator and the SQUID detection circuit.

All quantities are SI.  Closed-form relations live here so that the
simulator and the analysis chain share a single definition of stiffness,
correlation time, force noise and the voltage/displacement conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

K_B = 1.380649e-23  # J/K, exact
MU_0 = 1.25663706212e-6  # N/A^2
PHI_0 = 2.067833848e-15  # Wb, h/2e

DEFAULT_MASS_TOLERANCE = 0.25


class ParameterError(ValueError):
    """Raised for physically inconsistent or incomplete parameters."""


@dataclass(frozen=True)
class ResonatorParams:
    """Mechanical mode description.

    ``k_spring`` may be omitted, in which case it follows from
    ``m_eff * (2 pi f0)^2``.  When both are given they must agree within
    ``mass_tolerance`` (relative).
    """

    f0: float
    q_factor: float
    m_eff: float | None = None
    k_spring: float | None = None
    tip_diameter: float | None = None
    tip_density: float | None = None
    mass_tolerance: float = DEFAULT_MASS_TOLERANCE

    def __post_init__(self):
        if not self.f0 > 0:
            raise ParameterError(f"f0 must be positive, got {self.f0}")
        if not self.q_factor > 1:
            raise ParameterError(f"q_factor must exceed 1, got {self.q_factor}")
        if self.m_eff is not None and not self.m_eff > 0:
            raise ParameterError(f"m_eff must be positive, got {self.m_eff}")
        if self.k_spring is not None and not self.k_spring > 0:
            raise ParameterError(f"k_spring must be positive, got {self.k_spring}")
        if self.m_eff is None and self.k_spring is None:
            raise ParameterError("either m_eff or k_spring is required")
        if self.m_eff is not None and self.k_spring is not None:
            k_from_mass = self.m_eff * self.omega0**2
            mismatch = abs(self.k_spring - k_from_mass) / self.k_spring
            if mismatch > self.mass_tolerance:
                raise ParameterError(
                    f"k_spring={self.k_spring:.4g} N/m and m_eff*w0^2={k_from_mass:.4g} N/m "
                    f"differ by {mismatch:.1%} (tolerance {self.mass_tolerance:.0%})"
                )

    @property
    def omega0(self) -> float:
        return 2 * math.pi * self.f0

    @property
    def stiffness(self) -> float:
        if self.k_spring is not None:
            return self.k_spring
        return spring_constant(self)

    @property
    def mass(self) -> float:
        if self.m_eff is not None:
            return self.m_eff
        return self.k_spring / self.omega0**2

    @property
    def linewidth_hz(self) -> float:
        """Full width at half maximum of the power response, f0/Q."""
        return self.f0 / self.q_factor


@dataclass(frozen=True)
class CircuitParams:
    """Two-stage flux detection circuit.

    ``squid_current_coupling`` is stored as the bare number quoted for the
    SQUID input coupling.  ``coupling_unit`` records which way round it is:
    ``"A/phi0"`` means the number is dI/dPhi_SQ (so dPhi_SQ/dI is its
    reciprocal); ``"phi0/A"`` means the number is dPhi_SQ/dI itself.
    """

    l_fi: float
    l_inp: float
    l_par1: float
    l_par2: float
    l_t1: float
    l_t2: float
    l_pl: float
    m_12: float
    squid_voltage_gain: float = 0.43  # V/phi0
    squid_current_coupling: float = 5e-7
    coupling_unit: Literal["A/phi0", "phi0/A"] = "A/phi0"

    def __post_init__(self):
        for name in ("l_fi", "l_inp", "l_par1", "l_par2", "l_t1", "l_t2", "l_pl"):
            value = getattr(self, name)
            if not value >= 0:
                raise ParameterError(f"{name} must be non-negative, got {value}")
        if not self.secondary_loop > 0:
            raise ParameterError("l_t1 + l_pl + l_par1 must be positive")
        # physical bound on mutual inductance, small slack for round-off
        if self.m_12**2 > self.l_t1 * self.l_t2 * (1 + 1e-12):
            raise ParameterError("m_12^2 exceeds l_t1*l_t2")
        if self.coupling_unit not in ("A/phi0", "phi0/A"):
            raise ParameterError(f"unknown coupling_unit {self.coupling_unit!r}")
        if not self.squid_current_coupling > 0:
            raise ParameterError("squid_current_coupling must be positive")

    @property
    def secondary_loop(self) -> float:
        return self.l_t1 + self.l_pl + self.l_par1

    @property
    def squid_flux_per_current(self) -> float:
        """dPhi_SQ/dI in phi0/A, honouring ``coupling_unit``."""
        if self.coupling_unit == "A/phi0":
            return 1.0 / self.squid_current_coupling
        return self.squid_current_coupling


@dataclass(frozen=True)
class WireParams:
    """Silver thermometer wire.  Only carried as metadata: the geometry
    function of the flux-noise thermometer is absorbed into its calibration."""

    radius: float
    conductivity: float

    def __post_init__(self):
        if not (self.radius > 0 and self.conductivity > 0):
            raise ParameterError("wire radius and conductivity must be positive")


@dataclass(frozen=True)
class Conversion:
    """Voltage/displacement conversion with explicit orientation.

    Tables quote the conversion both as V/m and as m/V; ``orientation``
    says which one ``value`` is.
    """

    value: float
    orientation: Literal["V/m", "m/V"] = "V/m"
    uncertainty: float = 0.0

    def __post_init__(self):
        if self.orientation not in ("V/m", "m/V"):
            raise ParameterError(f"unknown orientation {self.orientation!r}")
        if not self.value > 0:
            raise ParameterError("conversion must be positive")

    @property
    def volts_per_meter(self) -> float:
        return self.value if self.orientation == "V/m" else 1.0 / self.value

    @property
    def meters_per_volt(self) -> float:
        return 1.0 / self.volts_per_meter

    def relative_uncertainty(self) -> float:
        return self.uncertainty / self.value


def spring_constant(p: ResonatorParams) -> float:
    """k = m_eff (2 pi f0)^2."""
    if p.m_eff is None:
        raise ParameterError("spring_constant needs m_eff")
    return p.m_eff * (2 * math.pi * p.f0) ** 2


def correlation_time(p: ResonatorParams) -> float:
    """Amplitude correlation time tau = 2Q/omega0."""
    return 2 * p.q_factor / (2 * math.pi * p.f0)


def force_noise_asd(p: ResonatorParams, temperature: float) -> float:
    """Thermal force noise sqrt(4 kB T m omega0 / Q) in N/sqrt(Hz)."""
    if temperature < 0:
        raise ParameterError("temperature must be non-negative")
    return math.sqrt(4 * K_B * temperature * p.mass * p.omega0 / p.q_factor)


def tip_mass(diameter: float, density: float) -> float:
    """Mass of a spherical tip, (pi/6) d^3 rho."""
    if diameter < 0 or density < 0:
        raise ParameterError("diameter and density must be non-negative")
    return math.pi / 6 * diameter**3 * density


def total_inductance(c: CircuitParams) -> float:
    """Inductance seen by the SQUID input of the two-stage circuit."""
    denom = c.secondary_loop
    if denom <= 0:
        raise ParameterError("secondary loop inductance must be positive")
    return c.l_fi + c.l_inp + c.l_par2 + c.l_t2 - c.m_12**2 / denom


def kappa_chain(c: CircuitParams, dphi_dx: float) -> float:
    """Voltage per displacement, dV/dPhi_SQ * dPhi_SQ/dI * dI/dPhi * dPhi/dx, in V/m.

    dPhi_SQ/dI is in phi0/A and the voltage gain in V/phi0, so phi0 cancels.
    """
    l_tot = total_inductance(c)
    if l_tot == 0:
        raise ParameterError("total inductance is zero")
    return c.squid_voltage_gain * c.squid_flux_per_current * dphi_dx / l_tot


def dphi_dx_for_kappa(c: CircuitParams, kappa_v_per_m: float) -> float:
    """Inverse of :func:`kappa_chain`."""
    l_tot = total_inductance(c)
    return kappa_v_per_m * l_tot / (c.squid_voltage_gain * c.squid_flux_per_current)


def dphi_dx_from_ratio(q_factor: float, l_tot: float, mass: float, omega: float,
                       drive_ratio: float) -> float:
    """Flux per displacement from the measured V_drive/V_crosstalk ratio."""
    if drive_ratio < 0:
        raise ParameterError("drive ratio must be non-negative")
    return math.sqrt(l_tot * mass * omega**2 * drive_ratio / q_factor)


def coupling_beta_sq(dphi_dx: float, l_tot: float, mass: float, omega: float) -> float:
    """Energy coupling beta^2 = (dPhi/dx)^2 / (L_tot m omega^2)."""
    return dphi_dx**2 / (l_tot * mass * omega**2)


def thermal_variance(p: ResonatorParams, temperature: float) -> float:
    """Equipartition mean-square displacement kB T / k."""
    return K_B * temperature / p.stiffness
