"""Units, physical parameters and Gaussian mechanical-state primitives.

Positions are handled in "quantum-noise" units unless stated otherwise,
X = x / x0 with x0 = sqrt(hbar / (m omega)), so that the ground state has
position variance 1/2 and a thermal state (1 + 2 nbar) / 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

HBAR = 1.054571817e-34  # J s, CODATA 2018
TWO_PI = 2.0 * math.pi


class DomainError(ValueError):
    """An argument lies outside the domain of a formula."""


class ConfigurationError(ValueError):
    """Required configuration (constants, keys, seeds) is missing or invalid."""


class ConditioningError(ArithmeticError):
    """Conditioning on an outcome that has zero probability."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to reach its tolerance.

    ``diagnostics`` carries whatever the failing routine knew at the time.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class Unit(str, Enum):
    QUANTUM_NOISE = "quantum-noise"
    READOUT_RANGE = "readout-range"
    RADIANS = "radians"
    METERS = "meters"


@dataclass(frozen=True)
class CouplingConfig:
    """Optomechanical parameters shared by the measurement models.

    mu is the momentum kick per photon (quantum-noise units), phi the static
    interferometer phase and alpha the real coherent amplitude per arm.
    """

    mu: float
    phi: float
    alpha: float

    def __post_init__(self):
        for name in ("mu", "phi", "alpha"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.mu < 0:
            raise DomainError(f"mu must be >= 0, got {self.mu}")
        if self.alpha < 0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "phi", float(self.phi) % TWO_PI)


@dataclass(frozen=True)
class MechanicalConstants:
    """Constants needed to move between length units.

    Any field may be left as None; conversions that need it then raise
    ConfigurationError.
    """

    mass_kg: Optional[float] = None
    omega_rad_s: Optional[float] = None
    wavelength_m: Optional[float] = None
    readout_range_m: Optional[float] = None

    def __post_init__(self):
        for name in ("mass_kg", "omega_rad_s", "wavelength_m", "readout_range_m"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise DomainError(f"{name} must be strictly positive, got {value}")

    def require(self, name):
        value = getattr(self, name)
        if value is None:
            raise ConfigurationError(f"constant {name!r} is required for this conversion")
        return value

    @property
    def x0_m(self):
        return ground_state_size(self.require("mass_kg"), self.require("omega_rad_s"))

    @property
    def mu(self):
        return coupling_single_reflection(self.x0_m, self.require("wavelength_m"))


# Values quoted for the membrane experiment; the mass is only known to order of magnitude.
EXPERIMENT = MechanicalConstants(
    mass_kg=1e-10,
    omega_rad_s=TWO_PI * 105.64e3,
    wavelength_m=795e-9,
    readout_range_m=158.2e-9,
)


@dataclass(frozen=True)
class ThermalState:
    nbar: float

    def __post_init__(self):
        if not (self.nbar >= 0 and math.isfinite(self.nbar)):
            raise DomainError(f"nbar must be a finite number >= 0, got {self.nbar}")

    @property
    def width2(self):
        """1 + 2 nbar, the squared phase-space width that appears everywhere."""
        return 1.0 + 2.0 * self.nbar

    @property
    def position_variance(self):
        return 0.5 * self.width2

    @property
    def position_std(self):
        return math.sqrt(self.position_variance)

    def pdf(self, x):
        return thermal_position_pdf(self, x)


@dataclass(frozen=True)
class PhaseSpacePoint:
    x: float
    p: float
    unit: Unit = field(default=Unit.QUANTUM_NOISE)

    def __post_init__(self):
        object.__setattr__(self, "unit", Unit(self.unit))

    def _check(self, other):
        if not isinstance(other, PhaseSpacePoint):
            return NotImplemented
        if other.unit is not self.unit:
            raise ConfigurationError(
                f"unit mismatch: {self.unit.value} vs {other.unit.value}; convert first"
            )
        return other

    def __add__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return PhaseSpacePoint(self.x + other.x, self.p + other.p, self.unit)

    def __sub__(self, other):
        other = self._check(other)
        if other is NotImplemented:
            return other
        return PhaseSpacePoint(self.x - other.x, self.p - other.p, self.unit)

    def __mul__(self, scale):
        if isinstance(scale, PhaseSpacePoint):
            return NotImplemented
        return PhaseSpacePoint(self.x * scale, self.p * scale, self.unit)

    __rmul__ = __mul__

    @property
    def norm(self):
        return math.hypot(self.x, self.p)


def _positive(name, value):
    if not value > 0:
        raise DomainError(f"{name} must be > 0, got {value}")


def ground_state_size(mass_kg, omega_rad_s):
    """x0 = sqrt(hbar / (m omega)) in meters."""
    _positive("mass_kg", mass_kg)
    _positive("omega_rad_s", omega_rad_s)
    return math.sqrt(HBAR / (mass_kg * omega_rad_s))


def coupling_single_reflection(x0_m, wavelength_m):
    """Kick per photon for a single reflection, mu = 4 pi x0 / lambda."""
    _positive("x0_m", x0_m)
    _positive("wavelength_m", wavelength_m)
    return 4.0 * math.pi * x0_m / wavelength_m


def coupling_cavity(finesse, x0_m, wavelength_m):
    """Finesse-enhanced kick, mu = 4 F x0 / lambda (F = pi gives a single reflection)."""
    if not finesse >= 1:
        raise DomainError(f"finesse must be >= 1, got {finesse}")
    _positive("x0_m", x0_m)
    _positive("wavelength_m", wavelength_m)
    return 4.0 * finesse * x0_m / wavelength_m


def thermal_position_pdf(state, x):
    """Position density of a thermal state in quantum-noise units.

    Accepts a ThermalState or a bare nbar; x may be scalar or array.
    """
    if not isinstance(state, ThermalState):
        state = ThermalState(float(state))
    w2 = state.width2
    x = np.asarray(x, dtype=float)
    out = np.exp(-x * x / w2) / math.sqrt(math.pi * w2)
    return float(out) if out.ndim == 0 else out


# Length of one unit, expressed in meters.  Radians go through the
# readout range: the double-pass phase 4 pi x / lambda_r reaches pi at
# x = lambda_r / 4, so one readout range is pi radians.
def _unit_length_m(unit, constants):
    if unit is Unit.METERS:
        return 1.0
    if constants is None:
        raise ConfigurationError(f"MechanicalConstants required to convert {unit.value}")
    if unit is Unit.READOUT_RANGE:
        return constants.require("readout_range_m")
    if unit is Unit.RADIANS:
        return constants.require("readout_range_m") / math.pi
    if unit is Unit.QUANTUM_NOISE:
        return constants.x0_m
    raise ConfigurationError(f"unknown unit {unit!r}")


def conversion_factor(source, target, constants=None):
    """Multiplier taking a coordinate in ``source`` units to ``target`` units."""
    source, target = Unit(source), Unit(target)
    if source is target:
        return 1.0
    pair = {source, target}
    # radians <-> readout range needs no physical constants
    if pair == {Unit.RADIANS, Unit.READOUT_RANGE}:
        return math.pi if target is Unit.RADIANS else 1.0 / math.pi
    return _unit_length_m(source, constants) / _unit_length_m(target, constants)


def convert(point, target_unit, constants=None):
    target_unit = Unit(target_unit)
    factor = conversion_factor(point.unit, target_unit, constants)
    return PhaseSpacePoint(point.x * factor, point.p * factor, target_unit)
