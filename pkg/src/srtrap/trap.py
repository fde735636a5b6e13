"""Analytic field and stability layer for an idealized linear quadrupole trap.

Everything here is a closed-form function of the electrode geometry, the RF/DC
drive and the ion species: Mathieu parameters, first-region stability, secular
frequencies (lowest-order adiabatic approximation), the instantaneous and
pseudopotential fields, and the effective trap volume obtained from the
sub-level set of the pseudopotential below its boundary saddle.

Conventions
-----------
* v_rf is the zero-to-peak amplitude of the potential applied to the driven
  rod pair; eta_rf (default 1.0) is an overall RF efficiency knob.
* kappa_axial is the end-cap geometric efficiency, calibrated once against a
  measured axial frequency (see :func:`calibrate_kappa`).
* SI units everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .constants import AMU, E_CHARGE
from .errors import OutOfRegionError, UnstableParametersError

# First stability region boundary for the radial Mathieu parameter (a ~ 0).
Q_STABILITY_LIMIT = 0.908


@dataclass(frozen=True)
class TrapGeometry:
    """Electrode geometry of the linear trap.

    r0 is the field radius (axis to rod surface), z0 the half end-cap
    separation. rod_diameter is informational only. kappa_axial and eta_rf
    are dimensionless calibration efficiencies.
    """

    r0: float = 3.2e-3
    z0: float = 10e-3
    rod_diameter: float = 6.35e-3
    kappa_axial: float = 1.4402606786046673e-3   # reproduces nu_axial = 20 kHz at v_ec = 500 V
    eta_rf: float = 1.0

    def __post_init__(self):
        if self.r0 <= 0 or self.z0 <= 0:
            raise ValueError("r0 and z0 must be positive")
        if not 0 < self.kappa_axial <= 1:
            raise ValueError("kappa_axial must be in (0, 1]")
        if not 0 < self.eta_rf <= 1:
            raise ValueError("eta_rf must be in (0, 1]")


@dataclass(frozen=True)
class DriveSettings:
    """RF and static drive applied to the trap electrodes."""

    omega_rf: float          # RF angular frequency, rad/s
    v_rf: float              # RF amplitude (zero-to-peak), V
    v_ec: float              # end-cap static voltage, V

    def __post_init__(self):
        if self.omega_rf <= 0:
            raise ValueError("omega_rf must be positive")
        if self.v_rf < 0 or self.v_ec < 0:
            raise ValueError("voltages must be non-negative")


@dataclass(frozen=True)
class IonSpecies:
    name: str
    mass: float              # kg
    charge: float            # C

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.charge <= 0:
            raise ValueError("charge must be positive")


SR88 = IonSpecies("Sr+", 88 * AMU, E_CHARGE)


def ion_species(mass_amu, name=None, charge=E_CHARGE):
    """Convenience constructor for a singly charged species of given mass in u."""
    return IonSpecies(name or f"m{mass_amu:g}", mass_amu * AMU, charge)


@dataclass(frozen=True)
class MathieuParams:
    q_radial: float
    a_radial: float
    a_axial: float


@dataclass(frozen=True)
class SecularFrequencies:
    nu_radial: float         # Hz
    nu_axial: float          # Hz


@dataclass(frozen=True)
class VolumeEstimate:
    volume: float            # m^3
    depth: float             # J, escape saddle energy above the trap-center minimum
    grid_resolution: float   # m


class StabilityResult(NamedTuple):
    stable: bool
    margin: float


def mathieu_params(geometry: TrapGeometry, drive: DriveSettings, species: IonSpecies) -> MathieuParams:
    """Dimensionless Mathieu parameters of the radial and axial motion."""
    m = species.mass
    q = 2.0 * geometry.eta_rf * species.charge * drive.v_rf / (m * geometry.r0**2 * drive.omega_rf**2)
    a_axial = 8.0 * geometry.kappa_axial * species.charge * drive.v_ec / (m * geometry.z0**2 * drive.omega_rf**2)
    return MathieuParams(q_radial=q, a_radial=-0.5 * a_axial, a_axial=a_axial)


def stability_check(params: MathieuParams) -> StabilityResult:
    """First-region stability test with the distance to the nearest bound.

    The margin is the minimum over: q (>= 0), Q_STABILITY_LIMIT - q,
    a_radial + q^2/2 (radial focusing) and a_axial (axial focusing). A
    negative margin indicates how far the nearest bound is violated.
    """
    q = params.q_radial
    margins = (
        q,
        Q_STABILITY_LIMIT - q,
        params.a_radial + 0.5 * q * q,
        params.a_axial,
    )
    margin = min(margins)
    stable = q >= 0 and q < Q_STABILITY_LIMIT and margins[2] > 0 and params.a_axial >= 0
    return StabilityResult(stable, margin)


def secular_frequencies(params: MathieuParams, drive: DriveSettings) -> SecularFrequencies:
    """Secular frequencies in the lowest-order adiabatic approximation.

    nu = (Omega / 4 pi) * sqrt(a + q^2 / 2) per axis. Accurate to a few
    percent only for q below roughly 0.4; the full dynamics oscillates at the
    exact Floquet frequency, which exceeds this value as q grows.
    """
    check = stability_check(params)
    if not check.stable:
        raise UnstableParametersError(
            f"parameters outside the first stability region (margin {check.margin:.3g})")
    scale = drive.omega_rf / (4.0 * math.pi)
    beta_r_sq = params.a_radial + 0.5 * params.q_radial**2
    return SecularFrequencies(
        nu_radial=scale * math.sqrt(beta_r_sq),
        nu_axial=scale * math.sqrt(params.a_axial),
    )


def pseudo_coefficients(geometry: TrapGeometry, drive: DriveSettings, species: IonSpecies):
    """Quadratic coefficients (c_radial, c_axial) of the pseudopotential.

    U(x, y, z) = c_radial * (x^2 + y^2) + c_axial * z^2, in J/m^2. c_radial
    already includes the defocusing -1/2 share of the end-cap term and may be
    negative at low RF amplitude.
    """
    m = species.mass
    qe = species.charge
    c_rf = qe**2 * geometry.eta_rf**2 * drive.v_rf**2 / (4.0 * m * drive.omega_rf**2 * geometry.r0**4)
    c_dc = qe * geometry.kappa_axial * drive.v_ec / geometry.z0**2
    return c_rf - 0.5 * c_dc, c_dc


def _check_in_region(position, geometry):
    x, y, z = position
    if abs(x) >= geometry.r0 or abs(y) >= geometry.r0 or abs(z) >= geometry.z0:
        raise OutOfRegionError(
            f"position {position} outside |x|,|y| < {geometry.r0}, |z| < {geometry.z0}")


def instantaneous_force(position, time, geometry: TrapGeometry, drive: DriveSettings,
                        species: IonSpecies) -> np.ndarray:
    """Force (N) on the ion at a given position and time from the trap fields.

    The potential is the ideal quadrupole
    Phi = eta_rf v_rf cos(Omega t) (x^2 - y^2) / (2 r0^2)
        + kappa v_ec (z^2 - (x^2 + y^2)/2) / z0^2
    and the force is -charge * grad(Phi). Valid only inside the quadrupole
    region; raises OutOfRegionError beyond it.
    """
    _check_in_region(position, geometry)
    x, y, z = position
    qe = species.charge
    rf = geometry.eta_rf * drive.v_rf * math.cos(drive.omega_rf * time) / geometry.r0**2
    dc = geometry.kappa_axial * drive.v_ec / geometry.z0**2
    return np.array([
        -qe * (rf * x - dc * x),
        -qe * (-rf * y - dc * y),
        -qe * (2.0 * dc * z),
    ])


def pseudopotential_energy(position, geometry: TrapGeometry, drive: DriveSettings,
                           species: IonSpecies) -> float:
    """Time-averaged (ponderomotive) potential energy in J at a position."""
    _check_in_region(position, geometry)
    x, y, z = position
    c_r, c_z = pseudo_coefficients(geometry, drive, species)
    return c_r * (x * x + y * y) + c_z * z * z


def trap_volume(geometry: TrapGeometry, drive: DriveSettings, species: IonSpecies,
                resolution: float | None = None) -> VolumeEstimate:
    """Effective trap volume from the pseudopotential sub-level set.

    The pseudopotential is sampled on a regular grid spanning the box
    |x|, |y| <= r0, |z| <= z0. The depth is the minimum of U over the box
    boundary (minus U at the origin, which is zero); the volume is the
    measure of the connected region around the origin where U < depth.
    Deterministic for a fixed grid. Returns zero volume when the
    pseudopotential does not confine; raises UnstableParametersError when
    the Mathieu parameters are outside the first stability region.
    """
    if resolution is None:
        resolution = geometry.r0 / 40.0
    if resolution > geometry.r0 / 20.0:
        raise ValueError("grid resolution must be <= r0/20")
    params = mathieu_params(geometry, drive, species)
    if params.q_radial >= Q_STABILITY_LIMIT or params.a_axial < 0:
        raise UnstableParametersError(f"q_radial = {params.q_radial:.3f} outside stability")

    c_r, c_z = pseudo_coefficients(geometry, drive, species)

    # Node counts chosen so the origin is a grid node and spacing <= resolution.
    nx = 2 * math.ceil(geometry.r0 / resolution) + 1
    nz = 2 * math.ceil(geometry.z0 / resolution) + 1
    xs = np.linspace(-geometry.r0, geometry.r0, nx)
    zs = np.linspace(-geometry.z0, geometry.z0, nz)
    hx = xs[1] - xs[0]
    hz = zs[1] - zs[0]

    rho2 = xs[:, None] ** 2 + xs[None, :] ** 2
    u = c_r * rho2[:, :, None] + c_z * (zs ** 2)[None, None, :]

    boundary = np.zeros(u.shape, dtype=bool)
    boundary[0, :, :] = boundary[-1, :, :] = True
    boundary[:, 0, :] = boundary[:, -1, :] = True
    boundary[:, :, 0] = boundary[:, :, -1] = True
    depth = float(u[boundary].min())
    if depth <= 0.0:
        return VolumeEstimate(volume=0.0, depth=0.0, grid_resolution=resolution)

    inside = u < depth
    labels, _ = ndimage.label(inside)
    center = labels[nx // 2, nx // 2, nz // 2]
    if center == 0:
        return VolumeEstimate(volume=0.0, depth=0.0, grid_resolution=resolution)
    count = int(np.count_nonzero(labels == center))
    return VolumeEstimate(volume=count * hx * hx * hz, depth=depth, grid_resolution=resolution)


def calibrate_kappa(measured_nu_axial: float, geometry: TrapGeometry, drive: DriveSettings,
                    species: IonSpecies) -> float:
    """End-cap efficiency that makes secular_frequencies reproduce nu_axial."""
    if measured_nu_axial <= 0:
        raise ValueError("measured_nu_axial must be positive")
    if drive.v_ec <= 0:
        raise ValueError("calibration requires a non-zero end-cap voltage")
    a_axial = (4.0 * math.pi * measured_nu_axial / drive.omega_rf) ** 2
    return a_axial * species.mass * geometry.z0**2 * drive.omega_rf**2 / (
        8.0 * species.charge * drive.v_ec)
