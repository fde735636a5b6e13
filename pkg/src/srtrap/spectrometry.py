"""Diagnostic protocols on top of the dynamics engine.

The central protocol is the tickle-sweep mass spectrum: for every frequency
on a grid a fresh cloud is synthesized (destructive measurement), cooled into
equilibrium, parametrically excited for a dwell time, and ejected into the
counter. Resonant excitation at 2 nu_R / n empties the trap of the matching
species, producing depletion dips whose contrast measures cloud purity.

Clouds are synthesized per point from seeds derived from the master seed, so
spectra are reproducible and frequency points are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .constants import E_CHARGE
from .dynamics import (CloudState, CoolingBeam, EjectionConfig, IntegratorConfig,
                       TickleDrive, eject_and_count, equilibrate, resolve_dt,
                       step, thermal_cloud)
from .errors import ControlRunError, NoSolutionError, SrTrapError, TooFewIonsError
from .trap import (DriveSettings, IonSpecies, TrapGeometry, Q_STABILITY_LIMIT,
                   mathieu_params, secular_frequencies)


@dataclass(frozen=True)
class CloudRecipe:
    """How to synthesize one realization of the cloud under test."""

    counts: tuple                       # ((IonSpecies, N), ...)
    drive: DriveSettings
    beams: tuple                        # cooling beams used during prep and dwell
    temperature: float = 5e-3           # K, synthesis temperature
    equilibration: float = 1e-3         # s of cooled settling before the tickle

    def total_ions(self):
        return sum(n for _, n in self.counts)


@dataclass(frozen=True)
class SpectrumScan:
    frequencies: tuple                  # Hz, strictly increasing
    tickle_amplitude: float             # V
    dwell: float                        # s
    recipe: CloudRecipe
    n_control: int = 3

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        if f.size == 0 or np.any(np.diff(f) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if self.dwell <= 0:
            raise ValueError("dwell must be positive")
        if self.n_control < 1:
            raise ValueError("need at least one control run")


@dataclass
class SpectrumResult:
    frequency: np.ndarray
    survival_fraction: np.ndarray
    counted: np.ndarray                 # int per point
    baseline: int

    CSV_HEADER = "frequency_hz,survival_fraction,counted,baseline"

    def to_csv(self, path, provenance=None):
        lines = []
        for key, val in (provenance or {}).items():
            lines.append(f"# {key} = {val}")
        lines.append(self.CSV_HEADER)
        for f, s, c in zip(self.frequency, self.survival_fraction, self.counted):
            lines.append(f"{f!r},{s!r},{int(c)},{self.baseline}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        freq, surv, counted, baseline = [], [], [], 0
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("frequency"):
                    continue
                f, s, c, b = line.split(",")
                freq.append(float(f))
                surv.append(float(s))
                counted.append(int(c))
                baseline = int(b)
        return cls(np.array(freq), np.array(surv), np.array(counted, dtype=int),
                   baseline)


@dataclass
class Peak:
    center: float          # Hz
    contrast: float        # percent depth relative to the local baseline
    width: float           # Hz, full width at half depth


@dataclass
class PeakReport:
    peaks: list            # main dips, deepest first
    satellites: list       # Hz offsets of secondary dips near the deepest peak


def _seed_rng(master_seed, tag, index):
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(tag, index))
    return np.random.default_rng(ss)


def _one_realization(scan: SpectrumScan, geometry, config, ejection, rng,
                     tickle: Optional[TickleDrive]):
    recipe = scan.recipe
    state = thermal_cloud(recipe.counts, recipe.temperature, geometry,
                          recipe.drive, rng)
    equilibrate(state, recipe.equilibration, config, geometry, recipe.drive,
                recipe.beams, measure_temperature=False)
    if tickle is not None:
        tickle = TickleDrive(frequency=tickle.frequency,
                             amplitude=tickle.amplitude,
                             duration=scan.dwell, start=state.time)
        n_steps = round(scan.dwell / resolve_dt(config, geometry, recipe.drive, state.species))
        for _ in range(n_steps):
            step(state, config, geometry, recipe.drive, recipe.beams, tickle)
            if state.n_ions == 0:
                break
    else:
        equilibrate(state, scan.dwell, config, geometry, recipe.drive,
                    recipe.beams, measure_temperature=False)
    return eject_and_count(state, geometry, ejection)


def run_mass_spectrum(scan: SpectrumScan, geometry: TrapGeometry,
                      config: IntegratorConfig, master_seed: int,
                      ejection: EjectionConfig = EjectionConfig()) -> SpectrumResult:
    """Tickle-sweep mass spectrum over the scan's frequency grid.

    Every frequency point gets an independently synthesized cloud (the
    measurement is destructive); the baseline comes from untickled control
    realizations. Raises ControlRunError when a control cloud loses more
    than 10% of its ions, which means the recipe itself is not stable.
    """
    n_total = scan.recipe.total_ions()
    controls = []
    for k in range(scan.n_control):
        count = _one_realization(scan, geometry, config, ejection,
                                 _seed_rng(master_seed, 0, k), None)
        if count < 0.9 * n_total:
            raise ControlRunError(
                f"control run {k} kept {count}/{n_total} ions; recipe unstable")
        controls.append(count)
    baseline = int(round(float(np.mean(controls))))

    counted = np.empty(len(scan.frequencies), dtype=int)
    for i, f in enumerate(scan.frequencies):
        probe = TickleDrive(frequency=f, amplitude=scan.tickle_amplitude,
                            duration=scan.dwell)
        counted[i] = _one_realization(scan, geometry, config, ejection,
                                      _seed_rng(master_seed, 1, i), probe)
    survival = counted / float(baseline)
    return SpectrumResult(frequency=np.asarray(scan.frequencies, dtype=float),
                          survival_fraction=survival, counted=counted,
                          baseline=baseline)


def analytic_resonances(species: IonSpecies, drive: DriveSettings,
                        geometry: TrapGeometry, max_subharmonic: int = 2):
    """Parametric depletion frequencies 2 nu_R / n for n = 1..max_subharmonic."""
    if max_subharmonic < 1:
        raise ValueError("max_subharmonic must be >= 1")
    nu = secular_frequencies(mathieu_params(geometry, drive, species), drive)
    return [2.0 * nu.nu_radial / n for n in range(1, max_subharmonic + 1)]


def contrast(result: SpectrumResult, peak_center: float, window: float) -> float:
    """Depth of the depletion dip in a window, in percent of local baseline.

    contrast = 100 (1 - min survival in window) / (local baseline survival),
    clamped to [0, 100]. The local baseline is the median survival of the
    flanking grid points just outside the window.
    """
    f = result.frequency
    inside = np.abs(f - peak_center) <= window / 2.0
    if np.count_nonzero(inside) < 3:
        raise SrTrapError(
            f"window {window} Hz around {peak_center} Hz covers "
            f"{np.count_nonzero(inside)} grid points; need >= 3")
    flank = (~inside) & (np.abs(f - peak_center) <= 1.5 * window)
    base = float(np.median(result.survival_fraction[flank])) if np.any(flank) else 1.0
    if base <= 0:
        base = 1.0
    value = 100.0 * (1.0 - float(result.survival_fraction[inside].min())) / base
    return float(np.clip(value, 0.0, 100.0))


def mass_from_peak(peak_frequency: float, drive: DriveSettings,
                   geometry: TrapGeometry, subharmonic_n: int = 1) -> float:
    """Ion mass (kg) whose 2 nu_R / n resonance sits at the peak frequency.

    Inverts the lowest-order secular frequency including the end-cap a-term;
    raises NoSolutionError when the implied Mathieu q is outside the first
    stability region.
    """
    if peak_frequency <= 0:
        raise ValueError("peak_frequency must be positive")
    if subharmonic_n < 1:
        raise ValueError("subharmonic_n must be >= 1")
    nu_r = peak_frequency * subharmonic_n / 2.0
    beta = 4.0 * math.pi * nu_r / drive.omega_rf
    if beta >= 1.0:
        raise NoSolutionError("implied beta >= 1 lies outside the first stability region")
    # q = c_q u and a_axial = c_a u with u = charge/mass, so
    # beta^2 = -(c_a/2) u + (c_q^2/2) u^2; take the positive root.
    c_q = 2.0 * geometry.eta_rf * drive.v_rf / (geometry.r0**2 * drive.omega_rf**2)
    c_a = 8.0 * geometry.kappa_axial * drive.v_ec / (geometry.z0**2 * drive.omega_rf**2)
    if c_q == 0:
        raise NoSolutionError("no RF confinement; mass is not defined by the peak")
    disc = c_a * c_a / 4.0 + 2.0 * c_q * c_q * beta * beta
    u = (c_a / 2.0 + math.sqrt(disc)) / (c_q * c_q)
    mass = E_CHARGE / u   # singly charged ions assumed
    q_implied = c_q * u
    if q_implied >= Q_STABILITY_LIMIT:
        raise NoSolutionError(
            f"implied q = {q_implied:.3f} outside the first stability region")
    return mass


def peak_report(result: SpectrumResult, min_depth: float = 0.15,
                satellite_window: float = 120e3) -> PeakReport:
    """Locate depletion dips and satellites in a spectrum.

    Dips are contiguous runs where the depletion 1 - survival/baseline
    exceeds min_depth; each dip's center is the midpoint of its
    half-depth run (robust against saturated flat bottoms). Satellites are
    the centers of secondary dips within satellite_window of the deepest
    dip, reported as frequency offsets.
    """
    f = result.frequency
    base = float(np.median(result.survival_fraction))
    base = base if base > 0 else 1.0
    depth = 1.0 - result.survival_fraction / base

    peaks = []
    i = 0
    n = len(f)
    while i < n:
        if depth[i] > min_depth:
            j = i
            while j + 1 < n and depth[j + 1] > min_depth:
                j += 1
            d_max = float(depth[i:j + 1].max())
            half = d_max / 2.0
            k0 = i
            while depth[k0] < half:
                k0 += 1
            k1 = j
            while depth[k1] < half:
                k1 -= 1
            center = 0.5 * (f[k0] + f[k1])
            width = float(f[k1] - f[k0]) if k1 > k0 else float(np.min(np.diff(f)))
            peaks.append(Peak(center=center, contrast=float(np.clip(100 * d_max, 0, 100)),
                              width=width))
            i = j + 1
        else:
            i += 1
    peaks.sort(key=lambda p: p.contrast, reverse=True)
    satellites = []
    if peaks:
        main = peaks[0]
        for p in peaks[1:]:
            off = p.center - main.center
            if abs(off) <= satellite_window:
                satellites.append(off)
    return PeakReport(peaks=peaks, satellites=sorted(satellites))


@dataclass
class ProfileResult:
    centers: np.ndarray
    counts: np.ndarray
    fwhm: float


_AXES = {"x": 0, "y": 1, "z": 2}


def cloud_profile(state: CloudState, axis: str, bins: int = 32) -> ProfileResult:
    """Position histogram along one axis with its interpolated FWHM."""
    if state.n_ions < 10:
        raise TooFewIonsError("cloud_profile needs at least 10 ions")
    if axis not in _AXES:
        raise ValueError("axis must be one of x, y, z")
    if bins < 3:
        raise ValueError("bins must be >= 3")
    coords = state.xyz[_AXES[axis]]
    counts, edges = np.histogram(coords, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w = edges[1] - edges[0]
    # pad with empty bins so edge peaks still produce two crossings
    c_pad = np.concatenate([[centers[0] - w], centers, [centers[-1] + w]])
    y_pad = np.concatenate([[0.0], counts.astype(float), [0.0]])
    half = y_pad.max() / 2.0

    left = None
    for k in range(1, len(y_pad)):
        if y_pad[k - 1] < half <= y_pad[k]:
            left = c_pad[k - 1] + (half - y_pad[k - 1]) / (y_pad[k] - y_pad[k - 1]) * w
            break
    right = None
    for k in range(len(y_pad) - 2, -1, -1):
        if y_pad[k + 1] < half <= y_pad[k]:
            right = c_pad[k] + (y_pad[k] - half) / (y_pad[k] - y_pad[k + 1]) * w
            break
    fwhm = float(right - left) if left is not None and right is not None else float(w)
    return ProfileResult(centers=centers, counts=counts, fwhm=fwhm)
