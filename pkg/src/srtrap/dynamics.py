"""N-body molecular dynamics of trapped ion clouds.

Integrates ion motion in the time-dependent quadrupole field (or its
pseudopotential) with softened Coulomb interactions, stochastic Doppler
cooling, resonant tickle excitation, and destructive ejection counting.
RF heating is not modeled explicitly; it emerges from the coupled
micromotion-Coulomb dynamics in full-RF mode.

The integrator is a velocity-Verlet scheme with the position-dependent
acceleration cached across steps (one pair-force evaluation per step). The
velocity-dependent cooling force is evaluated at the pre-step velocity for
the first half-kick and at the half-step velocity for the second; photon
recoil is applied after the deterministic update as isotropic momentum kicks
of magnitude hbar*k drawn from the state's generator at the instantaneous
scattering rate. Everything is deterministic for a given configuration and
generator state, independent of thread count.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .constants import EPS0, HBAR, KB, K_COULOMB
from .errors import BlowUpError, TooFewIonsError, UnstableParametersError
from .trap import (DriveSettings, IonSpecies, TrapGeometry, mathieu_params,
                   pseudo_coefficients, secular_frequencies)

# Numerical-instability sentinel: no physical ion in this trap approaches it.
SPEED_LIMIT = 1.0e6  # m/s

# Sr+ 2S1/2 -> 2P1/2 cooling transition defaults.
COOLING_WAVELENGTH = 422e-9            # m
COOLING_GAMMA = 2 * math.pi * 20.2e6   # rad/s natural linewidth


@dataclass(frozen=True)
class IntegratorConfig:
    """Time stepping and interaction options.

    dt = None resolves to T_rf/100 in full_rf mode and T_secular/200 in
    secular mode (radial period of the fastest species). An explicit dt in
    full_rf mode must resolve the RF period with at least 50 steps.
    """

    dt: Optional[float] = None
    field_mode: str = "full_rf"            # full_rf | secular
    coulomb: str = "direct"                # off | direct | cell_list
    softening_length: float = 100e-9       # m
    deterministic_reduction: bool = True
    cell_cutoff: Optional[float] = None    # m; None = cover the whole cloud

    def __post_init__(self):
        if self.field_mode not in ("full_rf", "secular"):
            raise ValueError(f"unknown field_mode {self.field_mode!r}")
        if self.coulomb not in ("off", "direct", "cell_list"):
            raise ValueError(f"unknown coulomb mode {self.coulomb!r}")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.softening_length < 0:
            raise ValueError("softening_length must be >= 0")


@dataclass(frozen=True)
class CoolingBeam:
    """Doppler cooling beam on a two-level cycling transition.

    `target` restricts the beam to one species by name (None cools every
    species; physical for a single-species cloud only).
    """

    wavelength: float = COOLING_WAVELENGTH
    gamma: float = COOLING_GAMMA
    detuning: float = -0.5 * COOLING_GAMMA   # rad/s relative to resonance
    saturation_s: float = 1.0
    direction: tuple = (0.0, 0.0, 1.0)
    on: bool = True
    target: Optional[str] = None

    def __post_init__(self):
        if self.saturation_s < 0:
            raise ValueError("saturation_s must be >= 0")
        d = np.asarray(self.direction, dtype=float)
        norm = float(np.linalg.norm(d))
        if not math.isclose(norm, 1.0, rel_tol=1e-9):
            raise ValueError("direction must be a unit vector")

    @property
    def k_magnitude(self):
        return 2 * math.pi / self.wavelength


def axis_beams(detuning=-0.5 * COOLING_GAMMA, saturation_s=1.0, target=None,
               wavelength=COOLING_WAVELENGTH, gamma=COOLING_GAMMA):
    """Default cooling layout: counter-propagating beam pairs on all axes.

    A single beam cannot damp both degenerate radial modes (the radial
    combination orthogonal to its projection stays undamped and recoil heats
    it without bound), and an unpaired beam additionally pushes the cloud
    off center. Balanced pairs on the three axes damp every direction with
    the same Lorentzian friction and exert no net static force.
    """
    dirs = ((1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0),
            (0.0, -1.0, 0.0), (0.0, 0.0, 1.0), (0.0, 0.0, -1.0))
    return tuple(
        CoolingBeam(wavelength=wavelength, gamma=gamma, detuning=detuning,
                    saturation_s=saturation_s, direction=d, target=target)
        for d in dirs
    )


@dataclass(frozen=True)
class TickleDrive:
    """Weak quadrupole modulation applied to one rod pair."""

    frequency: float                 # Hz
    amplitude: float                 # V
    duration: float                  # s
    mode: str = "radial-quadrupole"
    start: float = 0.0               # s, absolute simulation time

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.mode != "radial-quadrupole":
            raise ValueError(f"unsupported tickle mode {self.mode!r}")

    def active(self, time):
        return self.amplitude != 0.0 and self.start <= time <= self.start + self.duration


@dataclass(frozen=True)
class EjectionConfig:
    detection_efficiency: float = 1.0
    kick_model: str = "instantaneous-count"

    def __post_init__(self):
        if not 0.0 <= self.detection_efficiency <= 1.0:
            raise ValueError("detection_efficiency must be in [0, 1]")


class CloudState:
    """Per-ion phase-space state plus clock and RNG.

    Positions and velocities are stored as (3, N) arrays so each coordinate
    is a contiguous row (what the kernels want); the `positions` and
    `velocities` properties expose the conventional (N, 3) transposed views,
    which are writable.
    """

    __slots__ = ("xyz", "vel", "species_index", "species", "time", "rng",
                 "n_lost", "_acc", "_version", "_exp_key", "_exp")

    def __init__(self, xyz, vel, species_index, species, time=0.0, rng=None,
                 n_lost=0):
        self.xyz = np.ascontiguousarray(xyz, dtype=float)
        self.vel = np.ascontiguousarray(vel, dtype=float)
        if self.xyz.shape != self.vel.shape or self.xyz.shape[0] != 3:
            raise ValueError("xyz and vel must both have shape (3, N)")
        self.species_index = np.ascontiguousarray(species_index, dtype=np.int64)
        self.species = tuple(species)
        if self.species_index.size and (self.species_index.min() < 0
                                        or self.species_index.max() >= len(self.species)):
            raise ValueError("species_index out of range")
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("positions must be finite")
        self.time = float(time)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.n_lost = int(n_lost)
        self._acc = None
        self._version = 0
        self._exp_key = None
        self._exp = None

    @classmethod
    def from_arrays(cls, positions, velocities, species, species_index=None,
                    time=0.0, rng=None):
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        velocities = np.atleast_2d(np.asarray(velocities, dtype=float))
        if isinstance(species, IonSpecies):
            species = (species,)
        if species_index is None:
            species_index = np.zeros(positions.shape[0], dtype=np.int64)
        return cls(positions.T.copy(), velocities.T.copy(), species_index,
                   species, time=time, rng=rng)

    @property
    def n_ions(self):
        return self.xyz.shape[1]

    @property
    def positions(self):
        return self.xyz.T

    @property
    def velocities(self):
        return self.vel.T

    def masses(self):
        return np.array([s.mass for s in self.species])[self.species_index]

    def charges(self):
        return np.array([s.charge for s in self.species])[self.species_index]

    def copy(self):
        out = CloudState(self.xyz.copy(), self.vel.copy(),
                         self.species_index.copy(), self.species,
                         time=self.time, rng=copy.deepcopy(self.rng),
                         n_lost=self.n_lost)
        if self._acc is not None:
            out._acc = self._acc.copy()
        return out

    def keep(self, mask):
        """Drop ions where mask is False; invalidates cached forces."""
        mask = np.asarray(mask, dtype=bool)
        dropped = int(np.count_nonzero(~mask))
        if dropped == 0:
            return 0
        self.xyz = np.ascontiguousarray(self.xyz[:, mask])
        self.vel = np.ascontiguousarray(self.vel[:, mask])
        self.species_index = np.ascontiguousarray(self.species_index[mask])
        self.n_lost += dropped
        self._acc = None
        self._version += 1
        self._exp_key = None
        self._exp = None
        return dropped

    def bound_mask(self, geometry: TrapGeometry):
        return ((np.abs(self.xyz[0]) < geometry.r0)
                & (np.abs(self.xyz[1]) < geometry.r0)
                & (np.abs(self.xyz[2]) < geometry.z0))


def resolve_dt(config: IntegratorConfig, geometry: TrapGeometry,
               drive: DriveSettings, species: Sequence[IonSpecies]) -> float:
    """Actual time step for a configuration (applies the mode defaults)."""
    t_rf = 2 * math.pi / drive.omega_rf
    if config.dt is not None:
        if config.field_mode == "full_rf" and config.dt > t_rf / 50:
            raise ValueError("full_rf mode requires dt <= T_rf/50")
        return config.dt
    if config.field_mode == "full_rf":
        return t_rf / 100.0
    nu_max = 0.0
    for sp in species:
        nu = secular_frequencies(mathieu_params(geometry, drive, sp), drive).nu_radial
        nu_max = max(nu_max, nu)
    if nu_max <= 0:
        raise UnstableParametersError("no radial confinement; cannot pick a secular dt")
    return 1.0 / nu_max / 200.0


class _StepPlan:
    """Species-level coefficients and beam arrays for the step kernels."""

    _counter = 0

    def __init__(self, config, geometry, drive, beams, tickle, species):
        _StepPlan._counter += 1
        self.token = _StepPlan._counter
        self.config = config
        self.geometry = geometry
        self.drive = drive
        self.tickle = tickle
        self.dt = resolve_dt(config, geometry, drive, species)
        self.mode = 0 if config.field_mode == "full_rf" else 1
        self.omega_rf = drive.omega_rf
        self.soft2 = kernels.effective_soft2(config.softening_length)
        self.coulomb_on = 0 if config.coulomb == "off" else 1

        n_sp = len(species)
        self.crf = np.zeros(n_sp)
        self.cdc = np.zeros(n_sp)
        self.wr2 = np.zeros(n_sp)
        self.wz2 = np.zeros(n_sp)
        self.ctk = np.zeros(n_sp)
        self.qom = np.zeros(n_sp)
        self.ck = np.zeros(n_sp)
        self.hkm = np.zeros(n_sp)
        for k, sp in enumerate(species):
            qm = sp.charge / sp.mass
            self.qom[k] = qm
            self.ck[k] = K_COULOMB * sp.charge
            if self.mode == 0:
                self.crf[k] = qm * geometry.eta_rf * drive.v_rf / geometry.r0**2
                self.cdc[k] = qm * geometry.kappa_axial * drive.v_ec / geometry.z0**2
            else:
                c_r, c_z = pseudo_coefficients(geometry, drive, sp)
                if c_r <= 0 or c_z < 0:
                    raise UnstableParametersError(
                        f"secular mode needs a confining pseudopotential for {sp.name}")
                self.wr2[k] = 2 * c_r / sp.mass
                self.wz2[k] = 2 * c_z / sp.mass

        active = [b for b in (beams or ()) if b.on]
        self.nbeams = len(active)
        if self.nbeams:
            wavelengths = {b.wavelength for b in active}
            targets = {b.target for b in active}
            if len(wavelengths) > 1 or len(targets) > 1:
                raise ValueError("active cooling beams must share wavelength and target")
            target = active[0].target
            kmag = active[0].k_magnitude
            dirs = np.array([b.direction for b in active], dtype=float)
            self.bkx = np.ascontiguousarray(dirs[:, 0])
            self.bky = np.ascontiguousarray(dirs[:, 1])
            self.bkz = np.ascontiguousarray(dirs[:, 2])
            self.bgamma = np.array([b.gamma for b in active])
            self.bs = np.array([b.saturation_s for b in active])
            self.bdelta = np.array([b.detuning for b in active])
            self.bkmag = np.full(self.nbeams, kmag)
            for k, sp in enumerate(species):
                if target is None or sp.name == target:
                    self.hkm[k] = HBAR * kmag / sp.mass
            self.coolable = np.array(
                [1 if (target is None or sp.name == target) else 0 for sp in species],
                dtype=np.int64)
        else:
            one = np.zeros(1)
            self.bkx = self.bky = self.bkz = one
            self.bgamma = self.bs = self.bdelta = self.bkmag = np.ones(1)
            self.coolable = np.zeros(n_sp, dtype=np.int64)

        if tickle is not None:
            self.tk_omega = 2 * math.pi * tickle.frequency
            for k, sp in enumerate(species):
                self.ctk[k] = (sp.charge / sp.mass) * geometry.eta_rf * tickle.amplitude / geometry.r0**2
        else:
            self.tk_omega = 0.0


_PLAN_CACHE: dict = {}


def _get_plan(config, geometry, drive, beams, tickle, species):
    key = (config, geometry, drive, beams, tickle, species)
    plan = _PLAN_CACHE.get(key)
    if plan is None:
        if len(_PLAN_CACHE) > 256:
            _PLAN_CACHE.clear()
        plan = _StepPlan(config, geometry, drive, beams, tickle, species)
        _PLAN_CACHE[key] = plan
    return plan


def _expand(state: CloudState, plan: _StepPlan):
    """Per-ion coefficient arrays for the current cloud composition."""
    key = (plan.token, state._version)
    if state._exp_key != key:
        idx = state.species_index
        state._exp = {
            "crf": plan.crf[idx], "cdc": plan.cdc[idx],
            "wr2": plan.wr2[idx], "wz2": plan.wz2[idx],
            "ctk": plan.ctk[idx], "qom": plan.qom[idx],
            "ck": plan.ck[idx], "hkm": plan.hkm[idx],
            "coolable": np.ascontiguousarray(plan.coolable[idx]),
            "rates": np.zeros(state.n_ions),
        }
        state._exp_key = key
    return state._exp


def _normalize_beams(beams):
    if beams is None:
        return ()
    if isinstance(beams, CoolingBeam):
        return (beams,)
    return tuple(beams)


def _coulomb_into(state, plan, ex, acc):
    x, y, z = state.xyz
    if plan.config.coulomb == "cell_list":
        kernels.cell_list_into(x, y, z, ex["ck"], ex["qom"], plan.soft2,
                               plan.config.cell_cutoff, acc[0], acc[1], acc[2])
    else:
        kernels.coulomb_direct_into(x, y, z, ex["ck"], ex["qom"], plan.soft2,
                                    acc[0], acc[1], acc[2])


def _prime_acc(state, plan, ex, tk_amp):
    acc = np.zeros_like(state.xyz)
    if plan.coulomb_on:
        _coulomb_into(state, plan, ex, acc)
    kernels.add_fields(state.xyz[0], state.xyz[1], state.xyz[2],
                       acc[0], acc[1], acc[2], float(plan.coulomb_on),
                       state.time, plan.mode, ex["crf"], ex["cdc"], ex["wr2"],
                       ex["wz2"], plan.omega_rf, tk_amp, plan.tk_omega, ex["ctk"])
    return acc


def _apply_recoil(state, ex, dt):
    lam = ex["rates"] * dt
    n_kicks = state.rng.poisson(lam)
    total = int(n_kicks.sum())
    if total == 0:
        return
    kicks = state.rng.normal(size=(total, 3))
    kicks /= np.linalg.norm(kicks, axis=1)[:, None] + 1e-300
    idx = np.repeat(np.arange(state.n_ions), n_kicks)
    scale = ex["hkm"][idx]
    np.add.at(state.vel[0], idx, scale * kicks[:, 0])
    np.add.at(state.vel[1], idx, scale * kicks[:, 1])
    np.add.at(state.vel[2], idx, scale * kicks[:, 2])


def step(state: CloudState, config: IntegratorConfig, geometry: TrapGeometry,
         drive: DriveSettings, beams=None, tickle: Optional[TickleDrive] = None) -> CloudState:
    """Advance the cloud by one time step (in place; returns the state).

    Total force = trap (full-RF or pseudopotential) + Coulomb + cooling +
    tickle; stochastic recoil is applied after the deterministic update.
    Ions leaving the box |x|,|y| < r0, |z| < z0 are removed from the cloud
    and from subsequent force evaluations. Raises BlowUpError when any speed
    exceeds the numerical sentinel.
    """
    beams = _normalize_beams(beams)
    plan = _get_plan(config, geometry, drive, beams, tickle, state.species)
    ex = _expand(state, plan)
    tk_amp = plan.tickle.amplitude if (plan.tickle is not None
                                       and plan.tickle.active(state.time)) else 0.0

    if state._acc is None:
        state._acc = _prime_acc(state, plan, ex, tk_amp)
    acc = state._acc
    x, y, z = state.xyz
    vx, vy, vz = state.vel
    kernels.kick_drift(x, y, z, vx, vy, vz, acc[0], acc[1], acc[2], plan.dt,
                       plan.nbeams, plan.bkx, plan.bky, plan.bkz, plan.bgamma,
                       plan.bs, plan.bdelta, plan.bkmag, ex["hkm"], ex["coolable"])
    if plan.coulomb_on:
        _coulomb_into(state, plan, ex, acc)
    t1 = state.time + plan.dt
    kernels.add_fields(x, y, z, acc[0], acc[1], acc[2], float(plan.coulomb_on),
                       t1, plan.mode, ex["crf"], ex["cdc"], ex["wr2"], ex["wz2"],
                       plan.omega_rf, tk_amp, plan.tk_omega, ex["ctk"])
    maxv2, n_out = kernels.second_kick(
        x, y, z, vx, vy, vz, acc[0], acc[1], acc[2], plan.dt,
        plan.nbeams, plan.bkx, plan.bky, plan.bkz, plan.bgamma, plan.bs,
        plan.bdelta, plan.bkmag, ex["hkm"], ex["coolable"], ex["rates"],
        geometry.r0, geometry.z0)

    state.time = t1
    if plan.nbeams:
        _apply_recoil(state, ex, plan.dt)
    if maxv2 > SPEED_LIMIT**2:
        raise BlowUpError(f"ion speed {math.sqrt(maxv2):.3g} m/s exceeds {SPEED_LIMIT:.0e} m/s")
    if n_out:
        state.keep(state.bound_mask(geometry))
    return state


def coulomb_accelerations(state: CloudState, config: IntegratorConfig) -> np.ndarray:
    """Per-ion Coulomb accelerations (N, 3) under the configured mode."""
    n = state.n_ions
    if n == 0 or config.coulomb == "off":
        return np.zeros((n, 3))
    charges = state.charges()
    qom = charges / state.masses()
    x, y, z = state.xyz
    if config.coulomb == "cell_list":
        ax, ay, az = kernels.coulomb_cell_list(x, y, z, charges, qom,
                                               config.softening_length,
                                               config.cell_cutoff)
    else:
        ax, ay, az = kernels.coulomb_direct(x, y, z, charges, qom,
                                            config.softening_length)
    return np.stack([ax, ay, az], axis=1)


def cooling_force(velocity, beam: CoolingBeam):
    """Mean radiation-pressure force (N) and scattering rate (1/s).

    rate = (gamma/2) s / (1 + s + (2 (delta - k.v) / gamma)^2) and the mean
    force is hbar k times the rate along the beam. Works on a single
    velocity 3-vector or an (N, 3) array.
    """
    if not beam.on:
        raise ValueError("beam is off")
    v = np.asarray(velocity, dtype=float)
    khat = np.asarray(beam.direction, dtype=float)
    vpar = v @ khat
    det = 2.0 * (beam.detuning - beam.k_magnitude * vpar) / beam.gamma
    rate = 0.5 * beam.gamma * beam.saturation_s / (1.0 + beam.saturation_s + det**2)
    force = HBAR * beam.k_magnitude * np.multiply.outer(rate, khat)
    if v.ndim == 1:
        force = force.reshape(3)
        rate = float(rate)
    return force, rate


def apply_tickle(position, time, tickle: TickleDrive, geometry: TrapGeometry,
                 species: IonSpecies) -> np.ndarray:
    """Force (N) from the tickle quadrupole at a position and absolute time.

    Same spatial form as the RF term; zero outside the drive window.
    """
    if not tickle.active(time):
        return np.zeros(3)
    x, y, _ = position
    c = species.charge * geometry.eta_rf * tickle.amplitude / geometry.r0**2
    osc = math.cos(2 * math.pi * tickle.frequency * time)
    return np.array([-c * osc * x, c * osc * y, 0.0])


def eject_and_count(state: CloudState, geometry: TrapGeometry,
                    config: EjectionConfig = EjectionConfig()) -> int:
    """Destructive ion counting: eject all bound ions toward the detector.

    Bound ions are removed from the cloud; the detected count is a binomial
    draw at the detection efficiency from the state's generator. Unbound
    ions are not counted.
    """
    bound = state.bound_mask(geometry)
    n_bound = int(np.count_nonzero(bound))
    state.keep(~bound)
    if config.detection_efficiency >= 1.0:
        return n_bound
    return int(state.rng.binomial(n_bound, config.detection_efficiency))


def secular_temperature(state: CloudState, geometry: TrapGeometry,
                        drive: DriveSettings, config: IntegratorConfig,
                        samples: int = 10) -> float:
    """Kinetic temperature from velocities sampled once per RF period.

    Samples are taken at RF phase Omega*t = 0 (mod 2 pi), where micromotion
    velocity vanishes to first order; the estimate is m<v^2>/(3 kB) averaged
    over ions and the requested number of sampling phases. The measurement
    evolves a copy of the state with cooling off; the input state is not
    modified.
    """
    if state.n_ions < 1:
        raise TooFewIonsError("secular_temperature needs at least one ion")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    work = state.copy()
    plan = _get_plan(config, geometry, drive, (), None, work.species)
    t_rf = 2 * math.pi / drive.omega_rf
    per_period = max(1, round(t_rf / plan.dt))
    # align to the next phase-zero step
    n_now = round(work.time / plan.dt)
    to_align = (-n_now) % per_period
    for _ in range(to_align):
        step(work, config, geometry, drive)

    masses = work.masses()
    acc = 0.0
    count = 0
    for k in range(samples):
        if k > 0:
            for _ in range(per_period):
                step(work, config, geometry, drive)
            if work.n_ions != masses.shape[0]:
                masses = work.masses()
        if work.n_ions:
            acc += float(np.sum(masses * np.sum(work.vel**2, axis=0)))
            count += work.n_ions
    if count == 0:
        raise TooFewIonsError("cloud emptied during temperature measurement")
    return acc / (3.0 * KB * count)


@dataclass
class EquilibrateResult:
    state: CloudState
    bound_count: int
    temperature: Optional[float]


def equilibrate(state: CloudState, duration: float, config: IntegratorConfig,
                geometry: TrapGeometry, drive: DriveSettings, beams=None,
                tickle: Optional[TickleDrive] = None,
                measure_temperature: bool = True) -> EquilibrateResult:
    """Run the integrator for a duration and report the final cloud."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    beams = _normalize_beams(beams)
    plan = _get_plan(config, geometry, drive, beams, tickle, state.species)
    n_steps = round(duration / plan.dt)
    for _ in range(n_steps):
        step(state, config, geometry, drive, beams, tickle)
    temp = None
    if measure_temperature and state.n_ions:
        temp = secular_temperature(state, geometry, drive, config)
    return EquilibrateResult(state=state,
                             bound_count=int(np.count_nonzero(state.bound_mask(geometry))),
                             temperature=temp)


def space_charge_density(geometry: TrapGeometry, drive: DriveSettings,
                         species: IonSpecies) -> float:
    """Cold-fluid space-charge density limit n0 (ions/m^3)."""
    nu = secular_frequencies(mathieu_params(geometry, drive, species), drive)
    w_r = 2 * math.pi * nu.nu_radial
    w_z = 2 * math.pi * nu.nu_axial
    return EPS0 * species.mass * (2 * w_r**2 + w_z**2) / species.charge**2


def thermal_cloud(species_counts, temperature, geometry: TrapGeometry,
                  drive: DriveSettings, rng) -> CloudState:
    """Synthesize a cloud near its space-charge equilibrium shape.

    Each species is placed uniformly inside its zero-temperature ellipsoid
    (sized from the cold-fluid density limit and the total ion number) with
    a thermal Gaussian jitter on top; velocities are Maxwell-Boltzmann at
    the requested temperature. A short cooled equilibration run settles the
    residual mismatch.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    elif isinstance(rng, np.random.SeedSequence):
        rng = np.random.default_rng(rng)
    species_counts = [(sp, int(n)) for sp, n in species_counts if n > 0]
    if not species_counts:
        raise ValueError("need at least one ion")
    total = sum(n for _, n in species_counts)
    species = tuple(sp for sp, _ in species_counts)

    xs, vs, idx = [], [], []
    for k, (sp, n) in enumerate(species_counts):
        nu = secular_frequencies(mathieu_params(geometry, drive, sp), drive)
        if nu.nu_radial <= 0 or nu.nu_axial <= 0:
            raise UnstableParametersError(f"{sp.name} is not confined at this drive")
        n0 = space_charge_density(geometry, drive, sp)
        aspect = nu.nu_radial / nu.nu_axial
        a_rho = (3.0 * total / (4.0 * math.pi * n0 * aspect)) ** (1.0 / 3.0)
        a_z = aspect * a_rho
        u = rng.normal(size=(3, n))
        u /= np.linalg.norm(u, axis=0) + 1e-300
        r = np.cbrt(rng.random(n))
        pos = u * r
        pos[0] *= a_rho
        pos[1] *= a_rho
        pos[2] *= a_z
        sig_r = math.sqrt(KB * max(temperature, 0.0) / sp.mass) / (2 * math.pi * nu.nu_radial)
        sig_z = math.sqrt(KB * max(temperature, 0.0) / sp.mass) / (2 * math.pi * nu.nu_axial)
        pos[0] += sig_r * rng.normal(size=n)
        pos[1] += sig_r * rng.normal(size=n)
        pos[2] += sig_z * rng.normal(size=n)
        sig_v = math.sqrt(KB * max(temperature, 0.0) / sp.mass)
        vel = sig_v * rng.normal(size=(3, n))
        xs.append(pos)
        vs.append(vel)
        idx.append(np.full(n, k, dtype=np.int64))

    return CloudState(np.concatenate(xs, axis=1), np.concatenate(vs, axis=1),
                      np.concatenate(idx), species, time=0.0, rng=rng)


def total_energy(state: CloudState, geometry: TrapGeometry, drive: DriveSettings,
                 config: IntegratorConfig) -> float:
    """Kinetic + pseudopotential + softened Coulomb energy (secular mode).

    This is the conserved quantity of the secular-mode equations with
    cooling off; it is not conserved in full-RF mode (the field is
    time-dependent there).
    """
    masses = state.masses()
    ke = 0.5 * float(np.sum(masses * np.sum(state.vel**2, axis=0)))
    pe_trap = 0.0
    for k, sp in enumerate(state.species):
        sel = state.species_index == k
        if not np.any(sel):
            continue
        c_r, c_z = pseudo_coefficients(geometry, drive, sp)
        x, y, z = state.xyz[:, sel]
        pe_trap += float(np.sum(c_r * (x * x + y * y) + c_z * z * z))
    pe_coul = 0.0
    if config.coulomb != "off" and state.n_ions > 1:
        q = state.charges()
        d = state.positions[:, None, :] - state.positions[None, :, :]
        r = np.sqrt(np.sum(d * d, axis=2) + config.softening_length**2)
        qq = np.outer(q, q)
        iu = np.triu_indices(state.n_ions, k=1)
        pe_coul = float(np.sum(K_COULOMB * qq[iu] / r[iu]))
    return ke + pe_trap + pe_coul


# ---------------------------------------------------------------------------
# Checkpointing: version-1 plain-text snapshot sufficient for bit-exact resume.

CHECKPOINT_VERSION = 1


def _floats_to_hex(a):
    return [float(v).hex() for v in np.asarray(a, dtype=float).ravel()]


def _hex_to_floats(lst, shape):
    return np.array([float.fromhex(s) for s in lst], dtype=float).reshape(shape)


def save_checkpoint(state: CloudState, path):
    """Write a plain-text (JSON) snapshot that restores bit-identical runs."""
    doc = {
        "format": "srtrap-cloudstate",
        "version": CHECKPOINT_VERSION,
        "time": float(state.time).hex(),
        "n_lost": state.n_lost,
        "species": [{"name": s.name, "mass": s.mass.hex(), "charge": s.charge.hex()}
                    for s in state.species],
        "species_index": state.species_index.tolist(),
        "xyz": _floats_to_hex(state.xyz),
        "vel": _floats_to_hex(state.vel),
        "acc": _floats_to_hex(state._acc) if state._acc is not None else None,
        "rng": state.rng.bit_generator.state,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> CloudState:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "srtrap-cloudstate":
        raise ValueError("not a cloud-state checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    species = tuple(IonSpecies(s["name"], float.fromhex(s["mass"]),
                               float.fromhex(s["charge"])) for s in doc["species"])
    n = len(doc["species_index"])
    bitgen_cls = getattr(np.random, doc["rng"]["bit_generator"])
    bitgen = bitgen_cls()
    bitgen.state = doc["rng"]
    state = CloudState(_hex_to_floats(doc["xyz"], (3, n)),
                       _hex_to_floats(doc["vel"], (3, n)),
                       np.array(doc["species_index"], dtype=np.int64),
                       species,
                       time=float.fromhex(doc["time"]),
                       rng=np.random.Generator(bitgen),
                       n_lost=doc["n_lost"])
    if doc["acc"] is not None:
        state._acc = _hex_to_floats(doc["acc"], (3, n))
    return state
