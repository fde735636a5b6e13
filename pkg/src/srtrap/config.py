"""Scenario configuration: parsing, unit conversion, validation, digest.

The file format is line-oriented plain text: `[section]` headers, `key =
value` entries, `#` comments. Every physical quantity carries an explicit
unit suffix (`v_rf = 500 V`, `omega_rf = 2.5 MHz`) and is converted to SI on
ingestion; frequencies declared angular in the schema pick up the 2*pi.
Unknown sections or keys are hard errors, as are missing required keys, so a
misspelled name can never fall back to a silent default.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .constants import AMU, E_CHARGE
from .dynamics import (COOLING_GAMMA, COOLING_WAVELENGTH, CoolingBeam,
                       EjectionConfig, IntegratorConfig, axis_beams)
from .errors import ConfigError
from .loading import EBSource, OvenSource, PhotoionBeam
from .trap import DriveSettings, IonSpecies, TrapGeometry

TWO_PI = 2.0 * math.pi

# unit tables per dimension kind; values are multipliers to SI
_UNITS = {
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "nm": 1e-9},
    "voltage": {"V": 1.0, "kV": 1e3, "mV": 1e-3},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "angular_frequency": {"Hz": TWO_PI, "kHz": TWO_PI * 1e3, "MHz": TWO_PI * 1e6,
                          "GHz": TWO_PI * 1e9, "rad/s": 1.0},
    "mass": {"kg": 1.0, "amu": AMU, "u": AMU},
    "charge": {"C": 1.0, "e": E_CHARGE},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12, "fs": 1e-15},
    "current": {"A": 1.0, "mA": 1e-3},
    "energy": {"J": 1.0, "mJ": 1e-3, "uJ": 1e-6, "nJ": 1e-9, "pJ": 1e-12,
               "eV": E_CHARGE},
    "power": {"W": 1.0, "mW": 1e-3, "uW": 1e-6, "nW": 1e-9},
    "temperature": {"K": 1.0, "mK": 1e-3, "uK": 1e-6, "degC": None},   # degC handled specially
    "rate": {"/s": 1.0, "1/s": 1.0},
    "none": {},
}


@dataclass(frozen=True)
class FieldSpec:
    kind: str                       # key into _UNITS, or int/bool/str/list variants
    required: bool = False
    default: object = None


def _f(kind, required=False, default=None):
    return FieldSpec(kind, required, default)


# every recognized key; section -> {key: FieldSpec}
SCHEMA = {
    "trap": {
        "r0": _f("length", required=True),
        "z0": _f("length", required=True),
        "rod_diameter": _f("length", default=6.35e-3),
        "kappa_axial": _f("none", required=True),
        "eta_rf": _f("none", default=1.0),
    },
    "drive": {
        "omega_rf": _f("angular_frequency", required=True),
        "v_rf": _f("voltage", required=True),
        "v_ec": _f("voltage", required=True),
    },
    "species": {
        "name": _f("str", default="Sr+"),
        "mass": _f("mass", required=True),
        "charge": _f("charge", default=E_CHARGE),
    },
    "cooling": {
        "wavelength": _f("length", default=COOLING_WAVELENGTH),
        "linewidth": _f("angular_frequency", default=COOLING_GAMMA),
        "detuning": _f("angular_frequency", default=-0.5 * COOLING_GAMMA),
        "saturation": _f("none", default=1.0),
        "target": _f("str", default=""),
    },
    "photoion": {
        "pulse_energy": _f("energy", default=0.15e-9),
        "pulse_duration": _f("time", default=50e-15),
        "rep_rate": _f("frequency", default=1e8),
        "waist": _f("length", default=20e-6),
        "wavelength": _f("length", default=431e-9),
        "two_photon_linewidth": _f("length", default=0.7e-9),
        "rate_coefficient": _f("none", required=True),
        "pulse_shape": _f("str", default="gaussian"),
    },
    "oven": {
        "current": _f("current", default=1.0),
        "cal_current_low": _f("current", default=0.8),
        "cal_current_high": _f("current", default=1.2),
        "cal_temperature_low": _f("temperature", default=383.15),
        "cal_temperature_high": _f("temperature", default=443.15),
        "antoine_a": _f("none", default=14.7024),
        "antoine_b": _f("none", default=10546.6),
    },
    "eb": {
        "electron_energy": _f("energy", default=300 * E_CHARGE),
        "rate": _f("rate", default=100.0),
        "impurity_fraction": _f("none", default=0.34),
        "impurity_masses": _f("list:mass", default=()),
        "impurity_weights": _f("list:none", default=()),
        "capacity": _f("none", default=1053.0),
    },
    "loading": {
        "background_loss": _f("rate", default=1e-3),
        "capacity_scale": _f("none", default=1.0),
    },
    "integrator": {
        "mode": _f("str", default="secular"),
        "coulomb": _f("str", default="direct"),
        "dt": _f("time", default=0.0),            # 0 = auto
        "softening": _f("length", default=100e-9),
        "deterministic_reduction": _f("bool", default=True),
    },
    "ejection": {
        "detection_efficiency": _f("none", default=1.0),
    },
    "scan.massspec": {
        "f_min": _f("frequency", default=50e3),
        "f_max": _f("frequency", default=1e6),
        "f_step": _f("frequency", default=5e3),
        "amplitude": _f("voltage", default=9.0),
        "dwell": _f("time", default=2e-3),
        "n_ions": _f("int", default=200),
        "temperature": _f("temperature", default=2e-3),
        "equilibration": _f("time", default=0.8e-3),
        "n_control": _f("int", default=3),
        "saturation": _f("none", default=0.05),
    },
    "scan.fig4": {
        "v_rf": _f("voltage", default=500.0),
    },
    "scan.fig6b": {
        "v_rf": _f("voltage", default=350.0),
    },
    "scan.ratescan": {
        "powers": _f("list:power", required=True),
        "trials": _f("int", default=20),
        "load_window": _f("time", default=1.0),
        "slope_points": _f("int", default=5),
    },
    "scan.loadcurve": {
        "v_rf_values": _f("list:voltage", default=(125.0, 250.0, 350.0, 500.0)),
        "t_max": _f("time", default=60.0),
        "n_times": _f("int", default=121),
        "oven_current": _f("current", default=1.2),
        "include_eb": _f("bool", default=True),
    },
    "scan.volume": {
        "v_min": _f("voltage", default=50.0),
        "v_max": _f("voltage", default=500.0),
        "n_points": _f("int", default=46),
        "resolution": _f("length", default=80e-6),
    },
    "scan.stability": {
        "v_min": _f("voltage", default=0.0),
        "v_max": _f("voltage", default=1200.0),
        "n_points": _f("int", default=121),
    },
    "run": {
        "master_seed": _f("int", required=True),
        "output_directory": _f("str", default="out"),
    },
}

_NUM_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?")


def _convert(token, kind, line_no):
    token = token.strip()
    if kind == "str":
        return token
    if kind == "bool":
        if token.lower() in ("true", "yes", "on", "1"):
            return True
        if token.lower() in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"expected a boolean, got {token!r}", line_no)
    if kind == "int":
        try:
            return int(token)
        except ValueError:
            raise ConfigError(f"expected an integer, got {token!r}", line_no)
    if kind.startswith("list:"):
        inner = kind.split(":", 1)[1]
        if not (token.startswith("[") and token.endswith("]")):
            raise ConfigError(f"expected a [list], got {token!r}", line_no)
        body = token[1:-1].strip()
        if not body:
            return ()
        return tuple(_convert(item, inner, line_no) for item in body.split(","))

    m = _NUM_RE.match(token)
    if not m:
        raise ConfigError(f"expected a number, got {token!r}", line_no,
                          column=1)
    value = float(m.group(0))
    unit = token[m.end():].strip()
    if kind == "none":
        if unit:
            raise ConfigError(f"dimensionless quantity must not carry a unit "
                              f"(got {unit!r})", line_no)
        return value
    table = _UNITS[kind]
    if not unit:
        raise ConfigError(f"missing unit; expected one of {sorted(table)}", line_no)
    if kind == "temperature" and unit == "degC":
        return value + 273.15
    if unit not in table:
        raise ConfigError(f"unknown unit {unit!r}; expected one of {sorted(table)}",
                          line_no)
    return value * table[unit]


def _parse_lines(text):
    """Raw parse: {section: {key: (token, line_no)}} with location tracking."""
    sections = {}
    current = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError("unterminated section header", line_no,
                                  column=len(line))
            name = stripped[1:-1].strip()
            if not name:
                raise ConfigError("empty section name", line_no)
            current = sections.setdefault(name, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}",
                              line_no, column=1)
        if current is None:
            raise ConfigError("key outside of any [section]", line_no)
        key, _, val = stripped.partition("=")
        key = key.strip()
        if key in current:
            raise ConfigError(f"duplicate key {key!r}", line_no)
        current[key] = (val.strip(), line_no)
    return sections


def _schema_for(section, line_hint=None):
    if section in SCHEMA:
        return SCHEMA[section]
    if section.startswith("species."):
        return SCHEMA["species"]
    raise ConfigError(f"unknown section [{section}]", line_hint)


@dataclass
class ScenarioConfig:
    """Fully resolved scenario: SI values, constructed domain objects, digest."""

    geometry: TrapGeometry
    drive: DriveSettings
    species: dict                      # label -> IonSpecies
    primary_species: IonSpecies
    beams_factory: object              # callable(saturation=None) -> beams tuple
    photoion: PhotoionBeam
    oven: OvenSource
    eb: EBSource
    integrator: IntegratorConfig
    ejection: EjectionConfig
    master_seed: int
    output_directory: str
    capacity_scale: float
    background_loss: float
    scans: dict                        # section name -> {key: value}
    digest: str
    values: dict                       # flattened section.key -> SI value


def _require(values, section, schema, found):
    out = {}
    for key, spec in schema.items():
        full = f"{section}.{key}"
        if key in found:
            out[key] = found[key]
        elif spec.required:
            raise ConfigError(f"missing required key {full}")
        else:
            out[key] = spec.default
        values[full] = out[key]
    return out


def load_config(path) -> ScenarioConfig:
    """Parse, unit-convert, validate and resolve a scenario file."""
    with open(path) as fh:
        text = fh.read()
    raw = _parse_lines(text)

    values = {}
    resolved = {}
    for section, entries in raw.items():
        schema = _schema_for(section)
        converted = {}
        for key, (token, line_no) in entries.items():
            if key not in schema:
                raise ConfigError(f"unknown key {section}.{key}", line_no)
            converted[key] = _convert(token, schema[key].kind, line_no)
        resolved[section] = converted

    def section(name):
        return _require(values, name, _schema_for(name), resolved.get(name, {}))

    trap = section("trap")
    drive_v = section("drive")
    cooling = section("cooling")
    photoion_v = section("photoion")
    oven_v = section("oven")
    eb_v = section("eb")
    loading_v = section("loading")
    integ = section("integrator")
    eject_v = section("ejection")
    run_v = section("run")

    scans = {}
    for name in list(SCHEMA):
        if name.startswith("scan."):
            if name in resolved or any(s.required for s in SCHEMA[name].values()):
                if name in resolved:
                    scans[name] = _require(values, name, SCHEMA[name], resolved[name])
            else:
                scans[name] = _require(values, name, SCHEMA[name], {})

    species = {}
    primary = None
    for sec in resolved:
        if sec.startswith("species."):
            label = sec.split(".", 1)[1]
            sv = _require(values, sec, SCHEMA["species"], resolved[sec])
            try:
                sp = IonSpecies(sv["name"], sv["mass"], sv["charge"])
            except ValueError as exc:
                raise ConfigError(f"invalid species {sec}: {exc}")
            species[label] = sp
            if primary is None:
                primary = sp
    if primary is None:
        raise ConfigError("missing required section [species.<label>] "
                          "(at least one species)")

    def checked(builder, sec_name, **kwargs):
        try:
            return builder(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"invalid [{sec_name}]: {exc}")

    geometry = checked(TrapGeometry, "trap", r0=trap["r0"], z0=trap["z0"],
                       rod_diameter=trap["rod_diameter"],
                       kappa_axial=trap["kappa_axial"], eta_rf=trap["eta_rf"])
    drive = checked(DriveSettings, "drive", omega_rf=drive_v["omega_rf"],
                    v_rf=drive_v["v_rf"], v_ec=drive_v["v_ec"])

    target = cooling["target"] or None

    def beams_factory(saturation=None):
        return axis_beams(detuning=cooling["detuning"],
                          saturation_s=cooling["saturation"] if saturation is None else saturation,
                          target=target, wavelength=cooling["wavelength"],
                          gamma=cooling["linewidth"])

    checked(CoolingBeam, "cooling", wavelength=cooling["wavelength"],
            gamma=cooling["linewidth"], detuning=cooling["detuning"],
            saturation_s=cooling["saturation"], direction=(0.0, 0.0, 1.0),
            target=target)

    photo = checked(PhotoionBeam, "photoion",
                    pulse_energy=photoion_v["pulse_energy"],
                    pulse_duration_fwhm=photoion_v["pulse_duration"],
                    rep_rate=photoion_v["rep_rate"], waist=photoion_v["waist"],
                    wavelength=photoion_v["wavelength"],
                    two_photon_linewidth_fwhm=photoion_v["two_photon_linewidth"],
                    rate_coefficient=photoion_v["rate_coefficient"],
                    pulse_shape=photoion_v["pulse_shape"])

    oven = checked(OvenSource, "oven", current=oven_v["current"],
                   cal_currents=(oven_v["cal_current_low"], oven_v["cal_current_high"]),
                   cal_temperatures=(oven_v["cal_temperature_low"],
                                     oven_v["cal_temperature_high"]),
                   antoine_a=oven_v["antoine_a"], antoine_b=oven_v["antoine_b"])

    masses = eb_v["impurity_masses"]
    weights = eb_v["impurity_weights"]
    if len(masses) != len(weights):
        raise ConfigError("eb.impurity_masses and eb.impurity_weights lengths differ")
    imps = tuple((IonSpecies(f"m{m/AMU:g}", m, E_CHARGE), w)
                 for m, w in zip(masses, weights))
    eb = checked(EBSource, "eb", electron_energy=eb_v["electron_energy"] / E_CHARGE,
                 effective_rate=eb_v["rate"],
                 impurity_fraction=eb_v["impurity_fraction"],
                 impurity_species=imps, primary_species=primary)

    integrator = checked(IntegratorConfig, "integrator",
                         dt=integ["dt"] if integ["dt"] > 0 else None,
                         field_mode=integ["mode"], coulomb=integ["coulomb"],
                         softening_length=integ["softening"],
                         deterministic_reduction=integ["deterministic_reduction"])
    ejection = checked(EjectionConfig, "ejection",
                       detection_efficiency=eject_v["detection_efficiency"])

    digest = config_digest(values)
    return ScenarioConfig(geometry=geometry, drive=drive, species=species,
                          primary_species=primary, beams_factory=beams_factory,
                          photoion=photo, oven=oven, eb=eb,
                          integrator=integrator, ejection=ejection,
                          master_seed=run_v["master_seed"],
                          output_directory=run_v["output_directory"],
                          capacity_scale=loading_v["capacity_scale"],
                          background_loss=loading_v["background_loss"],
                          scans=scans, digest=digest, values=values)


def config_digest(values) -> str:
    """Content hash of the resolved configuration (SI values, sorted keys)."""
    parts = []
    for key in sorted(values):
        val = values[key]
        if isinstance(val, float):
            rep = repr(val)
        elif isinstance(val, tuple):
            rep = "[" + ",".join(repr(v) for v in val) + "]"
        else:
            rep = repr(val)
        parts.append(f"{key}={rep}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()
