"""Scenario orchestration: named pipelines, CSV persistence, replay.

Every preset consumes the resolved ScenarioConfig, runs its pipeline, and
writes plot-ready CSV files plus a JSON run record listing them. Numeric
CSV content is a pure function of (config digest, master seed): floats are
serialized with repr (shortest round trip) and all randomness derives from
the master seed.
"""

from __future__ import annotations

import datetime
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import ScenarioConfig, load_config
from .dynamics import EjectionConfig, IntegratorConfig, equilibrate, secular_temperature, thermal_cloud
from .errors import DigestMismatchError, SrTrapError
from .loading import (EBSource, LoadingModel, capacity, eb_composition,
                      loading_curve, oven_density, rate_scan, saturation_level,
                      two_photon_rate)
from .spectrometry import (CloudRecipe, SpectrumScan, contrast, peak_report,
                           run_mass_spectrum)
from .trap import mathieu_params, secular_frequencies, stability_check, trap_volume

PRESETS = ("stability", "secular", "volume", "ratescan", "loadcurve",
           "massspec", "fig4", "fig5", "fig6a", "fig6b")


@dataclass
class RunRecord:
    preset: str
    config_path: str
    config_digest: str
    seed: int
    started_at: str
    finished_at: str
    version: str
    outputs: list

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))


class _Writer:
    """Collects output files for the run record and formats CSV rows."""

    def __init__(self, out_dir, digest, seed, preset):
        self.out_dir = out_dir
        self.provenance = [
            f"# preset = {preset}",
            f"# config_digest = {digest}",
            f"# master_seed = {seed}",
            f"# srtrap_version = {__version__}",
        ]
        self.files = []

    def write(self, name, header, rows):
        path = os.path.join(self.out_dir, name)
        with open(path, "w") as fh:
            fh.write("\n".join(self.provenance) + "\n")
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(_cell(v) for v in row) + "\n")
        self.files.append(name)
        return path


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _drive_at(cfg, v_rf):
    from .trap import DriveSettings
    return DriveSettings(omega_rf=cfg.drive.omega_rf, v_rf=v_rf, v_ec=cfg.drive.v_ec)


# ---------------------------------------------------------------------------
# preset pipelines

def _run_stability(cfg: ScenarioConfig, w: _Writer, seed):
    scan = cfg.scans["scan.stability"]
    rows = []
    for v in np.linspace(scan["v_min"], scan["v_max"], scan["n_points"]):
        p = mathieu_params(cfg.geometry, _drive_at(cfg, float(v)), cfg.primary_species)
        ok, margin = stability_check(p)
        rows.append((float(v), p.q_radial, p.a_radial, p.a_axial, int(ok), margin))
    w.write("stability.csv",
            "v_rf_volts,q_radial,a_radial,a_axial,stable,margin", rows)


def _run_secular(cfg: ScenarioConfig, w: _Writer, seed):
    p = mathieu_params(cfg.geometry, cfg.drive, cfg.primary_species)
    nu = secular_frequencies(p, cfg.drive)
    w.write("secular.csv",
            "v_rf_volts,v_ec_volts,q_radial,a_axial,nu_radial_hz,nu_axial_hz",
            [(cfg.drive.v_rf, cfg.drive.v_ec, p.q_radial, p.a_axial,
              nu.nu_radial, nu.nu_axial)])


def _run_volume(cfg: ScenarioConfig, w: _Writer, seed):
    scan = cfg.scans["scan.volume"]
    rows = []
    for v in np.linspace(scan["v_min"], scan["v_max"], scan["n_points"]):
        est = trap_volume(cfg.geometry, _drive_at(cfg, float(v)),
                          cfg.primary_species, scan["resolution"])
        rows.append((float(v), est.volume, est.depth))
    w.write("volume.csv", "v_rf_volts,volume_m3,depth_j", rows)


def _run_ratescan(cfg: ScenarioConfig, w: _Writer, seed, name="ratescan"):
    scan = cfg.scans["scan.ratescan"]
    density = oven_density(cfg.oven)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(100,)))
    result = rate_scan(cfg.photoion, scan["powers"], density,
                       trials=scan["trials"], load_window=scan["load_window"],
                       slope_points=scan["slope_points"], rng=rng)
    rows = list(zip(result.powers, result.rates, result.errors))
    w.write(f"{name}.csv", "average_power_w,rate_ions_per_s,rate_stderr", rows)
    w.write(f"{name}_fit.csv", "exponent,exponent_stderr",
            [(result.exponent, result.exponent_err)])


def _loading_model_at(cfg, v_rf, rate):
    drive = _drive_at(cfg, v_rf)
    scanv = cfg.scans["scan.volume"]
    vol = trap_volume(cfg.geometry, drive, cfg.primary_species, scanv["resolution"])
    cap = capacity(drive, cfg.geometry, cfg.primary_species, vol,
                   scale=cfg.capacity_scale)
    return LoadingModel(rate_R=rate, capacity_N=cap,
                        background_loss=cfg.background_loss)


def _run_loadcurve(cfg: ScenarioConfig, w: _Writer, seed, name="loadcurve"):
    scan = cfg.scans["scan.loadcurve"]
    from dataclasses import replace
    oven = replace(cfg.oven, current=scan["oven_current"])
    rate = two_photon_rate(cfg.photoion, oven_density(oven))
    times = np.linspace(0.0, scan["t_max"], scan["n_times"])
    rows = []
    for v in scan["v_rf_values"]:
        model = _loading_model_at(cfg, float(v), rate)
        for t, n in zip(times, loading_curve(model, times)):
            rows.append(("tppi", float(v), float(t), float(n)))
    if scan["include_eb"]:
        eb_model = LoadingModel(rate_R=cfg.eb.effective_rate,
                                capacity_N=cfg.values["eb.capacity"],
                                background_loss=cfg.background_loss)
        for t, n in zip(times, loading_curve(eb_model, times)):
            rows.append(("eb", cfg.drive.v_rf, float(t), float(n)))
    w.write(f"{name}.csv", "source,v_rf_volts,time_s,n_ions", rows)


def _massspec_scan(cfg: ScenarioConfig, counts, v_rf, seed_tag, seed):
    ms = cfg.scans["scan.massspec"]
    drive = _drive_at(cfg, v_rf)
    beams = cfg.beams_factory(saturation=ms["saturation"])
    recipe = CloudRecipe(counts=counts, drive=drive, beams=beams,
                         temperature=ms["temperature"],
                         equilibration=ms["equilibration"])
    freqs = tuple(np.arange(ms["f_min"], ms["f_max"] + ms["f_step"] / 2,
                            ms["f_step"]))
    scan = SpectrumScan(frequencies=freqs, tickle_amplitude=ms["amplitude"],
                        dwell=ms["dwell"], recipe=recipe,
                        n_control=ms["n_control"])
    integ = cfg.integrator
    return run_mass_spectrum(scan, cfg.geometry, integ,
                             master_seed=seed + seed_tag, ejection=cfg.ejection)


def _split_counts(cfg, n_total):
    """Pure-primary and EB-mixture species count lists of n_total ions."""
    pure = ((cfg.primary_species, n_total),)
    comp = eb_composition(cfg.eb)
    counts = []
    assigned = 0
    for sp, wgt in comp[1:]:
        n = round(n_total * wgt)
        counts.append((sp, n))
        assigned += n
    counts.insert(0, (cfg.primary_species, n_total - assigned))
    return pure, tuple(counts)


def _run_massspec(cfg: ScenarioConfig, w: _Writer, seed):
    n = cfg.scans["scan.massspec"]["n_ions"]
    result = _massspec_scan(cfg, ((cfg.primary_species, n),), cfg.drive.v_rf,
                            0, seed)
    rows = list(zip(result.frequency, result.survival_fraction, result.counted,
                    [result.baseline] * len(result.frequency)))
    w.write("massspec.csv", "frequency_hz,survival_fraction,counted,baseline", rows)


def _run_fig_spectra(cfg: ScenarioConfig, w: _Writer, seed, v_rf, name):
    n = cfg.scans["scan.massspec"]["n_ions"]
    pure, mixture = _split_counts(cfg, n)
    out = {}
    for label, counts, tag in (("tppi", pure, 0), ("eb", mixture, 1000)):
        res = _massspec_scan(cfg, counts, v_rf, tag, seed)
        rows = list(zip(res.frequency, res.survival_fraction, res.counted,
                        [res.baseline] * len(res.frequency)))
        w.write(f"{name}_{label}.csv",
                "frequency_hz,survival_fraction,counted,baseline", rows)
        out[label] = res

    from .trap import DriveSettings
    drive = _drive_at(cfg, v_rf)
    nu = secular_frequencies(mathieu_params(cfg.geometry, drive,
                                            cfg.primary_species), drive)
    crows = []
    for label, res in out.items():
        c = contrast(res, 2 * nu.nu_radial, 40e3)
        rep = peak_report(res)
        center = rep.peaks[0].center if rep.peaks else float("nan")
        crows.append((label, c, center))
    w.write(f"{name}_contrast.csv", "source,contrast_percent,main_peak_hz", crows)


def _run_fig4(cfg, w, seed):
    _run_fig_spectra(cfg, w, seed, cfg.scans["scan.fig4"]["v_rf"], "fig4")


def _run_fig6b(cfg, w, seed):
    _run_fig_spectra(cfg, w, seed, cfg.scans["scan.fig6b"]["v_rf"], "fig6b")


_PIPELINES = {
    "stability": _run_stability,
    "secular": _run_secular,
    "volume": _run_volume,
    "ratescan": _run_ratescan,
    "fig5": lambda cfg, w, seed: _run_ratescan(cfg, w, seed, name="fig5"),
    "loadcurve": _run_loadcurve,
    "fig6a": lambda cfg, w, seed: _run_loadcurve(cfg, w, seed, name="fig6a"),
    "massspec": _run_massspec,
    "fig4": _run_fig4,
    "fig6b": _run_fig6b,
}


class _OutputLock:
    """Single CLI instance per output directory."""

    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, ".srtrap.lock")

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise SrTrapError(
                f"output directory is locked by another run ({self.path}); "
                "remove the lock file if that run is gone")
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        os.unlink(self.path)


def run_scenario(cfg: ScenarioConfig, preset: str, config_path: str = "",
                 seed: int | None = None, out_dir: str | None = None) -> RunRecord:
    """Execute a named pipeline; write CSVs and the run-record manifest."""
    if preset not in _PIPELINES:
        raise SrTrapError(f"unknown preset {preset!r}; choose from {PRESETS}")
    seed = cfg.master_seed if seed is None else int(seed)
    out_dir = out_dir or cfg.output_directory
    os.makedirs(out_dir, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with _OutputLock(out_dir):
        writer = _Writer(out_dir, cfg.digest, seed, preset)
        _PIPELINES[preset](cfg, writer, seed)
    record = RunRecord(preset=preset, config_path=str(config_path),
                       config_digest=cfg.digest, seed=seed,
                       started_at=started,
                       finished_at=datetime.datetime.now(datetime.timezone.utc).isoformat(),
                       version=__version__, outputs=writer.files)
    record.to_json(os.path.join(out_dir, f"{preset}_record.json"))
    return record


@dataclass
class ReplayReport:
    passed: bool
    files: list        # (name, "PASS"|"FAIL <detail>")


def _numeric_lines(path):
    with open(path) as fh:
        return [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]


def replay(record_path: str, config_path: str | None = None,
           work_dir: str | None = None) -> ReplayReport:
    """Re-run a recorded scenario and compare output files cell by cell.

    Raises DigestMismatchError before simulating anything if the
    configuration content no longer matches the record.
    """
    record = RunRecord.from_json(record_path)
    cfg_path = config_path or record.config_path
    cfg = load_config(cfg_path)
    if cfg.digest != record.config_digest:
        raise DigestMismatchError(
            f"config digest {cfg.digest[:12]}... does not match the recorded "
            f"{record.config_digest[:12]}...")
    work_dir = work_dir or os.path.join(os.path.dirname(record_path) or ".",
                                        f"replay_{record.preset}_{int(time.time())}")
    run_scenario(cfg, record.preset, config_path=cfg_path, seed=record.seed,
                 out_dir=work_dir)
    base_dir = os.path.dirname(record_path) or "."
    files = []
    all_ok = True
    for name in record.outputs:
        old = _numeric_lines(os.path.join(base_dir, name))
        new = _numeric_lines(os.path.join(work_dir, name))
        status = "PASS"
        if len(old) != len(new):
            status = f"FAIL row count {len(old)} != {len(new)}"
        else:
            for r, (a, b) in enumerate(zip(old, new)):
                if a != b:
                    ca = a.split(",")
                    cb = b.split(",")
                    col = next((k for k, (x, y) in enumerate(zip(ca, cb)) if x != y),
                               0)
                    status = f"FAIL first difference at row {r}, column {col}"
                    break
        if status != "PASS":
            all_ok = False
        files.append((name, status))
    return ReplayReport(passed=all_ok, files=files)
