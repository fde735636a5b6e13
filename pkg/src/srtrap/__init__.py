"""Desk-scale simulation suite for a linear Paul trap loaded with Sr+ ions."""

__version__ = "0.1.0"

from .trap import (DriveSettings, IonSpecies, MathieuParams, SecularFrequencies,
                   TrapGeometry, VolumeEstimate, SR88, calibrate_kappa, ion_species,
                   instantaneous_force, mathieu_params, pseudo_coefficients,
                   pseudopotential_energy, secular_frequencies, stability_check,
                   trap_volume)
from .dynamics import (CloudState, CoolingBeam, EjectionConfig, IntegratorConfig,
                       TickleDrive, axis_beams, cooling_force, coulomb_accelerations,
                       eject_and_count, equilibrate, apply_tickle, load_checkpoint,
                       save_checkpoint, secular_temperature, step, thermal_cloud)

__all__ = [name for name in dir() if not name.startswith("_")]
