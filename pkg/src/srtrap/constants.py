"""Physical constants (SI, CODATA 2018) and common species definitions."""

import math

E_CHARGE = 1.602176634e-19      # elementary charge, C
AMU = 1.66053906660e-27         # atomic mass unit, kg
EPS0 = 8.8541878128e-12         # vacuum permittivity, F/m
K_COULOMB = 1.0 / (4.0 * math.pi * EPS0)  # Coulomb constant, N m^2 / C^2
KB = 1.380649e-23               # Boltzmann constant, J/K
HBAR = 1.054571817e-34          # reduced Planck constant, J s
C_LIGHT = 299792458.0           # speed of light, m/s
