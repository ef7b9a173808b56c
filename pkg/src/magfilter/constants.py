"""Physical constants (CODATA 2018), pinned for reproducible output."""

HBAR = 1.054571817e-34  # J s
C_LIGHT = 299792458.0  # m / s
EPSILON_0 = 8.8541878128e-12  # F / m
BOHR_MAGNETON = 9.2740100783e-24  # J / T

PICOTESLA = 1e-12

CONSTANTS = {
    "hbar": HBAR,
    "c": C_LIGHT,
    "epsilon_0": EPSILON_0,
    "bohr_magneton": BOHR_MAGNETON,
}
