"""Physical constants (SI) and unit helpers shared across the package."""

from scipy import constants as _sc

HBAR = _sc.hbar
C = _sc.c
KB = _sc.k
E_CHARGE = _sc.e
EPS0 = _sc.epsilon_0
ALPHA = _sc.fine_structure

#: Fermi velocity of graphene in units of c used when nothing else is given.
DEFAULT_VF_RATIO = 1.0 / 300.0


def ev_to_rad_s(energy_ev):
    """Photon energy in eV -> angular frequency in rad/s."""
    return energy_ev * E_CHARGE / HBAR


def rad_s_to_ev(omega):
    """Angular frequency in rad/s -> photon energy in eV."""
    return omega * HBAR / E_CHARGE


def thermal_energy_ev(temperature):
    """k_B T in eV."""
    return KB * temperature / E_CHARGE
