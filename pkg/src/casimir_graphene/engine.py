"""Casimir force gradient between a metal sphere and a graphene-coated plate.

In the proximity-force approximation the gradient is

    F'(a, T) = 2 k_B T R  sum'_l  int_0^inf q k dk  sum_alpha  f_alpha,
    f_alpha  = r R e^{-2 a q} / (1 - r R e^{-2 a q}),

with the l = 0 term halved.  At T = 0 the frequency sum becomes
(hbar R / pi) int_0^inf dxi.  The k-integral is done in y = 2 a q, shifted
to start at zero, on fixed Gauss-Legendre panels; the T = 0 frequency
integral uses xi = (c / 2a) t / (1 - t) on panels graded toward t = 0.

Reductions are always done serially in index order, so results do not
depend on how separations are distributed over worker processes.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import materials
from .constants import C, DEFAULT_VF_RATIO, E_CHARGE, HBAR, KB
from .materials import PermittivityModel, eps_imaginary_axis
from .polarization import GrapheneParams, tensor_batch
from .reflection import metal_coefficients, plate_coefficients

#: Central graphene parameters used for single-valued thermal fractions.
CENTRAL_MU = 0.24
CENTRAL_DELTA = 0.1
#: Band edges: (mu, delta) in eV for the upper and lower theory lines.
UPPER_EDGE = (0.25, 0.0)
LOWER_EDGE = (0.23, 0.2)

_K_EDGES = np.array([0.0, 0.5, 2.0, 5.0, 10.0, 18.0, 30.0, 46.0])
_XI_EDGES = np.array([0.0, 1e-5, 1e-4, 1e-3, 4e-3, 0.015, 0.05, 0.15, 0.35, 0.6, 0.8, 1.0])


class ConvergenceError(RuntimeError):
    """A Matsubara sum or quadrature did not reach its tolerance."""


@dataclass(frozen=True)
class ExperimentGeometry:
    """Separation and sphere radius in m, rms roughness amplitudes in m."""

    separation: float
    sphere_radius: float
    roughness_sphere: float = 0.0
    roughness_plate: float = 0.0

    def __post_init__(self):
        if not 0 < self.separation < self.sphere_radius:
            raise ValueError("need 0 < separation < sphere_radius")
        for r in (self.roughness_sphere, self.roughness_plate):
            if not 0 <= r < self.separation / 10:
                raise ValueError("roughness must be >= 0 and below separation/10")


@dataclass(frozen=True)
class SystemSpec:
    geometry: ExperimentGeometry
    metal: PermittivityModel
    substrate: PermittivityModel
    graphene: Optional[GrapheneParams] = None
    temperature: float = 294.0

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError("temperature must be >= 0")

    def at(self, separation: float) -> "SystemSpec":
        return replace(self, geometry=replace(self.geometry, separation=separation))

    def with_graphene(self, mu: float, delta: float) -> "SystemSpec":
        vf = self.graphene.vf_ratio if self.graphene else DEFAULT_VF_RATIO
        return replace(self, graphene=GrapheneParams(mu, delta, vf))


@dataclass(frozen=True)
class QuadratureSettings:
    k_order: int = 12
    xi_order: int = 12
    u_order: int = 12
    kk_order: int = materials.DEFAULT_KK_ORDER
    matsubara_rtol: float = 1e-9
    matsubara_tail: int = 3

    def refined(self) -> "QuadratureSettings":
        return QuadratureSettings(2 * self.k_order, 2 * self.xi_order, 2 * self.u_order,
                                  2 * self.kk_order, self.matsubara_rtol / 2, self.matsubara_tail)

    def coarse(self) -> "QuadratureSettings":
        return QuadratureSettings(max(4, 2 * self.k_order // 3), max(4, 2 * self.xi_order // 3),
                                  max(4, 2 * self.u_order // 3), self.kk_order,
                                  self.matsubara_rtol * 100, self.matsubara_tail)


@dataclass(frozen=True)
class GradientResult:
    """Force gradient in N/m with bookkeeping.

    ``matsubara_terms_used`` is the number of frequency nodes for T = 0.
    """

    value: float
    matsubara_terms_used: int
    estimated_numerical_error: float
    corrections_applied: frozenset = field(default_factory=frozenset)


# --------------------------------------------------------------------------
# Small closed-form helpers
# --------------------------------------------------------------------------

def matsubara_frequency(l: int, temperature: float) -> float:
    """xi_l = 2 pi k_B T l / hbar in rad/s."""
    if l < 0 or not temperature > 0:
        raise ValueError("need l >= 0 and temperature > 0")
    return 2.0 * math.pi * KB * temperature * l / HBAR


def roughness_factor(a: float, delta_s: float, delta_g: float) -> float:
    if not a > 0:
        raise ValueError("separation must be > 0")
    return 1.0 + 10.0 * (delta_s**2 + delta_g**2) / a**2


def pfa_lower_bound_factor(a: float, R: float) -> float:
    if not 0 < a < R:
        raise ValueError("need 0 < a < R")
    return 1.0 - a / R


def characteristic_scales(a: float, temperature: float, vf_ratio: float = DEFAULT_VF_RATIO) -> dict:
    """Effective temperatures, thermal photon wavelength and hbar c/(2a)."""
    if not (a > 0 and temperature > 0):
        raise ValueError("need a > 0 and temperature > 0")
    return {
        "T_eff": HBAR * C / (2 * a * KB),
        "T_eff_graphene": HBAR * vf_ratio * C / (2 * a * KB),
        "lambda_T": 2 * math.pi * HBAR * C / (KB * temperature),
        "hbar_omega_c": HBAR * C / (2 * a) / E_CHARGE,
    }


def chemical_potential_from_density(n: float, vf_ratio: float = DEFAULT_VF_RATIO) -> float:
    """mu = hbar v_F sqrt(pi n) in eV for a carrier density n in 1/m^2."""
    if n < 0:
        raise ValueError("carrier density must be >= 0")
    return HBAR * vf_ratio * C * math.sqrt(math.pi * n) / E_CHARGE


def channel_term(rr, y):
    """Integrand of one polarization: [ (rR)^-1 e^{y} - 1 ]^-1, zero-safe."""
    e = rr * np.exp(-y)
    return e / (1.0 - e)


# --------------------------------------------------------------------------
# Frequency terms
# --------------------------------------------------------------------------

@functools.lru_cache(maxsize=16)
def _k_rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = _K_EDGES[:-1], _K_EDGES[1:]
    half = 0.5 * (hi - lo)
    t = ((0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return t, wt


@functools.lru_cache(maxsize=16)
def _xi_rule(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = _XI_EDGES[:-1], _XI_EDGES[1:]
    half = 0.5 * (hi - lo)
    t = ((0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return t, wt


def _frequency_term(xi, eps1, eps2, spec: SystemSpec, tensor_temperature, settings):
    """int_0^inf q k dk sum_alpha f_alpha at one imaginary frequency, in 1/m^3."""
    a = spec.geometry.separation
    y0 = 2.0 * a * xi / C
    t, wt = _k_rule(settings.k_order)
    y = y0 + t
    k = np.sqrt(t * (2.0 * y0 + t)) / (2.0 * a)
    r_tm, r_te = metal_coefficients(xi, k, eps1)
    if spec.graphene is None:
        pi00 = pi = np.zeros_like(k)
    else:
        pi00, pi = tensor_batch(xi, k, spec.graphene, tensor_temperature, "full", settings.u_order)
    R_tm, R_te = plate_coefficients(xi, k, eps2, pi00, pi)
    f = channel_term(r_tm * R_tm, y) + channel_term(r_te * R_te, y)
    return float(np.dot(wt, y * y * f)) / (2.0 * a) ** 3


def _matsubara_sum(spec: SystemSpec, tensor_temperature, settings):
    T = spec.temperature
    a = spec.geometry.separation
    xi1 = matsubara_frequency(1, T)
    l_cap = 4 * math.ceil(20.0 * (C / (2 * a)) / xi1)
    total = 0.0
    small = 0
    for l in range(l_cap + 1):
        xi = l * xi1
        e1 = materials.eps_at_matsubara(spec.metal, T, l, settings.kk_order)
        e2 = materials.eps_at_matsubara(spec.substrate, T, l, settings.kk_order)
        term = _frequency_term(xi, e1, e2, spec, tensor_temperature, settings)
        if l == 0:
            term *= 0.5
        total += term
        if abs(term) <= settings.matsubara_rtol * abs(total):
            small += 1
            if small >= settings.matsubara_tail:
                return 2.0 * KB * T * spec.geometry.sphere_radius * total, l + 1
        else:
            small = 0
    if total == 0.0:
        return 0.0, l_cap + 1
    raise ConvergenceError(f"Matsubara sum not converged within l_max={l_cap} at a={a!r} m")


def _zero_temperature_integral(spec: SystemSpec, settings):
    a = spec.geometry.separation
    xc = C / (2.0 * a)
    t, wt = _xi_rule(settings.xi_order)
    xis = xc * t / (1.0 - t)
    jac = xc / (1.0 - t) ** 2
    e1 = eps_imaginary_axis(spec.metal, xis, settings.kk_order)
    e2 = eps_imaginary_axis(spec.substrate, xis, settings.kk_order)
    vals = np.array([_frequency_term(float(x), float(p), float(s), spec, 0.0, settings)
                     for x, p, s in zip(xis, e1, e2)])
    return HBAR * spec.geometry.sphere_radius / math.pi * float(np.dot(wt * jac, vals)), xis.size


def _raw_gradient(spec: SystemSpec, settings: QuadratureSettings, tensor: str):
    if spec.temperature == 0:
        return _zero_temperature_integral(spec, settings)
    tensor_t = spec.temperature if tensor == "thermal" else 0.0
    return _matsubara_sum(spec, tensor_t, settings)


def force_gradient(spec: SystemSpec, settings: QuadratureSettings = QuadratureSettings(),
                   tensor: str = "thermal", estimate_error: bool = True) -> GradientResult:
    """Uncorrected PFA force gradient F'(a, T) in N/m.

    ``tensor="zero_t"`` keeps the Matsubara sum at ``spec.temperature`` but
    uses the zero-temperature polarization tensor at every frequency.  The
    error estimate is the change against the refined rule set (all node
    counts doubled, tail tolerance halved).
    """
    if tensor not in ("thermal", "zero_t"):
        raise ValueError(f"unknown tensor mode {tensor!r}")
    value, n = _raw_gradient(spec, settings, tensor)
    err = math.nan
    if estimate_error:
        err = abs(value - _raw_gradient(spec, settings.refined(), tensor)[0])
    return GradientResult(value, n, err, frozenset())


def corrected_gradient(spec: SystemSpec, settings: QuadratureSettings = QuadratureSettings(),
                       estimate_error: bool = True) -> GradientResult:
    """force_gradient times the roughness factor."""
    g = spec.geometry
    res = force_gradient(spec, settings, estimate_error=estimate_error)
    f = roughness_factor(g.separation, g.roughness_sphere, g.roughness_plate)
    return GradientResult(res.value * f, res.matsubara_terms_used, res.estimated_numerical_error * f,
                          frozenset({"roughness"}))


# --------------------------------------------------------------------------
# Bands and thermal analysis
# --------------------------------------------------------------------------

def theory_band(spec: SystemSpec, a: Optional[float] = None,
                settings: QuadratureSettings = QuadratureSettings(),
                padding: float = 0.0) -> tuple:
    """(lower, upper) theory lines in N/m at separation ``a``.

    Upper: mu = 0.25 eV, delta = 0.  Lower: mu = 0.23 eV, delta = 0.2 eV,
    times (1 - a/R).  Both carry the roughness factor.  ``padding`` widens
    the band by that fraction on each side.
    """
    s = spec if a is None else spec.at(a)
    g = s.geometry
    upper = corrected_gradient(s.with_graphene(*UPPER_EDGE), settings, estimate_error=False).value
    lower = corrected_gradient(s.with_graphene(*LOWER_EDGE), settings, estimate_error=False).value
    lower *= pfa_lower_bound_factor(g.separation, g.sphere_radius)
    return lower * (1.0 - padding), upper * (1.0 + padding)


def _central(spec: SystemSpec) -> SystemSpec:
    return spec if spec.graphene is not None else spec.with_graphene(CENTRAL_MU, CENTRAL_DELTA)


def thermal_fraction(spec: SystemSpec, a: Optional[float] = None,
                     settings: QuadratureSettings = QuadratureSettings()) -> float:
    """[F'(a, T) - F'(a, 0)] / F'(a, T); central graphene parameters if none set."""
    s = _central(spec if a is None else spec.at(a))
    if not s.temperature > 0:
        raise ValueError("thermal fraction needs temperature > 0")
    ft = force_gradient(s, settings, estimate_error=False).value
    f0 = force_gradient(replace(s, temperature=0.0), settings, estimate_error=False).value
    return (ft - f0) / ft


@dataclass(frozen=True)
class ThermalDecomposition:
    """Split of the thermal correction into Matsubara-sampling and tensor parts."""

    gradient_T: float
    gradient_0: float
    gradient_hybrid: float
    thermal_fraction: float
    implicit_fraction: float
    explicit_fraction: float


def matsubara_decomposition(spec: SystemSpec, a: Optional[float] = None,
                            settings: QuadratureSettings = QuadratureSettings()) -> ThermalDecomposition:
    """Fractions of F'(T) - F'(0) due to frequency sampling and to the tensor's T.

    The hybrid gradient uses the Matsubara sum at T with the zero-temperature
    tensor; implicit = (hybrid - F'(0)) / (F'(T) - F'(0)).
    """
    s = _central(spec if a is None else spec.at(a))
    if not s.temperature > 0:
        raise ValueError("decomposition needs temperature > 0")
    ft = force_gradient(s, settings, estimate_error=False).value
    f0 = force_gradient(replace(s, temperature=0.0), settings, estimate_error=False).value
    fh = force_gradient(s, settings, tensor="zero_t", estimate_error=False).value
    implicit = (fh - f0) / (ft - f0)
    return ThermalDecomposition(ft, f0, fh, (ft - f0) / ft, implicit, 1.0 - implicit)


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

def _sweep_task(args):
    kind, spec, settings, extra = args
    if kind == "gradient":
        return corrected_gradient(spec, settings, estimate_error=extra)
    if kind == "band":
        return theory_band(spec, None, settings, extra)
    if kind == "decompose":
        return matsubara_decomposition(spec, None, settings)
    raise ValueError(kind)


def sweep(kind: str, spec: SystemSpec, separations: Sequence[float],
          settings: QuadratureSettings = QuadratureSettings(), extra=None, workers: int = 1) -> list:
    """Evaluate ``kind`` ("gradient", "band", "decompose") at each separation.

    With ``workers > 1`` separations are farmed out to processes; results are
    returned in input order and are identical to the serial run.
    """
    tasks = [(kind, spec.at(a), settings, extra) for a in separations]
    if workers <= 1 or len(tasks) <= 1:
        return [_sweep_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_task, tasks))
