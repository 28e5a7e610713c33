"""Dielectric response on the imaginary frequency axis.

Materials are described either analytically (Drude metal, sum of Lorentz
oscillators) or by a table of the imaginary part of the permittivity versus
real photon energy.  Tabulated data are mapped onto the imaginary axis with
the dispersion (Kramers-Kronig) integral

    eps(i xi) = 1 + (2/pi) * int_0^inf  w Im eps(w) / (w^2 + xi^2) dw

using log-log interpolation between table rows and analytic tails outside
the tabulated range.

All photon energies and oscillator parameters are in eV; imaginary
frequencies ``xi`` passed to the public functions are in rad/s.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .constants import HBAR, E_CHARGE, KB

#: Value returned for eps(0) of a model whose static permittivity diverges
#: (Drude metals, ideal conductors).
INFINITE_STATIC = math.inf

_TWO_OVER_PI = 2.0 / math.pi
_MAX_LOG_PANEL = 0.5
DEFAULT_KK_ORDER = 16


class OpticalDataError(ValueError):
    """Raised for unreadable or inconsistent optical data."""


# --------------------------------------------------------------------------
# Data types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OpticalTable:
    """Imaginary part of the permittivity sampled at real photon energies.

    Rows are kept sorted by energy.  Use :meth:`from_points` to build a table
    from unsorted ``(energy_ev, im_eps)`` pairs.
    """

    energies: tuple
    im_eps: tuple
    material_label: str = ""

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        v = np.asarray(self.im_eps, dtype=float)
        if e.ndim != 1 or e.shape != v.shape:
            raise OpticalDataError("energies and im_eps must be 1-D and equally long")
        if e.size < 2:
            raise OpticalDataError(f"optical table needs at least 2 points, got {e.size}")
        if not np.all(np.isfinite(e)) or not np.all(np.isfinite(v)):
            raise OpticalDataError("optical table contains non-finite values")
        if np.any(e <= 0):
            raise OpticalDataError("photon energies must be positive")
        if np.any(np.diff(e) <= 0):
            raise OpticalDataError("photon energies must be strictly increasing")
        if np.any(v < 0):
            raise OpticalDataError("Im eps must be non-negative")
        object.__setattr__(self, "energies", tuple(float(x) for x in e))
        object.__setattr__(self, "im_eps", tuple(float(x) for x in v))

    @classmethod
    def from_points(cls, points: Iterable[Sequence[float]], material_label: str = "") -> "OpticalTable":
        pts = sorted((float(p[0]), float(p[1])) for p in points)
        if not pts:
            raise OpticalDataError("empty optical table")
        for (e0, _), (e1, _) in zip(pts, pts[1:]):
            if e0 == e1:
                raise OpticalDataError(f"duplicate photon energy {e0} eV")
        return cls(tuple(p[0] for p in pts), tuple(p[1] for p in pts), material_label)

    @property
    def points(self) -> list:
        return list(zip(self.energies, self.im_eps))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for e, v in zip(self.energies, self.im_eps):
            h.update(f"{e!r},{v!r};".encode())
        return h.hexdigest()


@dataclass(frozen=True)
class DrudeParams:
    plasma_energy: float
    relaxation_energy: float

    def __post_init__(self):
        if not self.plasma_energy > 0:
            raise ValueError("Drude plasma energy must be > 0")
        if not self.relaxation_energy >= 0:
            raise ValueError("Drude relaxation energy must be >= 0")


@dataclass(frozen=True)
class Oscillator:
    """Lorentz oscillator: strength in eV^2, resonance and damping in eV."""

    strength: float
    resonance: float
    damping: float

    def __post_init__(self):
        if not self.strength >= 0:
            raise ValueError("oscillator strength must be >= 0")
        if not self.resonance > 0:
            raise ValueError("oscillator resonance must be > 0")
        if not self.damping >= 0:
            raise ValueError("oscillator damping must be >= 0")


@dataclass(frozen=True)
class Drude:
    params: DrudeParams

    def absorption(self, omega_ev):
        wp, g = self.params.plasma_energy, self.params.relaxation_energy
        w = np.asarray(omega_ev, dtype=float)
        return wp * wp * g / (w * (w * w + g * g))

    def _eps(self, xi_ev):
        wp, g = self.params.plasma_energy, self.params.relaxation_energy
        with np.errstate(divide="ignore"):
            return 1.0 + wp * wp / (xi_ev * (xi_ev + g))


@dataclass(frozen=True)
class LorentzOscillators:
    oscillators: tuple

    def __post_init__(self):
        object.__setattr__(self, "oscillators", tuple(self.oscillators))
        for osc in self.oscillators:
            if not isinstance(osc, Oscillator):
                raise TypeError("LorentzOscillators expects Oscillator entries")

    def absorption(self, omega_ev):
        w = np.asarray(omega_ev, dtype=float)
        out = np.zeros_like(w)
        for o in self.oscillators:
            out = out + o.strength * o.damping * w / ((o.resonance**2 - w * w) ** 2 + (o.damping * w) ** 2)
        return out

    def _eps(self, xi_ev):
        out = np.ones_like(xi_ev)
        for o in self.oscillators:
            out = out + o.strength / (o.resonance**2 + xi_ev * xi_ev + o.damping * xi_ev)
        return out


@dataclass(frozen=True)
class Tabulated:
    """Tabulated absorption with extrapolations outside the table.

    ``low_freq_extrapolation`` is a :class:`DrudeParams` (metals), the string
    ``"constant"`` (Im eps held at its first tabulated value down to zero
    frequency) or ``None`` (no absorption below the table).  Above the table
    Im eps decays as ``w**-high_freq_tail`` matched at the last row.
    """

    table: OpticalTable
    low_freq_extrapolation: Union[DrudeParams, str, None] = None
    high_freq_tail: float = 3.0

    def __post_init__(self):
        lf = self.low_freq_extrapolation
        if not (lf is None or lf == "constant" or isinstance(lf, DrudeParams)):
            raise ValueError(f"unknown low-frequency extrapolation {lf!r}")
        if not self.high_freq_tail > 1.0:
            raise ValueError("high-frequency tail exponent must exceed 1")

    def absorption(self, omega_ev):
        w = np.atleast_1d(np.asarray(omega_ev, dtype=float))
        e = np.asarray(self.table.energies)
        v = np.asarray(self.table.im_eps)
        out = np.zeros_like(w)
        inside = (w >= e[0]) & (w <= e[-1])
        out[inside] = _interp_loglog(e, v, w[inside])
        below = w < e[0]
        lf = self.low_freq_extrapolation
        if isinstance(lf, DrudeParams):
            out[below] = Drude(lf).absorption(w[below])
        elif lf == "constant":
            out[below] = v[0]
        above = w > e[-1]
        out[above] = v[-1] * (e[-1] / w[above]) ** self.high_freq_tail
        return out if np.ndim(omega_ev) else float(out[0])


@dataclass(frozen=True)
class PerfectConductor:
    """Ideal metal: infinite permittivity at every frequency (oracle checks)."""

    def _eps(self, xi_ev):
        return np.full_like(xi_ev, INFINITE_STATIC)


PermittivityModel = Union[Drude, LorentzOscillators, Tabulated, PerfectConductor]


# --------------------------------------------------------------------------
# Table I/O
# --------------------------------------------------------------------------

_FORMATS = {
    "eps": ("energy_ev", "im_eps"),
    "nk": ("energy_ev", "n", "k"),
}


def load_optical_table(source, format: Optional[str] = None, material_label: str = "") -> OpticalTable:
    """Parse a CSV optical table.

    ``source`` may be bytes, a str holding the file contents, or a binary or
    text stream.  The first non-comment line is the header; it selects the
    format (``energy_ev,im_eps`` or ``energy_ev,n,k``) unless ``format`` is
    given, in which case the header must agree with it.  For n/k data
    Im eps = 2 n k.
    """
    if isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw

    rows = []
    header = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [f.strip() for f in next(csv.reader([stripped]))]
        if header is None:
            header = tuple(f.lower() for f in fields)
            detected = next((k for k, cols in _FORMATS.items() if cols == header), None)
            if detected is None:
                raise OpticalDataError(f"line {lineno}: unrecognised header {','.join(fields)!r}")
            if format is not None and format != detected:
                raise OpticalDataError(f"header declares format {detected!r}, expected {format!r}")
            format = detected
            continue
        if len(fields) != len(header):
            raise OpticalDataError(f"line {lineno}: expected {len(header)} columns, got {len(fields)}")
        try:
            vals = [float(f) for f in fields]
        except ValueError as exc:
            raise OpticalDataError(f"line {lineno}: {exc}") from None
        if format == "nk":
            n, k = vals[1], vals[2]
            if n < 0 or k < 0:
                raise OpticalDataError(f"line {lineno}: negative n or k")
            rows.append((vals[0], 2.0 * n * k))
        else:
            rows.append((vals[0], vals[1]))
    if header is None or not rows:
        raise OpticalDataError("empty optical table")
    return OpticalTable.from_points(rows, material_label)


def read_optical_table(path, format: Optional[str] = None, material_label: str = "") -> OpticalTable:
    with open(path, "rb") as fh:
        return load_optical_table(fh, format=format, material_label=material_label)


def dump_optical_table(table: OpticalTable) -> str:
    """Serialise to the two-column CSV format read by :func:`load_optical_table`."""
    buf = io.StringIO()
    if table.material_label:
        buf.write(f"# {table.material_label}\n")
    buf.write("energy_ev,im_eps\n")
    for e, v in table.points:
        buf.write(f"{e!r},{v!r}\n")
    return buf.getvalue()


def sample_table(name: str) -> OpticalTable:
    """Load one of the bundled sample tables (``"gold"`` or ``"silica"``)."""
    files = {"gold": "gold_sample.csv", "silica": "silica_sample.csv"}
    if name not in files:
        raise KeyError(f"no bundled table {name!r}; choose from {sorted(files)}")
    data = resources.files("casimir_graphene.data").joinpath(files[name]).read_bytes()
    return load_optical_table(data, material_label=name)


# --------------------------------------------------------------------------
# Bundled analytic models
# --------------------------------------------------------------------------

GOLD_DRUDE = DrudeParams(plasma_energy=9.0, relaxation_energy=0.035)


def gold_drude() -> Drude:
    """Drude model of Au with handbook plasma and relaxation energies."""
    return Drude(GOLD_DRUDE)


def silica_oscillators() -> LorentzOscillators:
    """Two-oscillator (IR + UV) fit of fused silica, eps(0) ~ 3.8."""
    return LorentzOscillators((
        Oscillator(strength=1.71 * 0.1237**2, resonance=0.1237, damping=0.0067),
        Oscillator(strength=1.098 * 13.38**2, resonance=13.38, damping=1.0),
    ))


# --------------------------------------------------------------------------
# Model (de)serialisation
# --------------------------------------------------------------------------

def model_to_dict(model: PermittivityModel) -> dict:
    if isinstance(model, Drude):
        return {"variant": "drude", "plasma_energy": model.params.plasma_energy,
                "relaxation_energy": model.params.relaxation_energy}
    if isinstance(model, LorentzOscillators):
        return {"variant": "lorentz",
                "oscillators": [[o.strength, o.resonance, o.damping] for o in model.oscillators]}
    if isinstance(model, PerfectConductor):
        return {"variant": "perfect_conductor"}
    if isinstance(model, Tabulated):
        lf = model.low_freq_extrapolation
        if isinstance(lf, DrudeParams):
            lf = {"plasma_energy": lf.plasma_energy, "relaxation_energy": lf.relaxation_energy}
        return {"variant": "tabulated", "material_label": model.table.material_label,
                "low_freq_extrapolation": lf, "high_freq_tail": model.high_freq_tail,
                "points": [list(p) for p in model.table.points],
                "table_checksum": model.table.checksum()}
    raise TypeError(f"not a permittivity model: {model!r}")


def model_from_dict(data: dict) -> PermittivityModel:
    variant = data.get("variant")
    if variant == "drude":
        return Drude(DrudeParams(data["plasma_energy"], data["relaxation_energy"]))
    if variant == "lorentz":
        return LorentzOscillators(tuple(Oscillator(*o) for o in data["oscillators"]))
    if variant == "perfect_conductor":
        return PerfectConductor()
    if variant == "tabulated":
        table = OpticalTable.from_points(data["points"], data.get("material_label", ""))
        expected = data.get("table_checksum")
        if expected is not None and expected != table.checksum():
            raise OpticalDataError("table checksum mismatch in serialised model")
        lf = data.get("low_freq_extrapolation")
        if isinstance(lf, dict):
            lf = DrudeParams(lf["plasma_energy"], lf["relaxation_energy"])
        return Tabulated(table, lf, data.get("high_freq_tail", 3.0))
    raise OpticalDataError(f"unknown model variant {variant!r}")


def dump_model_json(model: PermittivityModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=2)


def load_model_json(text: str) -> PermittivityModel:
    return model_from_dict(json.loads(text))


# --------------------------------------------------------------------------
# Evaluation on the imaginary axis
# --------------------------------------------------------------------------

def _interp_loglog(e, v, w):
    """Power-law interpolation of v(e) at w; linear where a row is zero."""
    idx = np.clip(np.searchsorted(e, w, side="right") - 1, 0, len(e) - 2)
    e0, e1, v0, v1 = e[idx], e[idx + 1], v[idx], v[idx + 1]
    pos = (v0 > 0) & (v1 > 0)
    out = v0 + (v1 - v0) * (w - e0) / (e1 - e0)
    if np.any(pos):
        p = np.log(v1[pos] / v0[pos]) / np.log(e1[pos] / e0[pos])
        out[pos] = v0[pos] * (w[pos] / e0[pos]) ** p
    return out


@functools.lru_cache(maxsize=64)
def _table_nodes(table: OpticalTable, order: int):
    """Quadrature nodes in s = ln(w) over the tabulated range.

    Returns (w, weight * w^2 * Im eps(w)) so that the tabulated part of the
    dispersion integral is sum(f / (w^2 + xi^2)).
    """
    e = np.asarray(table.energies)
    v = np.asarray(table.im_eps)
    x, wt = np.polynomial.legendre.leggauss(order)
    s_lo, s_hi = [], []
    for a, b in zip(np.log(e[:-1]), np.log(e[1:])):
        n = max(1, math.ceil((b - a) / _MAX_LOG_PANEL))
        edges = np.linspace(a, b, n + 1)
        s_lo.append(edges[:-1])
        s_hi.append(edges[1:])
    lo = np.concatenate(s_lo)
    hi = np.concatenate(s_hi)
    half = 0.5 * (hi - lo)
    s = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    ws = half[:, None] * wt[None, :]
    w = np.exp(s).ravel()
    f = ws.ravel() * w**2 * _interp_loglog(e, v, w)
    return w, f


def _drude_below(lf: DrudeParams, e1: float, xi):
    """(2/pi) int_0^e1 w Im eps_Drude(w) / (w^2 + xi^2) dw, xi in eV (array)."""
    wp2, g = lf.plasma_energy**2, lf.relaxation_energy
    xi = np.asarray(xi, dtype=float)
    out = np.empty_like(xi)
    zero = xi == 0
    out[zero] = INFINITE_STATIC
    nz = ~zero
    if g == 0:
        out[nz] = wp2 / xi[nz] ** 2
        return out
    x = xi[nz]

    def A(s):
        return np.arctan(e1 / s) / s

    near = np.abs(x - g) < 1e-6 * g
    res = np.empty_like(x)
    xf = x[~near]
    res[~near] = (A(g) - A(xf)) / (xf * xf - g * g)
    if np.any(near):
        dA = -e1 / (g * (g * g + e1 * e1)) - math.atan(e1 / g) / g**2
        res[near] = -dA / (2 * g)
    out[nz] = _TWO_OVER_PI * wp2 * g * res
    return out


def _constant_below(v0: float, e1: float, xi):
    xi = np.asarray(xi, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(xi == 0, INFINITE_STATIC, v0 / math.pi * np.log1p((e1 / np.where(xi == 0, 1.0, xi)) ** 2))


def _power_tail(vn: float, en: float, p: float, xi):
    """(2/pi) int_en^inf w * vn (en/w)^p / (w^2 + xi^2) dw, xi in eV."""
    xi = np.asarray(xi, dtype=float)
    if vn == 0:
        return np.zeros_like(xi)
    if p == 3.0:
        z = xi / en
        small = z < 1e-2
        out = np.empty_like(xi)
        zs = z[small] ** 2
        out[small] = (1 / 3 - zs / 5 + zs**2 / 7 - zs**3 / 9) / en**3
        zl = z[~small]
        xl = xi[~small]
        out[~small] = (1.0 / en - np.arctan(zl) / xl) / xl**2
        return _TWO_OVER_PI * vn * en**3 * out
    res = []
    for x in xi.ravel():
        val, _ = integrate.quad(lambda t: np.exp((2 - p) * t) / (np.exp(2 * t) + x * x),
                                math.log(en), math.inf, epsabs=0, epsrel=1e-12, limit=200)
        res.append(val)
    return _TWO_OVER_PI * vn * en**p * np.asarray(res).reshape(xi.shape)


def _tabulated_eps(model: Tabulated, xi_ev, order: int):
    tab = model.table
    w, f = _table_nodes(tab, order)
    xi_ev = np.asarray(xi_ev, dtype=float)
    flat = xi_ev.ravel()
    # chunk to bound memory for long xi vectors
    body = np.empty_like(flat)
    for start in range(0, flat.size, 256):
        x = flat[start:start + 256]
        body[start:start + 256] = (f[None, :] / (w[None, :] ** 2 + x[:, None] ** 2)).sum(axis=1)
    out = 1.0 + _TWO_OVER_PI * body
    e1, en = tab.energies[0], tab.energies[-1]
    lf = model.low_freq_extrapolation
    if isinstance(lf, DrudeParams):
        out = out + _drude_below(lf, e1, flat)
    elif lf == "constant":
        out = out + _constant_below(tab.im_eps[0], e1, flat)
    out = out + _power_tail(tab.im_eps[-1], en, model.high_freq_tail, flat)
    return out.reshape(xi_ev.shape)


def eps_imaginary_axis(model: PermittivityModel, xi, kk_order: int = DEFAULT_KK_ORDER):
    """Permittivity eps(i xi) for ``xi`` in rad/s (scalar or array).

    Returns :data:`INFINITE_STATIC` at ``xi == 0`` for models with a
    divergent static limit.
    """
    xi_arr = np.asarray(xi, dtype=float)
    if np.any(xi_arr < 0) or np.any(np.isnan(xi_arr)):
        raise ValueError("imaginary frequency must be >= 0")
    xi_ev = xi_arr * HBAR / E_CHARGE
    if isinstance(model, Tabulated):
        out = _tabulated_eps(model, xi_ev, kk_order)
    elif isinstance(model, (Drude, LorentzOscillators, PerfectConductor)):
        out = model._eps(xi_ev)
    else:
        raise TypeError(f"not a permittivity model: {model!r}")
    return float(out) if np.ndim(xi) == 0 else out


def matsubara_xi(temperature: float, l):
    """Matsubara frequency 2 pi k_B T l / hbar in rad/s."""
    return 2.0 * math.pi * KB * temperature * np.asarray(l) / HBAR


@functools.lru_cache(maxsize=1 << 16)
def _eps_matsubara_cached(model, temperature, l, kk_order):
    return eps_imaginary_axis(model, float(matsubara_xi(temperature, l)), kk_order)


def eps_at_matsubara(model: PermittivityModel, temperature: float, l: int,
                     kk_order: int = DEFAULT_KK_ORDER) -> float:
    """eps(i xi_l) at the l-th Matsubara frequency, memoised per model and T."""
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    if l < 0:
        raise ValueError("Matsubara index must be >= 0")
    return _eps_matsubara_cached(model, float(temperature), int(l), kk_order)


# --------------------------------------------------------------------------
# Independent numerical dispersion integral for analytic absorption profiles
# --------------------------------------------------------------------------

def kk_transform(absorption: Callable[[float], float], xi: float, scales: Sequence[float],
                 rtol: float = 1e-12) -> float:
    """eps(i xi) from a real-frequency absorption profile by adaptive quadrature.

    ``absorption`` maps photon energy (eV) to Im eps; ``scales`` lists the
    energies (eV) at which it has structure and is used to place breakpoints.
    ``xi`` is in rad/s and must be > 0.
    """
    if not xi > 0:
        raise ValueError("kk_transform needs xi > 0")
    x_ev = xi * HBAR / E_CHARGE
    marks = sorted({math.log(s) for s in list(scales) + [x_ev] if s > 0})
    lo, hi = marks[0] - 40.0, marks[-1] + 40.0
    edges = sorted({lo, hi, *marks, *(m + d for m in marks for d in (-3.0, 3.0))})
    edges = [s for s in edges if lo <= s <= hi]

    def integrand(s):
        w = math.exp(s)
        return w * w * float(absorption(w)) / (w * w + x_ev * x_ev)

    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(integrand, a, b, epsabs=0.0, epsrel=rtol, limit=500)
        total += val
    return 1.0 + _TWO_OVER_PI * total
