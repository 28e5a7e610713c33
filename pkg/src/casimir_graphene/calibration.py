"""Electrostatic calibration of a dynamic sphere-plate force measurement.

The frequency shift of the cantilever at piezo position z and applied
voltage V is modelled as

    delta_omega = -C [F'(z + z0) + (V - V0)^2 dX/da] (+ drift + noise),

where X(a, R) is the sphere-plane electrostatic force per squared volt.
For each z the shift is a downward parabola in V; its vertex gives V0 and
its curvature -C dX/da, from which (z0, C) follow by a global fit.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .constants import EPS0

#: Frequency-shift resolution of the phase-lock loop, rad/s.
PLL_NOISE = 55.3e-3
#: Ten calibration voltages, V; eleven more curves are taken at V0.
CALIBRATION_VOLTAGES = tuple(np.round(np.linspace(0.083, 0.183, 10), 6))
REPEATS_AT_V0 = 11
#: Piezo sampling step of the recorded curves, m.
PIEZO_STEP = 0.14e-9
SERIES_RTOL = 1e-12
DATASET_SCHEMA = 1


class CalibrationError(ValueError):
    """A fit was degenerate or the dataset is inconsistent."""


# --------------------------------------------------------------------------
# Electrostatics
# --------------------------------------------------------------------------

def _series_length(alpha: float, rtol: float) -> int:
    # terms decay like n^2 e^{-n alpha}; the sum scales like alpha^-3
    return int(math.ceil((math.log(1.0 / rtol) + 6.0 * math.log(1.0 + 1.0 / alpha) + 10.0) / alpha)) + 2


def _csch_coth(x):
    e = np.exp(-x)
    den = -np.expm1(-2.0 * x)
    return 2.0 * e / den, (1.0 + e * e) / den


def _x_and_derivative(a: np.ndarray, R: float, rtol: float, n_terms: Optional[int] = None):
    """X(a, R) in N/V^2 and dX/da, elementwise in a."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    alpha = 2.0 * np.arcsinh(np.sqrt(a / (2.0 * R)))  # cosh(alpha) = 1 + a/R
    x_out = np.empty_like(a)
    d_out = np.empty_like(a)
    for i, al in enumerate(alpha):
        n_max = n_terms or _series_length(al, rtol)
        n = np.arange(1, n_max + 1, dtype=float)
        cs_n, ct_n = _csch_coth(n * al)
        cs_1, ct_1 = _csch_coth(al)
        bracket = ct_1 - n * ct_n
        s = np.sum(cs_n * bracket)
        ds = np.sum(-n * cs_n * ct_n * bracket + cs_n * (-cs_1**2 + n * n * cs_n**2))
        x_out[i] = 2.0 * math.pi * EPS0 * s
        d_out[i] = 2.0 * math.pi * EPS0 * ds * cs_1 / R  # d alpha/da = 1/(R sinh alpha)
    return x_out, d_out


def electrostatic_force_coefficient(a, R: float, rtol: float = SERIES_RTOL):
    """X(a, R): sphere-plane electrostatic force per V^2 (negative, attractive)."""
    _check_geometry(a, R)
    x, _ = _x_and_derivative(a, R, rtol)
    return x if np.ndim(a) else float(x[0])


def electrostatic_coefficient_gradient(a, R: float, rtol: float = SERIES_RTOL,
                                       n_terms: Optional[int] = None):
    """dX/da in N/(m V^2), positive; ``n_terms`` overrides the truncation."""
    _check_geometry(a, R)
    _, d = _x_and_derivative(a, R, rtol, n_terms)
    return d if np.ndim(a) else float(d[0])


def electrostatic_gradient(a, R: float, volt_diff: float, rtol: float = SERIES_RTOL):
    """(V - V0)^2 dX/da for the exact sphere-plane capacitance series."""
    return volt_diff**2 * electrostatic_coefficient_gradient(a, R, rtol)


def _check_geometry(a, R):
    a = np.asarray(a, dtype=float)
    if not R > 0 or np.any(a <= 0) or np.any(a >= R):
        raise ValueError("need 0 < a < R")


# --------------------------------------------------------------------------
# Data types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftCurve:
    """Frequency shifts recorded along the piezo sweep at one applied voltage.

    ``times`` (s), if given, are the acquisition times used by the drift model.
    """

    applied_voltage: float
    z_piezo: tuple
    delta_omega: tuple
    times: Optional[tuple] = None

    def __post_init__(self):
        z = np.asarray(self.z_piezo, dtype=float)
        w = np.asarray(self.delta_omega, dtype=float)
        if z.ndim != 1 or z.size < 2 or w.shape != z.shape:
            raise CalibrationError("a curve needs >= 2 samples with matching z and delta_omega")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(w)) and math.isfinite(self.applied_voltage)):
            raise CalibrationError("curve contains non-finite values")
        if np.any(np.diff(z) <= 0):
            raise CalibrationError("z_piezo must be strictly increasing")
        if self.times is not None and len(self.times) != z.size:
            raise CalibrationError("times must match the number of samples")
        object.__setattr__(self, "z_piezo", tuple(float(v) for v in z))
        object.__setattr__(self, "delta_omega", tuple(float(v) for v in w))
        if self.times is not None:
            object.__setattr__(self, "times", tuple(float(v) for v in self.times))

    @property
    def samples(self):
        return list(zip(self.z_piezo, self.delta_omega))


@dataclass(frozen=True)
class ParabolaFit:
    """Vertex form of a fitted parabola plus diagnostics.

    ``v0_sigma`` and ``curvature_sigma`` are propagated from the residual
    scatter, or from ``sigma`` when the noise level is supplied.
    """

    v0: float
    curvature: float
    offset: float
    residual_rms: float
    v0_sigma: float
    curvature_sigma: float
    dof: int

    def __iter__(self):
        return iter((self.v0, self.curvature, self.offset))


@dataclass(frozen=True)
class DriftLine:
    d: float
    theta: float
    theta_sigma: float
    scatter: float
    flat: bool


@dataclass(frozen=True)
class CalibrationResult:
    """Calibration constants with the per-separation series they came from."""

    v0: float
    z0: float
    c_factor: float
    v0_series: tuple
    drift: tuple
    curvature_series: tuple = ()
    z0_sigma: float = math.nan
    c_factor_sigma: float = math.nan
    drift_rate: float = 0.0
    flat: bool = True

    def __post_init__(self):
        if not (self.c_factor > 0 and self.z0 > 0):
            raise CalibrationError("calibration produced non-positive z0 or C")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["v0_series"] = [list(p) for p in self.v0_series]
        d["curvature_series"] = [list(p) for p in self.curvature_series]
        d["drift"] = {"d": self.drift[0], "theta": self.drift[1]}
        return d


@dataclass(frozen=True)
class CalibrationTruth:
    v0: float = 0.1324
    z0: float = 236.9e-9
    c_factor: float = 4.599e5


# --------------------------------------------------------------------------
# Fits
# --------------------------------------------------------------------------

def _design(v):
    return np.column_stack([v * v, v, np.ones_like(v)])


def _fit_columns(v, y, sigma=None):
    """Least-squares parabolas for every column of y (rows follow v)."""
    v = np.asarray(v, dtype=float)
    if np.unique(v).size < 3:
        raise CalibrationError("need at least 3 distinct voltages")
    X = _design(v)
    # centre and scale voltages for conditioning, then map back
    vm, vs = v.mean(), np.ptp(v)
    Xs = _design((v - vm) / vs)
    coef_s, *_ = np.linalg.lstsq(Xs, y, rcond=None)
    b2, b1, b0 = coef_s
    c2 = b2 / vs**2
    c1 = b1 / vs - 2.0 * b2 * vm / vs**2
    c0 = b0 - b1 * vm / vs + b2 * vm**2 / vs**2
    resid = y - X @ np.vstack([c2, c1, c0])
    dof = v.size - 3
    if sigma is not None:
        s2 = np.full(np.shape(c2), float(sigma) ** 2)
    elif dof > 0:
        s2 = np.sum(resid**2, axis=0) / dof
    else:
        s2 = np.zeros(np.shape(c2))
    cov = np.linalg.inv(X.T @ X)
    v0 = -c1 / (2.0 * c2)
    g2, g1 = c1 / (2.0 * c2**2), -1.0 / (2.0 * c2)
    v0_var = s2 * (g2 * g2 * cov[0, 0] + 2 * g2 * g1 * cov[0, 1] + g1 * g1 * cov[1, 1])
    c2_sig = np.sqrt(s2 * cov[0, 0])
    offset = c0 - c1 * c1 / (4.0 * c2)
    rms = np.sqrt(np.mean(resid**2, axis=0))
    return v0, c2, offset, rms, np.sqrt(v0_var), c2_sig, dof


def fit_parabola(shift_at_fixed_piezo: Sequence, sigma: Optional[float] = None) -> ParabolaFit:
    """Fit delta_omega = c2 V^2 + c1 V + c0 to (V, delta_omega) pairs.

    Returns the vertex voltage, the curvature c2 and the vertex value.

    Raises
    ------
    CalibrationError
        Fewer than 3 distinct voltages, or a curvature indistinguishable
        from zero.
    """
    pts = np.asarray(shift_at_fixed_piezo, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise CalibrationError("expected (voltage, delta_omega) pairs")
    v0, c2, off, rms, v0s, c2s, dof = (np.ravel(x)[0] if np.ndim(x) else x
                                       for x in _fit_columns(pts[:, 0], pts[:, 1:2], sigma))
    _check_curvature(c2, c2s)
    return ParabolaFit(float(v0), float(c2), float(off), float(rms), float(v0s), float(c2s), dof)


def _check_curvature(c2, c2_sigma):
    c2 = np.atleast_1d(c2)
    scale = np.max(np.abs(c2)) if c2.size else 0.0
    bad = (np.abs(c2) <= 3.0 * np.atleast_1d(c2_sigma)) | (np.abs(c2) <= 1e-13 * max(scale, 1e-300))
    if np.any(bad):
        raise CalibrationError(f"curvature consistent with zero at {int(np.argmax(bad))} (index)")


def drift_line_fit(series: Sequence) -> DriftLine:
    """Ordinary least-squares line v0 = d + theta a.

    ``flat`` reports whether the slope is within two standard errors of zero
    (for two points: whether it is exactly zero).
    """
    pts = np.asarray(series, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or np.unique(pts[:, 0]).size < 2:
        raise CalibrationError("need >= 2 distinct separations")
    a, v = pts[:, 0], pts[:, 1]
    am = a.mean()
    sxx = np.sum((a - am) ** 2)
    theta = float(np.sum((a - am) * (v - v.mean())) / sxx)
    d = float(v.mean() - theta * am)
    resid = v - (d + theta * a)
    dof = a.size - 2
    if dof > 0:
        scatter = float(np.sqrt(np.sum(resid**2) / dof))
        theta_sigma = scatter / math.sqrt(sxx)
        flat = abs(theta) <= 2.0 * theta_sigma
    else:
        scatter, theta_sigma, flat = 0.0, math.nan, theta == 0.0
    return DriftLine(d, theta, theta_sigma, scatter, bool(flat))


def _grid_matrix(curves: Sequence[ShiftCurve]):
    if len(curves) < 3:
        raise CalibrationError("need at least 3 curves")
    z = np.asarray(curves[0].z_piezo)
    for i, c in enumerate(curves):
        if len(c.z_piezo) != z.size or not np.array_equal(np.asarray(c.z_piezo), z):
            raise CalibrationError(f"curve {i} does not share the piezo grid of curve 0")
    v = np.array([c.applied_voltage for c in curves])
    y = np.array([c.delta_omega for c in curves])
    times = None
    if all(c.times is not None for c in curves):
        times = np.array([c.times for c in curves])
    return z, v, y, times


def _remove_drift(v, y, times):
    """Joint fit of per-column parabolas and one global linear-in-time drift."""
    X = _design(v)
    Q, _ = np.linalg.qr(X)
    proj = lambda m: m - Q @ (Q.T @ m)
    rt, ry = proj(times), proj(y)
    denom = np.sum(rt * rt)
    rate = float(np.sum(rt * ry) / denom) if denom > 0 else 0.0
    return y - rate * times, rate


def gradient_interpolant(R: float, a_lo: float, a_hi: float, tol: float = 1e-12):
    """Chebyshev surrogate for dX/da on [a_lo, a_hi], built from the exact series.

    The smooth function a^2 dX/da is interpolated in ln a; the degree is
    raised until off-node checks agree with the series to ``tol``.
    """
    _check_geometry(np.array([a_lo, a_hi]), R)
    dom = [math.log(a_lo), math.log(a_hi)]
    f = lambda x: np.exp(2 * x) * electrostatic_coefficient_gradient(np.exp(x), R)
    probe = np.linspace(dom[0], dom[1], 37)[1:-1:2]
    exact = f(probe)
    for deg in (16, 24, 32, 48, 64):
        cheb = np.polynomial.Chebyshev.interpolate(f, deg, domain=dom)
        if np.max(np.abs(cheb(probe) / exact - 1.0)) <= tol:
            return lambda a: cheb(np.log(a)) / np.asarray(a) ** 2
    raise CalibrationError("electrostatic interpolant did not reach its tolerance")


def _fit_z0_c(z, c2, R):
    """Least-squares (z0, C) with curvature(z) = -C dX/da(z + z0)."""
    # proximity start: (-c2)^(-1/2) = (z + z0) / sqrt(C pi eps0 R)
    mask = c2 < 0
    if mask.sum() < 2:
        raise CalibrationError("need at least two negative curvatures")
    s, b = np.polyfit(z[mask], (-c2[mask]) ** -0.5, 1)
    if not s > 0:
        raise CalibrationError("curvature does not fall with separation")
    z0_start = b / s
    c_start = 1.0 / (s * s * math.pi * EPS0 * R)
    a_near = z.min() + z0_start
    if not (0 < a_near and z.max() + z0_start < R):
        raise CalibrationError("proximity start gives unphysical separations")
    # the fit may move z0 by at most a quarter of the closest separation
    span = 0.25 * a_near
    dxda = gradient_interpolant(R, a_near - span, z.max() + z0_start + span)
    zs, cs = 1e-9, 1e5
    scale = np.max(np.abs(c2))

    def resid(p):
        return (-p[1] * cs * dxda(z + p[0] * zs) - c2) / scale

    lo, hi = (z0_start - span) / zs, (z0_start + span) / zs
    sol = least_squares(resid, [z0_start / zs, c_start / cs], method="trf", x_scale="jac",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, bounds=([lo, 0.0], [hi, np.inf]),
                        max_nfev=200)
    if not lo < sol.x[0] < hi:
        raise CalibrationError("z0 fit ran into its search bounds")
    z0, cf = sol.x[0] * zs, sol.x[1] * cs
    sig = (math.nan, math.nan)
    dof = z.size - 2
    if dof > 0:
        J = sol.jac
        s2 = np.sum(sol.fun**2) / dof
        try:
            cov = np.linalg.inv(J.T @ J) * s2
            sig = (math.sqrt(cov[0, 0]) * zs, math.sqrt(cov[1, 1]) * cs)
        except np.linalg.LinAlgError:
            pass
    return z0, cf, sig


def calibrate(dataset: Sequence[ShiftCurve], R: float, sigma: Optional[float] = None,
              fit_drift: Optional[bool] = None) -> CalibrationResult:
    """Extract V0, z0 and C from curves recorded at several voltages.

    Parameters
    ----------
    dataset : sequence of ShiftCurve
        All curves must share one piezo grid.
    R : float
        Sphere radius, m.
    sigma : float, optional
        Known noise of delta_omega, used for the uncertainty diagnostics.
    fit_drift : bool, optional
        Remove a common linear-in-time drift; defaults to True when every
        curve carries acquisition times.
    """
    z, v, y, times = _grid_matrix(dataset)
    if fit_drift is None:
        fit_drift = times is not None
    rate = 0.0
    if fit_drift:
        if times is None:
            raise CalibrationError("drift fit needs acquisition times on every curve")
        y, rate = _remove_drift(v, y, times)
    v0_z, c2, _, _, _, c2_sig, _ = _fit_columns(v, y, sigma)
    _check_curvature(c2, c2_sig)
    z0, cf, (z0_sig, cf_sig) = _fit_z0_c(z, c2, R)
    a = z + z0
    line = drift_line_fit(np.column_stack([a, v0_z]))
    return CalibrationResult(
        v0=float(np.mean(v0_z)), z0=float(z0), c_factor=float(cf),
        v0_series=tuple((float(ai), float(vi)) for ai, vi in zip(a, v0_z)),
        drift=(line.d, line.theta),
        curvature_series=tuple((float(ai), float(ci)) for ai, ci in zip(a, c2)),
        z0_sigma=z0_sig, c_factor_sigma=cf_sig, drift_rate=rate, flat=line.flat)


def gradient_from_shift(delta_omega, v_applied, calib: CalibrationResult, a, R: float):
    """Casimir force gradient F' = -delta_omega/C - (V - V0)^2 dX/da, N/m."""
    return -np.asarray(delta_omega) / calib.c_factor - electrostatic_gradient(a, R, v_applied - calib.v0)


def spring_constant(omega0: float, c_factor: float) -> float:
    """k = omega0 / (2 C) in N/m."""
    if not (omega0 > 0 and c_factor > 0):
        raise ValueError("omega0 and C must be > 0")
    return omega0 / (2.0 * c_factor)


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------

def default_voltages(v0: float = CalibrationTruth.v0) -> list:
    return list(CALIBRATION_VOLTAGES) + [v0] * REPEATS_AT_V0


def default_grid(z0: float = CalibrationTruth.z0, a_min: float = 250e-9, a_max: float = 590e-9,
                 step: float = PIEZO_STEP) -> np.ndarray:
    n = int(round((a_max - a_min) / step))
    return a_min - z0 + step * np.arange(n + 1)


def casimir_standin(a):
    """Smooth stand-in for F'(a) in N/m (a power law close to the graphene result)."""
    return 2.454e-5 * (np.asarray(a) / 250e-9) ** -3.7


def synthesize_dataset(truth: CalibrationTruth, forces: Callable, voltages: Sequence[float],
                       noise: float, grid: Sequence[float], R: float, seed: int = 0,
                       drift_rate: float = 0.0, dwell: float = 0.01) -> list:
    """Shift curves from the calibration model plus Gaussian noise.

    Curves are acquired in the order of ``voltages``, one sample every
    ``dwell`` seconds; ``drift_rate`` (rad/s per s) adds a linear-in-time
    offset and attaches the acquisition times to every curve.
    """
    if noise < 0:
        raise ValueError("noise must be >= 0")
    z = np.asarray(grid, dtype=float)
    a = z + truth.z0
    dxda = electrostatic_coefficient_gradient(a, R)
    fc = np.asarray(forces(a), dtype=float)
    rng = np.random.default_rng(seed)
    curves = []
    for i, v in enumerate(voltages):
        w = -truth.c_factor * (fc + (v - truth.v0) ** 2 * dxda)
        if noise > 0:
            w = w + rng.normal(0.0, noise, z.size)
        times = None
        if drift_rate:
            times = dwell * (i * z.size + np.arange(z.size))
            w = w + drift_rate * times
        curves.append(ShiftCurve(float(v), tuple(z), tuple(w), None if times is None else tuple(times)))
    return curves


# --------------------------------------------------------------------------
# Dataset files
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    curves: tuple
    sphere_radius: float
    noise: Optional[float] = None
    truth: Optional[CalibrationTruth] = None
    errors: tuple = field(default_factory=tuple)


def dataset_to_json(curves: Sequence[ShiftCurve], sphere_radius: float, noise: Optional[float] = None,
                    truth: Optional[CalibrationTruth] = None) -> str:
    doc = {
        "schema": DATASET_SCHEMA,
        "sphere_radius": sphere_radius,
        "noise": noise,
        "truth": None if truth is None else asdict(truth),
        "curves": [
            {"voltage": c.applied_voltage, "z_piezo": list(c.z_piezo),
             "delta_omega": list(c.delta_omega),
             **({"times": list(c.times)} if c.times is not None else {})}
            for c in curves
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def dataset_from_json(text: str, strict: bool = True) -> Dataset:
    """Parse a dataset file.

    With ``strict=False`` malformed curves are skipped and reported in
    ``Dataset.errors`` as ``(index, message)`` pairs.
    """
    try:
        doc = json.loads(text)
        raw = doc["curves"]
        radius = float(doc["sphere_radius"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CalibrationError(f"malformed dataset: {exc}") from exc
    curves, errors = [], []
    for i, c in enumerate(raw):
        try:
            curves.append(ShiftCurve(float(c["voltage"]), tuple(c["z_piezo"]), tuple(c["delta_omega"]),
                                     tuple(c["times"]) if "times" in c else None))
        except (CalibrationError, KeyError, TypeError, ValueError) as exc:
            if strict:
                raise CalibrationError(f"curve {i}: {exc}") from exc
            errors.append((i, str(exc)))
    truth = doc.get("truth")
    return Dataset(tuple(curves), radius, doc.get("noise"),
                   None if truth is None else CalibrationTruth(**truth), tuple(errors))
