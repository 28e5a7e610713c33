import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from casimir_graphene import calibration as K
from casimir_graphene.constants import EPS0

R = 60.35e-6
TRUTH = K.CalibrationTruth()


def capacitance(a, R):
    alpha = math.acosh(1 + a / R)
    n = np.arange(1, int(700 / alpha))
    return 4 * math.pi * EPS0 * R * math.sinh(alpha) * np.sum(1.0 / np.sinh(n * alpha))


def coarse_grid(step=10e-9):
    return K.default_grid(step=step)


def noiseless(drift_rate=0.0, grid=None):
    return K.synthesize_dataset(TRUTH, K.casimir_standin, K.default_voltages(), 0.0,
                                coarse_grid() if grid is None else grid, R, drift_rate=drift_rate)


# --------------------------------------------------------------------------
# Electrostatics
# --------------------------------------------------------------------------

def test_zero_voltage_difference_gives_zero():
    assert K.electrostatic_gradient(300e-9, R, 0.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(100e-9, 2e-6))
def test_even_in_voltage(v, a):
    assert K.electrostatic_gradient(a, R, v) == K.electrostatic_gradient(a, R, -v)


def test_proximity_limit():
    a = 1e-4 * R
    assert K.electrostatic_coefficient_gradient(a, R) == pytest.approx(math.pi * EPS0 * R / a**2, rel=2e-3)
    assert K.electrostatic_force_coefficient(a, R) == pytest.approx(-math.pi * EPS0 * R / a, rel=2e-3)


@pytest.mark.parametrize("a", [250e-9, 590e-9, 5e-6])
def test_force_is_half_capacitance_derivative(a):
    h = 1e-4 * a
    dc = (capacitance(a + h, R) - capacitance(a - h, R)) / (2 * h)
    assert K.electrostatic_force_coefficient(a, R) == pytest.approx(0.5 * dc, rel=1e-6)


@pytest.mark.parametrize("a", [250e-9, 400e-9, 590e-9])
def test_analytic_derivative_matches_finite_difference(a):
    h = 1e-5 * a
    fd = (K.electrostatic_force_coefficient(a + h, R) - K.electrostatic_force_coefficient(a - h, R)) / (2 * h)
    assert K.electrostatic_coefficient_gradient(a, R) == pytest.approx(fd, rel=1e-8)


@pytest.mark.parametrize("a_over_r", [1e-4, 1e-3, 1e-2, 0.5])
def test_series_truncation(a_over_r):
    a = a_over_r * R
    alpha = math.acosh(1 + a_over_r)
    n = K._series_length(alpha, K.SERIES_RTOL)
    base = K.electrostatic_coefficient_gradient(a, R)
    assert K.electrostatic_coefficient_gradient(a, R, n_terms=2 * n) == pytest.approx(base, rel=1e-10)


def test_vectorised_matches_scalar():
    a = np.array([250e-9, 300e-9, 590e-9])
    vec = K.electrostatic_coefficient_gradient(a, R)
    assert [K.electrostatic_coefficient_gradient(x, R) for x in a] == list(vec)


def test_geometry_errors():
    for a in (0.0, R, 2 * R):
        with pytest.raises(ValueError):
            K.electrostatic_gradient(a, R, 0.1)


def test_interpolant_matches_series():
    f = K.gradient_interpolant(R, 200e-9, 650e-9)
    a = np.linspace(210e-9, 640e-9, 17)
    assert np.max(np.abs(f(a) / K.electrostatic_coefficient_gradient(a, R) - 1)) < 1e-11


# --------------------------------------------------------------------------
# Parabola fits
# --------------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=25, unique=True),
       st.floats(-1.0, 1.0), st.floats(-1e4, -1e-2), st.floats(-100.0, 100.0))
def test_parabola_exact_on_noiseless_data(vs, v0, c2, off):
    vs = np.array(vs)
    assume(np.min(np.abs(vs[:, None] - vs[None, :]) + np.eye(vs.size)) > 1e-3)
    fit = K.fit_parabola(np.column_stack([vs, c2 * (vs - v0) ** 2 + off]))
    assert fit.v0 == pytest.approx(v0, abs=1e-10)
    assert fit.curvature == pytest.approx(c2, rel=1e-10)


def test_vertex_at_residual_potential():
    vs = np.array(K.CALIBRATION_VOLTAGES)
    v0, c2, off = K.fit_parabola(np.column_stack([vs, -1.2e4 * (vs - 0.1324) ** 2 - 3.0]))
    assert v0 == pytest.approx(0.1324, rel=1e-13)
    assert c2 == pytest.approx(-1.2e4, rel=1e-12)
    assert off == pytest.approx(-3.0, rel=1e-10)


def test_symmetric_voltages_pure_quadratic():
    vs = np.linspace(-0.2, 0.2, 9)
    assert K.fit_parabola(np.column_stack([vs, -5.0 * vs**2])).v0 == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("pts", [
    [(0.1, 1.0), (0.2, 2.0)],
    [(0.1, 1.0), (0.1, 1.5), (0.2, 2.0), (0.2, 2.1)],
    [(0.1, 1.0), (0.2, 2.0), (0.3, 3.0), (0.4, 4.0)],
])
def test_degenerate_parabolas(pts):
    with pytest.raises(K.CalibrationError):
        K.fit_parabola(pts)


def test_v0_coverage_under_pll_noise():
    vs = np.array(K.default_voltages())
    c2 = -TRUTH.c_factor * K.electrostatic_coefficient_gradient(300e-9, R)
    clean = c2 * (vs - TRUTH.v0) ** 2
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(1000):
        fit = K.fit_parabola(np.column_stack([vs, clean + rng.normal(0, K.PLL_NOISE, vs.size)]),
                             sigma=K.PLL_NOISE)
        hits += abs(fit.v0 - TRUTH.v0) <= 3 * fit.v0_sigma
    # 3 sigma covers 99.73%; 985 is over four binomial sigmas below that
    assert hits >= 985


# --------------------------------------------------------------------------
# Drift line
# --------------------------------------------------------------------------

def test_constant_series_is_flat():
    line = K.drift_line_fit([(a, 0.1324) for a in np.linspace(250e-9, 590e-9, 35)])
    assert line.theta == pytest.approx(0.0, abs=1e-12)
    assert line.d == pytest.approx(0.1324, rel=1e-13)


def test_two_points_interpolate():
    line = K.drift_line_fit([(250e-9, 0.13), (590e-9, 0.12)])
    assert line.theta == pytest.approx(-0.01 / 340e-9, rel=1e-12)
    assert line.d + line.theta * 250e-9 == pytest.approx(0.13, rel=1e-12)


def test_single_separation_rejected():
    with pytest.raises(K.CalibrationError):
        K.drift_line_fit([(250e-9, 0.13), (250e-9, 0.14)])


def test_recovers_line_plus_noise():
    a = np.linspace(250e-9, 590e-9, 35)
    d, theta = 0.1326, -2.73e-7 / 1e-9
    rng = np.random.default_rng(3)
    line = K.drift_line_fit(np.column_stack([a, d + theta * a + rng.normal(0, 2e-5, a.size)]))
    assert abs(line.theta - theta) < 3 * line.theta_sigma
    assert line.d == pytest.approx(d, abs=1e-4)
    assert not line.flat


# --------------------------------------------------------------------------
# Full calibration
# --------------------------------------------------------------------------

@pytest.mark.parametrize("drift", [0.0, 0.05])
def test_zero_noise_round_trip(drift):
    res = K.calibrate(noiseless(drift), R)
    assert res.v0 == pytest.approx(TRUTH.v0, rel=1e-9)
    assert res.z0 == pytest.approx(TRUTH.z0, rel=1e-9)
    assert res.c_factor == pytest.approx(TRUTH.c_factor, rel=1e-9)
    assert res.drift_rate == pytest.approx(drift, abs=1e-9)
    assert len(res.v0_series) == len(coarse_grid())


def test_every_channel_gives_same_gradient():
    curves = noiseless()
    res = K.calibrate(curves, R)
    a = np.asarray(curves[0].z_piezo) + res.z0
    expected = K.casimir_standin(a)
    for c in curves:
        f = K.gradient_from_shift(np.asarray(c.delta_omega), c.applied_voltage, res, a, R)
        assert np.max(np.abs(f / expected - 1)) < 1e-9


def test_gradient_from_shift_at_v0():
    res = K.calibrate(noiseless(), R)
    assert K.gradient_from_shift(-2.0, res.v0, res, 300e-9, R) == pytest.approx(2.0 / res.c_factor, rel=1e-15)
    assert K.gradient_from_shift(0.0, res.v0, res, 300e-9, R) == 0.0


def test_constant_v0_gives_flat_drift():
    rng = np.random.default_rng(11)
    curves = K.synthesize_dataset(TRUTH, K.casimir_standin, K.default_voltages(), K.PLL_NOISE,
                                  coarse_grid(), R, seed=int(rng.integers(1 << 30)))
    res = K.calibrate(curves, R, sigma=K.PLL_NOISE)
    assert abs(res.drift[1]) * 340e-9 < 1e-3


def test_noisy_recovery_sigmas_are_sensible():
    curves = K.synthesize_dataset(TRUTH, K.casimir_standin, K.default_voltages(), K.PLL_NOISE,
                                  K.default_grid(), R, seed=5)
    res = K.calibrate(curves, R, sigma=K.PLL_NOISE)
    assert abs(res.z0 - TRUTH.z0) < 4 * res.z0_sigma
    assert abs(res.c_factor - TRUTH.c_factor) < 4 * res.c_factor_sigma


def test_spring_constant():
    assert K.spring_constant(6.1581e3, 4.599e5) == pytest.approx(6.695e-3, rel=1e-4)
    with pytest.raises(ValueError):
        K.spring_constant(0.0, 1.0)


def test_inconsistent_grids_rejected():
    curves = noiseless()
    other = K.synthesize_dataset(TRUTH, K.casimir_standin, [0.1], 0.0, coarse_grid(11e-9), R)
    with pytest.raises(K.CalibrationError):
        K.calibrate(curves[:-1] + other, R)


def test_too_few_curves_rejected():
    with pytest.raises(K.CalibrationError):
        K.calibrate(noiseless()[:2], R)


def test_result_invariants():
    with pytest.raises(K.CalibrationError):
        K.CalibrationResult(0.13, -1e-9, 1.0, (), (0.0, 0.0))
    with pytest.raises(K.CalibrationError):
        K.CalibrationResult(0.13, 1e-9, 0.0, (), (0.0, 0.0))


# --------------------------------------------------------------------------
# Synthesis and files
# --------------------------------------------------------------------------

def test_synthesis_is_deterministic():
    args = (TRUTH, K.casimir_standin, K.default_voltages(), K.PLL_NOISE, coarse_grid(), R)
    assert K.synthesize_dataset(*args, seed=4) == K.synthesize_dataset(*args, seed=4)
    assert K.synthesize_dataset(*args, seed=4) != K.synthesize_dataset(*args, seed=5)


def test_curve_at_v0_has_no_electrostatic_term():
    z = coarse_grid()
    curve = K.synthesize_dataset(TRUTH, K.casimir_standin, [TRUTH.v0], 0.0, z, R)[0]
    assert np.array_equal(np.asarray(curve.delta_omega), -TRUTH.c_factor * K.casimir_standin(z + TRUTH.z0))


def test_doubling_noise_doubles_v0_spread():
    vs = K.default_voltages()
    z = coarse_grid(100e-9)

    def spread(noise):
        v0 = []
        for seed in range(400):
            curves = K.synthesize_dataset(TRUTH, K.casimir_standin, vs, noise, z, R, seed=seed)
            y = np.array([c.delta_omega for c in curves])
            v0.append(K._fit_columns(np.array(vs), y)[0])
        return np.std(v0, axis=0)

    ratio = spread(2 * K.PLL_NOISE) / spread(K.PLL_NOISE)
    # same seeds, linear model: ratio is 2 up to the nonlinearity of the vertex
    assert np.all(np.abs(ratio - 2) < 0.05)


def test_negative_noise_rejected():
    with pytest.raises(ValueError):
        K.synthesize_dataset(TRUTH, K.casimir_standin, [0.1], -1.0, coarse_grid(), R)


@pytest.mark.parametrize("z, w", [((1.0,), (1.0,)), ((2.0, 1.0), (1.0, 1.0)), ((1.0, 2.0), (1.0,)),
                                  ((1.0, 2.0), (1.0, math.nan))])
def test_curve_validation(z, w):
    with pytest.raises(K.CalibrationError):
        K.ShiftCurve(0.1, z, w)


def test_json_round_trip():
    curves = noiseless(0.01)
    ds = K.dataset_from_json(K.dataset_to_json(curves, R, 0.0, TRUTH))
    assert ds.curves == tuple(curves)
    assert ds.truth == TRUTH and ds.sphere_radius == R and ds.errors == ()


def test_corrupt_curve_reported():
    doc = json.loads(K.dataset_to_json(noiseless(), R))
    doc["curves"][4]["z_piezo"][2] = doc["curves"][4]["z_piezo"][1]
    del doc["curves"][7]["delta_omega"]
    text = json.dumps(doc)
    with pytest.raises(K.CalibrationError):
        K.dataset_from_json(text)
    ds = K.dataset_from_json(text, strict=False)
    assert [i for i, _ in ds.errors] == [4, 7]
    res = K.calibrate(ds.curves, R)
    assert res.z0 == pytest.approx(TRUTH.z0, rel=1e-9)


def test_malformed_file():
    with pytest.raises(K.CalibrationError):
        K.dataset_from_json("{not json")
    with pytest.raises(K.CalibrationError):
        K.dataset_from_json('{"curves": []}')
