import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from casimir_graphene import materials as M
from casimir_graphene.constants import E_CHARGE, HBAR

LOG_GRID = np.geomspace(1e11, 1e18, 60)


def ev(xi):
    return xi * HBAR / E_CHARGE


# --------------------------------------------------------------------------
# Tables and I/O
# --------------------------------------------------------------------------

def test_from_points_sorts_and_rejects_duplicates():
    t = M.OpticalTable.from_points([(2.0, 1.0), (1.0, 3.0)])
    assert t.energies == (1.0, 2.0)
    assert t.im_eps == (3.0, 1.0)
    with pytest.raises(M.OpticalDataError):
        M.OpticalTable.from_points([(1.0, 1.0), (1.0, 2.0)])


@pytest.mark.parametrize("energies, values", [
    ((1.0,), (1.0,)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((1.0, 2.0), (-1.0, 1.0)),
    ((2.0, 1.0), (1.0, 1.0)),
    ((1.0, math.nan), (1.0, 1.0)),
])
def test_table_validation(energies, values):
    with pytest.raises(M.OpticalDataError):
        M.OpticalTable(energies, values)


def test_nk_format_gives_twice_nk():
    t = M.load_optical_table("# comment\nenergy_ev,n,k\n1.0,2.0,0.5\n2.0,1.5,0.1\n")
    assert t.im_eps == (2.0, pytest.approx(0.3))


@pytest.mark.parametrize("text", [
    "energy,im\n1,2\n",
    "energy_ev,im_eps\n1,2,3\n",
    "energy_ev,im_eps\n1,abc\n",
    "energy_ev,im_eps\n",
    "energy_ev,n,k\n1,-1,0.2\n2,1,1\n",
])
def test_malformed_tables_raise(text):
    with pytest.raises(M.OpticalDataError):
        M.load_optical_table(text)


def test_format_must_match_header():
    with pytest.raises(M.OpticalDataError):
        M.load_optical_table("energy_ev,im_eps\n1,2\n2,3\n", format="nk")


def test_stream_and_bytes_sources():
    text = "energy_ev,im_eps\n1,2\n2,3\n"
    a = M.load_optical_table(io.BytesIO(text.encode()))
    b = M.load_optical_table(text.encode())
    assert a.points == b.points == [(1.0, 2.0), (2.0, 3.0)]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(1e-3, 1e3), st.floats(0, 1e4)), min_size=2, max_size=30,
                unique_by=lambda p: p[0]))
def test_dump_then_load_is_identity(points):
    t = M.OpticalTable.from_points(points, "x")
    again = M.load_optical_table(M.dump_optical_table(t))
    assert sorted(again.points) == sorted(t.points)
    assert again.checksum() == t.checksum()


def test_sample_tables_load():
    assert len(M.sample_table("gold").energies) == 64
    assert M.sample_table("silica").energies[0] > 0
    with pytest.raises(KeyError):
        M.sample_table("copper")


def test_model_json_round_trip_and_checksum():
    models = [M.gold_drude(), M.silica_oscillators(), M.PerfectConductor(),
              M.Tabulated(M.sample_table("gold"), M.GOLD_DRUDE), M.Tabulated(M.sample_table("silica"), "constant")]
    for m in models:
        assert M.load_model_json(M.dump_model_json(m)) == m
    d = M.model_to_dict(models[3])
    d["points"][3][1] *= 1.001
    with pytest.raises(M.OpticalDataError):
        M.model_from_dict(d)


# --------------------------------------------------------------------------
# Imaginary-axis permittivity
# --------------------------------------------------------------------------

def test_drude_closed_form():
    xi = 1e15
    x = ev(xi)
    assert M.eps_imaginary_axis(M.gold_drude(), xi) == pytest.approx(1 + 81.0 / (x * (x + 0.035)), rel=1e-14)


def test_lorentz_closed_form():
    m = M.LorentzOscillators((M.Oscillator(4.0, 2.0, 0.5),))
    x = ev(3e15)
    assert M.eps_imaginary_axis(m, 3e15) == pytest.approx(1 + 4.0 / (4.0 + x * x + 0.5 * x), rel=1e-14)


@pytest.mark.parametrize("model", [
    M.gold_drude(), M.silica_oscillators(),
    M.Tabulated(M.sample_table("gold"), M.GOLD_DRUDE),
    M.Tabulated(M.sample_table("silica")),
    M.Tabulated(M.sample_table("silica"), "constant"),
])
def test_eps_real_above_one_and_non_increasing(model):
    e = M.eps_imaginary_axis(model, LOG_GRID)
    assert np.all(np.isfinite(e)) and np.all(e >= 1)
    assert np.all(np.diff(e) <= 1e-12 * e[1:])


@pytest.mark.parametrize("name, lf", [("gold", M.GOLD_DRUDE), ("silica", None)])
def test_high_frequency_transparency(name, lf):
    t = M.sample_table(name)
    xi = 1e6 * t.energies[-1] * E_CHARGE / HBAR
    v = M.eps_imaginary_axis(M.Tabulated(t, lf), xi)
    assert 1.0 <= v <= 1.0 + 1e-4


@pytest.mark.parametrize("name, lf", [("gold", M.GOLD_DRUDE), ("silica", None)])
def test_kk_order_doubling_is_stable(name, lf):
    m = M.Tabulated(M.sample_table(name), lf)
    a = M.eps_imaginary_axis(m, LOG_GRID, kk_order=M.DEFAULT_KK_ORDER)
    b = M.eps_imaginary_axis(m, LOG_GRID, kk_order=2 * M.DEFAULT_KK_ORDER)
    assert np.max(np.abs(a / b - 1)) < 1e-8


def test_gold_sample_matches_its_generating_model():
    # the bundled table samples Drude(9, 0.035) plus one interband oscillator
    ref = M.LorentzOscillators((M.Oscillator(40.0, 3.8, 2.0),))
    xi = np.geomspace(1e13, 1e16, 25)
    tab = M.eps_imaginary_axis(M.Tabulated(M.sample_table("gold"), M.GOLD_DRUDE), xi)
    exact = M.eps_imaginary_axis(M.gold_drude(), xi) + M.eps_imaginary_axis(ref, xi) - 1
    # residual set by the 64-point sampling and the table ending at 40 eV
    assert np.max(np.abs(tab / exact - 1)) < 2e-3


def test_silica_sample_close_to_oscillator_model():
    xi = np.geomspace(1e13, 1e16, 25)
    tab = M.eps_imaginary_axis(M.Tabulated(M.sample_table("silica")), xi)
    ref = M.eps_imaginary_axis(M.silica_oscillators(), xi)
    assert np.max(np.abs(tab / ref - 1)) < 0.01


@pytest.mark.parametrize("model, scales", [
    (M.gold_drude(), [0.035, 9.0]),
    (M.LorentzOscillators((M.Oscillator(40.0, 3.8, 2.0),)), [3.8, 2.0]),
])
def test_numerical_dispersion_integral_matches_closed_form(model, scales):
    for xi in (1e13, 1e14, 1e15, 1e16, 1e17):
        assert M.kk_transform(model.absorption, xi, scales) == pytest.approx(
            M.eps_imaginary_axis(model, xi), rel=1e-9)


def test_matsubara_values():
    assert M.matsubara_xi(294.0, 1) == pytest.approx(2.4184e14, rel=1e-4)
    assert M.eps_at_matsubara(M.gold_drude(), 294.0, 0) == M.INFINITE_STATIC
    s = M.silica_oscillators()
    static = 1 + sum(o.strength / o.resonance**2 for o in s.oscillators)
    assert M.eps_at_matsubara(s, 294.0, 0) == pytest.approx(static, rel=1e-15)
    assert M.eps_at_matsubara(s, 294.0, 3) == M.eps_imaginary_axis(s, 3 * M.matsubara_xi(294.0, 1))


def test_invalid_arguments():
    with pytest.raises(ValueError):
        M.eps_imaginary_axis(M.gold_drude(), -1.0)
    with pytest.raises(ValueError):
        M.eps_at_matsubara(M.gold_drude(), 0.0, 1)
    with pytest.raises(ValueError):
        M.eps_at_matsubara(M.gold_drude(), 294.0, -1)
    with pytest.raises(ValueError):
        M.Tabulated(M.sample_table("gold"), "linear")
    with pytest.raises(TypeError):
        M.eps_imaginary_axis(object(), 1e14)
