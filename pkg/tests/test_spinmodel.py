import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinthermo.spinmodel import (
    MHZ_PER_GAUSS,
    FieldSample,
    RotatingFrameWarning,
    SpinParams,
    build_lab_h,
    build_rot_h,
    check_hermitian,
    drive_coupling,
    gauss_to_mhz,
    odmr_lines,
    spin1_operators,
)

D = 1400.0
S = 1 / np.sqrt(2)

finite = dict(allow_nan=False, allow_infinity=False)


def test_spin1_algebra():
    sx, sy, sz = spin1_operators()
    np.testing.assert_array_equal(sz, np.diag([1, 0, -1]))
    np.testing.assert_allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-15)
    np.testing.assert_allclose(sx @ sx + sy @ sy + sz @ sz, 2 * np.eye(3), atol=1e-15)


def test_lab_h_matches_operator_form():
    sx, sy, sz = spin1_operators()
    p = SpinParams(D=D, Ex=16.5, omega=D + 16.5)
    f = FieldSample(bz=0.3, pz=-0.2)
    expected = (D + f.pz) * sz @ sz + p.Ex * (sx @ sx - sy @ sy) + f.bz * sz
    np.testing.assert_allclose(build_lab_h(p, f), expected, atol=1e-12)


def test_lab_h_literal_and_spectrum():
    p = SpinParams(D=D, Ex=16.5, omega=D + 16.5)
    h = build_lab_h(p)
    np.testing.assert_array_equal(h, [[1400, 0, 16.5], [0, 0, 0], [16.5, 0, 1400]])
    np.testing.assert_allclose(np.linalg.eigvalsh(h), [0.0, D - 16.5, D + 16.5], atol=1e-10)


def test_rot_h_free_literal():
    p = SpinParams.from_detuning(2.0, 16.5, D=D)
    h = build_rot_h(p)
    np.testing.assert_allclose(h, [[2 - 16.5, 0, 16.5], [0, 0, 0], [16.5, 0, 2 - 16.5]])


def test_rot_h_idealized_drive_literal():
    p = SpinParams.from_detuning(2.0, 16.5, D=D, Omega=1.0)
    h = build_rot_h(p, FieldSample(bz=0.4, pz=0.3), drive_on=True, idealized=True)
    np.testing.assert_allclose(h, [[-16.5, S, 16.5], [S, 0, S], [16.5, S, -16.5]])


def test_rot_h_pure_coupling_is_two_level():
    p = SpinParams.from_detuning(0.0, 0.0, D=D, Omega=1.0)
    h = build_rot_h(p, drive_on=True)
    np.testing.assert_allclose(h, drive_coupling())
    w, v = np.linalg.eigh(h)
    np.testing.assert_allclose(w, [-1.0, 0.0, 1.0], atol=1e-14)
    minus = np.array([S, 0, -S])
    # the dark state |-> decouples; the other two span {|0>, |+>}
    assert abs(abs(np.vdot(minus, v[:, 1])) - 1) < 1e-12
    for k in (0, 2):
        assert abs(v[1, k]) ** 2 == pytest.approx(0.5, abs=1e-12)


def test_drive_off_equals_zero_rabi():
    p = SpinParams.from_detuning(1.3, 7.0, D=D, Omega=4.0)
    f = FieldSample(bz=0.2, pz=0.1)
    np.testing.assert_array_equal(build_rot_h(p, f, drive_on=False), build_rot_h(p.replace(Omega=0.0), f, drive_on=True))


def test_gauss_conversion():
    assert MHZ_PER_GAUSS == pytest.approx(2.7993, abs=1e-4)
    assert gauss_to_mhz(10.0) == pytest.approx(27.99249, abs=1e-5)


def test_odmr_examples():
    p0 = SpinParams(D=D, Ex=0.0, omega=D)
    assert odmr_lines(p0, 28.0) == pytest.approx((D - 28, D + 28))
    slope = (odmr_lines(p0, gauss_to_mhz(20.0))[1] - odmr_lines(p0, gauss_to_mhz(10.0))[1]) / 10
    assert slope == pytest.approx(2.8, abs=0.01)
    p = SpinParams(D=D, Ex=16.5, omega=D + 16.5)
    assert odmr_lines(p, 0.0) == pytest.approx((D - 16.5, D + 16.5))
    assert odmr_lines(p, 16.5) == pytest.approx((D - 23.335, D + 23.335), abs=1e-3)


@settings(max_examples=100, deadline=None)
@given(
    d=st.floats(100, 5000, **finite),
    ex=st.floats(0, 100, **finite),
    bz=st.floats(-200, 200, **finite),
)
def test_odmr_matches_eigensolver(d, ex, bz):
    p = SpinParams(D=d, Ex=ex, omega=d + ex)
    evals = np.linalg.eigvalsh(build_lab_h(p, FieldSample(bz=bz)))
    upper = np.sort(np.delete(evals, np.argmin(np.abs(evals))))
    np.testing.assert_allclose(odmr_lines(p, bz), upper, atol=1e-8, rtol=0)


@settings(max_examples=100, deadline=None)
@given(
    d=st.floats(100, 5000, **finite),
    ex=st.floats(0, 100, **finite),
    det=st.floats(-1, 1, **finite),
    rabi=st.floats(0, 50, **finite),
    bz=st.floats(-10, 10, **finite),
    pz=st.floats(-10, 10, **finite),
)
def test_builders_are_hermitian(d, ex, det, rabi, bz, pz):
    p = SpinParams(D=d, Ex=ex, omega=d + ex - det, Omega=rabi)
    f = FieldSample(bz=bz, pz=pz)
    for h in (build_lab_h(p, f), build_rot_h(p, f), build_rot_h(p, f, True), build_rot_h(p, f, True, True)):
        check_hermitian(h)
        assert np.max(np.abs(h - h.conj().T)) <= 1e-12 * max(np.max(np.abs(h)), 1e-300)


def test_check_hermitian_rejects():
    h = np.zeros((3, 3), dtype=complex)
    h[0, 1] = 1.0
    with pytest.raises(ValueError, match="not Hermitian"):
        check_hermitian(h)
    with pytest.raises(ValueError, match="3x3"):
        check_hermitian(np.eye(2))


def test_params_validation():
    with pytest.raises(ValueError):
        SpinParams(D=-1.0, Ex=0.0, omega=1.0)
    with pytest.raises(ValueError):
        SpinParams(D=D, Ex=-1.0, omega=D)
    with pytest.raises(ValueError):
        SpinParams(D=D, Ex=1.0, omega=D, Omega=-2.0)
    with pytest.raises(ValueError):
        SpinParams(D=float("nan"), Ex=1.0, omega=D)
    with pytest.raises(ValueError):
        FieldSample(bz=float("inf"))


def test_large_detuning_warns():
    with pytest.warns(RotatingFrameWarning):
        SpinParams(D=D, Ex=0.0, omega=1000.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        SpinParams.from_detuning(2.0, 16.5)


def test_detuning_round_trip():
    p = SpinParams.from_detuning(2.0, 16.5, D=D, Omega=3.0)
    assert p.detuning == pytest.approx(2.0)
    assert p.replace(Omega=1.0).Omega == 1.0
