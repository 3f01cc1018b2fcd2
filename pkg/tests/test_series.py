import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import binom

from nlwblowup.series import (PARAMETRIX_HEADER, SWEEP_HEADER, SeriesError, SeriesField, build_parametrix,
                              eval_parametrix, export_parametrix_csv, lambda_taylor_at_boundary, residual_series,
                              residual_slope, series_pow_real, spectral_dy)


def _grid(m, n=128):
    y0, y1 = m.y_window
    period = y1 - y0
    return y0 + period * np.arange(n) / n, period


def _one_plus_s(J, ny=3):
    a = np.zeros((J + 1, ny))
    a[0] = 1.0
    a[1] = 1.0
    return SeriesField.from_ordinary(a)


def test_pow_of_one():
    one = SeriesField.from_ordinary(np.vstack([np.ones((1, 4)), np.zeros((5, 4))]))
    for r in (0.5, -1.3, 2.0, 7.25):
        out = series_pow_real(one, r).coeffs
        assert np.all(out[0] == 1) and np.all(out[1:] == 0)


def test_pow_square():
    out = series_pow_real(_one_plus_s(3), 2.0)
    assert np.allclose(out.coeffs[:, 0], [1, 2, 2, 0], rtol=0, atol=1e-15)


def test_pow_half_binomial():
    out = series_pow_real(_one_plus_s(4), 0.5).coeffs[:, 0]
    ref = [binom(0.5, j) * math.factorial(j) for j in range(5)]
    assert np.max(np.abs(out - ref)) < 1e-12


def test_pow_rejects_zero_leading():
    a = np.zeros((3, 2))
    a[1] = 1
    with pytest.raises(SeriesError):
        series_pow_real(SeriesField.from_ordinary(a), 0.5)


@settings(max_examples=40, deadline=None)
@given(r1=st.floats(-2, 2), r2=st.floats(-2, 2),
       c=st.lists(st.floats(-0.5, 0.5), min_size=5, max_size=5))
def test_pow_exponent_law(r1, r2, c):
    a = np.array([1.0] + c)[:, None]
    A = SeriesField.from_ordinary(a)
    lhs = series_pow_real(A, r1 + r2).coeffs
    rhs = (series_pow_real(A, r1) * series_pow_real(A, r2)).coeffs
    assert np.max(np.abs(lhs - rhs)) < 1e-11 * max(1.0, np.max(np.abs(lhs)))


def test_pow_integer_matches_multiplication():
    a = SeriesField.from_ordinary(np.array([[1.0], [0.3], [-0.2], [0.1], [0.05]]))
    assert np.allclose(series_pow_real(a, 3.0).coeffs, (a * a * a).coeffs, rtol=0, atol=1e-14)


def test_spectral_derivative():
    n, L = 64, 5.0
    y = L * np.arange(n) / n
    f = np.sin(2 * np.pi * 3 * y / L)
    d2 = spectral_dy(f, L, 2)
    assert np.max(np.abs(d2 + (2 * np.pi * 3 / L) ** 2 * f)) < 1e-10


@pytest.mark.parametrize("name", ["flat_map", "tilt_map"])
def test_lambda_series_trivial(name, request):
    m = request.getfixturevalue(name)
    y, _ = _grid(m, 16)
    lam = lambda_taylor_at_boundary(m, y, 6)
    assert np.all(lam.coeffs[0] == 1.0)
    assert np.max(np.abs(lam.coeffs[1:])) < 1e-12


def test_lambda_series_matches_map(gauss_map):
    y, _ = _grid(gauss_map, 32)
    lam = lambda_taylor_at_boundary(gauss_map, y, 10)
    s = np.array([1e-3, 5e-3, 2e-2])
    exact = gauss_map.conformal_factor(s[:, None], y[None, :])
    err = np.max(np.abs(lam.evaluate(s) - exact), axis=1)
    assert err[0] < 1e-13 and err[-1] < 1e-9


@pytest.mark.parametrize("p", [1.5, 3.0, 5.0])
def test_exact_parametrix_for_unit_lambda(flat_map, p):
    y, period = _grid(flat_map, 16)
    lam = lambda_taylor_at_boundary(flat_map, y, 12)
    b = build_parametrix(lam, p, 6, y, period, cmap=flat_map, tail_orders=6)
    assert np.all(b.rho.coeffs[0] == 1) and np.max(np.abs(b.rho.coeffs[1:])) < 1e-12
    s = np.array([0.01, 0.1])
    vals = eval_parametrix(b, s)
    assert np.max(np.abs(vals.residual)) < 1e-12
    assert np.max(np.abs(vals.v / s[:, None] ** (-2 / p) - 1)) < 1e-13


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_rho1_balances_first_order(gauss_map, p):
    """rho_1 equals -(p+2)/(p(p+4)) d_s lambda(0, y): the value that zeroes
    the s^1 coefficient of the residual series."""
    y, period = _grid(gauss_map)
    lam = lambda_taylor_at_boundary(gauss_map, y, 30)
    b = build_parametrix(lam, p, 9, y, period, cmap=gauss_map)
    law = -(p + 2) / (p * (p + 4)) * lam.coeffs[1]
    assert np.max(np.abs(b.rho.coeffs[1] - law)) < 1e-10
    # independent route: re-insert a one-term rho and read the s^1 residual
    A = np.vstack([np.ones_like(y), b.rho.coeffs[1]])
    e = residual_series(A, np.zeros_like(A), lam.ordinary()[:2], p, period, 1)
    assert np.max(np.abs(e[1, 0])) < 1e-12


def test_reinsertion_vanishes(gauss_map):
    y, period = _grid(gauss_map)
    lam = lambda_taylor_at_boundary(gauss_map, y, 30)
    b = build_parametrix(lam, 3.0, 9, y, period, cmap=gauss_map)
    e = residual_series(b.rho.ordinary(), b.rho.log_ordinary(), lam.ordinary()[:10], 3.0, period, 9)
    assert np.max(np.abs(e)) < 1e-9
    assert b.reinsertion_defect < 1e-9


def test_log_branch_p4(gauss_map):
    y, period = _grid(gauss_map)
    lam = lambda_taylor_at_boundary(gauss_map, y, 30)
    b = build_parametrix(lam, 4.0, 5, y, period, cmap=gauss_map)
    assert b.log_start == 3
    logs = b.rho.log_ordinary()
    assert np.all(logs[:3] == 0) and np.max(np.abs(logs[3])) > 1e-6
    e = residual_series(b.rho.ordinary(), logs, lam.ordinary()[:6], 4.0, period, 5)
    # s^(4/p) and s^(4/p) log s parts of s^2 E sit at order 3 of s^2 E
    assert np.max(np.abs(e[3, 0])) < 1e-9 and np.max(np.abs(e[3, 1])) < 1e-9
    assert np.max(np.abs(e)) < 1e-9


def test_log_branch_second_order_refused(gauss_map):
    y, period = _grid(gauss_map, 32)
    lam = lambda_taylor_at_boundary(gauss_map, y, 20)
    with pytest.raises(SeriesError):
        build_parametrix(lam, 4.0, 6, y, period)


def test_translation_equivariance(gauss_map):
    y, period = _grid(gauss_map)
    lam = lambda_taylor_at_boundary(gauss_map, y, 20)
    b = build_parametrix(lam, 3.0, 7, y, period, tail_orders=4)
    shifted = SeriesField(np.roll(lam.coeffs, 17, axis=1))
    b2 = build_parametrix(shifted, 3.0, 7, y, period, tail_orders=4)
    diff = np.max(np.abs(np.roll(b.rho.coeffs, 17, axis=1) - b2.rho.coeffs), axis=1)
    size = np.max(np.abs(b.rho.coeffs), axis=1)
    # high orders carry repeated spectral y-derivatives, so compare per order
    assert np.all(diff <= 1e-10 * size)


def test_deviation_slope(gauss_map):
    y, period = _grid(gauss_map)
    lam = lambda_taylor_at_boundary(gauss_map, y, 30)
    b = build_parametrix(lam, 3.0, 9, y, period, cmap=gauss_map)
    s = np.array([1e-4, 2e-4])
    dev = eval_parametrix(b, s).v * s[:, None] ** (2 / 3) - 1
    slope = dev / s[:, None]
    assert np.max(np.abs(slope[0] - b.rho.coeffs[1])) < 1e-3 * np.max(np.abs(b.rho.coeffs[1])) + 1e-6
    # the O(s^2) remainder halves the gap when s halves, so Richardson removes it
    rich = 2 * slope[0] - slope[1]
    assert np.max(np.abs(rich - b.rho.coeffs[1])) < 1e-6


def test_residual_slope_order(gauss_map):
    y, period = _grid(gauss_map, 256)
    lam = lambda_taylor_at_boundary(gauss_map, y, 30)
    b = build_parametrix(lam, 3.0, 9, y, period, cmap=gauss_map)
    slope, _, _ = residual_slope(b, 0.2)
    assert slope >= 9 - 1 - 2 / 3 - 0.3


def test_eval_rejects_zero(gauss_map):
    y, period = _grid(gauss_map, 16)
    lam = lambda_taylor_at_boundary(gauss_map, y, 10)
    b = build_parametrix(lam, 3.0, 4, y, period, tail_orders=4)
    with pytest.raises((SeriesError, ValueError)):
        eval_parametrix(b, np.array([0.0]))


def test_parametrix_export(tmp_path, gauss_map):
    y, period = _grid(gauss_map, 16)
    lam = lambda_taylor_at_boundary(gauss_map, y, 10)
    b = build_parametrix(lam, 3.0, 4, y, period, cmap=gauss_map, tail_orders=4)
    paths = export_parametrix_csv(b, tmp_path / "parametrix.csv", s0=0.2)
    with open(paths[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == PARAMETRIX_HEADER
    assert len(rows) == 1 + 5 * 16
    with open(paths[1]) as fh:
        assert next(csv.reader(fh)) == SWEEP_HEADER
