import csv

import numpy as np
import pytest

from nlwblowup.conformal import (FIELD_HEADER, MAP_HEADER, OutOfRegion, conformality_check, evaluate_map,
                                 export_map_csv, invert_map, solve_fg)
from nlwblowup.surface import catalog_surface, solve_h


def test_zero_surface_is_identity():
    m = solve_fg(solve_h(catalog_surface("flat:0", half_width=3.0)), order=4)
    y = np.linspace(-2, 2, 41)
    assert np.max(np.abs(m.f(y) - y)) < 1e-12
    assert np.max(np.abs(m.g(y) - y)) < 1e-12
    fj, gj = m.boundary_jets(y, 6)
    assert np.all(fj[2:] == 0) and np.all(gj[2:] == 0)
    t, x = evaluate_map(m, np.zeros_like(y), y)
    assert np.max(np.abs(t)) < 1e-12 and np.max(np.abs(x - y)) < 1e-12


def test_flat_map(flat_map):
    # f(y) = y + 2T, g(y) = y, so (s, y) -> (T - s, y + T)
    y = np.linspace(-2, 2, 21)
    assert np.max(np.abs(flat_map.f(y) - (y + 2))) < 1e-12
    assert np.max(np.abs(flat_map.g(y) - y)) < 1e-12
    s = np.linspace(0, 0.5, 21)
    t, x = evaluate_map(flat_map, s, y)
    assert np.max(np.abs(t - (1 - s))) < 1e-12
    assert np.max(np.abs(x - (y + 1))) < 1e-12
    s2, y2 = invert_map(flat_map, 1 - s, y + 1)
    assert np.max(np.abs(s2 - s)) < 1e-12 and np.max(np.abs(y2 - y)) < 1e-12


def test_affine_h_gives_scaled_f_g(tilt_map):
    c = 1.5 / 0.5
    y = np.linspace(-2, 2, 21)
    assert np.max(np.abs(tilt_map.g(y) - y / np.sqrt(c))) < 1e-10
    assert np.max(np.abs(tilt_map.f(y) - np.sqrt(c) * y)) < 1e-10


@pytest.mark.parametrize("name", ["flat_map", "tilt_map", "gauss_map"])
def test_f_g_product(name, request):
    m = request.getfixturevalue(name)
    y = np.linspace(*m.y_window, 801)
    assert np.max(np.abs(m.fprime(y) * m.gprime(y) - 1)) < 1e-8
    fd, gd = m.derivative_tables(y[::40], 3)
    assert np.max(np.abs(fd[1] * gd[1] - 1)) < 1e-8


def test_boundary_lies_on_surface(gauss_map):
    y = np.linspace(*gauss_map.y_window, 401)
    t, x = evaluate_map(gauss_map, np.zeros_like(y), y)
    assert np.max(np.abs(t - gauss_map.surface(x))) < 1e-8


def test_round_trip(gauss_map, rng):
    y0, y1 = gauss_map.y_window
    s = rng.uniform(0, 0.5, 500)
    y = rng.uniform(y0 + 0.5, y1 - 0.5, 500)
    t, x = evaluate_map(gauss_map, s, y)
    s2, y2 = invert_map(gauss_map, t, x)
    assert np.max(np.abs(s2 - s)) < 1e-8 and np.max(np.abs(y2 - y)) < 1e-8


def test_surface_points_invert_to_zero(gauss_map):
    x = np.linspace(-4, 4, 101)
    s, _ = invert_map(gauss_map, gauss_map.surface(x), x)
    assert np.max(np.abs(s)) < 1e-8


def test_points_above_surface_rejected(gauss_map):
    with pytest.raises(OutOfRegion):
        invert_map(gauss_map, np.array([0.5]), np.array([0.0]))


def test_jet_derivatives_match_differences(gauss_map):
    y = np.linspace(-2, 2, 9)
    fd, _ = gauss_map.derivative_tables(y, 4)
    h = 1e-3
    fp = gauss_map.fprime
    d2 = (fp(y + h) - fp(y - h)) / (2 * h)
    d3 = (fp(y + h) - 2 * fp(y) + fp(y - h)) / h**2
    assert np.max(np.abs(fd[2] - d2)) < 1e-6
    assert np.max(np.abs(fd[3] - d3)) < 1e-5


def test_conformality_flat(flat_map):
    s = np.linspace(0.01, 0.4, 8)
    y = np.linspace(-2, 2, 8)
    rep = conformality_check(flat_map, s, y)
    assert rep.residual < 1e-9
    S, Y = np.meshgrid(s, y)
    assert np.all(flat_map.conformal_factor(S, Y) == 1.0)


def test_conformality_tilt(tilt_map):
    s = np.linspace(0.01, 0.4, 8)
    y = np.linspace(-2, 2, 8)
    rep = conformality_check(tilt_map, s, y)
    assert rep.residual < 1e-8
    S, Y = np.meshgrid(s, y)
    assert np.max(np.abs(tilt_map.conformal_factor(S, Y) - 1)) < 1e-10


def test_conformality_gauss(gauss_map):
    y0, y1 = gauss_map.y_window
    s = np.linspace(0.5 / 32, 0.5, 32)
    y = np.linspace(y0 + 0.5, y1 - 0.5, 32)
    rep = conformality_check(gauss_map, s, y)
    assert rep.residual < 1e-6
    assert rep.lambda_min > 0
    assert rep.boundary_lambda_error < 1e-8
    assert rep.determinant_error < 1e-8
    assert rep.boundary_jacobian_error < 1e-8
    assert rep.ratio_frozen_y_error < 1e-4
    assert rep.ratio_frozen_x_error < 1e-4
    assert rep.null_slope_error < 1e-8


def test_map_export(tmp_path, tilt_map):
    paths = export_map_csv(tilt_map, tmp_path / "map.csv", s=np.linspace(0, 0.2, 3))
    with open(paths[0]) as fh:
        assert next(csv.reader(fh)) == MAP_HEADER
    with open(paths[1]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == FIELD_HEADER
    assert len(rows) == 1 + 3 * 257
