import csv

import numpy as np
import pytest

from nlwblowup.kernel import (KERNEL_HEADER, BesselRangeError, SingularKernel, bessel_jy, export_kernel_csv, khat,
                              khat_derivs, kernel_physical_check, kernel_selftest, nu_for_power)

NU3 = nu_for_power(3.0)


def test_half_order_bessel():
    z = np.geomspace(1e-3, 1e3, 400)
    b = bessel_jy(0.5, z)
    amp = np.sqrt(2 / (np.pi * z))
    assert np.max(np.abs(b.j - amp * np.sin(z))) < 1e-11
    assert np.max(np.abs(b.y + amp * np.cos(z))) < 1e-11 * np.max(amp)


def test_wronskian_random(rng):
    nu = rng.uniform(0.5, 60.0, 300)
    z = 10 ** rng.uniform(-2, 3, 300)
    for a, b in zip(nu, z):
        w = bessel_jy(a, np.array([b])).wronskian(a, np.array([b]))[0]
        assert abs(w / (2 / (np.pi * b)) - 1) < 1e-9


@pytest.mark.parametrize("nu", [0.75, NU3, 4.0, 9.3])
def test_large_argument_modulus(nu):
    z = np.geomspace(50, 5e4, 30)
    b = bessel_jy(nu, z, with_next=False)
    mod = np.abs(b.j + 1j * b.y) * np.sqrt(np.pi * z / 2)
    corr = np.abs(mod - 1)
    bound = (4 * nu**2 - 1) / (8 * z)
    assert np.all(corr <= bound * 1.05)
    assert corr[-1] < 1e-6


def test_bessel_range():
    with pytest.raises(BesselRangeError):
        bessel_jy(0.2, np.array([1.0]))
    with pytest.raises(BesselRangeError):
        bessel_jy(2.0, np.array([1e7]))


def test_sinc_reduction():
    kr = SingularKernel(0.5)
    s0, xi = 0.3, np.array([0.1, 1.0, 7.5])
    s = np.linspace(0.31, 2.0, 50)[:, None]
    ref = np.sin(2 * np.pi * xi * (s - s0)) / (2 * np.pi * xi)
    assert np.max(np.abs(khat(kr, s, xi, s0) - ref)) < 1e-9
    ds, _ = khat_derivs(kr, s, xi, s0)
    assert np.max(np.abs(ds - np.cos(2 * np.pi * xi * (s - s0)))) < 1e-9


def test_causal_and_continuous():
    kr = SingularKernel(NU3)
    assert np.all(khat(kr, np.array([0.1, 0.2]), 3.0, 0.2) == 0)


def test_zero_mode_euler_ode():
    kr = SingularKernel(NU3)
    s0 = 0.2
    s = np.linspace(0.25, 1.0, 7)
    h = 1e-4
    k = lambda x: khat(kr, x, 0.0, s0)
    kss = (k(s + h) - 2 * k(s) + k(s - h)) / h**2
    assert np.max(np.abs(kss - kr.potential * k(s) / s**2)) < 1e-5 * np.max(np.abs(kss))
    assert abs(khat(kr, s0 + 1e-9, 0.0, s0) / 1e-9 - 1) < 1e-6


def test_diagonal_derivative_law():
    kr = SingularKernel(NU3)
    s0 = np.array([0.05, 0.2, 0.9])
    for xi in (0.0, 0.5, 3.0, 20.0):
        ds, _ = khat_derivs(kr, s0 + 1e-7, xi, s0)
        assert np.max(np.abs(ds - 1)) < 1e-6


def test_derivatives_match_differences():
    kr = SingularKernel(NU3)
    s0, h = 0.2, 1e-5
    s = np.array([0.3, 0.6, 1.2])
    xi = np.array([0.0, 0.7, 4.0])[:, None]
    ds, ds0 = khat_derivs(kr, s, xi, s0)
    fd_s = (khat(kr, s + h, xi, s0) - khat(kr, s - h, xi, s0)) / (2 * h)
    fd_s0 = (khat(kr, s, xi, s0 + h) - khat(kr, s, xi, s0 - h)) / (2 * h)
    assert np.max(np.abs(ds - fd_s)) < 1e-6
    assert np.max(np.abs(ds0 - fd_s0)) < 1e-6


def test_even_in_xi():
    kr = SingularKernel(NU3)
    xi = np.array([0.3, 2.0])
    assert np.allclose(khat(kr, 0.7, xi, 0.2), khat(kr, 0.7, -xi, 0.2), rtol=0, atol=0)


def test_scaling_covariance():
    kr = SingularKernel(NU3)
    a = 2.5
    s, s0, xi = 0.6, 0.2, np.array([0.0, 0.4, 3.0])
    assert np.allclose(khat(kr, a * s, xi / a, a * s0), a * khat(kr, s, xi, s0), rtol=1e-12, atol=0)


def test_physical_half_order():
    rep = kernel_physical_check(SingularKernel(0.5), 1.2, 0.2, 256, 16.0)
    assert abs(rep.l1 / 1.0 - 1) < 0.02
    assert rep.cone_leakage < 1e-3


def test_physical_cubic_cone():
    rep = kernel_physical_check(SingularKernel(NU3), 0.5, 0.25, 256, 16.0)
    assert rep.cone_leakage < 1e-3


def test_bound_ratio_bounded():
    kr = SingularKernel(NU3)
    ratios = [kernel_physical_check(kr, r * 0.05, 0.05, 256, 16.0).bound_ratio
              for r in np.geomspace(1.1, 30, 8)]
    assert all(np.isfinite(ratios)) and max(ratios) < 2.0 and min(ratios) > 0.05


def test_cone_must_fit():
    with pytest.raises(ValueError):
        kernel_physical_check(SingularKernel(NU3), 9.0, 0.2, 256, 16.0)


def test_selftest_and_export(tmp_path):
    rep = kernel_selftest(n_random=200)
    assert rep["sinc_error"] < 1e-9 and rep["wronskian_error"] < 1e-9
    assert rep["diagonal_error"] < 1e-6 and rep["cone_leakage"] < 1e-3
    r = kernel_physical_check(SingularKernel(NU3), 0.5, 0.25, 128, 16.0)
    path = export_kernel_csv([r], tmp_path / "k.csv")
    with open(path) as fh:
        assert next(csv.reader(fh)) == KERNEL_HEADER
