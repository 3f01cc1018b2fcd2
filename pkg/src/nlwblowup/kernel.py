"""Fundamental solution of ``v_ss - v_yy - (nu^2 - 1/4) s^-2 v = F`` per Fourier mode.

For ``s > s0`` and ``z = 2 pi |xi|``,

    khat(s, xi; s0) = (pi/2) sqrt(s s0) [J_nu(z s0) Y_nu(z s) - Y_nu(z s0) J_nu(z s)],

and ``khat = 0`` for ``s <= s0``.  At ``xi = 0`` the mode equation is of Euler
type and ``khat = sqrt(s s0) [(s/s0)^nu - (s/s0)^-nu] / (2 nu)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import special

Z_MIN, Z_MAX = 1e-8, 1e6
NU_MIN, NU_MAX = 0.5, 60.0
# below this argument the xi = 0 closed form is exact to ~z^2
SMALL_Z = 1e-7


class BesselRangeError(ValueError):
    pass


@dataclass
class BesselPair:
    j: np.ndarray
    y: np.ndarray
    j1: np.ndarray | None = None
    y1: np.ndarray | None = None

    def wronskian(self, nu: float, z) -> np.ndarray:
        """J Y' - J' Y using Y' = (nu/z) Y - Y_{nu+1} and likewise for J."""
        z = np.asarray(z, dtype=float)
        return self.j * (nu / z * self.y - self.y1) - (nu / z * self.j - self.j1) * self.y


def bessel_jy(nu: float, z, with_next: bool = True) -> BesselPair:
    z = np.asarray(z, dtype=float)
    if not NU_MIN <= nu <= NU_MAX:
        raise BesselRangeError(f"order {nu} outside [{NU_MIN}, {NU_MAX}]")
    if np.any(z < Z_MIN) or np.any(z > Z_MAX):
        raise BesselRangeError(f"argument outside [{Z_MIN:g}, {Z_MAX:g}]")
    return _jy(nu, z, with_next)


def _jy(nu: float, z: np.ndarray, with_next: bool = True) -> BesselPair:
    pair = BesselPair(special.jv(nu, z), special.yv(nu, z))
    if with_next:
        pair.j1 = special.jv(nu + 1, z)
        pair.y1 = special.yv(nu + 1, z)
    return pair


def nu_for_power(p: float) -> float:
    return 1.5 + 2.0 / p


@dataclass(frozen=True)
class SingularKernel:
    nu: float

    def __post_init__(self):
        if self.nu < 0.5:
            raise ValueError("the kernel is defined for nu >= 1/2")

    @property
    def potential(self) -> float:
        return self.nu**2 - 0.25

    def khat(self, s, xi, s0) -> np.ndarray:
        return khat(self, s, xi, s0)

    def derivs(self, s, xi, s0) -> tuple[np.ndarray, np.ndarray]:
        return khat_derivs(self, s, xi, s0)


def _euler_parts(nu: float, s, s0):
    r = s / s0
    root = np.sqrt(s * s0)
    up, down = r**nu, r ** (-nu)
    k = root * (up - down) / (2 * nu)
    ks = 0.5 * k / s + root * (up + down) / (2 * s)
    k0 = 0.5 * k / s0 - root * (up + down) / (2 * s0)
    return k, ks, k0


def _pieces(kr: SingularKernel, s, xi, s0):
    s, xi, s0 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, xi, s0)))
    z = 2 * np.pi * np.abs(xi)
    live = s > s0
    small = live & (z * s < SMALL_Z)
    bess = live & ~small
    return s, z, s0, live, small, bess


def khat(kr: SingularKernel, s, xi, s0) -> np.ndarray:
    s, z, s0, live, small, bess = _pieces(kr, s, xi, s0)
    out = np.zeros(s.shape)
    if np.any(small):
        out[small] = _euler_parts(kr.nu, s[small], s0[small])[0]
    if np.any(bess):
        a, b, zz = s0[bess], s[bess], z[bess]
        pa = _jy(kr.nu, zz * a, with_next=False)
        pb = _jy(kr.nu, zz * b, with_next=False)
        out[bess] = 0.5 * np.pi * np.sqrt(a * b) * (pa.j * pb.y - pa.y * pb.j)
    return out


def khat_derivs(kr: SingularKernel, s, xi, s0) -> tuple[np.ndarray, np.ndarray]:
    """(d khat/ds, d khat/ds0) for s > s0; zero elsewhere."""
    s, z, s0, live, small, bess = _pieces(kr, s, xi, s0)
    ds = np.zeros(s.shape)
    d0 = np.zeros(s.shape)
    if np.any(small):
        _, ds[small], d0[small] = _euler_parts(kr.nu, s[small], s0[small])
    if np.any(bess):
        nu = kr.nu
        a, b, zz = s0[bess], s[bess], z[bess]
        pa = _jy(nu, zz * a)
        pb = _jy(nu, zz * b)
        pre = 0.5 * np.pi * np.sqrt(a * b)
        base = pa.j * pb.y - pa.y * pb.j
        d0[bess] = pre * ((2 * nu + 1) / (2 * a) * base - zz * (pa.j1 * pb.y - pa.y1 * pb.j))
        ds[bess] = pre * ((2 * nu + 1) / (2 * b) * base - zz * (pa.j * pb.y1 - pa.y * pb.j1))
    return ds, d0


def leading_coefficient(kr: SingularKernel, s, xi) -> np.ndarray:
    """``lim_{s1 -> 0} s1^(nu - 1/2) khat(s, xi; s1)``.

    Only the ``Y_nu(z s1)`` term survives:
    ``(sqrt(s)/2) Gamma(nu) (pi |xi|)^-nu J_nu(2 pi |xi| s)``, which tends to
    ``s^(nu + 1/2) / (2 nu)`` as xi -> 0.
    """
    nu = kr.nu
    s, xi = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(xi, dtype=float))
    z = 2 * np.pi * np.abs(xi) * s
    out = s ** (nu + 0.5) / (2 * nu)
    big = z > 1e-6
    if np.any(big):
        # (z/2)^-nu Gamma(nu+1) J_nu(z) -> 1, expressed stably
        zb = z[big]
        ratio = special.jv(nu, zb) * np.exp(special.gammaln(nu + 1) - nu * np.log(zb / 2))
        out[big] = out[big] * ratio
    return out


@dataclass
class KernelReport:
    nu: float
    s: float
    s0: float
    l1: float
    bound_ratio: float
    cone_leakage: float
    ds0_variation: float  # total variation of the (measure-valued) d k / d s0

    def row(self) -> list[float]:
        return [self.nu, self.s, self.s0, self.l1, self.bound_ratio, self.cone_leakage, self.ds0_variation]


KERNEL_HEADER = ["nu", "s", "s0", "L1", "bound_ratio", "cone_leakage", "ds0_variation"]


def _rolloff(xi: np.ndarray, xi_max: float) -> np.ndarray:
    """Raised cosine over the top octave [xi_max/2, xi_max]."""
    t = np.clip((np.abs(xi) - 0.5 * xi_max) / (0.5 * xi_max), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def synthesize(kr: SingularKernel, s: float, s0: float, n: int, period: float,
               oversample: int = 16) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Physical-space k(s, y; s0) and d k/d s0 on a grid refined ``oversample`` times,
    centred at y = 0; returns (y, k, k_s0)."""
    nf = n * oversample
    xi = np.fft.rfftfreq(nf, d=period / nf)
    w = _rolloff(xi, xi[-1])
    kh = khat(kr, s, xi, s0) * w
    _, k0h = khat_derivs(kr, s, xi, s0)
    k0h = k0h * w
    # k(y) = sum_xi khat e^{2 pi i xi y} / period
    k = np.fft.fftshift(np.fft.irfft(kh, n=nf)) * nf / period
    kd = np.fft.fftshift(np.fft.irfft(k0h, n=nf)) * nf / period
    y = (np.arange(nf) - nf // 2) * (period / nf)
    return y, k, kd


def kernel_physical_check(kr: SingularKernel, s: float, s0: float, n: int, period: float,
                          oversample: int = 16) -> KernelReport:
    """Cone support, L1 size and the ratio to ``(s - s0)(s/s0)^(nu - 1/2)``.

    ``n`` and ``period`` describe the working y grid; leakage is measured
    outside ``|y| <= s - s0 + 2 dy`` with ``dy = period / n``.
    """
    dy = period / n
    if s - s0 + 4 * dy >= 0.5 * period:
        raise ValueError("the light cone does not fit in the periodic y domain")
    y, k, kd = synthesize(kr, s, s0, n, period, oversample)
    h = y[1] - y[0]
    inside = np.abs(y) <= s - s0 + 2 * dy
    peak = np.max(np.abs(k[inside]))
    leak = float(np.max(np.abs(k[~inside])) / peak)
    l1 = float(np.sum(np.abs(k)) * h)
    bound = (s - s0) * (s / s0) ** (kr.nu - 0.5)
    return KernelReport(nu=kr.nu, s=s, s0=s0, l1=l1, bound_ratio=l1 / bound, cone_leakage=leak,
                        ds0_variation=float(np.sum(np.abs(kd)) * h))


def export_kernel_csv(reports: list[KernelReport], path: Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(KERNEL_HEADER)
        for r in reports:
            w.writerow([f"{v:.15e}" for v in r.row()])
    return path


def kernel_selftest(seed: int = 0, n_random: int = 1000) -> dict:
    """Closed-form checks of the kernel: the nu = 1/2 reduction
    ``sin(z (s - s0)) / z``, the Wronskian ``2 / (pi z)``, the diagonal law
    ``d khat/ds -> 1``, cone leakage and L1 bound ratios at the cubic order."""
    rng = np.random.default_rng(seed)
    half = SingularKernel(0.5)
    s0 = np.linspace(0.05, 0.9, 40)
    s = s0 + np.linspace(0.01, 2.0, 40)
    xi = np.linspace(0.0, 20.0, 40)
    S, S0, XI = np.meshgrid(s, s0, xi, indexing="ij")
    live = S > S0
    z = 2 * np.pi * XI
    with np.errstate(invalid="ignore", divide="ignore"):
        ref = np.where(z > 0, np.sin(z * (S - S0)) / np.where(z > 0, z, 1.0), S - S0)
    sinc_err = float(np.max(np.abs(khat(half, S, XI, S0) - ref)[live]))

    nu = rng.uniform(NU_MIN, 20.0, n_random)
    zz = 10.0 ** rng.uniform(-2, 2, n_random)
    w = np.array([bessel_jy(a, np.array([b])).wronskian(a, np.array([b]))[0] for a, b in zip(nu, zz)])
    wr_err = float(np.max(np.abs(w / (2 / (np.pi * zz)) - 1)))

    kr = SingularKernel(nu_for_power(3.0))
    base = np.array([0.1, 0.3, 0.7])
    eps = 1e-7
    ds, _ = khat_derivs(kr, base + eps, np.array([0.0, 1.0, 5.0]), base)
    diag_err = float(np.max(np.abs(ds - 1)))

    rep = kernel_physical_check(kr, 0.5, 0.25, 256, 16.0)
    ratios = [kernel_physical_check(kr, r * 0.05, 0.05, 256, 16.0).bound_ratio for r in (1.1, 2, 5, 10, 30)]
    return dict(sinc_error=sinc_err, wronskian_error=wr_err, diagonal_error=diag_err,
                cone_leakage=rep.cone_leakage, bound_ratios=ratios)
