"""Power series in s with y-grid coefficients, and the blowup parametrix.

The parametrix is ``v~ = s^(-2/p) rho`` with ``rho(0, y) = 1``; rho solves

    s^2 E = s^2 rho_ss - s^2 rho_yy - (4/p) s rho_s + c (rho - lam rho^(p+1))

to high order at ``s = 0`` (``c = 2(p+2)/p^2``).  Internally a field is a
bivariate polynomial in ``s`` and ``L = log s`` stored as ordinary
coefficients ``e[k, r, y]`` multiplying ``s^k L^r``; the Euler operator
``D = s d/ds`` acts as ``(D e)[k, r] = k e[k, r] + (r + 1) e[k, r + 1]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import binom

from . import taylor
from .conformal import ConformalMap

EPS = np.finfo(float).eps


class SeriesError(ValueError):
    pass


def nonlinear_constant(p: float) -> float:
    return 2.0 * (p + 2.0) / p**2


def _factorials(n: int, ndim: int) -> np.ndarray:
    f = np.array([math.factorial(k) for k in range(n)], dtype=float)
    return f.reshape((-1,) + (1,) * (ndim - 1))


@dataclass
class SeriesField:
    """``sum_j c_j(y) s^j / j!`` plus ``sum_j l_j(y) s^j log(s) / j!``.

    ``coeffs`` has shape ``(J + 1, ny)``; ``log_coeffs`` is either None or the
    same shape, zero below its first non-trivial order.
    """

    coeffs: np.ndarray
    log_coeffs: np.ndarray | None = None

    @property
    def order(self) -> int:
        return self.coeffs.shape[0] - 1

    @classmethod
    def from_ordinary(cls, a: np.ndarray, b: np.ndarray | None = None) -> "SeriesField":
        fa = _factorials(a.shape[0], a.ndim)
        return cls(a * fa, None if b is None else b * fa)

    def ordinary(self) -> np.ndarray:
        return self.coeffs / _factorials(self.coeffs.shape[0], self.coeffs.ndim)

    def log_ordinary(self) -> np.ndarray:
        if self.log_coeffs is None:
            return np.zeros_like(self.coeffs)
        return self.log_coeffs / _factorials(self.coeffs.shape[0], self.coeffs.ndim)

    def _plain(self) -> np.ndarray:
        if self.log_coeffs is not None and np.any(self.log_coeffs):
            raise SeriesError("operation not defined for series carrying a log term")
        return self.ordinary()

    def __add__(self, other: "SeriesField") -> "SeriesField":
        n = min(self.order, other.order) + 1
        logs = None
        if self.log_coeffs is not None or other.log_coeffs is not None:
            logs = self.log_ordinary()[:n] + other.log_ordinary()[:n]
        return SeriesField.from_ordinary(self.ordinary()[:n] + other.ordinary()[:n], logs)

    def __mul__(self, other: "SeriesField") -> "SeriesField":
        n = min(self.order, other.order) + 1
        return SeriesField.from_ordinary(taylor.mul(self._plain()[:n], other._plain()[:n]))

    def evaluate(self, s) -> np.ndarray:
        """Values at each s (leading axis) and grid point."""
        s = np.asarray(s, dtype=float)
        out = taylor.evaluate(self.ordinary()[:, None], s[:, None])
        if self.log_coeffs is not None:
            out = out + np.log(s)[:, None] * taylor.evaluate(self.log_ordinary()[:, None], s[:, None])
        return out


def series_pow_real(a: SeriesField, r: float) -> SeriesField:
    """``a^r`` through exp/log recurrences (repeated squaring for integer r)."""
    c = a._plain()
    if np.min(np.abs(c[0])) == 0.0:
        raise SeriesError("leading coefficient vanishes")
    if float(r).is_integer():
        return SeriesField.from_ordinary(taylor.power(c, r))
    if np.any(c[0] < 0):
        raise SeriesError("real power of a series with negative leading coefficient")
    return SeriesField.from_ordinary(taylor.exp(r * taylor.log(c)))


# -- spectral calculus on the periodic y grid ---------------------------------

def spectral_dy(values: np.ndarray, period: float, k: int = 1) -> np.ndarray:
    n = values.shape[-1]
    xi = 2j * np.pi * np.fft.rfftfreq(n, d=period / n)
    mult = xi**k
    if k % 2 and n % 2 == 0:
        mult[-1] = 0.0
    return np.fft.irfft(np.fft.rfft(values, axis=-1) * mult, n=n, axis=-1)


def spectral_interpolate(values: np.ndarray, y0: float, period: float, y) -> np.ndarray:
    """Trigonometric interpolant of grid samples (last axis) at arbitrary y."""
    n = values.shape[-1]
    hat = np.fft.rfft(values, axis=-1) / n
    w = np.full(hat.shape[-1], 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    y = np.asarray(y, dtype=float)
    phase = np.exp(2j * np.pi * np.multiply.outer((y - y0) / period, np.arange(hat.shape[-1])))
    return np.real(np.tensordot(hat * w, phase, axes=([-1], [-1])))


# -- bivariate (s, log s) arithmetic -------------------------------------------

def _euler(e: np.ndarray) -> np.ndarray:
    k = np.arange(e.shape[0], dtype=float).reshape((-1,) + (1,) * (e.ndim - 1))
    out = k * e
    r = np.arange(1, e.shape[1], dtype=float).reshape((1, -1) + (1,) * (e.ndim - 2))
    out[:, :-1] += r * e[:, 1:]
    return out


def _shift2(e: np.ndarray) -> np.ndarray:
    out = np.zeros_like(e)
    out[2:] = e[:-2]
    return out


def _power_log_binomial(A: np.ndarray, B: np.ndarray, q: float, R: int) -> np.ndarray:
    """(A + L B)^q truncated at L^R; A[0] > 0, B has no constant term."""
    out = np.zeros((A.shape[0], R + 1) + A.shape[1:])
    Bp = taylor.constant(np.ones(A.shape[1:]), A.shape[0] - 1)
    for r in range(R + 1):
        coef = binom(q, r)
        if r and not np.any(Bp):
            break
        if coef != 0.0:
            out[:, r] = coef * taylor.mul(taylor.power(A, q - r), Bp)
        Bp = taylor.mul(Bp, B)
    return out


def _log_depth(B: np.ndarray, order: int) -> int:
    nz = np.flatnonzero(np.any(B != 0, axis=tuple(range(1, B.ndim))))
    return 0 if nz.size == 0 else order // int(nz[0]) if nz[0] > 0 else order


def residual_series(A: np.ndarray, B: np.ndarray, lam: np.ndarray, p: float, period: float,
                    order: int) -> np.ndarray:
    """Coefficients ``e[k, r, y]`` of ``s^2 E`` for ``rho = A + log(s) B``.

    ``A``, ``B`` and ``lam`` are ordinary coefficient arrays; everything is
    truncated at ``s^order``.
    """
    n = order + 1
    A = taylor._pad(A, n)
    B = taylor._pad(B, n)
    lam = taylor._pad(lam, n)
    R = max(1, _log_depth(B, order))
    rho = np.zeros((n, R + 1) + A.shape[1:])
    rho[:, 0] = A
    rho[:, 1] = B
    d1 = _euler(rho)
    d2 = _euler(d1)
    yy = spectral_dy(rho, period, 2)
    powr = _power_log_binomial(A, B, p + 1.0, R)
    nonlin = np.zeros_like(powr)
    for k in range(n):
        nonlin[k] = np.einsum("i...,ir...->r...", lam[: k + 1], powr[k::-1])
    c = nonlinear_constant(p)
    return d2 - d1 - (4.0 / p) * d1 - _shift2(yy) + c * (rho - nonlin)


def linear_coefficient(k: int, p: float) -> float:
    """Coefficient of a_k in the s^k term of s^2 E: (k + 1)(k - 2 - 4/p)."""
    return (k + 1.0) * (k - 2.0 - 4.0 / p)


def log_exponent(p: float) -> int | None:
    """``2 + 4/p`` when 4/p is a positive integer, else None."""
    q = 4.0 / p
    n = round(q)
    return int(n) + 2 if abs(q - n) < 1e-12 and n >= 1 else None


def lambda_taylor_at_boundary(m: ConformalMap, y, order: int) -> SeriesField:
    """Taylor data of ``lam(s, y) = f'(y - s) g'(y + s)`` at ``s = 0``.

    Taylor jets of f', g' about each y are multiplied after the substitution
    ``e = -s`` on the f' side.  The constant term is checked against 1 and then
    set to exactly 1.
    """
    y = np.asarray(y, dtype=float)
    fj, gj = m.boundary_jets(y, order + 1)
    f1 = taylor.derivative(fj)
    g1 = taylor.derivative(gj)
    sign = (-1.0) ** np.arange(order + 1)
    lam = taylor.mul(f1 * sign[:, None], g1)
    defect = float(np.max(np.abs(lam[0] - 1.0)))
    if defect > 1e-8:
        raise SeriesError(f"lambda(0, y) deviates from 1 by {defect:.3g}")
    lam[0] = 1.0
    return SeriesField.from_ordinary(lam)


@dataclass
class ParametrixBundle:
    rho: SeriesField
    p: float
    lambda_series: SeriesField
    y: np.ndarray
    period: float
    cmap: ConformalMap | None = None
    log_start: int | None = None
    reinsertion_defect: float = 0.0
    tail: np.ndarray = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return self.rho.order

    def _rho_biv(self) -> np.ndarray:
        a, b = self.rho.ordinary(), self.rho.log_ordinary()
        return np.stack([a, b], axis=1)

    def lam(self, s) -> np.ndarray:
        """Pointwise conformal factor on the grid (exact map when available)."""
        s = np.asarray(s, dtype=float)
        if self.cmap is None:
            return self.lambda_series.evaluate(s)
        return self.cmap.conformal_factor(s[:, None], self.y[None, :])

    def rho_value(self, s) -> np.ndarray:
        return self.rho.evaluate(s)


def _biv_eval(e: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Evaluate ``sum e[k, r] s^k L^r`` at each s (leading axis of result)."""
    L = np.log(s)[:, None]
    out = 0.0
    for r in range(e.shape[1] - 1, -1, -1):
        out = out * L + taylor.evaluate(e[:, r][:, None], s[:, None])
    return out


def build_parametrix(lambda_series: SeriesField, p: float, J: int, y, period: float,
                     cmap: ConformalMap | None = None, tail_orders: int = 20,
                     tol: float = 1e-9) -> ParametrixBundle:
    """Order-by-order solution for rho_1..rho_J (plus log coefficients when
    4/p is an integer).  Each order re-evaluates the residual series and reads
    off the coefficient to be cancelled."""
    if J < 1:
        raise SeriesError("truncation order J must be at least 1")
    lam_ord = lambda_series.ordinary()
    if np.max(np.abs(lam_ord[0] - 1.0)) > 1e-8:
        raise SeriesError("lambda series must have constant term 1")
    if lam_ord.shape[0] <= J:
        raise SeriesError(f"lambda series of order {lam_ord.shape[0] - 1} cannot support J={J}")
    ny = lam_ord.shape[1]
    m = log_exponent(p)
    if m is not None and J >= 2 * m:
        raise SeriesError(f"p={p}: J={J} needs log^2 terms (supported only up to J={2 * m - 1})")
    use_log = m is not None and J >= m
    A = np.zeros((J + 1, ny))
    A[0] = 1.0
    B = np.zeros((J + 1, ny))
    for k in range(1, J + 1):
        e = residual_series(A[: k + 1], B[: k + 1], lam_ord[: k + 1], p, period, k)
        if use_log and k == m:
            B[k] = -e[k, 0] / (2.0 * k - 1.0 - 4.0 / p)
        elif use_log and k > m:
            B[k] = -e[k, 1] / linear_coefficient(k, p)
            A[k] = -(e[k, 0] + (2.0 * k - 1.0 - 4.0 / p) * B[k]) / linear_coefficient(k, p)
        else:
            A[k] = -e[k, 0] / linear_coefficient(k, p)

    # re-insertion: every s^k L^r coefficient with k <= J must vanish
    K = min(lam_ord.shape[0] - 1, J + tail_orders)
    e = residual_series(A, B, lam_ord[: K + 1], p, period, K)
    scale = 1.0 + np.max(np.abs(A)) + np.max(np.abs(B))
    defect = float(np.max(np.abs(e[: J + 1]))) / scale
    if defect > tol:
        raise SeriesError(f"residual re-insertion left {defect:.3g} at orders <= J")
    e[: J + 1] = 0.0
    rho = SeriesField.from_ordinary(A, B if use_log else None)
    return ParametrixBundle(rho=rho, p=p, lambda_series=lambda_series, y=np.asarray(y, float),
                            period=period, cmap=cmap, log_start=m if use_log else None,
                            reinsertion_defect=defect, tail=e)


@dataclass
class ParametrixValues:
    v: np.ndarray
    v_s: np.ndarray
    residual: np.ndarray
    series_fraction: float


def eval_parametrix(b: ParametrixBundle, s) -> ParametrixValues:
    """``v~``, ``d v~/ds`` and the residual ``E~`` on the y grid.

    ``E~`` is taken pointwise from whichever of two routes is more accurate:
    the tail of the residual series (orders above J, using the Taylor data of
    lambda) or the direct expression with the exact conformal factor.  The
    direct route loses roughly ``eps * |c v~^(p+1)|`` to cancellation, the
    series route is limited by its last retained terms.
    """
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise SeriesError("the parametrix is singular at s = 0")
    p = b.p
    c = nonlinear_constant(p)
    rb = b._rho_biv()
    rho = _biv_eval(rb, s)
    if np.any(rho <= 0.5) or np.any(rho >= 1.5):
        raise SeriesError("|rho - 1| >= 1/2 on the requested s range; reduce s0")
    d1c = _euler(rb)
    d1 = _biv_eval(d1c, s)
    d2 = _biv_eval(_euler(d1c), s)
    yy = _biv_eval(spectral_dy(rb, b.period, 2), s)
    lam = b.lam(s)
    nl = lam * rho ** (p + 1)
    S = s[:, None]
    pre = S ** (-2.0 / p - 2.0)
    direct = pre * (d2 - d1 - (4.0 / p) * d1 - S**2 * yy + c * (rho - nl))
    floor = 10 * EPS * pre * (np.abs(d2) + (1 + 4.0 / p) * np.abs(d1) + np.abs(S**2 * yy)
                              + c * (np.abs(rho) + np.abs(nl)))
    tail = b.tail
    K = tail.shape[0] - 1
    series = pre * _biv_eval(tail, s)
    L = np.abs(np.log(S))
    last = sum(np.abs(tail[K - i, r]) * S ** (K - i) * L**r for i in range(2) for r in range(tail.shape[1]))
    trunc = pre * last
    pick = trunc < floor
    E = np.where(pick, series, direct)
    v = S ** (-2.0 / p) * rho
    v_s = S ** (-2.0 / p - 1.0) * (d1 - (2.0 / p) * rho)
    return ParametrixValues(v=v, v_s=v_s, residual=E, series_fraction=float(pick.mean()))


def residual_slope(b: ParametrixBundle, s0: float, n: int = 13, ratio: float = 64.0) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares log-log slope of ``max_y |E~(s, .)|`` over ``[s0/ratio, s0]``."""
    s = np.geomspace(s0 / ratio, s0, n)
    E = np.max(np.abs(eval_parametrix(b, s).residual), axis=1)
    pos = E > 0
    if np.count_nonzero(pos) < 2:
        return math.inf, s, E  # exact parametrix
    slope = float(np.polyfit(np.log(s[pos]), np.log(E[pos]), 1)[0])
    return slope, s, E


PARAMETRIX_HEADER = ["j", "log_power", "y", "rho_j"]
SWEEP_HEADER = ["s", "max_abs_residual"]


def export_parametrix_csv(b: ParametrixBundle, path: Path, s0: float | None = None) -> list[Path]:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PARAMETRIX_HEADER)
        tables = [(0, b.rho.coeffs)]
        if b.rho.log_coeffs is not None:
            tables.append((1, b.rho.log_coeffs))
        for r, tab in tables:
            for j in range(tab.shape[0]):
                if r and not np.any(tab[j]):
                    continue
                for yv, val in zip(b.y, tab[j]):
                    w.writerow([j, r, f"{yv:.15e}", f"{val:.15e}"])
    out = [path]
    if s0 is not None:
        _, s, E = residual_slope(b, s0)
        sweep = path.with_name(path.stem + "_residual.csv")
        with open(sweep, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SWEEP_HEADER)
            for row in zip(s, E):
                w.writerow([f"{v:.15e}" for v in row])
        out.append(sweep)
    return out
