"""Minkowski-conformal straightening of the region below a space-like surface.

The map is ``x + t = f(y - s)``, ``x - t = g(y + s)`` with ``f = h o g`` and
``f' g' = 1`` on the boundary.  Parametrising the boundary point by its
x-coordinate ``X(y) = (f(y) + g(y)) / 2`` turns the defining ODE for g into

    X'(y) = (1 - sigma'(X)^2)^(-1/2),    X(0) = x*,  x* - sigma(x*) = 0,

so that ``g = X - sigma(X)``, ``f = X + sigma(X)`` and
``f' = sqrt((1 + sigma'(X)) / (1 - sigma'(X))) = 1 / g'``.  The parameter y is
Minkowski arclength along the surface.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from . import taylor
from .surface import HProfile, SigmaSurface, _solve_monotone, spacelike_margin


class OutOfRegion(ValueError):
    """A point outside the region covered by the map."""


def _rate(surface: SigmaSurface, x):
    d = surface.slope(x)
    return 1.0 / np.sqrt(1.0 - d * d)


@dataclass
class ConformalMap:
    surface: SigmaSurface
    order: int
    x_star: float
    y_window: tuple[float, float]
    y_range: tuple[float, float]
    _forward: object = field(repr=False)
    _backward: object = field(repr=False)
    _ytab: np.ndarray = field(repr=False)
    _xtab: np.ndarray = field(repr=False)

    # -- boundary parametrisation ------------------------------------------

    def X(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        lo, hi = self.y_range
        if np.any(y < lo - 1e-12) or np.any(y > hi + 1e-12):
            raise OutOfRegion(f"y outside the built span [{lo:.6g}, {hi:.6g}]")
        out = np.empty(y.shape)
        pos = y >= 0
        if np.any(pos):
            out[pos] = self._forward(y[pos])[0]
        if np.any(~pos):
            out[~pos] = self._backward(y[~pos])[0]
        return out

    def Y(self, X) -> np.ndarray:
        """Inverse of X(y): Newton on the dense ODE solution, table-bracketed."""
        X = np.asarray(X, dtype=float)
        if np.any(X < self._xtab[0]) or np.any(X > self._xtab[-1]):
            raise OutOfRegion("x outside the built span of the boundary parametrisation")
        y = np.interp(X, self._xtab, self._ytab)
        for _ in range(8):
            r = self.X(np.clip(y, *self.y_range)) - X
            y = y - r / _rate(self.surface, X - r)
            if np.max(np.abs(r), initial=0.0) < 1e-14 * max(1.0, np.max(np.abs(X), initial=0.0)):
                break
        return y

    def f(self, y):
        X = self.X(y)
        return X + self.surface(X)

    def g(self, y):
        X = self.X(y)
        return X - self.surface(X)

    def fprime(self, y):
        d = self.surface.slope(self.X(y))
        return np.sqrt((1.0 + d) / (1.0 - d))

    def gprime(self, y):
        return 1.0 / self.fprime(y)

    def boundary_jets(self, y, order: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Ordinary Taylor coefficients of f and g about each y (order+1 terms)."""
        order = self.order + 2 if order is None else order
        y = np.asarray(y, dtype=float)
        X0 = self.X(y)
        sig = self.surface.jet(X0, order)
        d = taylor.derivative(sig)
        one_minus = -taylor.mul(d, d)
        one_minus[0] += 1.0
        rate = taylor.power(one_minus, -0.5)
        # X(y0 + e) = X0 + sum a_k e^k with (k+1) a_{k+1} = [rate o (X - X0)]_k
        dX = np.zeros((order + 1,) + y.shape)
        for k in range(order):
            comp = taylor.compose(rate[: k + 1], dX[: k + 1])
            dX[k + 1] = comp[k] / (k + 1)
        s_of_y = taylor.compose(sig, dX)
        xj = dX.copy()
        xj[0] = X0
        return xj + s_of_y, xj - s_of_y

    def derivative_tables(self, y, order: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """f^(k)(y), g^(k)(y) for k = 0..order (default J+2)."""
        fj, gj = self.boundary_jets(y, order)
        return taylor.to_derivatives(fj), taylor.to_derivatives(gj)

    # -- the map ------------------------------------------------------------

    def conformal_factor(self, s, y) -> np.ndarray:
        s, y = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(y, dtype=float))
        return self.fprime(y - s) * self.gprime(y + s)

    def jacobian(self, s, y) -> np.ndarray:
        """d(t, x)/d(s, y), shape (2, 2) + broadcast shape."""
        s, y = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(y, dtype=float))
        fp, gp = self.fprime(y - s), self.gprime(y + s)
        return 0.5 * np.array([[-fp - gp, fp - gp], [-fp + gp, fp + gp]])

    def _solve_null(self, value, sign: float) -> np.ndarray:
        """X with X + sign*sigma(X) = value (monotone), vectorised Newton with
        a bisection fallback inside table brackets."""
        value = np.asarray(value, dtype=float)
        tab = self._xtab + sign * self.surface(self._xtab)
        if np.any(value < tab[0]) or np.any(value > tab[-1]):
            raise OutOfRegion("null coordinate outside the built span")
        i = np.clip(np.searchsorted(tab, value), 1, tab.size - 1)
        lo, hi = self._xtab[i - 1], self._xtab[i]
        X = np.interp(value, tab, self._xtab)
        for _ in range(60):
            j = self.surface.jet(X, 1)
            r = X + sign * j[0] - value
            if np.max(np.abs(r), initial=0.0) < 1e-14 * max(1.0, np.max(np.abs(value), initial=0.0)):
                break
            lo = np.where(r < 0, X, lo)
            hi = np.where(r > 0, X, hi)
            step = X - r / (1.0 + sign * j[1])
            bad = (step < lo) | (step > hi)
            X = np.where(bad, 0.5 * (lo + hi), step)
        return X

    def f_inverse(self, a):
        return self.Y(self._solve_null(a, +1.0))

    def g_inverse(self, b):
        return self.Y(self._solve_null(b, -1.0))


def _x_star(surface: SigmaSurface) -> float:
    return _solve_monotone(lambda x: x - float(surface(x)), 0.0)


def solve_fg(h: HProfile, yspan: tuple[float, float] | None = None, order: int = 9,
             s_max: float = 1.0) -> ConformalMap:
    """Integrate the boundary ODE and package f, g and their derivative tables.

    ``yspan`` defaults to the image of ``[-L_x, L_x]``; the ODE is integrated
    on that window widened by ``max(1, 2*s_max)`` so that lambda(s, y) can be
    evaluated for ``s <= s_max`` across the whole window.
    """
    surface = h.surface
    spacelike_margin(surface)
    if not (h.dh.min() > 0 and np.isfinite(h.dh).all()):
        raise ValueError("h' must be positive and bounded")
    xs = _x_star(surface)
    L = surface.half_width
    pad = max(1.0, 2.0 * s_max)

    def rhs_y(_, X):
        return _rate(surface, X)

    def rhs_x(X, _):
        d = float(surface.slope(X))
        return [np.sqrt(1.0 - d * d)]

    # arclength of the window ends, then the y-ODE out to the padded span
    ends = []
    for xe in (-L, L):
        sol = solve_ivp(rhs_x, (xs, xe), [0.0], method="DOP853",
                        rtol=1e-13, atol=1e-13)
        ends.append(float(sol.y[0, -1]))
    window = (ends[0], ends[1]) if yspan is None else tuple(map(float, yspan))
    y_range = (min(window[0], 0.0) - pad, max(window[1], 0.0) + pad)
    kw = dict(method="DOP853", rtol=1e-13, atol=1e-13, dense_output=True)
    fwd = solve_ivp(rhs_y, (0.0, y_range[1]), [xs], **kw)
    bwd = solve_ivp(rhs_y, (0.0, y_range[0]), [xs], **kw)
    if fwd.status != 0 or bwd.status != 0:
        raise ArithmeticError("boundary ODE integration failed (step-size underflow)")
    ytab = np.linspace(y_range[0], y_range[1], 20001)
    xtab = np.where(ytab >= 0, fwd.sol(np.maximum(ytab, 0.0))[0], bwd.sol(np.minimum(ytab, 0.0))[0])
    return ConformalMap(surface=surface, order=order, x_star=xs, y_window=window, y_range=y_range,
                        _forward=fwd.sol, _backward=bwd.sol, _ytab=ytab, _xtab=xtab)


def evaluate_map(m: ConformalMap, s, y) -> tuple[np.ndarray, np.ndarray]:
    s, y = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(y, dtype=float))
    a, b = m.f(y - s), m.g(y + s)
    return 0.5 * (a - b), 0.5 * (a + b)


def invert_map(m: ConformalMap, t, x, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
    ya = m.f_inverse(x + t)
    yb = m.g_inverse(x - t)
    s, y = 0.5 * (yb - ya), 0.5 * (ya + yb)
    if np.any(s < -tol):
        i = np.unravel_index(np.argmin(s), s.shape)
        raise OutOfRegion(f"point (t={t[i]:.6g}, x={x[i]:.6g}) lies above the surface")
    return np.maximum(s, 0.0), y


@dataclass
class ConformalityReport:
    residual: float
    lambda_min: float
    boundary_lambda_error: float
    boundary_jacobian_error: float
    determinant_error: float
    ratio_frozen_y_error: float
    ratio_frozen_x_error: float
    null_slope_error: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _richardson(values: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Neville extrapolation to h = 0 along axis 0."""
    p = [v.copy() for v in values]
    n = len(p)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = (h[i + k] * p[i] - h[i] * p[i + 1]) / (h[i + k] - h[i])
    return p[0]


def conformality_check(m: ConformalMap, s, y, step: float = 1e-5) -> ConformalityReport:
    """Finite-difference Jacobians of the map against the conformal identity,
    plus the boundary identities.  Diagnostic; never raises."""
    S, Yg = np.meshgrid(np.asarray(s, float), np.asarray(y, float), indexing="ij")
    tp, xp = evaluate_map(m, S + step, Yg)
    tm, xm = evaluate_map(m, S - step, Yg)
    tq, xq = evaluate_map(m, S, Yg + step)
    tr, xr = evaluate_map(m, S, Yg - step)
    J = np.array([[(tp - tm), (tq - tr)], [(xp - xm), (xq - xr)]]) / (2 * step)
    eta = np.diag([-1.0, 1.0])
    lam = m.conformal_factor(S, Yg)
    pull = np.einsum("ai...,ab,bj...->ij...", J, eta, J)
    push = np.einsum("ai...,ij,bj...->ab...", J, eta, J)
    res = 0.0
    for M in (pull, push):
        res = max(res, float(np.max(np.abs(M - lam * eta[:, :, None, None]) / lam)))

    yb = np.asarray(y, float)
    zero = np.zeros_like(yb)
    _, xb = evaluate_map(m, zero, yb)
    sp = m.surface.slope(xb)
    closed = np.array([[-np.ones_like(sp), sp], [-sp, np.ones_like(sp)]]) / np.sqrt(1 - sp**2)
    Jb = m.jacobian(zero, yb)
    det = Jb[0, 0] * Jb[1, 1] - Jb[0, 1] * Jb[1, 0]
    lam_b = m.conformal_factor(zero, yb)

    target = np.sqrt(1 - sp**2)
    hs = 1e-3 * 2.0 ** -np.arange(5)
    ratios = []
    for hh in hs:
        t, x = evaluate_map(m, np.full_like(yb, hh), yb)
        ratios.append((m.surface(x) - t) / hh)
    # frozen y: the limit refers to sigma'(x) at the boundary point x(0, y)
    err_y = float(np.max(np.abs(_richardson(np.array(ratios), hs) - target)))
    ratios = []
    for hh in hs:
        sx, _ = invert_map(m, m.surface(xb) - hh, xb)
        ratios.append(hh / sx)
    err_x = float(np.max(np.abs(_richardson(np.array(ratios), hs) - target)))

    # null segments (s + a, y + a) keep x + t fixed, (s + a, y - a) keep x - t fixed
    a = 0.05
    t0, x0 = evaluate_map(m, S, Yg)
    t1, x1 = evaluate_map(m, S + a, Yg + a)
    t2, x2 = evaluate_map(m, S + a, Yg - a)
    null_err = float(max(np.max(np.abs((x1 + t1) - (x0 + t0))), np.max(np.abs((x2 - t2) - (x0 - t0)))))

    return ConformalityReport(
        residual=res,
        lambda_min=float(lam.min()),
        boundary_lambda_error=float(np.max(np.abs(lam_b - 1))),
        boundary_jacobian_error=float(np.max(np.abs(Jb - closed))),
        determinant_error=float(np.max(np.abs(det + 1))),
        ratio_frozen_y_error=err_y,
        ratio_frozen_x_error=err_x,
        null_slope_error=null_err,
    )


MAP_HEADER = ["y", "g", "gp", "f", "fp"]
FIELD_HEADER = ["s", "y", "t", "x", "lambda"]


def export_map_csv(m: ConformalMap, path: Path, y=None, s=None) -> list[Path]:
    """map.csv with (y, g, g', f, f') and map_field.csv with (s, y, t, x, lambda)."""
    path = Path(path)
    y = np.linspace(*m.y_window, 257) if y is None else np.asarray(y, float)
    s = np.linspace(0.0, 0.5, 11) if s is None else np.asarray(s, float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MAP_HEADER)
        for row in zip(y, m.g(y), m.gprime(y), m.f(y), m.fprime(y)):
            w.writerow([f"{v:.15e}" for v in row])
    field_path = path.with_name(path.stem + "_field.csv")
    S, Yg = np.meshgrid(s, y, indexing="ij")
    t, x = evaluate_map(m, S, Yg)
    lam = m.conformal_factor(S, Yg)
    with open(field_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_HEADER)
        for row in zip(S.ravel(), Yg.ravel(), t.ravel(), x.ravel(), lam.ravel()):
            w.writerow([f"{v:.15e}" for v in row])
    return [path, field_path]
