"""Blowup surfaces t = sigma(x) and the characteristic profile h.

A surface carries a jet evaluator, so any number of exact x-derivatives is
available at any point; the sampled grid is what the validity checks and the
exports look at.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import expr as _expr
from . import taylor

SPACELIKE_LIMIT = 1.0 - 1e-6


class SurfaceError(ValueError):
    """Invalid surface description."""


class SpacelikeError(SurfaceError):
    def __init__(self, margin: float, x: float):
        super().__init__(f"surface is not uniformly space-like: |sigma'| = {margin:.6g} at x = {x:.6g}")
        self.margin = margin
        self.x = x


JetFn = Callable[[np.ndarray, int], np.ndarray]


@dataclass
class SigmaSurface:
    """sigma sampled on the uniform grid ``[-half_width, half_width]``.

    ``jet(x, order)`` returns ordinary Taylor coefficients of sigma about each
    entry of ``x`` (shape ``(order + 1,) + x.shape``).  ``log_excess``, when
    set, returns ``log(sigma(x) - min sigma)`` computed without cancellation;
    the Cantor construction needs it because its bumps fall far below machine
    epsilon relative to sigma near the set.
    """

    source: str
    jet: JetFn
    half_width: float = 8.0
    spacing: float = 1e-3
    log_excess: Callable[[np.ndarray], np.ndarray] | None = None
    x: np.ndarray = field(init=False, repr=False)
    values: np.ndarray = field(init=False, repr=False)
    derivative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = int(round(2 * self.half_width / self.spacing))
        self.x = np.linspace(-self.half_width, self.half_width, n + 1)
        j = self.jet(self.x, 1)
        self.values = j[0]
        self.derivative = j[1]
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.derivative))):
            raise SurfaceError(f"surface '{self.source}' is not finite on the grid")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.jet(x, 0)[0]

    def slope(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.jet(x, 1)[1]

    def derivatives(self, x, order: int) -> np.ndarray:
        """Derivative values sigma^(k)(x), k = 0..order."""
        return taylor.to_derivatives(self.jet(np.asarray(x, dtype=float), order))

    def consistency_defect(self) -> float:
        """Max mismatch between midpoint differences of sigma and averaged sigma'."""
        fd = np.diff(self.values) / np.diff(self.x)
        mid = 0.5 * (self.derivative[1:] + self.derivative[:-1])
        return float(np.max(np.abs(fd - mid))) if fd.size else 0.0


def spacelike_margin(surface: SigmaSurface) -> float:
    """max |sigma'| over the grid; raises if the surface is not space-like."""
    a = np.abs(surface.derivative)
    i = int(np.argmax(a))
    m = float(a[i])
    if m >= SPACELIKE_LIMIT:
        raise SpacelikeError(m, float(surface.x[i]))
    return m


def _check_surface(surface: SigmaSurface, tol: float | None = None) -> SigmaSurface:
    spacelike_margin(surface)
    if tol is None:
        tol = 1e-6 * (surface.spacing / 1e-3) ** 2
    # midpoint-rule truncation: |defect| <= dx^2/6 * max|sigma'''|
    d3 = np.abs(surface.derivatives(surface.x, 3)[3]).max()
    tol = max(tol, 1.01 * surface.spacing**2 / 6 * d3)
    defect = surface.consistency_defect()
    if defect > max(tol, 1e-12):
        raise SurfaceError(f"sigma and sigma' disagree by {defect:.3g} on the grid")
    return surface


def parse_sigma_expression(text: str, half_width: float = 8.0, spacing: float = 1e-3) -> SigmaSurface:
    tree = _expr.parse(text)

    def jet(x, order):
        return _expr.evaluate_jet(tree, taylor.variable(x, order))

    surface = SigmaSurface(source=f"expr:{text}", jet=jet, half_width=half_width, spacing=spacing)
    return _check_surface(surface)


CATALOG = {
    "flat": (1, "{0}"),
    "tilt": (1, "({0})*x"),
    "gauss": (2, "({0})*exp(-(x/({1}))^2)"),
    "cos": (2, "({0})*cos(({1})*x)"),
}


def catalog_surface(spec: str, half_width: float = 8.0, spacing: float = 1e-3) -> SigmaSurface:
    """``flat:T``, ``tilt:v``, ``gauss:a,w`` or ``cos:a,k``."""
    name, _, params = spec.partition(":")
    if name not in CATALOG:
        raise SurfaceError(f"unknown catalog surface '{name}'")
    nargs, template = CATALOG[name]
    args = [a.strip() for a in params.split(",")] if params else []
    if len(args) != nargs:
        raise SurfaceError(f"catalog surface '{name}' takes {nargs} parameter(s), got {len(args)}")
    for a in args:
        float(a)
    surface = parse_sigma_expression(template.format(*args), half_width, spacing)
    surface.source = spec
    return surface


# --- compact sets ------------------------------------------------------------


@dataclass(frozen=True)
class CompactSetSpec:
    """E as a finite union of closed intervals (points allowed as [a, a])."""

    intervals: tuple[tuple[float, float], ...]
    epsilon: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise SurfaceError("epsilon must be positive")
        if not self.intervals:
            raise SurfaceError("compact set must be non-empty")
        prev = None
        for a, b in self.intervals:
            if b < a:
                raise SurfaceError(f"interval [{a}, {b}] is reversed")
            if prev is not None and a <= prev:
                raise SurfaceError("intervals overlap or are not sorted")
            prev = b

    @classmethod
    def middle_thirds(cls, depth: int, epsilon: float, a: float = 0.0, b: float = 1.0):
        from fractions import Fraction

        pieces = [(Fraction(a), Fraction(b))]
        for _ in range(depth):
            nxt = []
            for lo, hi in pieces:
                third = (hi - lo) / 3
                nxt += [(lo, lo + third), (hi - third, hi)]
            pieces = nxt
        return cls(tuple((float(lo), float(hi)) for lo, hi in pieces), epsilon)

    @classmethod
    def from_intervals(cls, intervals: Sequence[Sequence[float]], epsilon: float):
        return cls(tuple((float(a), float(b)) for a, b in intervals), epsilon)

    @property
    def gaps(self) -> list[tuple[float, float]]:
        return [(self.intervals[i][1], self.intervals[i + 1][0]) for i in range(len(self.intervals) - 1)]

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (x >= a) & (x <= b)
        return out


def _bump_jet(u: np.ndarray, slope: np.ndarray, order: int) -> np.ndarray:
    """Jet of phi(u0 + slope*e), phi the smooth 0 -> 1 step on [0, 1/2].

    phi(u) = exp(-1/u) / (exp(-1/u) + exp(-1/(1/2 - u))) on (0, 1/2).
    """
    out = np.zeros((order + 1,) + u.shape)
    out[0] = np.where(u >= 0.5, 1.0, 0.0)
    inside = (u > 1e-3) & (u < 0.5 - 1e-3)
    # the flat ends: the opposite exponential underflows, phi is exactly 0 or 1
    if np.any(inside):
        uj = taylor.variable(u[inside], order, slope[inside])
        a = taylor.exp(-taylor.reciprocal(uj))
        vj = -uj
        vj[0] += 0.5
        b = taylor.exp(-taylor.reciprocal(vj))
        out[:, inside] = taylor.div(a, a + b)
    upper = (u >= 0.5 - 1e-3) & (u < 0.5)
    out[0, upper] = 1.0
    return out


def _cantor_parts(spec: CompactSetSpec, x: np.ndarray):
    """Per-point amplitude, bump argument u and du/dx."""
    amp = np.zeros(x.shape)
    u = np.zeros(x.shape)
    du = np.zeros(x.shape)
    lo, hi = spec.intervals[0][0], spec.intervals[-1][1]
    left = x < lo
    right = x > hi
    amp[left | right] = 1.0
    u[left], du[left] = lo - x[left], -1.0
    u[right], du[right] = x[right] - hi, 1.0
    for a, b in spec.gaps:
        m = (x > a) & (x < b)
        if not np.any(m):
            continue
        width = b - a
        amp[m] = np.exp(-1.0 / width)
        da, db = x[m] - a, b - x[m]
        u[m] = np.minimum(da, db) / width
        du[m] = np.where(da <= db, 1.0, -1.0) / width
    return amp, u, du


def build_cantor_sigma(spec: CompactSetSpec, half_width: float = 2.0, spacing: float = 1e-3) -> SigmaSurface:
    """sigma = eps on E, eps*(1 + small smooth bump) off E."""

    def jet(x, order):
        x = np.asarray(x, dtype=float)
        amp, u, du = _cantor_parts(spec, x)
        phi = _bump_jet(u, du, order)
        out = spec.epsilon * amp * phi
        out[0] += spec.epsilon
        return out

    def log_excess(x):
        x = np.asarray(x, dtype=float)
        amp, u, _ = _cantor_parts(spec, x)
        out = np.full(x.shape, -np.inf)
        m = (amp > 0) & (u > 0)
        um = np.minimum(u[m], 0.5)
        with np.errstate(divide="ignore"):
            a, b = -1.0 / um, -1.0 / (0.5 - um)
        out[m] = np.log(spec.epsilon) + np.log(amp[m]) + a - np.logaddexp(a, b)
        return out

    surface = SigmaSurface(source=f"cantor:{len(spec.intervals)} intervals, eps={spec.epsilon}",
                           jet=jet, half_width=half_width, spacing=spacing, log_excess=log_excess)
    return _check_surface(surface)


def level_set(surface: SigmaSurface, x=None) -> np.ndarray:
    """Boolean mask of {sigma = min sigma} on ``x`` (default: the surface grid)."""
    x = surface.x if x is None else np.asarray(x, dtype=float)
    if surface.log_excess is not None:
        return np.isneginf(surface.log_excess(x))
    v = surface(x)
    return v <= v.min()


# --- characteristic profile --------------------------------------------------


@dataclass
class HProfile:
    """h with x + t = h(x - t) on the surface, sampled at z = x - sigma(x)."""

    z: np.ndarray
    h: np.ndarray
    dh: np.ndarray
    surface: SigmaSurface
    _interp: PchipInterpolator = field(init=False, repr=False)

    def __post_init__(self):
        self._interp = PchipInterpolator(self.z, self.h, extrapolate=True)

    def __call__(self, z) -> np.ndarray:
        return self._interp(z)

    @property
    def bounds(self) -> tuple[float, float]:
        """(eps^2, eps^-2) style bracket actually attained by h'."""
        return float(self.dh.min()), float(self.dh.max())

    def x_of_z(self, z) -> np.ndarray:
        """Solve x - sigma(x) = z (monotone, so bracketed Newton converges)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return np.array([_solve_monotone(lambda x: x - float(self.surface(x)), zi) for zi in z.ravel()]).reshape(z.shape)


def _solve_monotone(fn, target: float) -> float:
    lo, hi = target - 1.0, target + 1.0
    while fn(lo) > target:
        lo -= 2 * (hi - lo)
    while fn(hi) < target:
        hi += 2 * (hi - lo)
    return brentq(lambda x: fn(x) - target, lo, hi, xtol=1e-14, rtol=1e-15)


def solve_h(surface: SigmaSurface) -> HProfile:
    spacelike_margin(surface)
    x, s, ds = surface.x, surface.values, surface.derivative
    z = x - s
    if np.any(np.diff(z) <= 0):
        i = int(np.argmin(np.diff(z)))
        raise SpacelikeError(float(abs(ds[i])), float(x[i]))
    return HProfile(z=z, h=x + s, dh=(1 + ds) / (1 - ds), surface=surface)
