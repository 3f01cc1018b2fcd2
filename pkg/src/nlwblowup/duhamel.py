"""Zero-data Duhamel integral for the singular wave equation, mode by mode.

    v^(s, xi) = int_0^s khat(s, xi; s1) F^(s1, xi) ds1

on a geometric grid ``s_m = s_min r^m``.  Every mode kernel separates as
``khat(s, s1) = a(s) b(s1) - c(s) d(s1)`` (Bessel products, or powers of s at
xi = 0), so the integral up to each node is a running sum of panel integrals.
F^ is interpolated in ``tau = log s`` by degree-7 Lagrange stencils that never
reach above the target node; missing stencil points below ``s_min`` and the
piece ``(0, s_min]`` use a per-mode power law fitted to the two lowest nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .kernel import SingularKernel

STENCIL = 8
GHOSTS = STENCIL - 1
HALF = 3  # standard stencil covers panel i with nodes i-3 .. i+4


class TailNotConverged(ArithmeticError):
    def __init__(self, estimate: float, tol: float):
        super().__init__(f"tail error estimate {estimate:.3g} exceeds {tol:.3g}; lower s_min")
        self.estimate = estimate
        self.tol = tol


class DecayTooSlow(ArithmeticError):
    """Forcing decays no faster than s^(nu - 3/2) at s -> 0."""


def geometric_grid(s_top: float, s_min: float, ratio: float = 1.1) -> np.ndarray:
    """Geometric nodes ending exactly at ``s_top``; the lowest is <= ``s_min``."""
    n = int(math.ceil(math.log(s_top / s_min) / math.log(ratio)))
    return s_top * ratio ** (np.arange(-n, 1, dtype=float))


def _lagrange_tables(ratio: float, nodes: np.ndarray) -> np.ndarray:
    """B[o, q, m]: stencil basis m at quadrature point q of a panel whose
    lower node sits at offset o inside the stencil."""
    u0 = np.log1p((ratio - 1.0) * nodes) / np.log(ratio)
    out = np.empty((STENCIL, nodes.size, STENCIL))
    ks = np.arange(STENCIL)
    for o in range(STENCIL - 1):
        u = o + u0
        for m in range(STENCIL):
            others = ks[ks != m]
            out[o, :, m] = np.prod((u[:, None] - others) / (m - others), axis=1)
    return out


@dataclass
class TailInfo:
    estimate: float
    exponent_min: float


class DuhamelOperator:
    """Precomputed kernel factors for a fixed grid, mode set and order nu."""

    def __init__(self, nu: float, s: np.ndarray, xi: np.ndarray, quad: int | None = None):
        self.kernel = SingularKernel(nu)
        self.nu = nu
        s = np.asarray(s, dtype=float)
        ratio = s[1] / s[0]
        if not np.allclose(s[1:] / s[:-1], ratio, rtol=1e-10, atol=0):
            raise ValueError("the s grid must be geometric")
        if s.size < STENCIL + 2:
            raise ValueError(f"need at least {STENCIL + 2} s nodes")
        self.s = s
        self.ratio = ratio
        self.xi = np.asarray(xi, dtype=float)
        z = 2 * np.pi * np.abs(self.xi)
        self.z = z
        width = s[-1] * (1 - 1 / ratio)
        if quad is None:
            quad = max(10, int(np.ceil(2.0 * z.max() * width)) + 10)
        x, w = np.polynomial.legendre.leggauss(quad)
        x, w = 0.5 * (x + 1), 0.5 * w
        self.basis = _lagrange_tables(ratio, x)
        # quadrature points of panel i: s_i (1 + (r - 1) x_q)
        sq = s[:-1, None] * (1 + (ratio - 1) * x[None, :])
        self.wq = (s[:-1, None] * (ratio - 1)) * w[None, :]
        self.a, self.c, self.da, self.dc = self._outer(s)
        self.b, self.d = self._inner(sq)

    # -- separable kernel factors ------------------------------------------

    def _outer(self, s: np.ndarray):
        nu, z = self.nu, self.z
        S = s[:, None]
        a = np.empty((s.size, z.size))
        c, da, dc = np.empty_like(a), np.empty_like(a), np.empty_like(a)
        e = z == 0
        a[:, e] = S ** (nu + 0.5) / (2 * nu)
        c[:, e] = S ** (0.5 - nu) / (2 * nu)
        da[:, e] = (nu + 0.5) * S ** (nu - 0.5) / (2 * nu)
        dc[:, e] = (0.5 - nu) * S ** (-0.5 - nu) / (2 * nu)
        if np.any(~e):
            x = S * z[None, ~e]
            root = np.sqrt(S)
            J, Y = special.jv(nu, x), special.yv(nu, x)
            J1, Y1 = special.jv(nu + 1, x), special.yv(nu + 1, x)
            zz = z[None, ~e]
            a[:, ~e] = 0.5 * np.pi * root * Y
            c[:, ~e] = 0.5 * np.pi * root * J
            da[:, ~e] = 0.5 * np.pi * root * ((nu + 0.5) / S * Y - zz * Y1)
            dc[:, ~e] = 0.5 * np.pi * root * ((nu + 0.5) / S * J - zz * J1)
        return a, c, da, dc

    def _inner(self, sq: np.ndarray):
        nu, z = self.nu, self.z
        S = sq[..., None]
        b = np.empty(sq.shape + (z.size,))
        d = np.empty_like(b)
        e = z == 0
        b[..., e] = S ** (0.5 - nu)
        d[..., e] = S ** (0.5 + nu)
        if np.any(~e):
            x = S * z[~e]
            root = np.sqrt(S)
            b[..., ~e] = root * special.jv(nu, x)
            d[..., ~e] = root * special.yv(nu, x)
        return b, d

    # -- small-s model ------------------------------------------------------

    def _tail_integrals(self, F0: np.ndarray, q: np.ndarray, live: np.ndarray):
        """int_0^{s_min} b F and int_0^{s_min} d F for F = F0 (s1/s_min)^q,
        with the relative size of the neglected kernel terms."""
        nu, z, sm = self.nu, self.z, self.s[0]

        TB = np.zeros(z.size, dtype=complex)
        TD = np.zeros(z.size, dtype=complex)
        rel = np.zeros(z.size)
        e = (z == 0) & live
        # int_0^sm s1^a (s1/sm)^q ds1 = sm^(a+1) / (a + 1 + q)
        TB[e] = sm ** (1.5 - nu) / (1.5 - nu + q[e])
        TD[e] = sm ** (1.5 + nu) / (1.5 + nu + q[e])
        m = (z > 0) & live
        if np.any(m):
            zh = z[m] / 2
            qq = q[m]
            def pw(ex):
                return sm ** (ex + 1) / (ex + 1 + qq)

            jser = sum((-1) ** k * zh ** (2 * k + nu) / (math.factorial(k) * special.gamma(k + nu + 1))
                       * pw(2 * k + nu + 0.5) for k in range(2))
            yser = -sum(special.gamma(nu - k) / math.factorial(k) * zh ** (2 * k - nu) * pw(2 * k - nu + 0.5)
                        for k in range(2) if k < nu) / np.pi
            if abs(nu - round(nu)) > 1e-12:
                yser = yser + jser / np.tan(nu * np.pi)
            TB[m] = jser
            TD[m] = yser
            x = z[m] * sm
            rel[m] = (0.5 * x) ** min(4.0, 2 * nu) * (1 + np.abs(np.log(np.maximum(x, 1e-300))))
        return F0 * TB, F0 * TD, rel

    def apply(self, Fhat: np.ndarray, tol: float | None = 1e-8, noise: float = 1e-12):
        """Return (v^, d v^/ds, TailInfo) at every node; ``Fhat`` has shape
        (len(s), len(xi))."""
        F = np.asarray(Fhat, dtype=complex)
        N, nx = F.shape
        nu = self.nu
        # power-law fit per mode from the two lowest nodes
        # a mode counts when it rises above ``noise`` times the largest coefficient anywhere
        scale = max(float(np.max(np.abs(F))), 1e-300)
        sig = (np.abs(F[:3]) > noise * scale).all(axis=0)
        live = np.abs(F[0]) > 0
        rho = np.ones(nx, dtype=complex)
        rho[live] = F[1, live] / F[0, live]
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.log(rho) / np.log(self.ratio)
        q = np.where(live, q, 0.0)
        bad = live & (q.real <= nu - 1.5)
        if np.any(bad & sig):
            raise DecayTooSlow(f"forcing decays like s^{q[bad & sig].real.min():.3f}, "
                               f"needs an exponent above nu - 3/2 = {nu - 1.5:.3f}")
        live &= ~bad
        ghosts = np.zeros((GHOSTS, nx), dtype=complex)
        for j in range(1, GHOSTS + 1):
            ghosts[GHOSTS - j, live] = F[0, live] * rho[live] ** (-j)
        Fx = np.concatenate([ghosts, F])  # index m lives at m + GHOSTS

        wb = self.wq[..., None] * self.b
        wd = self.wq[..., None] * self.d
        P = N - 1
        idx = np.arange(P)
        CB = np.zeros((N, nx), dtype=complex)
        CD = np.zeros((N, nx), dtype=complex)
        # standard panels i contribute to every target n >= i + 5
        lo = idx - HALF + GHOSTS
        ok = idx + (STENCIL - 1 - HALF) < N
        st = np.stack([Fx[lo[ok] + m] for m in range(STENCIL)], axis=1)
        G = np.einsum("qm,imx->iqx", self.basis[HALF], st)
        pb = np.einsum("iqx,iqx->ix", wb[ok], G)
        pd = np.einsum("iqx,iqx->ix", wd[ok], G)
        cb = np.cumsum(pb, axis=0)
        cd = np.cumsum(pd, axis=0)
        tgt = np.arange(N)
        use = tgt - 5
        have = (use >= 0) & (use < cb.shape[0])
        CB[have] = cb[use[have]]
        CD[have] = cd[use[have]]
        # the last four panels below each target use stencils ending at it
        for o in range(HALF, STENCIL - 1):
            i = idx
            n = i + (STENCIL - 1 - o)
            sel = n < N
            i, n = i[sel], n[sel]
            low = n - (STENCIL - 1) + GHOSTS
            st = np.stack([Fx[low + m] for m in range(STENCIL)], axis=1)
            G = np.einsum("qm,imx->iqx", self.basis[o], st)
            CB[n] += np.einsum("iqx,iqx->ix", wb[i], G)
            CD[n] += np.einsum("iqx,iqx->ix", wd[i], G)

        TB, TD, rel = self._tail_integrals(F[0], q, live)
        misfit = np.zeros(nx)
        pred = F[0] * rho**2
        misfit[live] = np.abs(F[2, live] - pred[live]) / np.maximum(np.abs(F[2, live]), 1e-300)
        CB += TB
        CD += TD
        v = self.a * CB - self.c * CD
        vs = self.da * CB - self.dc * CD
        err = np.abs(self.a[-1] * TB) + np.abs(self.c[-1] * TD)
        err = err * (misfit + rel)
        total = np.sqrt(np.sum(np.abs(v[-1]) ** 2))
        estimate = float(np.sqrt(np.sum(err**2)) / total) if total > 0 else 0.0
        if tol is not None and estimate > tol:
            raise TailNotConverged(estimate, tol)
        qmin = float(q[live].real.min()) if np.any(live) else float("inf")
        return v, vs, TailInfo(estimate=estimate, exponent_min=qmin)


def duhamel_apply(kr: SingularKernel, F: np.ndarray, s: np.ndarray, period: float,
                  tol: float | None = 1e-8) -> tuple[np.ndarray, np.ndarray, TailInfo]:
    """Real-space convenience wrapper: F has shape (len(s), ny) on a periodic
    y grid; returns v and dv/ds at every node."""
    F = np.asarray(F, dtype=float)
    ny = F.shape[1]
    xi = np.fft.rfftfreq(ny, d=period / ny)
    op = DuhamelOperator(kr.nu, s, xi)
    vh, vsh, info = op.apply(np.fft.rfft(F, axis=1), tol=tol)
    return np.fft.irfft(vh, n=ny, axis=1), np.fft.irfft(vsh, n=ny, axis=1), info
