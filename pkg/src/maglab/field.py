"""Magnetic intensity functions f with Omega = f * (area form).

A MagneticField is a base intensity with analytic chart gradients plus an
ordered list of localized tubular perturbations added pointwise.  On a closed
surface, f * Omega_0 is exact iff the total integral of f vanishes; localized
perturbations are built so their surface integral is exactly zero and they
vanish identically on the core curve of their tube.

The transversal bump template is

    a(u) = u (1 - 4u^2)^4   on [-1/2, 1/2],   0 outside,

which satisfies a(0) = 0, a'(0) = 1, supp a in [-1/2, 1/2], integral 0 (odd)
and max(|a|, |a'|) = 1, and rescales as a_eps(u) = eps * a(u / eps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedSurfaceError, ChartDomainError

__all__ = [
    "ConstantField",
    "SinusoidalTorusField",
    "ZonalSphereField",
    "PolynomialField",
    "MagneticField",
    "PerturbationField",
    "bump_a",
    "bump_a_deriv",
    "is_exact",
    "add_perturbation",
    "ExactnessReport",
    "C1NormReport",
]


# -- transversal bump template ----------------------------------------------


def bump_a(u):
    if abs(u) >= 0.5:
        return 0.0
    w = 1.0 - 4.0 * u * u
    return u * w**4


def bump_a_deriv(u):
    if abs(u) >= 0.5:
        return 0.0
    w = 1.0 - 4.0 * u * u
    return w**3 * (1.0 - 36.0 * u * u)


# -- base intensities --------------------------------------------------------


class ConstantField:
    def __init__(self, value):
        self.const = float(value)

    def value(self, surface, chart, x, y):
        return self.const

    def gradient(self, surface, chart, x, y):
        return (0.0, 0.0)

    def describe(self):
        return {"kind": "constant", "value": self.const}


class SinusoidalTorusField:
    """f = A sin(2 pi (kx x + ky y) + phase) on the torus chart."""

    def __init__(self, amplitude=1.0, k=(1, 0), phase=0.0):
        self.amplitude = float(amplitude)
        self.k = (int(k[0]), int(k[1]))
        self.phase = float(phase)

    def _arg(self, x, y):
        return 2.0 * math.pi * (self.k[0] * x + self.k[1] * y) + self.phase

    def value(self, surface, chart, x, y):
        return self.amplitude * math.sin(self._arg(x, y))

    def gradient(self, surface, chart, x, y):
        s = 2.0 * math.pi * self.amplitude * math.cos(self._arg(x, y))
        return (s * self.k[0], s * self.k[1])

    def describe(self):
        return {"kind": "sinusoidal", "amplitude": self.amplitude,
                "k": list(self.k), "phase": self.phase}


class ZonalSphereField:
    """Axially symmetric intensity A * (1-|z|^2)/(1+|z|^2) (the height function).

    Odd under the hemisphere exchange, hence exact on the sphere.
    """

    def __init__(self, amplitude=1.0):
        self.amplitude = float(amplitude)

    def _signed(self, chart):
        return self.amplitude if chart == 0 else -self.amplitude

    def value(self, surface, chart, x, y):
        r2 = x * x + y * y
        return self._signed(chart) * (1.0 - r2) / (1.0 + r2)

    def gradient(self, surface, chart, x, y):
        r2 = x * x + y * y
        s = self._signed(chart) * (-4.0) / (1.0 + r2) ** 2
        return (s * x, s * y)

    def describe(self):
        return {"kind": "zonal", "amplitude": self.amplitude}


class PolynomialField:
    """f = sum c[i][j] x^i y^j on a planar chart."""

    def __init__(self, coeffs):
        self.coeffs = [[float(c) for c in row] for row in coeffs]

    def value(self, surface, chart, x, y):
        total = 0.0
        for i, row in enumerate(self.coeffs):
            for j, c in enumerate(row):
                if c != 0.0:
                    total += c * x**i * y**j
        return total

    def gradient(self, surface, chart, x, y):
        fx = 0.0
        fy = 0.0
        for i, row in enumerate(self.coeffs):
            for j, c in enumerate(row):
                if c == 0.0:
                    continue
                if i > 0:
                    fx += i * c * x ** (i - 1) * y**j
                if j > 0:
                    fy += j * c * x**i * y ** (j - 1)
        return (fx, fy)

    def describe(self):
        return {"kind": "polynomial", "coeffs": self.coeffs}


# -- tubular perturbations ----------------------------------------------------


@dataclass(frozen=True)
class C1NormReport:
    """Product-structure bound |h|_C1 <= 2 |b|_C0 + eps0 |b|_C1."""

    b_c0: float
    b_c1: float
    eps0: float

    @property
    def bound(self):
        return 2.0 * self.b_c0 + self.eps0 * self.b_c1


class PerturbationField:
    """h(t, u) = a_eps(u) b(t) / omega(t, u) in tubular coordinates.

    `tube` is a TubularChart (franks module).  Dividing by the relative area
    density omega makes the chart integral of h dA exactly zero while keeping
    h = 0 and dh/du = b(t) on the core (a(0) = 0 kills the omega correction
    there).  b must be smooth with support inside the tube's time range.
    """

    def __init__(self, tube, b, b_deriv, b_c0, b_c1, support_t=None, label=""):
        self.tube = tube
        self.b = b
        self.b_deriv = b_deriv
        self.b_c0 = float(b_c0)
        self.b_c1 = float(b_c1)
        self.support_t = support_t or tube.t_range
        self.label = label

    @property
    def chart(self):
        return self.tube.chart_id

    @property
    def eps0(self):
        return self.tube.eps0

    def c1_report(self):
        return C1NormReport(self.b_c0, self.b_c1, self.eps0)

    def norm_bound(self):
        """Conservative sup bound used when grid sampling could miss the tube."""
        # max |a| = a(1/6) for the template; omega >= omega_min on the tube
        amax = bump_a(1.0 / 6.0)
        return self.eps0 * amax * self.b_c0 / self.tube.omega_min()

    def eval_tube(self, t, u):
        """(h, dh/dt, dh/du) in tubular coordinates."""
        eps = self.eps0
        a = eps * bump_a(u / eps)
        if a == 0.0 and abs(u) >= 0.5 * eps:
            return (0.0, 0.0, 0.0)
        ap = bump_a_deriv(u / eps)
        b = self.b(t)
        bp = self.b_deriv(t)
        w, wt, wu = self.tube.omega(t, u)
        inv = 1.0 / w
        h = a * b * inv
        ht = (a * bp - a * b * wt * inv) * inv
        hu = (ap * b - a * b * wu * inv) * inv
        return (h, ht, hu)

    def value(self, surface, chart, x, y):
        if chart != self.chart:
            return 0.0
        loc = self.tube.invert(x, y)
        if loc is None:
            return 0.0
        t, u = loc
        lo, hi = self.support_t
        if not (lo < t < hi) or abs(u) >= 0.5 * self.eps0:
            return 0.0
        return self.eval_tube(t, u)[0]

    def eval(self, surface, chart, x, y):
        """(h, chart gradient of h)."""
        if chart != self.chart:
            return (0.0, (0.0, 0.0))
        loc = self.tube.invert(x, y)
        if loc is None:
            return (0.0, (0.0, 0.0))
        t, u = loc
        lo, hi = self.support_t
        if not (lo < t < hi) or abs(u) >= 0.5 * self.eps0:
            return (0.0, (0.0, 0.0))
        h, ht, hu = self.eval_tube(t, u)
        # chart gradient = dpsi^{-T} (ht, hu)
        (px, pu), (qx, qu) = self.tube.dpsi(t, u)  # columns d psi/dt, d psi/du
        det = px * qu - pu * qx
        gx = (qu * ht - qx * hu) / det
        gy = (-pu * ht + px * hu) / det
        return (h, (gx, gy))

    def describe(self):
        return {"kind": "tubular", "eps0": self.eps0, "label": self.label,
                "support_t": list(self.support_t)}


# -- composite field -----------------------------------------------------------


class MagneticField:
    """Base intensity plus ordered tubular perturbations; immutable."""

    def __init__(self, base, perturbations=()):
        self.base = base
        self.perturbations = tuple(perturbations)
        self._c0_cache = {}

    def value(self, surface, chart, x, y):
        f = self.base.value(surface, chart, x, y)
        for p in self.perturbations:
            f += p.value(surface, chart, x, y)
        return f

    def gradient(self, surface, chart, x, y):
        gx, gy = self.base.gradient(surface, chart, x, y)
        for p in self.perturbations:
            _, (px, py) = p.eval(surface, chart, x, y)
            gx += px
            gy += py
        return (gx, gy)

    def eval(self, surface, chart, x, y):
        f = self.base.value(surface, chart, x, y)
        gx, gy = self.base.gradient(surface, chart, x, y)
        for p in self.perturbations:
            h, (px, py) = p.eval(surface, chart, x, y)
            f += h
            gx += px
            gy += py
        return (f, (gx, gy))

    def with_perturbation(self, p):
        return MagneticField(self.base, self.perturbations + (p,))

    def c0_norm(self, surface, n=512):
        """sup |f| estimated on an n x n grid per chart, inflated by 1%."""
        key = (id(surface), n)
        if key in self._c0_cache:
            return self._c0_cache[key]
        best = 0.0
        for chart in range(len(surface.charts)):
            xs, ys = _chart_sample_grid(surface, chart, n)
            for x, y in zip(xs, ys):
                best = max(best, abs(self.base.value(surface, chart, x, y)))
        for p in self.perturbations:
            best += p.norm_bound()
        best *= 1.01
        self._c0_cache[key] = best
        return best

    def describe(self):
        return {"base": self.base.describe(),
                "perturbations": [p.describe() for p in self.perturbations]}


def _chart_sample_grid(surface, chart, n):
    if surface.kind == "torus":
        g = np.linspace(0.0, 1.0, n, endpoint=False)
    elif surface.kind == "sphere":
        g = np.linspace(-1.0, 1.0, n)
    else:  # planar
        r = surface.charts[chart].radius
        g = np.linspace(-r, r, n)
    xs, ys = np.meshgrid(g, g)
    xs = xs.ravel()
    ys = ys.ravel()
    if surface.kind == "planar":
        r = surface.charts[chart].radius
        mask = xs * xs + ys * ys < r * r
        xs, ys = xs[mask], ys[mask]
    return xs, ys


# -- exactness -----------------------------------------------------------------


@dataclass(frozen=True)
class ExactnessReport:
    integral: float
    exact: bool
    tol: float


def _gl_panels(a, b, panels, order=3):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    xs = []
    ws = []
    for i in range(panels):
        mid = 0.5 * (edges[i] + edges[i + 1])
        half = 0.5 * (edges[i + 1] - edges[i])
        xs.append(mid + half * nodes)
        ws.append(half * weights)
    return np.concatenate(xs), np.concatenate(ws)


def surface_integral(surface, func, panels=64):
    """Integral of func(chart, x, y) over the surface w.r.t. the area form."""
    if surface.kind == "torus":
        xs, wx = _gl_panels(0.0, 1.0, panels)
        total = 0.0
        for x, w1 in zip(xs, wx):
            for y, w2 in zip(xs, wx):
                lam = surface.charts[0].metric(x, y).lam
                total += w1 * w2 * func(0, x, y) * lam * lam
        return total
    if surface.kind == "sphere":
        # each stereographic unit disk covers one closed hemisphere
        rs, wr = _gl_panels(0.0, 1.0, max(8, panels // 4))
        nth = 4 * max(8, panels // 4)
        ths = np.arange(nth) * (2.0 * math.pi / nth)
        wth = 2.0 * math.pi / nth
        total = 0.0
        for chart in (0, 1):
            for r, w1 in zip(rs, wr):
                for th in ths:
                    x = r * math.cos(th)
                    y = r * math.sin(th)
                    lam = surface.charts[chart].metric(x, y).lam
                    total += w1 * wth * r * func(chart, x, y) * lam * lam
        return total
    raise UnsupportedSurfaceError("surface integral needs a compact surface")


def is_exact(field, surface, tol=1e-9, panels=64, brute=False):
    """Whether [f Omega_0] = 0, i.e. the total integral of f vanishes.

    Tubular perturbations integrate to zero by construction and are skipped
    unless brute=True, which forces pointwise evaluation of the full field.
    """
    if surface.kind == "planar":
        raise UnsupportedSurfaceError("exactness is defined on compact surfaces")
    if brute:
        target = field
    else:
        target = MagneticField(field.base) if isinstance(field, MagneticField) else field
    integral = surface_integral(surface, lambda ch, x, y: target.value(surface, ch, x, y),
                                panels=panels)
    return ExactnessReport(integral, abs(integral) <= tol, tol)


def add_perturbation(field, perturbation):
    """Field plus one tubular perturbation, with its C1 norm report.

    The tube must live in a single chart of the surface the field is used on;
    incompatible chart ids fail at evaluation time via ChartDomainError.
    """
    if not isinstance(field, MagneticField):
        field = MagneticField(field)
    if perturbation.tube.chart_id >= 16:
        raise ChartDomainError("perturbation chart id out of range")
    return field.with_perturbation(perturbation), perturbation.c1_report()
