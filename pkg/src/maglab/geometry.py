"""Closed oriented surfaces as conformal chart atlases.

Every surface is described by one or two conformal charts with metric
g = lam(x,y)^2 (dx^2 + dy^2).  In such a chart the 90-degree rotation is the
plain Euclidean rotation, the Gaussian curvature is

    K = -(Delta log lam) / lam^2,

and the Christoffel symbols are first partials of log lam.  Built-in
surfaces: the flat torus R^2/Z^2 (single periodic chart), the round sphere
of radius R (two stereographic charts with lam = 2R/(1+|z|^2), transition
w = 1/z), and a planar chart (flat disk, used for the constant-intensity
disk example).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ChartDomainError

__all__ = [
    "PhasePoint",
    "MetricData",
    "Surface",
    "flat_torus",
    "sphere",
    "planar_chart",
    "rotate90",
    "energy",
]


@dataclass(frozen=True)
class PhasePoint:
    """A tangent vector (x, y, vx, vy) in chart coordinates."""

    chart: int
    x: float
    y: float
    vx: float
    vy: float

    def position(self):
        return (self.x, self.y)

    def velocity(self):
        return (self.vx, self.vy)


@dataclass(frozen=True)
class MetricData:
    """Conformal metric data at one chart point."""

    lam: float
    lam_x: float
    lam_y: float
    lam_xx: float
    lam_xy: float
    lam_yy: float
    curvature: float

    @property
    def log_grad(self):
        """(d/dx log lam, d/dy log lam) -- the Christoffel building blocks."""
        return (self.lam_x / self.lam, self.lam_y / self.lam)

    def christoffels(self):
        """Gamma[k][i][j] for g = lam^2 (dx^2+dy^2)."""
        lx, ly = self.log_grad
        d = ((1.0, 0.0), (0.0, 1.0))
        grad = (lx, ly)
        return tuple(
            tuple(
                tuple(
                    d[i][k] * grad[j] + d[j][k] * grad[i] - d[i][j] * grad[k]
                    for j in range(2)
                )
                for i in range(2)
            )
            for k in range(2)
        )

    def christoffel_quadratic(self, vx, vy):
        """Gamma^k_{ij} v^i v^j, the quadratic term of the geodesic equation."""
        lx, ly = self.log_grad
        g1 = lx * (vx * vx - vy * vy) + 2.0 * ly * vx * vy
        g2 = ly * (vy * vy - vx * vx) + 2.0 * lx * vx * vy
        return (g1, g2)


class _FlatChart:
    """lam == 1 chart, optionally periodic (torus) or a bounded disk."""

    def __init__(self, periodic=False, radius=None):
        self.periodic = periodic
        self.radius = radius

    def metric(self, x, y):
        return MetricData(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def contains(self, x, y):
        if self.periodic or self.radius is None:
            return True
        return x * x + y * y < self.radius * self.radius


class _SphereChart:
    """Stereographic chart of the round sphere, lam = 2R/(1+|z|^2)."""

    #: switch to the companion chart beyond this chart radius
    R_SWITCH = 2.0
    #: hard validity limit for evaluations
    R_MAX = 8.0

    def __init__(self, radius):
        self.radius = radius

    def metric(self, x, y):
        R = self.radius
        s = 1.0 + x * x + y * y
        lam = 2.0 * R / s
        lam_x = -4.0 * R * x / (s * s)
        lam_y = -4.0 * R * y / (s * s)
        lam_xx = -4.0 * R / (s * s) + 16.0 * R * x * x / (s * s * s)
        lam_yy = -4.0 * R / (s * s) + 16.0 * R * y * y / (s * s * s)
        lam_xy = 16.0 * R * x * y / (s * s * s)
        return MetricData(lam, lam_x, lam_y, lam_xx, lam_xy, lam_yy, 1.0 / (R * R))

    def contains(self, x, y):
        return x * x + y * y < self.R_MAX * self.R_MAX


class Surface:
    """Conformal chart atlas with topology tag and injectivity radius."""

    def __init__(self, kind, charts, injectivity_radius):
        if injectivity_radius <= 0:
            raise ValueError("injectivity_radius must be positive")
        self.kind = kind
        self.charts = charts
        self.injectivity_radius = injectivity_radius

    # -- metric ------------------------------------------------------------

    def metric_at(self, chart, x, y):
        """Metric data at a chart point; ChartDomainError outside the domain."""
        ch = self._chart(chart)
        if not ch.contains(x, y):
            raise ChartDomainError(
                f"point ({x:.6g}, {y:.6g}) outside domain of chart {chart} of {self.kind}"
            )
        if self.kind == "torus":
            x, y = self.wrap_position(x, y)
        return ch.metric(x, y)

    def lam(self, chart, x, y):
        return self.metric_at(chart, x, y).lam

    def _chart(self, chart):
        try:
            return self.charts[chart]
        except IndexError:
            raise ChartDomainError(f"no chart {chart} on {self.kind}") from None

    # -- torus helpers -----------------------------------------------------

    def wrap_position(self, x, y):
        """Fundamental-domain representative (identity off the torus)."""
        if self.kind != "torus":
            return (x, y)
        return (x - math.floor(x), y - math.floor(y))

    def wrap_diff(self, dx, dy):
        """Difference vector reduced to the nearest lattice image."""
        if self.kind != "torus":
            return (dx, dy)
        return (dx - round(dx), dy - round(dy))

    # -- sphere chart transitions -------------------------------------------

    def other_chart(self, chart):
        return 1 - chart

    def transition(self, state: PhasePoint) -> PhasePoint:
        """Express a sphere phase point in the companion chart (w = 1/z)."""
        if self.kind != "sphere":
            raise ChartDomainError(f"{self.kind} has a single chart")
        x, y, vx, vy = state.x, state.y, state.vx, state.vy
        r2 = x * x + y * y
        if r2 == 0.0:
            raise ChartDomainError("chart transition undefined at the chart origin")
        u = x / r2
        v = -y / r2
        r4 = r2 * r2
        a = (y * y - x * x) / r4
        b = -2.0 * x * y / r4
        # d(1/z) real Jacobian [[a, b], [-b, a]]
        wx = a * vx + b * vy
        wy = -b * vx + a * vy
        return PhasePoint(self.other_chart(state.chart), u, v, wx, wy)

    def needs_switch(self, state: PhasePoint) -> bool:
        if self.kind != "sphere":
            return False
        r2 = state.x * state.x + state.y * state.y
        return r2 > _SphereChart.R_SWITCH**2

    def to_chart(self, state: PhasePoint, chart: int):
        """Convert a phase point into the requested chart, or None if impossible."""
        if state.chart == chart:
            return state
        if self.kind != "sphere":
            return None
        r2 = state.x * state.x + state.y * state.y
        if r2 < 1e-12:
            return None
        out = self.transition(state)
        if not self._chart(chart).contains(out.x, out.y):
            return None
        return out

    def contains(self, chart, x, y):
        return self._chart(chart).contains(x, y)


# -- built-in surfaces -----------------------------------------------------


def flat_torus():
    """Flat torus R^2/Z^2; shortest closed geodesic has length 1."""
    return Surface("torus", [_FlatChart(periodic=True)], injectivity_radius=0.5)


def sphere(radius=1.0):
    """Round sphere of the given radius, two stereographic charts."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    return Surface(
        "sphere",
        [_SphereChart(radius), _SphereChart(radius)],
        injectivity_radius=math.pi * radius,
    )


def planar_chart(radius=3.0, injectivity_radius=math.pi):
    """Single flat disk chart (noncompact model for the disk example).

    The default radius 3 holds every unit circle through points of the unit
    disk; pass a different radius to reproduce a specific workspace.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    return Surface(
        "planar", [_FlatChart(periodic=False, radius=radius)], injectivity_radius
    )


# -- pointwise tangent operations -------------------------------------------


def rotate90(surface, state: PhasePoint, v=None):
    """Rotation i with {v, i v} a positive orthogonal basis.

    In a conformal chart this is the Euclidean rotation (vx, vy) -> (-vy, vx),
    independent of the point.
    """
    if v is None:
        v = (state.vx, state.vy)
    return (-v[1], v[0])


def energy(surface, state: PhasePoint):
    """Kinetic energy E = (1/2) lam^2 (vx^2 + vy^2)."""
    md = surface.metric_at(state.chart, state.x, state.y)
    return 0.5 * md.lam * md.lam * (state.vx * state.vx + state.vy * state.vy)
