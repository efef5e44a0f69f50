"""Poincare sections, first-return maps, closed-orbit shooting and Floquet data.

A section through an anchor state (p0, v0) on the energy level E = c is the
set of unit-level states based on the chart line through p0 in the i*v0
direction.  With s the g-arclength parameter at the anchor and

    R = g(v, c'(s))          (tangential momentum along the section curve)

the induced symplectic form of the twisted structure is exactly dR ^ ds: the
position component of the section is one-dimensional, so the magnetic term
pulls back to zero, and the canonical 1-form restricts to R ds.  First-return
maps in (s, R) are therefore area-preserving in exact arithmetic, and
(s, R) agree with the transversal-frame coordinates (y, y') at the anchor up
to a constant-determinant linear change, leaving traces, Floquet classes and
normal-form invariants unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import NoReturnError, NewtonDivergenceError, ContinuationLostError
from .geometry import PhasePoint, energy as phase_energy
from .dynamics import IntegratorOptions, flow, flow_with_variation

__all__ = [
    "Section",
    "make_section",
    "first_return",
    "SectionReturnMap",
    "ClosedOrbit",
    "find_closed_orbit",
    "classify",
    "continue_orbit",
    "OrbitDatabase",
    "phase_distance",
    "seed_grid",
]


def rescale_to_energy(surface, state: PhasePoint, c) -> PhasePoint:
    lam = surface.metric_at(state.chart, *surface.wrap_position(state.x, state.y)).lam
    sp = lam * math.hypot(state.vx, state.vy)
    if sp == 0.0:
        raise ValueError("zero velocity")
    s = math.sqrt(2.0 * c) / sp
    return PhasePoint(state.chart, state.x, state.y, state.vx * s, state.vy * s)


def phase_distance(surface, a: PhasePoint, b: PhasePoint):
    """Chart-Euclidean phase-space distance with torus wrapping."""
    if a.chart != b.chart:
        conv = surface.to_chart(b, a.chart)
        if conv is None:
            return math.inf
        b = conv
    dx, dy = surface.wrap_diff(b.x - a.x, b.y - a.y)
    return math.sqrt(dx * dx + dy * dy + (b.vx - a.vx) ** 2 + (b.vy - a.vy) ** 2)


class Section:
    """Transversal section anchored at a unit-energy-level state."""

    def __init__(self, surface, field, anchor: PhasePoint, half_width=0.2):
        self.surface = surface
        self.field = field
        self.c = phase_energy(surface, anchor)
        if self.c <= 0:
            raise ValueError("anchor must have positive energy")
        sp = math.hypot(anchor.vx, anchor.vy)
        if sp == 0.0:
            raise ValueError("anchor velocity vanishes")
        self.anchor = anchor
        self.half_width = half_width
        u = (-anchor.vy, anchor.vx)
        self.unit_e = (u[0] / sp, u[1] / sp)
        self.normal_e = (-self.unit_e[1], self.unit_e[0])
        md = surface.metric_at(anchor.chart, *surface.wrap_position(anchor.x, anchor.y))
        self.lam0 = md.lam
        # forward crossings keep the anchor's transversality sign
        self.cross_sign = 1.0 if (anchor.vx * self.normal_e[0] + anchor.vy * self.normal_e[1]) > 0 else -1.0

    # -- coordinates ---------------------------------------------------------

    def embed(self, s, R) -> PhasePoint:
        """Phase point with section coordinates (s, R)."""
        x = self.anchor.x + s * self.unit_e[0] / self.lam0
        y = self.anchor.y + s * self.unit_e[1] / self.lam0
        lam = self.surface.metric_at(self.anchor.chart, *self.surface.wrap_position(x, y)).lam
        m = lam / self.lam0
        a = R / m
        two_c = 2.0 * self.c
        disc = two_c - a * a
        if disc <= 0.0:
            raise ValueError(f"R={R} exceeds the energy circle at s={s}")
        b = math.sqrt(disc)
        # unit tangent/normal of the section curve at psi(s); the normal branch
        # N = -i T is the one through the anchor velocity
        tx, ty = self.unit_e[0] / lam, self.unit_e[1] / lam
        nx, ny = -self.normal_e[0] / lam, -self.normal_e[1] / lam
        vx = a * tx + b * nx
        vy = a * ty + b * ny
        return PhasePoint(self.anchor.chart, x, y, vx, vy)

    def coords(self, state: PhasePoint):
        """(s, R) of a state lying on (or near) the section curve."""
        if state.chart != self.anchor.chart:
            conv = self.surface.to_chart(state, self.anchor.chart)
            if conv is None:
                raise ValueError("state not expressible in the section chart")
            state = conv
        dx, dy = self.surface.wrap_diff(state.x - self.anchor.x, state.y - self.anchor.y)
        s = self.lam0 * (dx * self.unit_e[0] + dy * self.unit_e[1])
        xs = self.anchor.x + s * self.unit_e[0] / self.lam0
        ys = self.anchor.y + s * self.unit_e[1] / self.lam0
        lam = self.surface.metric_at(self.anchor.chart, *self.surface.wrap_position(xs, ys)).lam
        R = lam * lam * (state.vx * self.unit_e[0] + state.vy * self.unit_e[1]) / self.lam0
        return (s, R)

    def offset_normal(self, state: PhasePoint):
        """Signed chart-normal offset from the section curve (the event function)."""
        if state.chart != self.anchor.chart:
            conv = self.surface.to_chart(state, self.anchor.chart)
            if conv is None:
                return None
            state = conv
        dx, dy = self.surface.wrap_diff(state.x - self.anchor.x, state.y - self.anchor.y)
        if dx * dx + dy * dy > 0.35 * 0.35 and self.surface.kind == "torus":
            return None
        return dx * self.normal_e[0] + dy * self.normal_e[1]

    def crossing_ok(self, state: PhasePoint):
        """Correct transversality sign and within the monitoring window."""
        if state.chart != self.anchor.chart:
            state = self.surface.to_chart(state, self.anchor.chart)
            if state is None:
                return False
        v_n = state.vx * self.normal_e[0] + state.vy * self.normal_e[1]
        if v_n * self.cross_sign <= 0:
            return False
        s, _ = self.coords(state)
        return abs(s) <= 4.0 * self.half_width


def make_section(surface, field, anchor_state, half_width=0.2) -> Section:
    """Section through anchor_state; (0, 0) are the anchor's coordinates."""
    return Section(surface, field, anchor_state, half_width)


class _CrossingMonitor:
    """Scans accepted integration steps for section-line crossings."""

    def __init__(self, section, sign, t_skip=0.0):
        self.section = section
        self.sign = sign  # +1 forward flow, -1 time-reversed integration
        self.t_skip = t_skip
        self.prev_t = 0.0
        self.prev_l = None
        self.armed = False
        self.hits = []
        self.want = 1
        self._frames = []

    def _state_of(self, chart, step, tau):
        y = step.eval(tau)
        return PhasePoint(chart, y[0], y[1], y[2], y[3])

    def __call__(self, chart, step, offset):
        sec = self.section
        # subsample so consecutive samples move < ~0.08 chart units
        speed = math.hypot(step.y1[2], step.y1[3])
        n = max(3, min(256, int(step.h * speed / 0.08) + 1))
        for k in range(1, n + 1):
            frac = k / n
            tau = step.t0 + frac * step.h
            t_glob = offset + tau
            st = self._state_of(chart, step, tau)
            l = sec.offset_normal(st)
            if l is None:
                self.prev_l = None
                self.armed = False
                continue
            if self.prev_l is None:
                self.prev_l, self.prev_t = l, (t_glob, chart, step, tau)
                self.armed = abs(l) > 1e-9
                continue
            if not self.armed:
                self.armed = abs(l) > 1e-9
                self.prev_l, self.prev_t = l, (t_glob, chart, step, tau)
                continue
            if l == 0.0 or (self.prev_l < 0.0) != (l < 0.0):
                if abs(l - self.prev_l) < 0.3:
                    hit = self._refine(self.prev_t, (t_glob, chart, step, tau))
                    if hit is not None and hit[0] > self.t_skip:
                        self.hits.append(hit)
                        if len(self.hits) >= self.want:
                            return False
            self.prev_l, self.prev_t = l, (t_glob, chart, step, tau)
        return True

    def _refine(self, rec_a, rec_b):
        sec = self.section
        ta, chart_a, step_a, tau_a = rec_a
        tb, chart_b, step_b, tau_b = rec_b

        def ell(t_glob):
            if step_a is step_b or t_glob >= tb - (tau_b - step_b.t0) - 1e-18:
                step, chart, tau = step_b, chart_b, step_b.t0 + (t_glob - (tb - (tau_b - step_b.t0)))
            else:
                step, chart, tau = step_a, chart_a, step_a.t0 + (t_glob - (ta - (tau_a - step_a.t0)))
            tau = min(max(tau, step.t0), step.t1)
            v = sec.offset_normal(self._state_of(chart, step, tau))
            return v if v is not None else math.nan

        la, lb = ell(ta), ell(tb)
        if math.isnan(la) or math.isnan(lb) or la * lb > 0:
            return None
        if la == 0.0:
            t_star = ta
        elif lb == 0.0:
            t_star = tb
        else:
            t_star = brentq(ell, ta, tb, xtol=1e-13, rtol=8.9e-16)
        # state at the crossing
        if t_star >= tb - (tau_b - step_b.t0):
            st = self._state_of(chart_b, step_b, step_b.t0 + (t_star - (tb - (tau_b - step_b.t0))))
        else:
            st = self._state_of(chart_a, step_a, step_a.t0 + (t_star - (ta - (tau_a - step_a.t0))))
        if not sec.crossing_ok(st):
            return None
        return (t_star, st)


def first_return(section, coords, field=None, max_time=50.0, backward=False,
                 options=None, t_skip=1e-9):
    """Next section crossing with matching orientation.

    Returns (coords', transit_time, state).  transit_time is positive also for
    backward returns (time until the *previous* crossing).  Raises
    NoReturnError when no vetted crossing occurs within max_time.
    """
    field = field if field is not None else section.field
    options = options or IntegratorOptions()
    state = section.embed(*coords)
    sign = -1 if backward else 1
    monitor = _CrossingMonitor(section, sign, t_skip=t_skip)
    flow(section.surface, field, state, sign * max_time, options,
         observer=lambda chart, step, off: monitor(chart, step, off))
    if not monitor.hits:
        raise NoReturnError(
            f"no section return within {max_time} time units"
            f"{' (backward)' if backward else ''}")
    t_star, st = monitor.hits[0]
    return section.coords(st), t_star, st


class SectionReturnMap:
    """The first-return map as a planar map oracle (callable, invertible)."""

    def __init__(self, section, field=None, max_time=50.0, options=None):
        self.section = section
        self.field = field if field is not None else section.field
        self.max_time = max_time
        self.options = options or IntegratorOptions()
        self.last_transit = None

    def __call__(self, z):
        zc, transit, _ = first_return(self.section, tuple(z), self.field,
                                      self.max_time, options=self.options)
        self.last_transit = transit
        return np.asarray(zc)

    def inverse(self, z):
        zc, transit, _ = first_return(self.section, tuple(z), self.field,
                                      self.max_time, backward=True,
                                      options=self.options)
        self.last_transit = transit
        return np.asarray(zc)

    def jacobian(self, z, h=1e-7):
        cols = []
        for j in range(2):
            zp = list(z)
            zm = list(z)
            zp[j] += h
            zm[j] -= h
            cols.append((self(zp) - self(zm)) / (2.0 * h))
        return np.column_stack(cols)


# -- closed orbits ------------------------------------------------------------


@dataclass
class EigenData:
    kind: str
    eigenvalues: tuple = ()
    stable: tuple = ()
    unstable: tuple = ()
    alpha: float = 0.0


@dataclass
class ClosedOrbit:
    initial_state: PhasePoint
    period: float
    monodromy: np.ndarray
    floquet_class: str
    residual: float
    c: float
    eigen: EigenData
    section: Section
    parabolic_suspect: bool = False

    @property
    def trace(self):
        return float(np.trace(self.monodromy))

    def record(self):
        s = self.initial_state
        return {
            "initial_state": {"chart": s.chart, "x": s.x, "y": s.y,
                              "vx": s.vx, "vy": s.vy},
            "period": self.period,
            "monodromy": [[float(v) for v in row] for row in self.monodromy],
            "trace": self.trace,
            "class": self.floquet_class,
            "residual": self.residual,
        }


def classify(monodromy, class_tol=1e-6):
    """Floquet class from the trace; elliptic also returns the label angle.

    Returns (class, EigenData).  Hyperbolic iff |tr| > 2 + class_tol,
    elliptic iff |tr| < 2 - class_tol, parabolic in the closed strip between.
    """
    M = np.asarray(monodromy, dtype=float)
    tr = float(np.trace(M))
    if abs(tr) > 2.0 + class_tol:
        disc = math.sqrt(tr * tr - 4.0)
        lam_u = (tr + disc) / 2.0 if tr > 0 else (tr - disc) / 2.0
        lam_s = 1.0 / lam_u
        vecs = {}
        for name, lam in (("unstable", lam_u), ("stable", lam_s)):
            A = M - lam * np.eye(2)
            v = np.array([A[0, 1], -A[0, 0]])
            if np.linalg.norm(v) < 1e-12:
                v = np.array([A[1, 1], -A[1, 0]])
            vecs[name] = v / np.linalg.norm(v)
        return "hyperbolic", EigenData("hyperbolic", (lam_u, lam_s),
                                       tuple(vecs["stable"]), tuple(vecs["unstable"]))
    if abs(tr) < 2.0 - class_tol:
        alpha = math.acos(tr / 2.0) / (2.0 * math.pi)
        return "elliptic", EigenData("elliptic", alpha=alpha)
    return "parabolic", EigenData("parabolic")


def _minimal_period(surface, field, state, T, tol, options):
    """Shooting can converge onto a multiple; test period divisors k = 2..6."""
    best = T
    for k in range(6, 1, -1):
        cand = T / k
        end = flow(surface, field, state, cand, options).end_state()
        if phase_distance(surface, state, end) <= 100.0 * tol:
            best = cand
            break
    return best


def find_closed_orbit(surface, field, c, seed_state, tol=1e-10, max_iters=25,
                      options=None, max_time=50.0, class_tol=1e-6,
                      half_width=0.2):
    """Newton shooting on the first-return map from a seed state.

    The seed is projected onto the energy level c.  Raises
    NewtonDivergenceError if the residual does not reach tol; a near-singular
    I - dP marks the result parabolic-suspect (best point returned when the
    residual is already acceptable).
    """
    options = options or IntegratorOptions()
    seed = rescale_to_energy(surface, seed_state, c)
    section = make_section(surface, field, seed, half_width)
    rmap = SectionReturnMap(section, field, max_time, options)
    z = np.zeros(2)
    suspect = False
    fd_h = max(1e-7, 1e-6 * half_width)
    converged = False
    for _ in range(max_iters):
        w = rmap(z)
        r = float(np.linalg.norm(w - z))
        if r <= tol:
            converged = True
            break
        J = rmap.jacobian(z, fd_h)
        A = J - np.eye(2)
        det = abs(np.linalg.det(A))
        if det < 1e-10:
            suspect = True
            break
        dz = np.linalg.solve(A, -(w - z))
        # keep the iterate inside the section window
        lim = 2.0 * half_width
        n = np.linalg.norm(dz)
        if n > lim:
            dz *= lim / n
        z = z + dz
    w = rmap(z)
    transit = rmap.last_transit
    resid_map = float(np.linalg.norm(w - z))
    if not converged and not (suspect and resid_map <= 1e3 * tol):
        if resid_map > tol:
            raise NewtonDivergenceError(
                f"shooting stalled with section residual {resid_map:.3e}")
    state = section.embed(*z)
    T = _minimal_period(surface, field, state, transit, max(resid_map, tol), options)
    traj, vp = flow_with_variation(surface, field, state, T, options)
    M = vp.matrix(T)
    residual = phase_distance(surface, state, traj.end_state())
    cls, eig = classify(M, class_tol)
    if suspect and cls != "parabolic":
        cls = "parabolic"
        eig = EigenData("parabolic")
    orbit_section = make_section(surface, field, state, half_width)
    return ClosedOrbit(state, T, M, cls, residual, c, eig, orbit_section,
                       parabolic_suspect=suspect)


def continue_orbit(orbit: ClosedOrbit, surface, new_field, tol=1e-10,
                   options=None):
    """Re-shoot the orbit under a C1-close field; reports the displacement."""
    try:
        new = find_closed_orbit(surface, new_field, orbit.c,
                                orbit.initial_state, tol=tol, options=options)
    except (NewtonDivergenceError, NoReturnError) as exc:
        raise ContinuationLostError(
            f"continuation left the Newton basin: {exc}") from exc
    displacement = phase_distance(surface, orbit.initial_state, new.initial_state)
    return new, displacement


# -- orbit database -------------------------------------------------------------


class OrbitDatabase:
    """Deterministically ordered collection of closed-orbit records."""

    def __init__(self):
        self.orbits = []

    def add(self, orbit: ClosedOrbit, twist=None):
        rec = orbit.record()
        if twist is not None:
            rec["twist"] = twist
        self.orbits.append(rec)
        self.orbits.sort(key=lambda r: (r["period"], r["trace"]))

    def is_duplicate(self, orbit: ClosedOrbit, surface, atol=1e-6):
        for rec in self.orbits:
            if abs(rec["period"] - orbit.period) > atol:
                continue
            s = rec["initial_state"]
            other = PhasePoint(s["chart"], s["x"], s["y"], s["vx"], s["vy"])
            if phase_distance(surface, orbit.initial_state, other) < 1e-4:
                return True
        return False

    def to_json(self):
        return json.dumps({"orbits": self.orbits}, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text):
        db = OrbitDatabase()
        db.orbits = json.loads(text)["orbits"]
        return db


def seed_grid(surface, c, base_points, n_directions=8):
    """Phase-point seeds: n directions on the energy circle over base points."""
    seeds = []
    for chart, x, y in base_points:
        lam = surface.metric_at(chart, *surface.wrap_position(x, y)).lam
        sp = math.sqrt(2.0 * c) / lam
        for k in range(n_directions):
            th = 2.0 * math.pi * k / n_directions
            seeds.append(PhasePoint(chart, x, y, sp * math.cos(th), sp * math.sin(th)))
    return seeds
