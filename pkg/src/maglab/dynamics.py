"""Magnetic geodesic flow and its linearization.

The trajectory ODE in a conformal chart (g = lam^2 <.,.>, i = Euclidean
rotation) reads

    x' = v,    v'^k = -Gamma^k(v, v) + f(x) (i v)^k,

and speed |v|_g is a first integral.  Along a trajectory of energy c the
transversal linearization is governed by the magnetic curvature

    K_mag(t) = 2 c K(x(t)) - <grad f, i v> + f(x(t))^2,

through the planar system d/dt (y, y') = [[0, 1], [-K_mag, 0]] (y, y'),
whose fundamental matrix X(t) is the linearized return data, plus the
decoupled drift x' = f y along the flow direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ChartDomainError
from .geometry import PhasePoint, Surface, energy as phase_energy
from .integrate import integrate

__all__ = [
    "Trajectory",
    "VariationalPath",
    "flow",
    "flow_with_variation",
    "magnetic_curvature",
    "injectivity_time",
    "fd_monodromy",
    "IntegratorOptions",
]


@dataclass(frozen=True)
class IntegratorOptions:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = math.inf

    @staticmethod
    def from_config(cfg):
        cfg = cfg or {}
        return IntegratorOptions(
            rel_tol=cfg.get("rel_tol", 1e-10),
            abs_tol=cfg.get("abs_tol", 1e-12),
            max_step=cfg.get("max_step", math.inf),
        )


def _chart_rhs(surface, field, chart, c):
    """RHS of the trajectory ODE in one chart (state = (x, y, vx, vy))."""
    metric_of = surface.charts[chart].metric
    wrap = surface.kind == "torus"
    fval = field.value

    def rhs(t, y):
        x, yy, vx, vy = y
        if wrap:
            xm = x - math.floor(x)
            ym = yy - math.floor(yy)
        else:
            xm, ym = x, yy
        md = metric_of(xm, ym)
        f = fval(surface, chart, xm, ym)
        if md.lam_x == 0.0 and md.lam_y == 0.0:
            g1 = 0.0
            g2 = 0.0
        else:
            g1, g2 = md.christoffel_quadratic(vx, vy)
        return (vx, vy, -g1 - f * vy, -g2 + f * vx)

    return rhs


def _chart_rhs_variational(surface, field, chart, c, kmag_extra=None):
    """RHS of the coupled (trajectory, X, drift-row) system, 10 components."""
    metric_of = surface.charts[chart].metric
    wrap = surface.kind == "torus"
    feval = field.eval

    def rhs(t, y):
        x, yy, vx, vy, x11, x12, x21, x22, d1, d2 = y
        if wrap:
            xm = x - math.floor(x)
            ym = yy - math.floor(yy)
        else:
            xm, ym = x, yy
        md = metric_of(xm, ym)
        f, (fx, fy) = feval(surface, chart, xm, ym)
        if md.lam_x == 0.0 and md.lam_y == 0.0:
            g1 = 0.0
            g2 = 0.0
        else:
            g1, g2 = md.christoffel_quadratic(vx, vy)
        kmag = 2.0 * c * md.curvature + f * f + fx * vy - fy * vx
        if kmag_extra is not None:
            kmag += kmag_extra(t)
        return (
            vx,
            vy,
            -g1 - f * vy,
            -g2 + f * vx,
            x21,
            x22,
            -kmag * x11,
            -kmag * x12,
            f * x11,
            f * x12,
        )

    return rhs


def _renormalizer(surface, chart, c):
    """Per-step projection of the speed onto the energy level E = c."""
    metric_of = surface.charts[chart].metric
    wrap = surface.kind == "torus"
    target = math.sqrt(2.0 * c)

    def post(t, y):
        x, yy, vx, vy = y[0], y[1], y[2], y[3]
        if wrap:
            x -= math.floor(x)
            yy -= math.floor(yy)
        lam = metric_of(x, yy).lam
        sp = lam * math.hypot(vx, vy)
        if sp == 0.0:
            return y
        s = target / sp
        return (y[0], y[1], vx * s, vy * s) + tuple(y[4:])

    return post


@dataclass
class _Segment:
    chart: int
    t_start: float  # trajectory time at the start of this segment
    sol: object


@dataclass
class Trajectory:
    """Dense magnetic geodesic over [0, t_final] (t_final may be negative)."""

    surface: Surface
    c: float
    t_final: float
    segments: list
    sign: int = 1
    exited: bool = False
    n_accepted: int = 0
    n_rejected: int = 0
    n_fev: int = 0
    max_energy_drift: float = 0.0
    dim: int = 4

    exit_time: float = None

    @property
    def t_reach(self):
        """Signed time actually covered (differs from t_final after an exit)."""
        if self.exit_time is not None:
            return self.sign * self.exit_time
        seg = self.segments[-1]
        return self.sign * (seg.t_start + (seg.sol.t_end - seg.sol.t0))

    def _segment_at(self, tau):
        for seg in self.segments:
            local_end = seg.t_start + (seg.sol.t_end - seg.sol.t0)
            if tau <= local_end + 1e-12:
                return seg
        return self.segments[-1]

    def raw(self, t):
        """Raw state tuple at time t (chart-local, unwrapped)."""
        tau = self.sign * t
        if tau < -1e-12 or tau > abs(self.t_reach) + 1e-9:
            raise ValueError(f"t={t} outside the integrated range")
        seg = self._segment_at(tau)
        local = seg.sol.t0 + (tau - seg.t_start)
        local = min(max(local, seg.sol.t0), seg.sol.t_end)
        return seg.chart, seg.sol.eval(local)

    def state(self, t) -> PhasePoint:
        chart, y = self.raw(t)
        return PhasePoint(chart, y[0], y[1], y[2], y[3])

    def end_state(self) -> PhasePoint:
        return self.state(self.t_reach)

    def times(self, n):
        t1 = self.t_reach
        return [t1 * i / (n - 1) for i in range(n)]

    def ode_residual(self, field, t):
        """|interpolant derivative - RHS| at time t (dense-output quality probe)."""
        tau = self.sign * t
        seg = self._segment_at(tau)
        local = seg.sol.t0 + (tau - seg.t_start)
        y = seg.sol.eval(local)
        dy = seg.sol.eval_derivative(local)
        rhs = self._rhs_for(field, seg.chart)
        f = rhs(local, y)
        return max(abs(a - b) for a, b in zip(dy, f))

    def _rhs_for(self, field, chart):
        if self.dim == 4:
            base = _chart_rhs(self.surface, field, chart, self.c)
        else:
            base = _chart_rhs_variational(self.surface, field, chart, self.c)
        if self.sign < 0:
            return lambda t, y: tuple(-v for v in base(t, y))
        return base


class VariationalPath:
    """Fundamental matrix X(t) of the reduced variational system plus drift row."""

    def __init__(self, trajectory):
        if trajectory.dim != 10:
            raise ValueError("trajectory carries no variational data")
        self._traj = trajectory

    def matrix(self, t):
        _, y = self._traj.raw(t)
        return np.array([[y[4], y[5]], [y[6], y[7]]])

    def drift_row(self, t):
        _, y = self._traj.raw(t)
        return np.array([y[8], y[9]])

    def det_defect(self, n=64):
        ts = self._traj.times(n)
        return max(abs(np.linalg.det(self.matrix(t)) - 1.0) for t in ts)

    @property
    def t_final(self):
        return self._traj.t_reach


def _run_flow(surface, field, state, t_final, options, dim, observer=None,
              kmag_extra=None):
    if t_final == 0.0:
        raise ValueError("t_final must be nonzero")
    c = phase_energy(surface, state)
    if c <= 0.0:
        raise ValueError("initial state must have positive energy")
    # time reversal integrates the negated vector field; state components
    # keep their forward-time meaning throughout
    sign = 1 if t_final > 0 else -1
    horizon = abs(t_final)
    chart = state.chart
    vx, vy = state.vx, state.vy
    if dim == 4:
        y = (state.x, state.y, vx, vy)
    else:
        y = (state.x, state.y, vx, vy, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0)

    traj = Trajectory(surface, c, t_final, [], sign=sign, dim=dim)
    t_done = 0.0
    planar = surface.kind == "planar"
    sphere = surface.kind == "sphere"

    while t_done < horizon - 1e-14:
        if dim == 4:
            base = _chart_rhs(surface, field, chart, c)
        else:
            if kmag_extra is not None and sign < 0:
                raise ValueError("kmag_extra is only supported forward in time")
            base = _chart_rhs_variational(surface, field, chart, c, kmag_extra)
        rhs = base if sign > 0 else (lambda t, yy: tuple(-v for v in base(t, yy)))
        post = _renormalizer(surface, chart, c)

        stop_reason = {}

        def seg_observer(step, _chart=chart, _offset=t_done):
            x, yy = step.y1[0], step.y1[1]
            if planar and not surface.contains(_chart, x, yy):
                stop_reason["kind"] = "exit"
                # refine the boundary crossing on the dense interpolant
                lo, hi = step.t0, step.t1
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    ym = step.eval(mid)
                    if surface.contains(_chart, ym[0], ym[1]):
                        lo = mid
                    else:
                        hi = mid
                stop_reason["exit_time"] = _offset + lo
                return False
            if sphere and x * x + yy * yy > 4.0:
                stop_reason["kind"] = "switch"
                return False
            if observer is not None:
                keep = observer(_chart, step, _offset)
                if keep is False:
                    stop_reason["kind"] = "user"
                    return False
            return True

        sol = integrate(
            rhs,
            0.0,
            y,
            horizon - t_done,
            rtol=options.rel_tol,
            atol=options.abs_tol,
            max_step=options.max_step,
            post_step=post,
            observer=seg_observer,
        )
        traj.segments.append(_Segment(chart, t_done, sol))
        traj.n_accepted += sol.n_accepted
        traj.n_rejected += sol.n_rejected
        traj.n_fev += sol.n_fev
        t_done += sol.t_end - sol.t0
        y = sol.y_end
        kind = stop_reason.get("kind")
        if kind == "exit":
            traj.exited = True
            traj.exit_time = stop_reason.get("exit_time", t_done)
            break
        if kind == "user":
            break
        if kind == "switch":
            ps = PhasePoint(chart, y[0], y[1], y[2], y[3])
            ps2 = surface.transition(ps)
            chart = ps2.chart
            y = (ps2.x, ps2.y, ps2.vx, ps2.vy) + tuple(y[4:])
        elif sol.status == "max_steps":
            break

    # energy drift over a sample grid (exited states are skipped)
    drift = 0.0
    for t in traj.times(min(200, 2 * traj.n_accepted + 2)):
        try:
            drift = max(drift, abs(phase_energy(surface, traj.state(t)) - c))
        except ChartDomainError:
            pass
    traj.max_energy_drift = drift
    return traj


def flow(surface, field, state, t_final, options=None, observer=None):
    """Integrate the magnetic geodesic through `state` over [0, t_final].

    Negative t_final integrates the time-reversed field.  Returns a dense
    Trajectory; if a planar chart is exited the trajectory is truncated and
    flagged (`exited`).
    """
    options = options or IntegratorOptions()
    return _run_flow(surface, field, state, t_final, options, dim=4, observer=observer)


def flow_with_variation(surface, field, state, t_final, options=None,
                        observer=None, kmag_extra=None):
    """Trajectory plus the fundamental matrix of the reduced variational system.

    The 2x2 system and the flow share one step controller.  `kmag_extra(t)`
    adds a time-dependent shift to the magnetic curvature (used by the
    perturbation response machinery, where the core trajectory is unchanged).
    Returns (Trajectory, VariationalPath).
    """
    options = options or IntegratorOptions()
    traj = _run_flow(surface, field, state, t_final, options, dim=10,
                     observer=observer, kmag_extra=kmag_extra)
    return traj, VariationalPath(traj)


def magnetic_curvature(surface, field, trajectory, t):
    """K_mag = 2cK - <grad f, i v> + f^2 at trajectory time t."""
    st = trajectory.state(t)
    return magnetic_curvature_at(surface, field, st, trajectory.c)


def magnetic_curvature_at(surface, field, state, c):
    xm, ym = surface.wrap_position(state.x, state.y)
    md = surface.metric_at(state.chart, xm, ym)
    f, (fx, fy) = field.eval(surface, state.chart, xm, ym)
    return 2.0 * c * md.curvature + f * f + fx * state.vy - fy * state.vx


def injectivity_time(surface, field, c, denominator="2c"):
    """Lower bound K(c, f) = min{1/(|f|_C0 + 1)^2, i(M,g)/(2c)}.

    Any closed orbit must have minimal period at least K, since the projected
    trajectory is injective on [0, K).  (The source statement says "period at
    most K"; injectivity forces the opposite reading, which is what this
    bound reports.)  `denominator="sqrt2c"` switches the second argument to
    i(M,g)/sqrt(2c) in case time rather than length units are wanted.
    """
    if c <= 0:
        raise ValueError("energy must be positive")
    fmax = field.c0_norm(surface)
    first = 1.0 / (fmax + 1.0) ** 2
    if denominator == "2c":
        second = surface.injectivity_radius / (2.0 * c)
    elif denominator == "sqrt2c":
        second = surface.injectivity_radius / math.sqrt(2.0 * c)
    else:
        raise ValueError("denominator must be '2c' or 'sqrt2c'")
    return min(first, second)


# -- independent finite-difference check of the variational flow -------------


def _conformal_gamma(md, u, v):
    """Gamma(u, v) via nabla_u v = D_u v + dL(u) v + dL(v) u - <u,v> grad L."""
    lx, ly = md.log_grad
    du = lx * u[0] + ly * u[1]
    dv = lx * v[0] + ly * v[1]
    uv = u[0] * v[0] + u[1] * v[1]
    return (du * v[0] + dv * u[0] - uv * lx, du * v[1] + dv * u[1] - uv * ly)


def _frame_coords(surface, field, base: PhasePoint, other: PhasePoint, c):
    """(x_drift, y, ydot) of `other` relative to `base` in the (e1, e2) frame."""
    if other.chart != base.chart:
        conv = surface.to_chart(other, base.chart)
        if conv is None:
            raise ChartDomainError("states not comparable in a common chart")
        other = conv
    md = surface.metric_at(base.chart, *surface.wrap_position(base.x, base.y))
    lam2 = md.lam * md.lam
    dx = surface.wrap_diff(other.x - base.x, other.y - base.y)
    v = (base.vx, base.vy)
    u = (-base.vy, base.vx)  # i v in chart coordinates
    two_c = 2.0 * c
    xdrift = lam2 * (dx[0] * v[0] + dx[1] * v[1]) / two_c
    ycoord = lam2 * (dx[0] * u[0] + dx[1] * u[1]) / two_c
    gam = _conformal_gamma(md, dx, v)
    dvc = (other.vx - base.vx + gam[0], other.vy - base.vy + gam[1])
    fval = field.value(surface, base.chart, *surface.wrap_position(base.x, base.y))
    ydot = lam2 * (dvc[0] * u[0] + dvc[1] * u[1]) / two_c - xdrift * fval
    return (xdrift, ycoord, ydot)


def _offset_state(surface, field, state: PhasePoint, c, h, direction):
    """State offset h e1 (direction=0, horizontal) or h e2 (=1, vertical)."""
    md = surface.metric_at(state.chart, *surface.wrap_position(state.x, state.y))
    u = (-state.vy, state.vx)
    if direction == 0:
        x = state.x + h * u[0]
        y = state.y + h * u[1]
        gam = _conformal_gamma(md, u, (state.vx, state.vy))
        vx = state.vx - h * gam[0]
        vy = state.vy - h * gam[1]
    else:
        x, y = state.x, state.y
        vx = state.vx + h * u[0]
        vy = state.vy + h * u[1]
    lam = surface.metric_at(state.chart, *surface.wrap_position(x, y)).lam
    s = math.sqrt(2.0 * c) / (lam * math.hypot(vx, vy))
    return PhasePoint(state.chart, x, y, vx * s, vy * s)


def fd_monodromy(surface, field, state, T, h=1e-5, options=None):
    """Central finite differences of the time-T flow map in the (e1, e2) frame.

    Independent oracle for X(T): perturbs the initial state along the frame
    (i v horizontal / i v vertical), projects back onto the energy level,
    flows, and reads off frame coordinates with the covariant velocity
    correction.  Returns a 2x2 numpy array.
    """
    options = options or IntegratorOptions(rel_tol=1e-12, abs_tol=1e-13)
    c = phase_energy(surface, state)
    base_end = flow(surface, field, state, T, options).end_state()
    cols = []
    for direction in (0, 1):
        plus = _offset_state(surface, field, state, c, h, direction)
        minus = _offset_state(surface, field, state, c, -h, direction)
        end_p = flow(surface, field, plus, T, options).end_state()
        end_m = flow(surface, field, minus, T, options).end_state()
        _, yp, dp = _frame_coords(surface, field, base_end, end_p, c)
        _, ym, dm = _frame_coords(surface, field, base_end, end_m, c)
        cols.append(((yp - ym) / (2 * h), (dp - dm) / (2 * h)))
    return np.array([[cols[0][0], cols[1][0]], [cols[0][1], cols[1][1]]])
