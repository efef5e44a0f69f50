"""Localized perturbation machinery over one orbit segment.

Given a base intensity f0 and an orbit segment of length T inside the
injectivity window, this module builds:

  * a tubular chart psi(t, u) = gamma(t) + u * i gamma'(t) around the core
    (flat charts only, where the chart area density is the closed form
    2c (1 - u f0(gamma(t))) and exactness of the perturbations is exact);
  * the constants ledger k0..k6, window width lambda, rho, the one-sided
    unit-mass bump profiles delta/Delta at k0/2, and the cutoff alpha, with
    every inequality they must satisfy checked and its slack recorded;
  * the three-parameter family A = [[b, c], [a, -b]] -> G(A) = f0 + a_eps(u)
    beta_A(t) of exact perturbations vanishing on the core, whose effect on
    the transversal linearization is the curvature shift K_mag -> K_mag -
    beta_A(t);
  * the response map S: A -> X_{G(A)}(T) in SL(2), its first variation
    Z(T) = X(T) int_0^T X^{-1} [[0,0],[db,0]] X dt, a sampled verification
    of the lower bound |Z| >= |A| / (2 k1^3), and a Newton-based check that
    S covers a ball of radius delta1 / (2 k1^3) around S(0).

Responses are integrated with a deterministic fixed-step RK4 across the
(narrow) support window of the profiles, composed with cached base
propagators outside it, so S is a smooth function of (a, b, c) evaluated
consistently down to machine precision; the constants delta1 and delta are
tiny because k3 and k5 scale like inverse powers of the window width, and
resolving the ball test relies on that smoothness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    CotaViolationError,
    DataInconsistencyError,
    UnsupportedSurfaceError,
)
from .field import MagneticField, PerturbationField
from .dynamics import (
    IntegratorOptions,
    flow,
    flow_with_variation,
    injectivity_time,
    magnetic_curvature_at,
)

__all__ = [
    "TubularChart",
    "build_tubular_chart",
    "BumpProfile",
    "AlphaProfile",
    "FranksConstants",
    "FranksKit",
    "build_franks_kit",
    "compute_constants",
    "PerturbA",
    "build_GA",
    "variational_response",
    "franks_response",
    "verify_cota",
    "verify_ball_surjectivity",
    "segment_split",
]


# -- tubular charts ------------------------------------------------------------


class TubularChart:
    """Chart psi(t, u) = gamma(t) + u * i gamma'(t) around an orbit segment.

    Valid on charts with constant conformal factor, where the area density
    relative to the core is omega(t, u) = 1 - u f0(gamma(t)) exactly; the
    frame property {d psi/dt, d psi/du} = {gamma', i gamma'} holds on the
    core for any energy.
    """

    def __init__(self, surface, field, trajectory, T, eps0, n_samples=1024):
        self.surface = surface
        self.chart_id = trajectory.state(0.0).chart
        md = surface.metric_at(self.chart_id, *surface.wrap_position(
            trajectory.state(0.0).x, trajectory.state(0.0).y))
        if md.lam_x != 0.0 or md.lam_y != 0.0:
            raise UnsupportedSurfaceError(
                "tubular charts require a flat (constant-factor) chart")
        self.traj = trajectory
        self.T = T
        self.eps0 = eps0
        self.t_range = (0.0, T)
        self.c = trajectory.c
        ts = np.linspace(0.0, T, n_samples)
        states = [trajectory.state(t) for t in ts]
        self._ts = ts
        self._pos = np.array([[s.x, s.y] for s in states])
        self._vel = np.array([[s.vx, s.vy] for s in states])
        self._f0 = np.array([
            field.value(surface, self.chart_id, *surface.wrap_position(s.x, s.y))
            for s in states
        ])
        grads = [field.gradient(surface, self.chart_id,
                                *surface.wrap_position(s.x, s.y)) for s in states]
        self._f0dot = np.array([
            g[0] * s.vx + g[1] * s.vy for g, s in zip(grads, states)
        ])
        self.field = field

    # core data ------------------------------------------------------------

    def _core(self, t):
        st = self.traj.state(t)
        return np.array([st.x, st.y]), np.array([st.vx, st.vy])

    def core_f(self, t):
        st = self.traj.state(t)
        return self.field.value(self.surface, self.chart_id,
                                *self.surface.wrap_position(st.x, st.y))

    def core_fdot(self, t):
        st = self.traj.state(t)
        g = self.field.gradient(self.surface, self.chart_id,
                                *self.surface.wrap_position(st.x, st.y))
        return g[0] * st.vx + g[1] * st.vy

    # chart maps -----------------------------------------------------------

    def psi(self, t, u):
        p, v = self._core(t)
        return p + u * np.array([-v[1], v[0]])

    def dpsi(self, t, u):
        """Columns (d psi/dt, d psi/du)."""
        p, v = self._core(t)
        f0 = self.core_f(t)
        col_t = (1.0 - u * f0) * v
        col_u = np.array([-v[1], v[0]])
        return (col_t[0], col_u[0]), (col_t[1], col_u[1])

    def omega(self, t, u):
        """Relative area density and its (t, u) partials."""
        f0 = self.core_f(t)
        return (1.0 - u * f0, -u * self.core_fdot(t), -f0)

    def omega_min(self):
        m = 1.0 - 0.5 * self.eps0 * float(np.max(np.abs(self._f0)))
        return max(m, 1e-9)

    def invert(self, x, y, tol=1e-12, max_iter=12):
        """(t, u) with psi(t, u) = (x, y), or None outside the tube."""
        p = np.array([x, y])
        dpos = self._pos - p[None, :]
        if self.surface.kind == "torus":
            dpos = dpos - np.round(dpos)
        d2 = np.einsum("ij,ij->i", dpos, dpos)
        i0 = int(np.argmin(d2))
        if d2[i0] > (2.0 * self.eps0) ** 2 + 0.01 * self.eps0:
            return None
        # work relative to the unwrapped core: shift p near the sample
        p_adj = self._pos[i0] - dpos[i0]
        t = float(self._ts[i0])
        u = 0.0
        resid = math.inf
        for _ in range(max_iter):
            p_c, v = self._core(t)
            w = np.array([-v[1], v[0]])
            f0 = self.core_f(t)
            r = p_c + u * w - p_adj
            resid = abs(r[0]) + abs(r[1])
            if resid < tol:
                break
            jt = (1.0 - u * f0) * v
            det = jt[0] * w[1] - jt[1] * w[0]
            if det == 0.0:
                return None
            dt = (-r[0] * w[1] + r[1] * w[0]) / det
            du = (-jt[0] * r[1] + jt[1] * r[0]) / det
            t = min(max(t + dt, 0.0), self.T)
            u += du
            if abs(u) > 4.0 * self.eps0:
                return None
        if resid > 1e-9 or abs(u) >= self.eps0:
            return None
        return (t, u)

    def injectivity_report(self, nt=100, nu=20):
        """Sampled injectivity of psi on (0, T) x (-eps0, eps0).

        Compares chart distances against tubular-coordinate distances:
        distinct parameter pairs whose images nearly coincide flag an
        overlap (wrap collisions on the torus included).
        """
        ts = np.linspace(0.0, self.T, nt)
        us = np.linspace(-0.999 * self.eps0, 0.999 * self.eps0, nu)
        pts = np.array([self.psi(t, u) for t in ts for u in us])
        speed = math.sqrt(2.0 * self.c)
        tub = np.array([[t * speed, u] for t in ts for u in us])
        d = pts[:, None, :] - pts[None, :, :]
        if self.surface.kind == "torus":
            d = d - np.round(d)
        dist = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
        dt = tub[:, None, :] - tub[None, :, :]
        tub_dist = np.sqrt(np.einsum("ijk,ijk->ij", dt, dt))
        grid_h = max(self.T * speed / (nt - 1), 2.0 * self.eps0 / (nu - 1))
        mask = tub_dist > 4.0 * grid_h
        if not mask.any():
            return {"injective": True, "min_ratio": float("inf")}
        ratio = float((dist[mask] / tub_dist[mask]).min())
        return {"injective": ratio > 0.3, "min_ratio": ratio}


def build_tubular_chart(surface, field, state, T, eps0, c=None, options=None,
                        eps_min=1e-5):
    """Tubular chart around the orbit segment through `state` of length T.

    The segment must satisfy T <= K(c, f); the width is halved automatically
    until the sampled injectivity check passes (failure below eps_min is an
    error).  Returns (chart, trajectory).
    """
    options = options or IntegratorOptions(rel_tol=1e-12, abs_tol=1e-13)
    if isinstance(field, MagneticField):
        fld = field
    else:
        fld = MagneticField(field)
    traj = flow(surface, fld, state, T, options)
    K = injectivity_time(surface, fld, traj.c)
    if T > K * (1.0 + 1e-9):
        raise ValueError(f"segment length {T} exceeds injectivity time {K}")
    width = eps0
    while width >= eps_min:
        chart = TubularChart(surface, fld, traj, T, width)
        rep = chart.injectivity_report()
        if rep["injective"]:
            chart.autoshrunk = width != eps0
            return chart, traj
        width *= 0.5
    raise ValueError(f"no injective tube above width {eps_min}")


# -- bump profiles --------------------------------------------------------------

_PHI_C = 315.0 / 256.0
_PHI_D1_MAX = 8.0 * _PHI_C * (216.0 / (343.0 * math.sqrt(7.0)))
_PHI_D2_MAX = 8.0 * _PHI_C


@dataclass(frozen=True)
class BumpProfile:
    """Unit-mass bump phi((t - center)/half)/half with phi = C (1-u^2)^4."""

    center: float
    half: float

    def value(self, t):
        u = (t - self.center) / self.half
        if abs(u) >= 1.0:
            return 0.0
        w = 1.0 - u * u
        return _PHI_C * w**4 / self.half

    def d1(self, t):
        u = (t - self.center) / self.half
        if abs(u) >= 1.0:
            return 0.0
        w = 1.0 - u * u
        return -8.0 * _PHI_C * u * w**3 / self.half**2

    def d2(self, t):
        u = (t - self.center) / self.half
        if abs(u) >= 1.0:
            return 0.0
        w = 1.0 - u * u
        return -8.0 * _PHI_C * w * w * (1.0 - 7.0 * u * u) / self.half**3

    @property
    def support(self):
        return (self.center - self.half, self.center + self.half)

    @property
    def c0(self):
        return _PHI_C / self.half

    @property
    def c0_d1(self):
        return _PHI_D1_MAX / self.half**2

    @property
    def c0_d2(self):
        return _PHI_D2_MAX / self.half**3


def _smoothstep(u):
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


class AlphaProfile:
    """Smoothed indicator of [0, T] minus small windows; values in [0, 1].

    Each window (a, b) is excluded with C^2 transitions of width w on both
    sides; the exact excluded mass is sum (b - a) + w per window.
    """

    def __init__(self, T, windows, w):
        self.T = T
        self.windows = list(windows)
        self.w = w

    def value(self, t):
        out = 1.0
        for a, b in self.windows:
            if a - self.w < t < b + self.w:
                rise = _smoothstep((t - (a - self.w)) / self.w)
                fall = _smoothstep(((b + self.w) - t) / self.w)
                out *= 1.0 - min(rise, fall)
        return out

    def deviation_mass(self):
        """integral of |alpha - 1| (exact for disjoint padded windows)."""
        return sum((b - a) + self.w for a, b in self.windows)


# -- constants ledger ------------------------------------------------------------


@dataclass
class FranksConstants:
    k0: float
    T: float
    lam_window: float
    k1: float
    k2: float
    k3: float
    rho: float
    delta_profile: BumpProfile
    Delta_profile: BumpProfile
    alpha: AlphaProfile
    kmag_c0: float
    log_k5_full: float
    k5_restricted: float
    k6: float
    eps_c1: float
    eps0: float
    delta1: float
    delta: float
    checks: dict

    def ledger(self):
        out = {
            "k0": self.k0, "T": self.T, "lambda": self.lam_window,
            "k1": self.k1, "k2": self.k2, "k3": self.k3, "rho": self.rho,
            "kmag_c0": self.kmag_c0, "log_k5_full": self.log_k5_full,
            "k5_restricted": self.k5_restricted, "k6": self.k6,
            "eps_c1": self.eps_c1, "eps0": self.eps0,
            "delta1": self.delta1, "delta": self.delta,
            "alpha_mass": self.alpha.deviation_mass(),
        }
        out["checks"] = {k: v for k, v in self.checks.items()}
        return out

    def all_inequalities_hold(self):
        return all(v >= 0.0 for v in self.checks.values())


@dataclass
class PerturbA:
    """Element [[b, c], [a, -b]] of the traceless 2x2 algebra."""

    a: float
    b: float
    c: float

    def matrix(self):
        return np.array([[self.b, self.c], [self.a, -self.b]])

    def norm(self):
        return float(np.linalg.norm(self.matrix(), 2))

    @staticmethod
    def random_unit(rng):
        v = rng.standard_normal(3)
        A = PerturbA(*v)
        n = A.norm()
        return PerturbA(v[0] / n, v[1] / n, v[2] / n)


# -- the kit ----------------------------------------------------------------------


class FranksKit:
    """Cached segment data plus deterministic response integration."""

    def __init__(self, surface, field, state, T, eps0=0.02, options=None,
                 n_window_steps=4096):
        self.surface = surface
        self.field = field if isinstance(field, MagneticField) else MagneticField(field)
        self.T = T
        self.options = options or IntegratorOptions(rel_tol=1e-12, abs_tol=1e-13)
        self.chart, self.traj = build_tubular_chart(surface, self.field, state,
                                                    T, eps0, options=self.options)
        self.state0 = self.traj.state(0.0)
        self.c = self.traj.c
        self.eps0 = self.chart.eps0
        self.n_window_steps = n_window_steps
        # base variational data over [0, T]
        _, vp = flow_with_variation(surface, self.field, self.state0, T, self.options)
        self._vp = vp
        self._window = None

    def kmag_base(self, t):
        return magnetic_curvature_at(self.surface, self.field,
                                     self.traj.state(t), self.c)

    def base_matrix(self, t):
        return self._vp.matrix(t)

    def set_window(self, t_a, t_b):
        """Fix the support window for fixed-step response integration."""
        t_a = max(0.0, t_a)
        t_b = min(self.T, t_b)
        n = self.n_window_steps
        ts = np.linspace(t_a, t_b, 2 * n + 1)
        kmag = np.array([self.kmag_base(t) for t in ts])
        X_a = self.base_matrix(t_a)
        X_T = self.base_matrix(self.T)
        X_b = self.base_matrix(t_b)
        X_after = X_T @ np.linalg.inv(X_b)
        self._window = {
            "t_a": t_a, "t_b": t_b, "n": n, "h": (t_b - t_a) / n,
            "ts": ts, "kmag": kmag, "X_a": X_a, "X_after": X_after,
        }

    def _require_window(self):
        if self._window is None:
            raise RuntimeError("set_window must be called before responses")
        return self._window

    def response(self, shift=None):
        """X(T) of the variational system with K_mag - shift(t) in the window.

        shift(t, kmag_base_value) -> float; None means the base field.  The
        window is crossed with fixed-step RK4 (deterministic and smooth in
        the perturbation parameters); outside it the cached base propagators
        are used.
        """
        w = self._require_window()
        n, h, ts, km_arr = w["n"], w["h"], w["ts"], w["kmag"]
        km = km_arr.tolist()
        tlist = ts.tolist()
        a, b = w["X_a"][0, 0], w["X_a"][0, 1]
        c_, d = w["X_a"][1, 0], w["X_a"][1, 1]
        h2 = 0.5 * h
        h6 = h / 6.0
        for i in range(n):
            t0 = tlist[2 * i]
            k0v, k1v, k2v = km[2 * i], km[2 * i + 1], km[2 * i + 2]
            if shift is not None:
                k0v -= shift(t0, k0v)
                k1v -= shift(t0 + h2, k1v)
                k2v -= shift(t0 + h, k2v)
            # stage 1
            a1, b1 = c_, d
            c1, d1 = -k0v * a, -k0v * b
            # stage 2
            xa, xb = a + h2 * a1, b + h2 * b1
            xc, xd = c_ + h2 * c1, d + h2 * d1
            a2, b2 = xc, xd
            c2, d2 = -k1v * xa, -k1v * xb
            # stage 3
            xa, xb = a + h2 * a2, b + h2 * b2
            xc, xd = c_ + h2 * c2, d + h2 * d2
            a3, b3 = xc, xd
            c3, d3 = -k1v * xa, -k1v * xb
            # stage 4
            xa, xb = a + h * a3, b + h * b3
            xc, xd = c_ + h * c3, d + h * d3
            a4, b4 = xc, xd
            c4, d4 = -k2v * xa, -k2v * xb
            a += h6 * (a1 + 2.0 * (a2 + a3) + a4)
            b += h6 * (b1 + 2.0 * (b2 + b3) + b4)
            c_ += h6 * (c1 + 2.0 * (c2 + c3) + c4)
            d += h6 * (d1 + 2.0 * (d2 + d3) + d4)
        return w["X_after"] @ np.array([[a, b], [c_, d]])

    def response_derivative(self, bdir):
        """Z(T) = X(T) int X^{-1} [[0,0],[bdir,0]] X dt via the coupled system."""
        w = self._require_window()
        n, h, ts, km_arr = w["n"], w["h"], w["ts"], w["kmag"]
        km = km_arr.tolist()
        tlist = ts.tolist()
        h2 = 0.5 * h
        h6 = h / 6.0
        X = [w["X_a"][0, 0], w["X_a"][0, 1], w["X_a"][1, 0], w["X_a"][1, 1]]
        Y = [0.0, 0.0, 0.0, 0.0]

        def rhs(km_v, bv, M, N):
            return (
                (M[2], M[3], -km_v * M[0], -km_v * M[1]),
                (N[2], N[3], bv * M[0] - km_v * N[0], bv * M[1] - km_v * N[1]),
            )

        for i in range(n):
            t0 = tlist[2 * i]
            k0v, k1v, k2v = km[2 * i], km[2 * i + 1], km[2 * i + 2]
            b0, b1v, b2v = bdir(t0), bdir(t0 + h2), bdir(t0 + h)
            a1, e1 = rhs(k0v, b0, X, Y)
            a2, e2 = rhs(k1v, b1v,
                         [X[j] + h2 * a1[j] for j in range(4)],
                         [Y[j] + h2 * e1[j] for j in range(4)])
            a3, e3 = rhs(k1v, b1v,
                         [X[j] + h2 * a2[j] for j in range(4)],
                         [Y[j] + h2 * e2[j] for j in range(4)])
            a4, e4 = rhs(k2v, b2v,
                         [X[j] + h * a3[j] for j in range(4)],
                         [Y[j] + h * e3[j] for j in range(4)])
            X = [X[j] + h6 * (a1[j] + 2.0 * (a2[j] + a3[j]) + a4[j]) for j in range(4)]
            Y = [Y[j] + h6 * (e1[j] + 2.0 * (e2[j] + e3[j]) + e4[j]) for j in range(4)]
        return w["X_after"] @ np.array([[Y[0], Y[1]], [Y[2], Y[3]]])


def build_franks_kit(surface, field, state, T, eps0=0.02, options=None):
    return FranksKit(surface, field, state, T, eps0, options)


# -- constants computation ----------------------------------------------------------


def _kmag_c0_norm(surface, field, c, n_pos=96, n_dir=24):
    """Certified-ish sup of |K_mag| over the energy level by sampling."""
    from .field import _chart_sample_grid

    best = 0.0
    for chart in range(len(surface.charts)):
        xs, ys = _chart_sample_grid(surface, chart, n_pos)
        for x, y in zip(xs, ys):
            md = surface.metric_at(chart, *surface.wrap_position(x, y))
            f, (fx, fy) = field.eval(surface, chart, *surface.wrap_position(x, y))
            speed = math.sqrt(2.0 * c) / md.lam
            base = 2.0 * c * md.curvature + f * f
            amp = speed * math.hypot(fx, fy)
            best = max(best, abs(base) + amp)
    return 1.01 * best


def compute_constants(kit: FranksKit, lam0=None, eps_c1=0.1,
                      crossing_windows=(), n_grid=20001):
    """The constants ledger for one segment, with λ halved until admissible.

    Every ledger inequality is checked numerically and its slack recorded
    in `checks` (nonnegative values mean the inequality holds).
    """
    surface, field, c, T = kit.surface, kit.field, kit.c, kit.T
    k0 = injectivity_time(surface, field, c)
    if not (k0 / 2.0 < T <= k0 * (1.0 + 1e-12)):
        raise ValueError(f"segment length T={T} outside (K/2, K] = ({k0/2}, {k0}]")

    # k1 over [0, T] from the cached fundamental matrix, inflated by 1%
    ts = np.linspace(0.0, T, 2048)
    norms = []
    inv_norms = []
    Cs = []
    for t in ts:
        X = kit.base_matrix(t)
        norms.append(np.linalg.norm(X, 2))
        inv_norms.append(np.linalg.norm(np.linalg.inv(X), 2))
        Cs.append(max(1.0, abs(kit.kmag_base(t))))
    k1 = 1.01 * max(max(norms), max(inv_norms))
    k1 = max(k1, 1.0 + 1e-9)

    lam = lam0 if lam0 is not None else k0 / 16.0
    lam = min(lam, 0.45 * (T - k0 / 2.0), k0 / 8.0)
    kmag_c0 = _kmag_c0_norm(surface, field, c)
    bound_k2 = 1.0 / (16.0 * k1**3)
    lip = 1.01 * max(Cs) * k1  # |X'| <= |C| |X|, also bounds (X^{-1})'

    def k2_of(lam_):
        """max |X(t) - X(k0/2)| over the window, sampled, inflated 5%."""
        Xc = kit.base_matrix(k0 / 2.0)
        Xc_inv = np.linalg.inv(Xc)
        worst = 0.0
        for t in np.linspace(k0 / 2.0 - lam_, k0 / 2.0 + lam_, 129):
            X = kit.base_matrix(min(max(t, 0.0), T))
            worst = max(worst, np.linalg.norm(X - Xc, 2),
                        np.linalg.norm(np.linalg.inv(X) - Xc_inv, 2))
        return min(1.05 * worst + 1e-15, lam_ * lip)

    k2 = k2_of(lam)
    while k2 >= bound_k2:
        lam *= 0.5
        k2 = k2_of(lam)
        if lam < 1e-12:
            raise ValueError("lambda underflow while enforcing k2 < 1/(16 k1^3)")

    half = 0.49 * lam
    delta_p = BumpProfile(k0 / 2.0 - 0.5 * lam, half)
    Delta_p = BumpProfile(k0 / 2.0 + 0.5 * lam, half)

    k3 = k1 * k1 * (delta_p.c0 + delta_p.c0_d1
                    + Delta_p.c0 * kmag_c0 + 0.5 * Delta_p.c0_d2)
    rho = 1.0 / (8.0 * k1 * k1 * k3)

    # alpha: exclude the boundary points of supp(Delta) plus any crossing
    # windows supplied by segment geometry, within half the rho budget
    sup_lo, sup_hi = Delta_p.support
    n_win = 2 + len(crossing_windows)
    w = min(rho / (8.0 * n_win), lam / 100.0)
    w = max(w, 64.0 * np.spacing(k0))
    windows = [(sup_lo - w, sup_lo + w), (sup_hi - w, sup_hi + w)]
    windows += [tuple(cw) for cw in crossing_windows]
    alpha = AlphaProfile(T, windows, w)
    mass = alpha.deviation_mass()
    if mass > rho:
        raise DataInconsistencyError(
            f"alpha deviation mass {mass:.3e} exceeds rho {rho:.3e}")

    # k5: the unrestricted |A| <= 1 bound overflows for narrow windows, so
    # keep its log and use the same derivation restricted to |A| <= m
    A1 = delta_p.c0 + delta_p.c0_d1
    A2 = Delta_p.c0 * kmag_c0 + 0.5 * Delta_p.c0_d2
    E = Delta_p.c0
    if E > 700.0:
        log_k5_full = max(math.log(A2) + E, math.log(A1))
    else:
        log_k5_full = math.log(A1 + A2 * math.exp(E))

    log_A2 = math.log(A2)

    def k5_of(m):
        log_term = log_A2 + E * m
        if log_term > 700.0:
            return math.inf
        return A1 + math.exp(log_term)

    # delta1: largest m < 1 with 2 m k5(m) <= eps/2, then halved (2x slack)
    lo, hi = 0.0, 0.99
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 2.0 * mid * k5_of(mid) <= eps_c1 / 2.0:
            lo = mid
        else:
            hi = mid
    delta1 = 0.5 * lo
    if delta1 <= 0.0:
        raise ValueError("no admissible delta1; enlarge eps_c1")
    k5 = k5_of(delta1)

    # k6 at scale delta1 (the |A| <= 1 version overflows identically)
    consts_stub = _ProfileBundle(delta_p, Delta_p, alpha)
    k6 = 0.0
    tgrid = np.linspace(max(0.0, sup_lo - 2 * lam), min(T, sup_hi + 2 * lam), n_grid)
    for dirn in _unit_directions():
        A = PerturbA(delta1 * dirn[0], delta1 * dirn[1], delta1 * dirn[2])
        vals = np.array([_beta_A(t, A, consts_stub, kit.kmag_base) for t in tgrid])
        dt = tgrid[1] - tgrid[0]
        deriv = np.gradient(vals, dt)
        k6 = max(k6, (np.max(np.abs(vals)) + np.max(np.abs(deriv))) / delta1)
    k6 *= 1.01

    eps0 = kit.eps0
    if eps0 > eps_c1 / (4.0 * k6):
        eps0 = eps_c1 / (4.0 * k6)

    delta = delta1 / (2.0 * k1**3)

    checks = {
        "k2_k1": bound_k2 - k2,
        "k1_gt_1": k1 - 1.0,
        "rho_upper": 1.0 / (4.0 * k1 * k1 * k3) - rho,
        "rho_chain": (1.0 / k1**2 - k3 * rho - 4.0 * k1 * k2) - 1.0 / (2.0 * k1**2),
        "alpha_mass": rho - mass,
        "delta_support": (T - sup_hi),
        "delta1_ball": eps_c1 / 2.0 - 2.0 * k5 * delta1,
        "eps0_bound": eps_c1 / (2.0 * k6) - eps0,
    }
    consts = FranksConstants(k0, T, lam, k1, k2, k3, rho, delta_p, Delta_p,
                             alpha, kmag_c0, log_k5_full, k5, k6, eps_c1,
                             eps0, delta1, delta, checks)
    kit.set_window(delta_p.support[0] - 0.02 * lam,
                   Delta_p.support[1] + 0.02 * lam)
    return consts


@dataclass
class _ProfileBundle:
    delta_profile: BumpProfile
    Delta_profile: BumpProfile
    alpha: AlphaProfile


def _unit_directions():
    dirs = []
    for v in ((1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1),
              (1, 1, 1), (1, -1, 1)):
        a = PerturbA(*v)
        n = a.norm()
        dirs.append((v[0] / n, v[1] / n, v[2] / n))
    return dirs


def _expm1_over_delta(y, delta):
    """expm1(y)/delta with y = -alpha*delta*c, stable as delta -> 0."""
    if delta == 0.0:
        return 0.0
    if abs(y) < 1e-6:
        return (y * (1.0 + 0.5 * y * (1.0 + y / 3.0))) / delta
    return math.expm1(y) / delta


def _beta_A(t, A: PerturbA, consts, kmag_of_t):
    """beta_A(t) = alpha (delta a + delta' b) + (K0 + Delta''/2Delta)(e^{-alpha Delta c}-1)."""
    al = consts.alpha.value(t)
    d = consts.delta_profile
    D = consts.Delta_profile
    out = al * (d.value(t) * A.a + d.d1(t) * A.b)
    Dv = D.value(t)
    y = -al * Dv * A.c
    em1 = math.expm1(y) if abs(y) >= 1e-6 else y * (1.0 + 0.5 * y * (1.0 + y / 3.0))
    out += kmag_of_t(t) * em1 + 0.5 * D.d2(t) * _expm1_over_delta(y, Dv)
    return out


def _del_b(t, A: PerturbA, consts, kmag_of_t):
    """Directional derivative of beta_A at A = 0."""
    al = consts.alpha.value(t)
    d = consts.delta_profile
    D = consts.Delta_profile
    return al * (d.value(t) * A.a + d.d1(t) * A.b
                 - (D.value(t) * kmag_of_t(t) + 0.5 * D.d2(t)) * A.c)


# -- perturbations and responses -----------------------------------------------------


def build_GA(kit: FranksKit, consts: FranksConstants, A: PerturbA):
    """The perturbation G(A) - f0 as a PerturbationField plus its profile.

    Requires |A| < delta1.  Returns (perturbed_field, perturbation, beta).
    """
    if A.norm() >= consts.delta1:
        raise ValueError(f"|A| = {A.norm():.3e} >= delta1 = {consts.delta1:.3e}")
    kmag = kit.kmag_base

    def beta(t):
        return _beta_A(t, A, consts, kmag)

    hfd = 1e-9 * max(consts.lam_window, 1e-3)

    def beta_d(t):
        return (beta(t + hfd) - beta(t - hfd)) / (2.0 * hfd)

    lo = consts.delta_profile.support[0] - 10.0 * consts.alpha.w
    hi = consts.Delta_profile.support[1] + 10.0 * consts.alpha.w
    ts = np.linspace(lo, hi, 4001)
    vals = np.array([beta(t) for t in ts])
    ders = np.array([beta_d(t) for t in ts])
    b_c0 = 1.01 * float(np.max(np.abs(vals)))
    b_c1 = b_c0 + 1.01 * float(np.max(np.abs(ders)))
    # narrow the bump to the ledger's eps0 if the chart is wider
    tube = kit.chart
    if consts.eps0 < tube.eps0:
        tube = _NarrowChart(tube, consts.eps0)
    pert = PerturbationField(tube, beta, beta_d, b_c0, b_c1,
                            support_t=(lo, hi), label="G(A)")
    return kit.field.with_perturbation(pert), pert, beta


class _NarrowChart:
    """View of a tubular chart with a smaller width."""

    def __init__(self, chart, eps0):
        self._chart = chart
        self.eps0 = eps0

    def __getattr__(self, name):
        return getattr(self._chart, name)


def franks_response(kit: FranksKit, beta=None):
    """S_{T,theta}: monodromy over [0, T] for the field f0 + a_eps(u) beta(t).

    The core is unchanged (the perturbation vanishes there); its only effect
    on the transversal linearization is K_mag -> K_mag - beta(t).
    """
    if beta is None:
        return kit.response(None)
    return kit.response(lambda t, km: beta(t))


def variational_response(kit: FranksKit, bdir, quad_check=False):
    """Z(T) for a direction b(t) with support inside the window."""
    return kit.response_derivative(bdir)


# -- verification ----------------------------------------------------------------------


@dataclass
class CotaReport:
    margins: list
    min_margin: float
    linearity_defect: float
    samples: int

    def as_dict(self):
        return {"samples": self.samples, "margins": self.margins,
                "min_margin": self.min_margin,
                "linearity_defect": self.linearity_defect}


def verify_cota(kit: FranksKit, consts: FranksConstants, sample_count=20,
                seed=0):
    """Sampled check of |Z(T)| >= |A| / (2 k1^3) over random unit directions.

    Raises CotaViolationError if any margin drops below 1.
    """
    rng = np.random.default_rng(seed)
    kmag = kit.kmag_base
    margins = []
    worst = math.inf
    for _ in range(sample_count):
        A = PerturbA.random_unit(rng)
        Z = kit.response_derivative(lambda t: _del_b(t, A, consts, kmag))
        margin = float(np.linalg.norm(Z, 2) * 2.0 * consts.k1**3 / A.norm())
        margins.append(margin)
        if margin < worst:
            worst = margin
        if margin < 1.0:
            raise CotaViolationError(
                f"response bound violated: margin {margin:.6f}", direction=A)
    # linearity of the first variation: Z(2A) = 2 Z(A)
    A = PerturbA.random_unit(rng)
    Z1 = kit.response_derivative(lambda t: _del_b(t, A, consts, kmag))
    A2 = PerturbA(2 * A.a, 2 * A.b, 2 * A.c)
    Z2 = kit.response_derivative(lambda t: _del_b(t, A2, consts, kmag))
    lin = float(np.linalg.norm(Z2 - 2.0 * Z1, 2) / max(np.linalg.norm(Z2, 2), 1e-30))
    return CotaReport(margins, worst, lin, sample_count)


def _sl2_exp(M):
    """exp of a traceless 2x2 matrix, closed form."""
    d = -float(np.linalg.det(M))
    if d > 0:
        s = math.sqrt(d)
        return math.cosh(s) * np.eye(2) + (math.sinh(s) / s) * M
    if d < 0:
        s = math.sqrt(-d)
        return math.cos(s) * np.eye(2) + (math.sin(s) / s) * M
    return np.eye(2) + M


@dataclass
class SurjectivityReport:
    targets: int
    solved: int
    max_residual: float
    max_A_norm: float
    gene_bound_ok: bool
    details: list

    def as_dict(self):
        return {"targets": self.targets, "solved": self.solved,
                "max_residual": self.max_residual,
                "max_A_norm": self.max_A_norm,
                "gene_bound_ok": self.gene_bound_ok,
                "details": self.details}


def verify_ball_surjectivity(kit: FranksKit, consts: FranksConstants,
                             targets=None, n_targets=8, radius_factor=0.5,
                             newton_tol=1e-6, max_iter=30, mode="sphere",
                             seed=0):
    """Newton inversion of A -> S(G(A)) for targets near S0 = S(f0).

    mode="sphere": targets S0 exp(s D) on the delta/2 sphere (coordinate and
    mixed directions of the traceless algebra).  mode="forward": targets
    generated as S(G(A0)) for known A0 with |A0| = delta1/2; the report then
    also carries the recovery error |A - A0|.  Newton stops at residual
    max(1e-3 * dist(target, S0), few ulps), so the inversion genuinely runs
    whenever the target is numerically distinguishable from S0; each solve
    must end with residual <= newton_tol, |A| <= delta1, and |A| within the
    covering bound 2 k1^3 dist(target, S0).
    """
    kmag = kit.kmag_base

    def S_of(Avec):
        A = PerturbA(*Avec)
        return kit.response(lambda t, km: _beta_A(t, A, consts, kmag))

    S0 = S_of((0.0, 0.0, 0.0))
    floor = 32.0 * np.finfo(float).eps * np.linalg.norm(S0, "fro")
    r = radius_factor * consts.delta
    known = None
    if targets is None:
        targets = []
        if mode == "forward":
            known = []
            rng = np.random.default_rng(seed)
            for _ in range(n_targets):
                A0 = PerturbA.random_unit(rng)
                s = 0.5 * consts.delta1
                A0 = np.array([s * A0.a, s * A0.b, s * A0.c])
                targets.append(S_of(A0))
                known.append(A0)
        else:
            dirs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0),
                    (0, 0, 1), (0, 0, -1), (1, 1, 1), (-1, 1, -1)][:n_targets]
            for d in dirs:
                D = PerturbA(*d).matrix()
                D = D / np.linalg.norm(D, "fro")
                lo, hi = 0.0, 10.0 * r
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    tgt = S0 @ _sl2_exp(mid * D)
                    if np.linalg.norm(tgt - S0, "fro") < r:
                        lo = mid
                    else:
                        hi = mid
                targets.append(S0 @ _sl2_exp(0.5 * (lo + hi) * D))

    details = []
    max_res = 0.0
    max_norm = 0.0
    solved = 0
    gene_ok = True
    hA = 0.1 * consts.delta1
    for it, tgt in enumerate(targets):
        dist = float(np.linalg.norm(tgt - S0, "fro"))
        stop = max(1e-3 * dist, floor)
        A = np.zeros(3)
        for _ in range(max_iter):
            S = S_of(A)
            res = (S - tgt).ravel()
            if np.linalg.norm(res) <= stop:
                break
            J = np.empty((4, 3))
            for j in range(3):
                e = np.zeros(3)
                e[j] = hA
                J[:, j] = (S_of(A + e) - S_of(A - e)).ravel() / (2.0 * hA)
            step, *_ = np.linalg.lstsq(J, -res, rcond=None)
            n = np.linalg.norm(step)
            cap = 0.5 * consts.delta1
            if n > cap:
                step *= cap / n
            A = A + step
        S = S_of(A)
        resid = float(np.linalg.norm(S - tgt, "fro"))
        a_norm = PerturbA(*A).norm()
        ok = resid <= newton_tol and a_norm <= consts.delta1
        bound = 2.0 * consts.k1**3 * dist * (1.0 + 1e-6) + 1e-30
        if a_norm > bound:
            gene_ok = False
        solved += int(ok)
        max_res = max(max_res, resid)
        max_norm = max(max_norm, a_norm)
        det = {"dist": dist, "residual": resid, "A_norm": a_norm, "ok": ok}
        if known is not None:
            det["recovery_error"] = float(np.linalg.norm(A - known[it]))
        details.append(det)
    return SurjectivityReport(len(targets), solved, max_res, max_norm,
                              gene_ok, details)


# -- segment decomposition ----------------------------------------------------------


@dataclass
class SegmentSplit:
    n: int
    t0: float
    start_states: list
    charts: list
    responses: list

    def product(self):
        out = np.eye(2)
        for S in self.responses:
            out = S @ out
        return out


def segment_split(orbit, surface, field, c, eps0=0.02, options=None):
    """Cut a closed orbit into n segments of equal length t0 in (K/2, K].

    n is the smallest count with t0 = T_theta / n <= K; per-segment tubular
    charts are built with widths shrunk until their mid-segment support
    regions avoid every other segment's core.  Also returns the per-segment
    transversal propagators, whose ordered product is the full monodromy.
    """
    options = options or IntegratorOptions(rel_tol=1e-12, abs_tol=1e-13)
    fld = field if isinstance(field, MagneticField) else MagneticField(field)
    K = injectivity_time(surface, fld, c)
    T_theta = orbit.period
    if T_theta <= K / 2.0:
        raise DataInconsistencyError(
            f"period {T_theta} <= K/2 = {K/2}: contradicts the injectivity bound")
    n = max(1, math.ceil(T_theta / K - 1e-12))
    t0 = T_theta / n
    if not (K / 2.0 < t0 <= K * (1.0 + 1e-12)):
        raise DataInconsistencyError(
            f"t0 = {t0} not in (K/2, K] = ({K/2}, {K}]")
    traj, vp = flow_with_variation(surface, fld, orbit.initial_state, T_theta,
                                   options)
    starts = [traj.state(i * t0) for i in range(n)]
    # propagators between consecutive section times
    mats = [vp.matrix(i * t0) for i in range(n + 1)]
    responses = [mats[i + 1] @ np.linalg.inv(mats[i]) for i in range(n)]

    core_samples = []
    for i in range(n):
        ts = np.linspace(i * t0, (i + 1) * t0, 256)
        core_samples.append(np.array([[traj.state(t).x, traj.state(t).y] for t in ts]))

    charts = []
    for i in range(n):
        width = eps0
        chart = None
        for _ in range(30):
            chart, _ = build_tubular_chart(surface, fld, starts[i],
                                           min(t0, K), width, options=options)
            mid_lo, mid_hi = 0.3 * t0, 0.7 * t0
            pts = []
            for t in np.linspace(mid_lo, mid_hi, 64):
                for u in (-0.5 * width, 0.5 * width):
                    pts.append(chart.psi(t, u))
            pts = np.array(pts)
            clear = True
            for j in range(n):
                if j == i:
                    continue
                d = pts[:, None, :] - core_samples[j][None, :, :]
                if surface.kind == "torus":
                    d = d - np.round(d)
                if np.sqrt(np.einsum("ijk,ijk->ij", d, d)).min() < 1.5 * width:
                    clear = False
                    break
            if clear:
                break
            width *= 0.5
        chart.eps0 = min(chart.eps0, width)
        charts.append(chart)
    return SegmentSplit(n, t0, starts, charts, responses)
