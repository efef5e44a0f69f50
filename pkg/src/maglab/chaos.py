"""Invariant manifolds, homoclinic tangles and entropy lower bounds.

Everything here operates on an abstract planar-map oracle (callable with
optional `inverse` and `jacobian`), so first-return maps of flows and
injected test maps (standard map, piecewise-linear horseshoe) share all the
code paths.  A verified transversal homoclinic crossing plus a sampled
Conley-Moser crossing pattern yields a symbolic factor with N symbols under
k iterates, hence the topological-entropy lower bound log(N) / (k * T_ret)
per unit time (T_ret = 1 for plain maps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoReturnError
from .normalform import fd_jacobian

__all__ = [
    "ManifoldBranch",
    "grow_manifold",
    "HomoclinicIntersection",
    "detect_homoclinic",
    "EntropyReport",
    "certify_horseshoe",
    "SplittingReport",
    "dominated_splitting_check",
]


def _oracle_jacobian(oracle, z):
    jac = getattr(oracle, "jacobian", None)
    if jac is not None:
        return np.asarray(jac(z), dtype=float)
    return fd_jacobian(oracle, z)


def _hyperbolic_eigen(J, class_tol=1e-6):
    tr = float(np.trace(J))
    if abs(tr) <= 2.0 + class_tol:
        raise ValueError(f"fixed point is not hyperbolic (trace {tr:.6f})")
    w, V = np.linalg.eig(J)
    w = w.real
    V = V.real
    iu = int(np.argmax(np.abs(w)))
    i_s = 1 - iu
    vu = V[:, iu] / np.linalg.norm(V[:, iu])
    vs = V[:, i_s] / np.linalg.norm(V[:, i_s])
    return (w[iu], vu), (w[i_s], vs)


@dataclass
class ManifoldBranch:
    fixed_point: np.ndarray
    side: str                   # "stable" | "unstable"
    sign: int
    points: np.ndarray          # polyline, shape (n, 2)
    arclength: float
    eigenvalue: float
    eigenvector: np.ndarray
    truncated: bool = False
    tol: float = 0.0

    def segments(self):
        return np.stack([self.points[:-1], self.points[1:]], axis=1)

    def invariance_defect(self, oracle, n_check=200):
        """Max distance of vertex images from the polyline (its own invariance).

        Only vertices whose images stay inside the grown arclength are
        mapped (the expansion rate bounds how far along they can land).
        """
        step = self._step_fn(oracle)
        lens = np.concatenate(
            [[0.0], np.cumsum(np.linalg.norm(np.diff(self.points, axis=0), axis=1))])
        # self.eigenvalue is the expansion rate of `step` along the branch
        cutoff = self.arclength / (1.5 * abs(self.eigenvalue))
        usable = np.nonzero(lens <= cutoff)[0]
        if len(usable) == 0:
            return 0.0
        idx = np.linspace(0, len(usable) - 1, min(n_check, len(usable))).astype(int)
        worst = 0.0
        for i in usable[idx]:
            try:
                img = np.asarray(step(self.points[i]), dtype=float)
            except (ValueError, NoReturnError):
                continue
            worst = max(worst, _point_polyline_distance(img, self.points))
        return worst

    def _step_fn(self, oracle):
        if self.side == "unstable":
            return oracle
        return oracle.inverse


def _point_polyline_distance(p, pts):
    a = pts[:-1]
    b = pts[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom[denom == 0.0] = 1.0
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.linalg.norm(proj - p, axis=1)
    return float(d.min())


def grow_manifold(oracle, fixed_point, side, sign, max_arclength, tol=1e-3,
                  seed_eps=1e-7, spacing_max=0.05, max_points=60000,
                  class_tol=1e-6):
    """Adaptive polyline for one branch of W^s or W^u of a hyperbolic point.

    Fundamental-domain iteration: the seed chord [p + eps v, F(p + eps v)] is
    pushed forward ring by ring (stable side uses the inverse map).  Between
    adjacent parameters the chord sagitta is kept below tol and the spacing
    below spacing_max.  Oracle failures truncate the branch with a flag.
    """
    if side not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    p = np.asarray(fixed_point, dtype=float)
    J = _oracle_jacobian(oracle, p)
    (lam_u, vu), (lam_s, vs) = _hyperbolic_eigen(J, class_tol)
    if side == "unstable":
        lam, v = lam_u, vu
        step = lambda z: np.asarray(oracle(z), dtype=float)
    else:
        lam, v = 1.0 / lam_s, vs
        inv = getattr(oracle, "inverse", None)
        if inv is None:
            raise ValueError("stable side needs oracle.inverse")
        step = lambda z: np.asarray(inv(z), dtype=float)
    double = lam < 0
    if double:
        base = step
        step = lambda z: base(base(z))
        lam = lam * lam

    x0 = p + sign * seed_eps * v
    x1 = step(x0)
    chord = x1 - x0

    orbits = {}

    def point_at(t, ring):
        key = t
        orb = orbits.get(key)
        if orb is None:
            orb = [x0 + t * chord]
            orbits[key] = orb
        while len(orb) <= ring:
            orb.append(step(orb[-1]))
        return orb[ring]

    params = [i / 8.0 for i in range(9)]
    pts = [p + sign * 0.0 * v]
    pts = []
    total = 0.0
    truncated = False
    ring = 0
    try:
        while total < max_arclength and len(pts) < max_points:
            # refine this ring
            guard = 0
            while guard < 4000:
                guard += 1
                worst = None
                for i in range(len(params) - 1):
                    a = point_at(params[i], ring)
                    b = point_at(params[i + 1], ring)
                    gap = float(np.linalg.norm(b - a))
                    if gap > spacing_max:
                        worst = i
                        break
                    tm = 0.5 * (params[i] + params[i + 1])
                    m = point_at(tm, ring)
                    sag = _point_polyline_distance(m, np.array([a, b]))
                    if sag > tol and gap > 1e-9:
                        worst = i
                        break
                if worst is None:
                    break
                params.insert(worst + 1, 0.5 * (params[worst] + params[worst + 1]))
                if len(params) > 4000:
                    break
            ring_pts = [point_at(t, ring) for t in params[:-1]]
            for q in ring_pts:
                if pts:
                    total += float(np.linalg.norm(q - pts[-1]))
                pts.append(q)
                if total >= max_arclength:
                    break
            ring += 1
    except (ValueError, NoReturnError):
        truncated = True

    points = np.array(pts) if pts else np.zeros((0, 2))
    return ManifoldBranch(p, side, sign, points, total, lam, v,
                          truncated=truncated, tol=tol)


# -- homoclinic detection --------------------------------------------------------


@dataclass
class HomoclinicIntersection:
    point: tuple
    angle: float
    arclength_stable: float
    arclength_unstable: float

    def transversal(self, angle_tol):
        return self.angle >= angle_tol


def _segment_intersections(A, B):
    """All proper intersections between segment arrays (n,2,2) and (m,2,2)."""
    out = []
    if len(A) == 0 or len(B) == 0:
        return out
    alo = np.minimum(A[:, 0], A[:, 1])
    ahi = np.maximum(A[:, 0], A[:, 1])
    blo = np.minimum(B[:, 0], B[:, 1])
    bhi = np.maximum(B[:, 0], B[:, 1])
    cand = (
        (alo[:, None, 0] <= bhi[None, :, 0]) & (blo[None, :, 0] <= ahi[:, None, 0])
        & (alo[:, None, 1] <= bhi[None, :, 1]) & (blo[None, :, 1] <= ahi[:, None, 1])
    )
    ii, jj = np.nonzero(cand)
    for i, j in zip(ii, jj):
        p, r = A[i, 0], A[i, 1] - A[i, 0]
        q, s = B[j, 0], B[j, 1] - B[j, 0]
        denom = r[0] * s[1] - r[1] * s[0]
        if denom == 0.0:
            continue
        d = q - p
        t = (d[0] * s[1] - d[1] * s[0]) / denom
        u = (d[0] * r[1] - d[1] * r[0]) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            x = p + t * r
            cosang = abs(np.dot(r, s)) / (np.linalg.norm(r) * np.linalg.norm(s))
            ang = math.acos(min(1.0, max(-1.0, cosang)))
            out.append((i, t, j, u, x, ang))
    return out


def detect_homoclinic(branch_s: ManifoldBranch, branch_u: ManifoldBranch,
                      angle_tol=1e-3, min_separation=1e-9):
    """Crossings of a stable with an unstable polyline, with crossing angles.

    Returns all intersections sorted by unstable arclength; each knows
    whether it counts as transversal at the given angle tolerance.  An empty
    list is a valid outcome.
    """
    segs_s = branch_s.segments()
    segs_u = branch_u.segments()
    len_s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(branch_s.points, axis=0), axis=1))])
    len_u = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(branch_u.points, axis=0), axis=1))])
    raw = _segment_intersections(segs_s, segs_u)
    hits = []
    for i, t, j, u, x, ang in raw:
        ls = len_s[i] + t * (len_s[i + 1] - len_s[i])
        lu = len_u[j] + u * (len_u[j + 1] - len_u[j])
        hits.append(HomoclinicIntersection((float(x[0]), float(x[1])), float(ang),
                                           float(ls), float(lu)))
    hits.sort(key=lambda h: (h.arclength_unstable, h.arclength_stable))
    # drop near-duplicates from adjacent segment pairs
    dedup = []
    for h in hits:
        if dedup and abs(h.arclength_unstable - dedup[-1].arclength_unstable) < min_separation:
            continue
        dedup.append(h)
    for h in dedup:
        h.angle_tol = angle_tol
    return dedup


# -- horseshoe certification ------------------------------------------------------


@dataclass
class Rectangle:
    """Axis-aligned box in a (u, s) frame: z = center + u e_u + s e_s."""

    center: np.ndarray
    half_u: float
    half_s: float
    frame: np.ndarray  # columns e_u, e_s

    def fiber(self, s, n):
        us = np.linspace(-self.half_u, self.half_u, n)
        return self.center[None, :] + us[:, None] * self.frame[:, 0][None, :] \
            + s * self.frame[:, 1][None, :]

    def coords(self, pts):
        d = pts - self.center[None, :]
        sol = np.linalg.solve(self.frame, d.T)
        return sol[0], sol[1]


@dataclass
class EntropyReport:
    intersections: list
    horseshoe: dict
    h_top_lower: float
    status: str

    def as_dict(self):
        return {
            "intersections": [
                {"point": list(h.point), "angle": h.angle} for h in self.intersections
            ],
            "horseshoe": self.horseshoe,
            "h_top_lower": self.h_top_lower,
            "status": self.status,
        }


def _fiber_crossings(oracle, rect_from, rect_to, k, s_val, n_samples, slack=1.0):
    """Number of connected full traversals of rect_to by the k-image of one fiber."""
    pts = rect_from.fiber(s_val, n_samples)
    imgs = []
    for z in pts:
        w = np.asarray(z, dtype=float)
        try:
            for _ in range(k):
                w = np.asarray(oracle(w), dtype=float)
        except (ValueError, NoReturnError):
            imgs.append(None)
            continue
        imgs.append(w)
    runs = 0
    run_min = math.inf
    run_max = -math.inf
    inside = False
    tol = 1e-9 * max(rect_to.half_u, rect_to.half_s)
    for w in imgs:
        ok = False
        if w is not None:
            u, s = rect_to.coords(w[None, :])
            u, s = float(u[0]), float(s[0])
            ok = abs(s) <= rect_to.half_s * slack + tol
        if ok:
            if not inside:
                inside = True
                run_min, run_max = u, u
            else:
                run_min = min(run_min, u)
                run_max = max(run_max, u)
        else:
            if inside and run_min <= -rect_to.half_u + tol and run_max >= rect_to.half_u - tol:
                runs += 1
            inside = False
    if inside and run_min <= -rect_to.half_u + tol and run_max >= rect_to.half_u - tol:
        runs += 1
    return runs


def certify_horseshoe(oracle, intersection=None, rectangles=None, k_range=(1,),
                      n_fibers=9, n_samples=160, T_ret=1.0, fixed_point=None):
    """Sampled Conley-Moser crossing check yielding an entropy lower bound.

    With a list of rectangles: certifies that every k-iterate image of each
    rectangle fully crosses every rectangle (N = number of rectangles).
    With a single rectangle (default: built at the homoclinic intersection,
    axes along the local invariant directions): counts connected full
    traversals of the box by its own image, N = minimum over fibers.
    The bound is log(N) / (k * T_ret); failure reports a zero bound.
    """
    if rectangles is None:
        if intersection is None:
            raise ValueError("need an intersection or explicit rectangles")
        rectangles = _default_rectangles(oracle, intersection, fixed_point)
    best = None
    for k in k_range:
        for rects in rectangles if isinstance(rectangles[0], list) else [rectangles]:
            n = _certify_with(oracle, rects, k, n_fibers, n_samples)
            if n >= 2:
                bound = math.log(n) / (k * T_ret)
                cand = {"N": n, "k": k, "T_ret": T_ret}
                if best is None or bound > best[0]:
                    best = (bound, cand)
    if best is None:
        return EntropyReport([] if intersection is None else [intersection],
                             {"N": 0, "k": 0, "T_ret": T_ret}, 0.0, "no crossing")
    return EntropyReport([] if intersection is None else [intersection],
                         best[1], best[0], "certified")


def _certify_with(oracle, rects, k, n_fibers, n_samples):
    if len(rects) == 1:
        r = rects[0]
        counts = []
        for s in np.linspace(-r.half_s, r.half_s, n_fibers):
            counts.append(_fiber_crossings(oracle, r, r, k, s, n_samples))
        return min(counts) if counts else 0
    # multiple rectangles: require full crossing for every ordered pair
    for ri in rects:
        for rj in rects:
            for s in np.linspace(-ri.half_s, ri.half_s, n_fibers):
                if _fiber_crossings(oracle, ri, rj, k, s, n_samples) < 1:
                    return 0
    return len(rects)


def _default_rectangles(oracle, intersection, fixed_point, scales=(0.05, 0.1, 0.2)):
    """Candidate single boxes at the crossing, axes along the local tangents."""
    q = np.asarray(intersection.point, dtype=float)
    # local tangents from the jacobian at the fixed point if available,
    # otherwise an orthogonal default frame
    if fixed_point is not None:
        J = _oracle_jacobian(oracle, np.asarray(fixed_point, dtype=float))
        try:
            (lu, vu), (ls, vs) = _hyperbolic_eigen(J)
            frame = np.column_stack([vu, vs])
        except ValueError:
            frame = np.eye(2)
    else:
        frame = np.eye(2)
    out = []
    for sc in scales:
        out.append([Rectangle(q, sc, sc, frame)])
    return out


# -- dominated splitting -----------------------------------------------------------


@dataclass
class SplittingReport:
    products: list
    certified: bool
    lambda_value: float
    power_checks: dict

    def as_dict(self):
        return {
            "products": self.products,
            "certified": self.certified,
            "lambda": self.lambda_value,
            "power_checks": {str(k): v for k, v in self.power_checks.items()},
        }


def _restricted_product(XT, e_s, e_u):
    a = np.linalg.norm(XT @ e_s) / np.linalg.norm(e_s)
    b = np.linalg.norm(e_u) / np.linalg.norm(XT @ e_u)
    return float(a * b)


def dominated_splitting_check(orbit_entries, T, lambda_target, powers=(2, 3),
                              propagate=None):
    """Contraction products |dP_T|E^s| * |dP_-T|E^u| over a family of orbits.

    Entries are dicts with keys `monodromy` (2x2 over one period) and
    `period`; T must be an integer multiple of each period unless a
    `propagate(entry, t) -> 2x2` callback supplies X(t) along the orbit.
    Also checks the N-fold power decay (products over N*T against the N-th
    powers of the T-products).
    """
    products = []
    checks = {n: [] for n in powers}
    for entry in orbit_entries:
        M = np.asarray(entry["monodromy"], dtype=float)
        period = float(entry["period"])
        tr = float(np.trace(M))
        if abs(tr) <= 2.0:
            raise ValueError(f"non-hyperbolic orbit in input (trace {tr:.6f})")
        (lam_u, e_u), (lam_s, e_s) = _hyperbolic_eigen(M)
        if propagate is not None:
            XT = np.asarray(propagate(entry, T), dtype=float)
        else:
            n = T / period
            n_int = round(n)
            if abs(n - n_int) > 1e-9 or n_int < 1:
                raise ValueError(
                    f"T={T} is not a multiple of the orbit period {period}")
            XT = np.linalg.matrix_power(M, n_int)
        prod = _restricted_product(XT, e_s, e_u)
        products.append(prod)
        for n in powers:
            if propagate is not None:
                XNT = np.asarray(propagate(entry, n * T), dtype=float)
            else:
                XNT = np.linalg.matrix_power(XT, n)
            checks[n].append((_restricted_product(XNT, e_s, e_u), prod**n))
    worst = max(products) if products else math.inf
    certified = worst <= lambda_target and worst < 1.0
    return SplittingReport(products, certified, worst if worst < 1.0 else math.nan,
                           checks)
