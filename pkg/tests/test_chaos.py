import math

import numpy as np
import pytest

from maglab.chaos import (
    Rectangle,
    certify_horseshoe,
    detect_homoclinic,
    dominated_splitting_check,
    grow_manifold,
)
from maglab.maps import HorseshoeMap, LinearMap, StandardMap, TwistMap


@pytest.fixture(scope="module")
def standard_branches():
    sm = StandardMap(1.5)
    wu = grow_manifold(sm, (0.0, 0.0), "unstable", 1, 2.5, tol=1e-4)
    ws = grow_manifold(sm, (1.0, 0.0), "stable", 1, 2.5, tol=1e-4)
    return sm, wu, ws


def test_linear_map_branches():
    lin = LinearMap([[2.0, 0.0], [0.0, 0.5]])
    bu = grow_manifold(lin, (0, 0), "unstable", 1, 1.5, tol=1e-6)
    bs = grow_manifold(lin, (0, 0), "stable", 1, 1.5, tol=1e-6)
    assert np.abs(bu.points[:, 1]).max() <= 1e-10   # horizontal axis
    assert np.abs(bs.points[:, 0]).max() <= 1e-10   # vertical axis
    assert bu.arclength >= 1.5
    # first segment aligned with the eigenvector
    d = bu.points[1] - bu.points[0]
    assert abs(math.atan2(d[1], d[0])) <= 1e-6
    # axes meet only at the excluded fixed point
    assert detect_homoclinic(bs, bu) == []
    assert bu.invariance_defect(lin) <= 1e-12


def test_negative_eigenvalue_branch():
    lin = LinearMap([[-2.0, 0.0], [0.0, -0.5]])
    bu = grow_manifold(lin, (0, 0), "unstable", 1, 1.0, tol=1e-6)
    # double-stepping keeps the branch on one side
    assert bu.points[:, 0].min() >= 0.0


def test_grow_manifold_requires_hyperbolic():
    rot = TwistMap(0.3, 0.0)
    with pytest.raises(ValueError):
        grow_manifold(rot, (0, 0), "unstable", 1, 1.0)


def test_standard_map_homoclinic(standard_branches):
    sm, wu, ws = standard_branches
    assert wu.arclength >= 1.0 and not wu.truncated
    assert wu.invariance_defect(sm) <= 1e-3
    hits = detect_homoclinic(ws, wu, angle_tol=1e-3)
    trans = [h for h in hits if h.transversal(1e-3)]
    assert len(trans) >= 1
    assert max(h.angle for h in trans) > 1e-3


def test_refinement_convergence():
    """Halving tol at least halves the worst chord sagitta."""
    sm = StandardMap(1.5)

    def max_sagitta(branch):
        pts = branch.points
        a, b, m = pts[:-2], pts[2:], pts[1:-1]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        denom[denom == 0] = 1.0
        t = np.clip(np.einsum("ij,ij->i", m - a, ab) / denom, 0, 1)
        proj = a + t[:, None] * ab
        return float(np.linalg.norm(proj - m, axis=1).max())

    s1 = max_sagitta(grow_manifold(sm, (0.0, 0.0), "unstable", 1, 2.0,
                                   tol=4e-3, spacing_max=0.08))
    s2 = max_sagitta(grow_manifold(sm, (0.0, 0.0), "unstable", 1, 2.0,
                                   tol=2e-3, spacing_max=0.04))
    assert s2 <= 0.75 * s1


def test_crossing_angles_frame_honest(standard_branches):
    """Rotating both polylines leaves crossing angles unchanged."""
    sm, wu, ws = standard_branches
    hits = detect_homoclinic(ws, wu, angle_tol=1e-3)
    th = 0.37
    R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    wu2 = grow_manifold(sm, (0.0, 0.0), "unstable", 1, 2.5, tol=1e-4)
    ws2 = grow_manifold(sm, (1.0, 0.0), "stable", 1, 2.5, tol=1e-4)
    wu2.points = wu2.points @ R.T
    ws2.points = ws2.points @ R.T
    hits2 = detect_homoclinic(ws2, wu2, angle_tol=1e-3)
    assert len(hits) == len(hits2)
    for h1, h2 in zip(hits, hits2):
        assert abs(h1.angle - h2.angle) <= 1e-6


def test_horseshoe_exact_log2():
    hs = HorseshoeMap()
    frame = np.array([[0.0, 1.0], [1.0, 0.0]])  # unstable along y
    rects = [Rectangle(np.array([0.5, 1.0 / 6.0]), 1.0 / 6.0, 0.5, frame),
             Rectangle(np.array([0.5, 5.0 / 6.0]), 1.0 / 6.0, 0.5, frame)]
    rep = certify_horseshoe(hs, rectangles=rects, k_range=(1,))
    assert rep.status == "certified"
    assert rep.horseshoe["N"] == 2 and rep.horseshoe["k"] == 1
    assert abs(rep.h_top_lower - math.log(2.0)) <= 1e-12


def test_standard_map_horseshoe(standard_branches):
    sm, wu, ws = standard_branches
    hits = detect_homoclinic(ws, wu, angle_tol=1e-3)
    best = max(hits, key=lambda h: h.angle)
    rep = certify_horseshoe(sm, best, k_range=range(1, 21), fixed_point=(0.0, 0.0))
    assert rep.status == "certified"
    assert rep.h_top_lower > 0.0
    assert rep.horseshoe["k"] <= 20


def test_entropy_monotone_in_search(standard_branches):
    sm, wu, ws = standard_branches
    hits = detect_homoclinic(ws, wu, angle_tol=1e-3)
    best = max(hits, key=lambda h: h.angle)
    small = certify_horseshoe(sm, best, k_range=range(1, 12), fixed_point=(0.0, 0.0))
    large = certify_horseshoe(sm, best, k_range=range(1, 21), fixed_point=(0.0, 0.0))
    assert large.h_top_lower >= small.h_top_lower


def test_integrable_map_no_crossing():
    """An integrable twist map certifies nothing: zero bound, no crossing."""
    tm = TwistMap(0.3, 2.0)

    class FakeHit:
        point = (0.25, 0.0)
        angle = 0.5

    rep = certify_horseshoe(tm, FakeHit(), k_range=range(1, 8))
    assert rep.h_top_lower == 0.0
    assert rep.status == "no crossing"


def test_dominated_splitting_synthetic():
    entries = [{"monodromy": [[mu, 0.0], [0.0, 1.0 / mu]], "period": 1.0}
               for mu in (2.0, 3.0, 5.0)]
    rep = dominated_splitting_check(entries, T=1.0, lambda_target=0.5)
    assert rep.products == pytest.approx([0.25, 1.0 / 9.0, 0.04])
    assert rep.certified
    for n in (2, 3):
        for got, want in rep.power_checks[n]:
            assert got == pytest.approx(want, abs=1e-12)


def test_dominated_splitting_rejects_elliptic():
    entries = [{"monodromy": [[0.5, -0.8], [0.8, 0.5]], "period": 1.0}]
    with pytest.raises(ValueError):
        dominated_splitting_check(entries, T=1.0, lambda_target=0.5)


def test_dominated_splitting_multiple_periods():
    M = np.array([[2.0, 1.0], [1.0, 1.0]])  # trace 3, det 1
    entries = [{"monodromy": M, "period": 0.5}]
    rep = dominated_splitting_check(entries, T=1.0, lambda_target=0.9)
    lam_u = (3.0 + math.sqrt(5.0)) / 2.0
    assert rep.products[0] == pytest.approx(1.0 / lam_u**4, rel=1e-10)
    with pytest.raises(ValueError):
        dominated_splitting_check(entries, T=0.7, lambda_target=0.9)


def test_dominated_splitting_flow_cocycle(torus, sin_field, tight_options):
    """Products over n periods equal n-th powers along a real orbit."""
    from maglab.geometry import PhasePoint
    from maglab.orbits import find_closed_orbit
    from maglab.dynamics import flow_with_variation

    orb = find_closed_orbit(torus, sin_field, 0.5,
                            PhasePoint(0, 0.0, 0.0, 0.0, -1.0),
                            options=tight_options)

    def propagate(entry, t):
        _, vp = flow_with_variation(torus, sin_field, orb.initial_state, t,
                                    tight_options)
        return vp.matrix(t)

    entries = [{"monodromy": orb.monodromy, "period": orb.period}]
    rep = dominated_splitting_check(entries, T=orb.period, lambda_target=0.5,
                                    propagate=propagate)
    for n in (2, 3):
        got, want = rep.power_checks[n][0]
        assert got == pytest.approx(want, abs=1e-5)


def test_flow_return_map_as_oracle(torus, sin_field):
    """First-return maps drive the same branch grower as injected maps."""
    from maglab.geometry import PhasePoint
    from maglab.orbits import SectionReturnMap, find_closed_orbit
    from maglab.dynamics import IntegratorOptions

    opts = IntegratorOptions(rel_tol=1e-10, abs_tol=1e-12)
    orb = find_closed_orbit(torus, sin_field, 0.5,
                            PhasePoint(0, 0.0, 0.0, 0.0, -1.0), options=opts)
    rmap = SectionReturnMap(orb.section, sin_field, options=opts)
    wu = grow_manifold(rmap, (0.0, 0.0), "unstable", 1, 0.02, tol=5e-3,
                       seed_eps=1e-3, spacing_max=0.02)
    assert wu.arclength >= 0.02
    assert not wu.truncated
    assert wu.invariance_defect(rmap, n_check=5) <= 5e-3
