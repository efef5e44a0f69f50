import math

import numpy as np
import pytest

from maglab.errors import ChartDomainError
from maglab.geometry import (
    PhasePoint,
    energy,
    flat_torus,
    planar_chart,
    rotate90,
    sphere,
)


def test_flat_torus_metric(torus):
    md = torus.metric_at(0, 0.3, 0.7)
    assert md.lam == 1.0
    assert md.curvature == 0.0
    gam = md.christoffels()
    assert all(gam[k][i][j] == 0.0 for k in range(2) for i in range(2) for j in range(2))


def test_planar_curvature(disk):
    assert disk.metric_at(0, 0.5, -0.2).curvature == 0.0


def sympy_curvature_oracle(radius, x0, y0):
    """K = -(Delta log lam)/lam^2 by symbolic differentiation."""
    import sympy as sp

    x, y = sp.symbols("x y", real=True)
    lam = 2 * radius / (1 + x**2 + y**2)
    L = sp.log(lam)
    K = -(sp.diff(L, x, 2) + sp.diff(L, y, 2)) / lam**2
    return float(K.subs({x: x0, y: y0}))


@pytest.mark.parametrize("radius", [1.0, 2.0])
@pytest.mark.parametrize("pt", [(0.0, 0.0), (0.4, -0.3), (1.2, 0.5)])
def test_sphere_curvature_vs_symbolic(radius, pt):
    s = sphere(radius)
    got = s.metric_at(0, *pt).curvature
    want = sympy_curvature_oracle(radius, *pt)
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(1.0 / radius**2, abs=1e-12)


def test_sphere_metric_partials_vs_symbolic():
    import sympy as sp

    x, y = sp.symbols("x y", real=True)
    lam = 2 / (1 + x**2 + y**2)
    s = sphere(1.0)
    md = s.metric_at(0, 0.7, -0.2)
    subs = {x: 0.7, y: -0.2}
    assert md.lam_x == pytest.approx(float(sp.diff(lam, x).subs(subs)), abs=1e-12)
    assert md.lam_y == pytest.approx(float(sp.diff(lam, y).subs(subs)), abs=1e-12)
    assert md.lam_xx == pytest.approx(float(sp.diff(lam, x, 2).subs(subs)), abs=1e-12)
    assert md.lam_xy == pytest.approx(float(sp.diff(lam, x, y).subs(subs)), abs=1e-12)
    assert md.lam_yy == pytest.approx(float(sp.diff(lam, y, 2).subs(subs)), abs=1e-12)


def test_rotate90_trivial(torus):
    st = PhasePoint(0, 0.1, 0.1, 1.0, 0.0)
    assert rotate90(torus, st, (1.0, 0.0)) == (0.0, 1.0)
    assert rotate90(torus, st, (0.0, 1.0)) == (-1.0, 0.0)


def test_rotate90_properties_random():
    rng = np.random.default_rng(7)
    surfaces = [flat_torus(), sphere(1.5), planar_chart()]
    for _ in range(100):
        surf = surfaces[rng.integers(len(surfaces))]
        x, y = rng.uniform(-0.8, 0.8, 2)
        v = tuple(rng.standard_normal(2))
        st = PhasePoint(0, x, y, *v)
        iv = rotate90(surf, st, v)
        md = surf.metric_at(0, *surf.wrap_position(x, y))
        g = md.lam**2
        # orthogonal, same length, and i^2 = -1 componentwise
        assert g * (iv[0] * v[0] + iv[1] * v[1]) == pytest.approx(0.0, abs=1e-15)
        assert g * (iv[0] ** 2 + iv[1] ** 2) == pytest.approx(
            g * (v[0] ** 2 + v[1] ** 2), rel=1e-15)
        iiv = rotate90(surf, st, iv)
        assert iiv == (-v[0], -v[1])


def test_energy_examples(torus, unit_sphere):
    assert energy(torus, PhasePoint(0, 0.0, 0.0, 1.0, 0.0)) == 0.5
    assert energy(torus, PhasePoint(0, 0.0, 0.0, 1.0, 1.0)) == 1.0
    # sphere chart center has lam = 2
    assert energy(unit_sphere, PhasePoint(0, 0.0, 0.0, 0.5, 0.0)) == pytest.approx(0.5)


def test_domain_error(disk):
    with pytest.raises(ChartDomainError):
        disk.metric_at(0, 5.0, 0.0)


def test_sphere_transition_consistency(unit_sphere):
    rng = np.random.default_rng(3)
    for _ in range(50):
        x, y = rng.uniform(0.5, 1.5, 2)  # overlap annulus
        v = rng.standard_normal(2)
        st = PhasePoint(0, x, y, v[0], v[1])
        st2 = unit_sphere.transition(st)
        # curvature agreement across the overlap
        k1 = unit_sphere.metric_at(0, st.x, st.y).curvature
        k2 = unit_sphere.metric_at(1, st2.x, st2.y).curvature
        assert abs(k1 - k2) <= 1e-8
        # energy is chart-independent
        assert energy(unit_sphere, st) == pytest.approx(
            energy(unit_sphere, st2), abs=1e-10)
        # round trip
        st3 = unit_sphere.transition(st2)
        assert st3.x == pytest.approx(st.x, abs=1e-12)
        assert st3.vy == pytest.approx(st.vy, rel=1e-10)


def test_torus_wrapping(torus):
    assert torus.wrap_position(1.25, -0.5) == (0.25, 0.5)
    assert torus.wrap_diff(0.75, -0.6) == (-0.25, 0.4)


def test_invalid_surfaces():
    with pytest.raises(ValueError):
        sphere(-1.0)
    with pytest.raises(ValueError):
        planar_chart(radius=0.0)
