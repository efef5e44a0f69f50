import math

import numpy as np
import pytest

from maglab.errors import UnsupportedSurfaceError
from maglab.geometry import PhasePoint
from maglab.field import MagneticField, ConstantField, SinusoidalTorusField
from maglab.mane import (
    CircleLoop,
    ConstantForm,
    FourierLoop,
    LagrangianSpec,
    SinPrimitiveForm,
    estimate_critical_value,
    loop_action,
    rotation_vector,
    verify_witness,
)
from maglab.orbits import find_closed_orbit


@pytest.fixture(scope="module")
def lag_zero(torus):
    return LagrangianSpec(torus, ConstantForm(0.0, 0.0))


@pytest.fixture(scope="module")
def lag_sin(torus):
    return LagrangianSpec(torus, SinPrimitiveForm(1.0, (1, 0)))


def test_lagrangian_torus_only(unit_sphere):
    with pytest.raises(UnsupportedSurfaceError):
        LagrangianSpec(unit_sphere, ConstantForm(0.0, 0.0))


def test_induced_intensity_matches_field(torus, lag_sin, sin_field):
    assert lag_sin.field_consistency(sin_field) <= 1e-8


def test_circle_action_closed_form(lag_zero):
    r, speed, k = 0.2, 1.5, 0.3
    T = 2.0 * math.pi * r / speed
    a = loop_action(lag_zero, CircleLoop((0.5, 0.5), r, T), k)
    assert a == pytest.approx(0.5 * speed**2 * T + k * T, rel=1e-12)


def test_rest_loop_action(lag_zero):
    loop = CircleLoop((0.3, 0.3), 0.0, 2.0)
    for k in (0.0, 0.4, 1.0):
        assert loop_action(lag_zero, loop, k) == pytest.approx(k * 2.0, abs=1e-14)


def test_closed_form_contributes_nothing(torus):
    """Stokes: a closed 1-form integrates to zero over contractible loops."""
    lag = LagrangianSpec(torus, ConstantForm(0.8, -0.3))
    lag0 = LagrangianSpec(torus, ConstantForm(0.0, 0.0))
    rng = np.random.default_rng(2)
    for _ in range(5):
        coeffs = 0.1 * rng.standard_normal((2, 7))
        loop = FourierLoop(1.3, coeffs)
        assert loop_action(lag, loop, 0.2) == pytest.approx(
            loop_action(lag0, loop, 0.2), abs=1e-8)


def test_action_affine_in_k(lag_sin):
    loop = CircleLoop((0.25, 0.5), 0.2, 1.7)
    a0 = loop_action(lag_sin, loop, 0.0)
    a1 = loop_action(lag_sin, loop, 1.0)
    a2 = loop_action(lag_sin, loop, 2.0)
    assert a1 - a0 == pytest.approx(loop.period, rel=1e-12)
    assert a2 - a1 == pytest.approx(loop.period, rel=1e-12)


def test_gauge_property(torus, lag_sin):
    """Adding a closed form to eta moves no null-homologous action."""
    gauged = LagrangianSpec(torus, _Sum(lag_sin.eta, ConstantForm(0.5, 0.2)))
    rng = np.random.default_rng(4)
    for _ in range(5):
        loop = FourierLoop(0.9, 0.15 * rng.standard_normal((2, 5)))
        assert loop_action(gauged, loop, 0.1) == pytest.approx(
            loop_action(lag_sin, loop, 0.1), abs=1e-9)


class _Sum:
    def __init__(self, f1, f2):
        self.f1, self.f2 = f1, f2

    def components(self, xs, ys):
        a1, a2 = self.f1.components(xs, ys)
        b1, b2 = self.f2.components(xs, ys)
        return a1 + b1, a2 + b2

    def curl(self, xs, ys):
        return self.f1.curl(xs, ys) + self.f2.curl(xs, ys)


def test_bracket_closed_form(torus):
    lag = LagrangianSpec(torus, ConstantForm(0.7, 0.0))
    br = estimate_critical_value(lag, k_range=(-0.25, 1.0), bisection_tol=1e-4,
                                 restarts=6, maxiter=150)
    assert br.c_lo <= 0.0 <= br.c_hi
    assert br.c_hi - br.c_lo <= 2e-4
    assert br.witness_action < 0.0
    assert verify_witness(lag, br) < 0.0


def test_bracket_zero_form(lag_zero):
    br = estimate_critical_value(lag_zero, k_range=(-0.25, 1.0),
                                 bisection_tol=1e-4, restarts=4, maxiter=100)
    assert br.c_lo <= 0.0 <= br.c_hi
    assert br.c_hi - br.c_lo <= 2e-4


def test_bracket_sin_field(lag_sin):
    br = estimate_critical_value(lag_sin, k_range=(-0.25, 1.0),
                                 bisection_tol=1e-3, restarts=8, maxiter=200)
    assert br.c_lo > 0.0        # flux through a disk beats the length cost
    assert br.c_lo <= br.c_hi
    assert verify_witness(lag_sin, br) < 0.0


def test_bracket_requires_bracketing(lag_zero):
    with pytest.raises(ValueError):
        estimate_critical_value(lag_zero, k_range=(0.1, 1.0), restarts=2,
                                maxiter=50)


def test_rotation_vector_geodesic(torus, zero_field):
    orb = find_closed_orbit(torus, zero_field, 0.5, PhasePoint(0, 0.1, 0.2, 1.0, 0.0))
    rv = rotation_vector(torus, zero_field, orb)
    assert rv.homology == (1, 0)
    assert rv.rho[0] == pytest.approx(1.0, rel=1e-9)
    assert rv.rho[1] == 0.0


def test_rotation_vector_contractible(torus):
    """A small magnetic circle winds (0, 0)."""
    fld = MagneticField(ConstantField(4.0))
    orb = find_closed_orbit(torus, fld, 0.5, PhasePoint(0, 0.5, 0.5, 1.0, 0.0))
    rv = rotation_vector(torus, fld, orb)
    assert rv.homology == (0, 0)
    assert orb.period == pytest.approx(2.0 * math.pi / 4.0, abs=1e-8)


def test_rotation_vector_minimal_period(torus, zero_field):
    """Subdivision check prevents reporting (2, 0) / 2T."""
    orb = find_closed_orbit(torus, zero_field, 0.5, PhasePoint(0, 0.7, 0.1, 1.0, 0.0))
    rv = rotation_vector(torus, zero_field, orb)
    assert rv.homology == (1, 0) and rv.period == pytest.approx(1.0, abs=1e-10)


def test_rotation_vector_torus_only(unit_sphere, zero_field, tight_options):
    lam = unit_sphere.metric_at(0, 0.1, 0.0).lam
    orb = find_closed_orbit(unit_sphere, zero_field, 0.5,
                            PhasePoint(0, 0.1, 0.0, 0.0, 1.0 / lam),
                            max_time=20.0, options=tight_options)
    with pytest.raises(UnsupportedSurfaceError):
        rotation_vector(unit_sphere, zero_field, orb)
