import json
import math

import numpy as np
import pytest

from maglab.errors import ContinuationLostError, NoReturnError
from maglab.geometry import PhasePoint, energy
from maglab.field import MagneticField, ConstantField, SinusoidalTorusField
from maglab.dynamics import IntegratorOptions, flow
from maglab.orbits import (
    OrbitDatabase,
    SectionReturnMap,
    classify,
    continue_orbit,
    find_closed_orbit,
    first_return,
    make_section,
    phase_distance,
)
from maglab.franks import build_franks_kit, compute_constants, build_GA, PerturbA


def test_section_frame_anchor(disk, minus_one_field, disk_seed):
    sec = make_section(disk, minus_one_field, disk_seed)
    # (0, 0) embeds to the anchor
    st = sec.embed(0.0, 0.0)
    assert phase_distance(disk, st, disk_seed) <= 1e-14
    # the anchor has coordinates (0, 0)
    assert sec.coords(disk_seed) == (pytest.approx(0.0, abs=1e-15),) * 2
    # section curve direction is i v: orthogonal to the flow direction
    assert sec.unit_e[0] * disk_seed.vx + sec.unit_e[1] * disk_seed.vy == 0.0


def test_section_energy_preserved(torus, sin_field):
    sec = make_section(torus, sin_field, PhasePoint(0, 0.0, 0.0, 0.0, -1.0))
    for s, R in [(0.05, 0.0), (-0.1, 0.2), (0.15, -0.3)]:
        st = sec.embed(s, R)
        assert energy(torus, st) == pytest.approx(0.5, abs=1e-14)
        ss, RR = sec.coords(st)
        assert ss == pytest.approx(s, abs=1e-12)
        assert RR == pytest.approx(R, abs=1e-12)


def test_first_return_disk_identity(disk, minus_one_field, disk_seed):
    sec = make_section(disk, minus_one_field, disk_seed)
    zc, transit, _ = first_return(sec, (0.0, 0.0))
    assert transit == pytest.approx(2.0 * math.pi, abs=1e-10)
    assert abs(zc[0]) <= 1e-9 and abs(zc[1]) <= 1e-9
    # all circles through nearby states close up: P = id near the origin
    for z in [(0.03, 0.0), (0.0, 0.04), (-0.02, 0.03)]:
        zc, _, _ = first_return(sec, z)
        assert abs(zc[0] - z[0]) <= 1e-6 and abs(zc[1] - z[1]) <= 1e-6


def test_first_return_torus_geodesic(torus, zero_field):
    sec = make_section(torus, zero_field, PhasePoint(0, 0.4, 0.9, 1.0, 0.0))
    zc, transit, _ = first_return(sec, (0.0, 0.0))
    assert transit == pytest.approx(1.0, abs=1e-12)
    assert abs(zc[0]) <= 1e-12 and abs(zc[1]) <= 1e-12


def test_no_return_error(disk, zero_field):
    # straight geodesics on the disk never come back
    sec = make_section(disk, zero_field, PhasePoint(0, 0.0, 0.0, 1.0, 0.0))
    with pytest.raises(NoReturnError):
        first_return(sec, (0.0, 0.0), max_time=5.0)


def test_disk_closed_orbit(disk, minus_one_field, disk_seed):
    orb = find_closed_orbit(disk, minus_one_field, 0.5, disk_seed, tol=1e-10)
    assert abs(orb.period - 2.0 * math.pi) <= 1e-8
    assert np.abs(orb.monodromy - np.eye(2)).max() <= 1e-6
    assert orb.floquet_class == "parabolic"


def test_sphere_great_circle(unit_sphere, zero_field, tight_options):
    lam = unit_sphere.metric_at(0, 0.1, 0.0).lam
    orb = find_closed_orbit(unit_sphere, zero_field, 0.5,
                            PhasePoint(0, 0.1, 0.0, 0.0, 1.0 / lam),
                            max_time=20.0, options=tight_options)
    assert orb.period == pytest.approx(2.0 * math.pi, abs=1e-9)
    assert np.abs(orb.monodromy - np.eye(2)).max() <= 1e-7


def test_sphere_unit_field_orbit(unit_sphere, tight_options):
    fld = MagneticField(ConstantField(1.0))
    lam = unit_sphere.metric_at(0, 0.4, 0.0).lam
    orb = find_closed_orbit(unit_sphere, fld, 0.5,
                            PhasePoint(0, 0.4, 0.0, 0.0, 1.0 / lam),
                            max_time=20.0, options=tight_options)
    assert orb.period == pytest.approx(2.0 * math.pi / math.sqrt(2.0), abs=1e-9)
    assert abs(orb.trace) <= 2.0 + 1e-9


def test_classify_cases():
    cls, eig = classify(np.array([[3.0, 0.0], [0.0, 1.0 / 3.0]]))
    assert cls == "hyperbolic"
    assert eig.eigenvalues[0] == pytest.approx(3.0)
    tr = 2.0 * math.cos(2.0 * math.pi * 0.3)
    M = np.array([[tr / 2, -math.sin(2 * math.pi * 0.3)],
                  [math.sin(2 * math.pi * 0.3), tr / 2]])
    cls, eig = classify(M)
    assert cls == "elliptic"
    assert eig.alpha == pytest.approx(0.3, abs=1e-12)
    cls, _ = classify(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert cls == "parabolic"


def test_classify_stability_band():
    """Perturbing a trace by class_tol cannot flip H <-> E directly."""
    ct = 1e-6
    for tr in np.linspace(2.0 - 3 * ct, 2.0 + 3 * ct, 25):
        M = np.array([[tr - 1.0, 1.0], [tr - 2.0, 1.0]])  # det = 1, trace = tr
        cls, _ = classify(M, ct)
        if cls == "hyperbolic":
            assert tr > 2.0 + ct
        elif cls == "elliptic":
            assert tr < 2.0 - ct
        else:
            assert 2.0 - 3 * ct <= tr <= 2.0 + 3 * ct


def test_hyperbolic_torus_orbit(torus, sin_field):
    orb = find_closed_orbit(torus, sin_field, 0.5,
                            PhasePoint(0, 0.0, 0.0, 0.0, -1.0))
    om = math.sqrt(2.0 * math.pi)
    assert orb.floquet_class == "hyperbolic"
    assert orb.period == pytest.approx(1.0, abs=1e-10)
    assert orb.trace == pytest.approx(2.0 * math.cosh(om), abs=1e-8)
    assert abs(np.linalg.det(orb.monodromy) - 1.0) <= 1e-8
    assert orb.residual <= 1e-10
    # first return of the fixed point stays put
    zc, _, _ = first_return(orb.section, (0.0, 0.0), sin_field)
    assert abs(zc[0]) <= 1e-10 and abs(zc[1]) <= 1e-10


def test_monodromy_conjugation_consistency(torus, sin_field, tight_options):
    orb = find_closed_orbit(torus, sin_field, 0.5,
                            PhasePoint(0, 0.0, 0.0, 0.0, -1.0),
                            options=tight_options)
    moved = flow(torus, sin_field, orb.initial_state, 0.37, tight_options).end_state()
    orb2 = find_closed_orbit(torus, sin_field, 0.5, moved, options=tight_options)
    assert orb2.trace == pytest.approx(orb.trace, abs=1e-6)


def test_minimal_period_detection(torus, zero_field):
    """Seeding near a double cover still reports the primitive period."""
    orb = find_closed_orbit(torus, zero_field, 0.5, PhasePoint(0, 0.5, 0.5, 1.0, 0.0))
    assert orb.period == pytest.approx(1.0, abs=1e-10)


def test_continue_orbit_same_field(torus, sin_field):
    orb = find_closed_orbit(torus, sin_field, 0.5,
                            PhasePoint(0, 0.0, 0.0, 0.0, -1.0))
    new, disp = continue_orbit(orb, torus, sin_field)
    assert disp <= 1e-9
    assert new.period == pytest.approx(orb.period, abs=1e-10)


def test_continue_orbit_supported_off_core(torus, sin_field):
    """A perturbation vanishing on the core keeps the orbit and its period."""
    orb = find_closed_orbit(torus, sin_field, 0.5,
                            PhasePoint(0, 0.0, 0.0, 0.0, -1.0))
    kit = build_franks_kit(torus, sin_field, orb.initial_state, 0.2)
    consts = compute_constants(kit)
    f2, _, _ = build_GA(kit, consts, PerturbA(0.5 * consts.delta1, 0.0, 0.0))
    new, disp = continue_orbit(orb, torus, f2)
    assert disp <= 1e-9
    assert new.period == pytest.approx(orb.period, abs=1e-9)


def test_continuation_displacement_scales(torus):
    """Displacement -> 0 linearly as the field perturbation shrinks."""
    base = MagneticField(SinusoidalTorusField(1.0))
    seed = PhasePoint(0, 0.0, 0.0, 0.0, -1.0)
    orb = find_closed_orbit(torus, base, 0.5, seed)
    disps = []
    for eps in (1e-2, 1e-3, 1e-4):
        shifted = MagneticField(SinusoidalTorusField(1.0, (1, 0), phase=eps))
        _, disp = continue_orbit(orb, torus, shifted)
        disps.append(disp)
    assert disps[0] > disps[1] > disps[2]
    # 3-point slope: roughly one decade per decade
    r1 = math.log10(disps[0] / disps[1])
    r2 = math.log10(disps[1] / disps[2])
    assert 0.6 <= r1 <= 1.4 and 0.6 <= r2 <= 1.4


def test_orbit_database_roundtrip(torus, sin_field):
    db = OrbitDatabase()
    for vy in (-1.0, 1.0):
        orb = find_closed_orbit(torus, sin_field, 0.5,
                                PhasePoint(0, 0.0, 0.0, 0.0, vy))
        db.add(orb)
    text = db.to_json()
    db2 = OrbitDatabase.from_json(text)
    assert db2.orbits == db.orbits
    # deterministic ordering by (period, trace)
    keys = [(o["period"], o["trace"]) for o in db.orbits]
    assert keys == sorted(keys)


def test_return_map_inverse(torus, sin_field, tight_options):
    orb = find_closed_orbit(torus, sin_field, 0.5,
                            PhasePoint(0, 0.0, 0.0, 0.0, -1.0),
                            options=tight_options)
    rmap = SectionReturnMap(orb.section, sin_field, options=tight_options)
    z = np.array([0.02, -0.01])
    w = rmap(z)
    back = rmap.inverse(w)
    assert np.abs(back - z).max() <= 1e-8


def test_seed_grid(torus):
    from maglab.orbits import seed_grid
    from maglab.geometry import energy

    seeds = seed_grid(torus, 0.5, [(0, 0.2, 0.3), (0, 0.7, 0.1)], n_directions=6)
    assert len(seeds) == 12
    for s in seeds:
        assert energy(torus, s) == pytest.approx(0.5, abs=1e-14)
