import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optifinger.geometry import ABPoint, FingerDims, OutOfDomain, ab_to_xyz_array, sample_uniform_ab
from optifinger.mechanics import (
    DEFAULT_TIPS,
    ForceModel,
    LoadCellOverrange,
    TipKind,
    TipShape,
    deformation,
    force,
    load_tip_catalog,
    measured_force,
    tip,
)

DIMS = FingerDims()
POLE = ABPoint(0.0, 0.0)


def test_five_tip_kinds():
    assert {k.value for k in TipKind} == {"hemisphere", "planar", "edge_h", "edge_v", "corner"}
    assert set(DEFAULT_TIPS) == set(TipKind)
    assert tip("hemisphere").size_mm == 10.0
    assert tip("planar").size_mm == 15.0
    assert tip("edge_h").size_mm == tip("edge_v").size_mm == 12.0


def test_tip_needs_size():
    with pytest.raises(ValueError):
        TipShape(TipKind.PLANAR, 0.0)
    TipShape(TipKind.CORNER, 0.0)


def test_force_examples():
    assert force(1.0, tip("hemisphere")) == pytest.approx(2.8)
    for kind in TipKind:
        assert force(0.0, tip(kind)) == 0.0
        assert force(-0.7, tip(kind)) == 0.0
    assert force(3.0, tip("planar")) == pytest.approx(25.2)
    assert force(3.0, tip("planar")) < ForceModel().load_cell_max_n


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 10), st.floats(1e-6, 10), st.sampled_from(list(TipKind)))
def test_force_strictly_increasing(d1, d2, kind):
    if d1 == d2:
        return
    lo, hi = sorted((d1, d2))
    assert force(lo, tip(kind)) < force(hi, tip(kind))


def test_load_cell_emulation():
    assert measured_force(0.05, tip("hemisphere")) == 0.0  # 0.14 N < 0.2 N
    assert force(0.05, tip("hemisphere")) > 0.0  # ground truth is never zeroed
    assert measured_force(1.0, tip("hemisphere")) == pytest.approx(2.8)
    with pytest.raises(LoadCellOverrange):
        measured_force(6.0, tip("planar"))


def test_force_model_validation():
    with pytest.raises(ValueError):
        ForceModel(stiffness_n_per_mm=0.0)
    with pytest.raises(ValueError):
        ForceModel(tip_factor={k: 0.0 for k in TipKind})


def test_hemisphere_profile_examples():
    f = deformation(POLE, 4.0, tip("hemisphere"))
    assert f.evaluate(POLE) == pytest.approx(4.0)
    r0 = math.sqrt(2 * 5 * 4)
    assert r0 == pytest.approx(6.32, abs=0.005)
    assert f.support_radius() == pytest.approx(r0)
    # walk down a meridian: polar angle s / r gives geodesic distance s
    r = DIMS.radius_mm
    for s in (0.5, 3.0, 6.0, r0, r0 + 0.01, 9.0):
        q = np.array([r * math.sin(s / r), 0.0, r * math.cos(s / r)])
        u = f.evaluate_xyz(q[None])[0]
        assert u == pytest.approx(max(0.0, 4.0 - s * s / 10.0), abs=1e-9)


@pytest.mark.parametrize("kind", list(TipKind))
@pytest.mark.parametrize("depth", [-1.0, -0.1, 0.0])
def test_no_contact_is_zero_field(kind, depth):
    f = deformation(POLE, depth, tip(kind))
    pts = sample_uniform_ab(500, np.random.default_rng(0))
    xyz, _, _ = ab_to_xyz_array(pts[:, 0], pts[:, 1])
    assert not f.in_contact
    assert np.all(f.evaluate_xyz(xyz) == 0.0)


@pytest.mark.parametrize("kind", list(TipKind))
def test_field_bounds_and_support(kind):
    rng = np.random.default_rng(1)
    centers = sample_uniform_ab(20, rng)
    pts = sample_uniform_ab(3000, rng)
    xyz, _, _ = ab_to_xyz_array(pts[:, 0], pts[:, 1])
    for c in centers:
        f = deformation(ABPoint.at(*c), 2.5, tip(kind))
        u = f.evaluate_xyz(xyz)
        assert np.all(u >= 0) and np.all(u <= 2.5 + 1e-12)
        chord = np.linalg.norm(xyz - f.center_xyz, axis=1)
        # chord <= geodesic, so anything past the support radius in chord is outside
        assert np.all(u[chord > f.support_radius() + 1e-9] == 0)
        assert f.evaluate(ABPoint.at(*c)) == pytest.approx(2.5)


@pytest.mark.parametrize("kind", list(TipKind))
def test_field_continuity_along_a_ray(kind):
    # sample densely along a meridian through the skirt and bound the slope
    f = deformation(ABPoint.at(5.0, -3.0), 2.0, tip(kind))
    c = f.center_xyz
    r = DIMS.radius_mm
    th0 = math.acos(c[2] / r)
    phi = math.atan2(c[1], c[0])
    th = th0 + np.linspace(0, 20 / r, 4001)
    xyz = np.stack([r * np.sin(th) * math.cos(phi), r * np.sin(th) * math.sin(phi), r * np.cos(th)], axis=1)
    u = f.evaluate_xyz(xyz)
    step = r * (th[1] - th[0])
    slope = np.max(np.abs(np.diff(u))) / step
    # the steepest analytic slope is 2*depth/skirt for the skirted tips
    assert slope < 2 * 2.0 / 1.0 + 0.1


def test_planar_is_flat_inside_disc():
    f = deformation(ABPoint.at(0.0, 0.0), 1.5, tip("planar"))
    r = DIMS.radius_mm
    th = np.linspace(0, 14.9 / r, 50)
    xyz = np.stack([r * np.sin(th), 0 * th, r * np.cos(th)], axis=1)
    np.testing.assert_allclose(f.evaluate_xyz(xyz), 1.5)


def test_edge_orientations_differ():
    c = ABPoint.at(22.5 + 10, -10.0)  # on the cylinder
    fh = deformation(c, 2.0, tip("edge_h"))
    fv = deformation(c, 2.0, tip("edge_v"))
    cx = fh.center_xyz
    phi = math.atan2(cx[1], cx[0])
    r = DIMS.radius_mm
    # 4 mm around the circumference versus 4 mm along the axis
    around = np.array([[r * math.cos(phi + 4 / r), r * math.sin(phi + 4 / r), cx[2]]])
    along = np.array([[cx[0], cx[1], cx[2] - 4.0]])
    assert fh.evaluate_xyz(around)[0] == pytest.approx(2.0)
    assert fh.evaluate_xyz(along)[0] == 0.0
    assert fv.evaluate_xyz(along)[0] == pytest.approx(2.0)
    assert fv.evaluate_xyz(around)[0] == 0.0


def test_out_of_domain_center():
    with pytest.raises(OutOfDomain):
        deformation(ABPoint(100.0, 100.0), 1.0, tip("corner"))


def test_tip_catalog_override(tmp_path):
    p = tmp_path / "tips.cfg"
    p.write_text("[planar]\nsize_mm = 10\nfactor = 2.5\n\n[corner]\nfactor = 0.9\n")
    tips, fm = load_tip_catalog(p)
    assert tips[TipKind.PLANAR].size_mm == 10.0
    assert force(1.0, tips[TipKind.PLANAR], fm) == pytest.approx(2.8 * 2.5)
    assert force(1.0, tips[TipKind.CORNER], fm) == pytest.approx(2.8 * 0.9)
    assert tips[TipKind.HEMISPHERE] == DEFAULT_TIPS[TipKind.HEMISPHERE]
