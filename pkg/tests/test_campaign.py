import itertools

import numpy as np
import pytest

from optifinger.campaign import (
    CampaignConfig,
    MultitouchDataset,
    MultitouchGrid,
    PackingExhausted,
    SingleTouchDataset,
    depth_schedule,
    run_multitouch,
    run_single_touch,
    sample_locations,
    split_by_location,
    tip_locations,
)
from optifinger.geometry import ABPoint, ab_to_xyz_array, geodesic_xyz
from optifinger.mechanics import DeformationField, TipKind, force, tip


@pytest.fixture(scope="module")
def small(layout, calib, optics, dims, model):
    cfg = CampaignConfig(n_locations=3, tips=("hemisphere", "planar"), seed=5)
    return run_single_touch(cfg, layout, calib, optics, dims)


def test_depth_schedule_counts():
    assert depth_schedule(-1.0, 4.0, 0.1).size == 51
    assert depth_schedule(-1.0, 3.0, 0.1).size == 41
    d = depth_schedule(-1.0, 4.0, 0.1)
    assert d[0] == -1.0 and d[-1] == 4.0 and d[10] == 0.0


@pytest.mark.parametrize("kw", [{"depth_step": 0.0}, {"min_separation_mm": -1.0}, {"n_locations": 0}, {"tips": ("spoon",)}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        CampaignConfig(**kw)


def test_sample_locations_separation(dims):
    cfg = CampaignConfig(n_locations=100, seed=3)
    pts = sample_locations(cfg, dims)
    assert len(pts) == 100
    xyz, _, _ = ab_to_xyz_array([p.a for p in pts], [p.b for p in pts], dims)
    g = geodesic_xyz(xyz[:, None, :], xyz[None, :, :], dims)
    iu = np.triu_indices(100, 1)
    assert np.min(g[iu]) >= 4.0
    again = sample_locations(cfg, dims)
    assert [(p.a, p.b) for p in pts] == [(p.a, p.b) for p in again]
    other = sample_locations(CampaignConfig(n_locations=100, seed=4), dims)
    assert [(p.a, p.b) for p in pts] != [(p.a, p.b) for p in other]


def test_single_location_is_unconstrained(dims):
    pts = sample_locations(CampaignConfig(n_locations=1, min_separation_mm=1e6), dims)
    assert len(pts) == 1


def test_tip_locations_independent_per_tip(dims):
    cfg = CampaignConfig(n_locations=10, seed=2)
    sets = {t: tip_locations(cfg, t, dims) for t in ("hemisphere", "planar", "corner")}
    assert all(len(v) == 10 for v in sets.values())
    assert sets["hemisphere"] == tip_locations(cfg, "hemisphere", dims)
    assert sets["hemisphere"] != sets["planar"] != sets["corner"]
    # a tip's draw does not depend on the campaign's tip list
    assert tip_locations(CampaignConfig(n_locations=10, seed=2, tips=("corner",)), "corner", dims) == sets["corner"]


def test_packing_exhausted(dims):
    with pytest.raises(PackingExhausted):
        sample_locations(CampaignConfig(n_locations=400, min_separation_mm=8.0), dims)
    with pytest.raises(PackingExhausted):
        sample_locations(CampaignConfig(n_locations=200, min_separation_mm=8.0), dims, max_rejections=200)


def test_row_counts_and_labels(small):
    # 3 locations x (51 hemisphere + 41 planar)
    assert len(small) == 3 * (51 + 41)
    assert small.features.shape == (len(small), 990)
    for t, n in (("hemisphere", 51), ("planar", 41)):
        rows = small.tip == t
        assert rows.sum() == 3 * n
    for s in small:
        assert s.force_n == force(s.depth_mm, tip(s.tip))
    assert np.all(small.force[small.depth == -1.0] == 0.0)
    assert small.depth[small.tip == "planar"].max() == 3.0


def test_row_order_by_location_then_tip(small):
    keys = list(zip(small.location, small.tip))
    groups = [k for k, _ in itertools.groupby(keys)]
    assert groups == [(li, t) for li in range(3) for t in ("hemisphere", "planar")]


def test_features_are_ambient_subtracted(small, model, calib):
    # rebuild a contact row of location 0 (hemisphere) from its noise seed
    depths = depth_schedule(-1.0, 4.0, 0.1)
    k = 35
    assert small.depth[k] == depths[k] == 2.5
    field_ = DeformationField(ABPoint.at(*small.ab[k]), 4.0, tip("hemisphere"))
    levels = model.noiseless_levels(model.displacement_sweep(field_, depths)[:, k], calib)
    frame = model.frames_from_levels(levels, calib, [5, 0, 0, k])
    expect = np.concatenate([(frame.pair_readings.reshape(32, 30) - frame.ambient).ravel(), frame.ambient])
    np.testing.assert_array_equal(small.features[k], expect)
    # undisturbed rows sit at mid-scale minus the dark offset, up to noise
    rows = small.depth <= 0
    assert small.features[rows][:, :960].mean() == pytest.approx(2048 - 8, abs=0.2)


def test_tip_noise_independent_of_other_tips(layout, calib, optics, dims, small):
    cfg = CampaignConfig(n_locations=3, tips=("planar",), seed=5)
    alone = run_single_touch(cfg, layout, calib, optics, dims)
    np.testing.assert_array_equal(alone.features, small.features[small.tip == "planar"])


def test_csv_round_trip_is_exact(small, tmp_path):
    p = tmp_path / "d.csv"
    digest = small.save(p)
    header = p.read_text().splitlines()[0].split(",")
    assert header[:5] == ["a", "b", "depth_mm", "force_n", "tip"] and header[5] == "r1" and header[-1] == "r990"
    back = SingleTouchDataset.load(p)
    np.testing.assert_array_equal(back.ab, small.ab)
    np.testing.assert_array_equal(back.features, small.features)
    np.testing.assert_array_equal(back.force, small.force)
    np.testing.assert_array_equal(back.location, small.location)
    assert back.save(tmp_path / "e.csv") == digest


def test_dataset_determinism(layout, calib, optics, dims, small):
    cfg = CampaignConfig(n_locations=3, tips=("hemisphere", "planar"), seed=5)
    again = run_single_touch(cfg, layout, calib, optics, dims)
    assert again.to_csv() == small.to_csv()


def test_split_by_location_disjoint(small):
    tr, te = split_by_location(small, 0.34, seed=1)
    assert set(small.location[tr]).isdisjoint(small.location[te])
    assert len(tr) + len(te) == len(small)
    assert len(set(small.location[te])) == 1


def test_grid_geometry(dims):
    g = MultitouchGrid()
    c = g.centers(dims)
    assert len(c) == 20
    xyz, _, codes = ab_to_xyz_array([p.a for p in c], [p.b for p in c], dims)
    assert np.all(codes > 0)  # every centre is on the cylinder
    phi = np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0])).reshape(4, 5)
    z = xyz[:, 2].reshape(4, 5)
    # row-major: circumferential index outer, axial index inner
    assert np.allclose(phi, phi[:, :1])
    assert np.allclose(z, z[:1, :])
    np.testing.assert_allclose(phi[:, 0], [-112.5, -67.5, -22.5, 22.5], atol=1e-9)
    np.testing.assert_allclose(z[0], [-7.2, -21.6, -36.0, -50.4, -64.8], atol=1e-9)


def test_multitouch_labels(layout, calib, optics, dims, model):
    ds = run_multitouch(60, MultitouchGrid(), layout, calib, optics, dims, np.random.default_rng(2))
    counts = ds.cells.sum(axis=1)
    assert set(counts) <= {1, 2} and {1, 2} <= set(counts)
    assert ds.features.shape == (60, 990)
    again = run_multitouch(60, MultitouchGrid(), layout, calib, optics, dims, np.random.default_rng(2))
    assert again.to_csv() == ds.to_csv()


def test_multitouch_superposition(quiet_model, calib, dims):
    centers = MultitouchGrid().centers(dims)
    h = tip(TipKind.HEMISPHERE)
    f1 = DeformationField(centers[3], 2.2, h, dims)
    f2 = DeformationField(centers[16], 1.4, h, dims)
    base = quiet_model.noiseless_levels(np.zeros(quiet_model.grid_xyz.shape[0]), calib)
    one = quiet_model.noiseless_levels(quiet_model.displacement(f1), calib) - base
    two = quiet_model.noiseless_levels(quiet_model.displacement(f2), calib) - base
    both = quiet_model.noiseless_levels(quiet_model.displacement([f1, f2]), calib) - base
    np.testing.assert_allclose(both, one + two, atol=1e-9)


def test_multitouch_csv_round_trip(layout, calib, optics, dims, model, tmp_path):
    ds = run_multitouch(10, MultitouchGrid(), layout, calib, optics, dims, np.random.default_rng(0))
    ds.save(tmp_path / "m.csv")
    header = (tmp_path / "m.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "c1" and header[19] == "c20" and header[20] == "r1"
    back = MultitouchDataset.load(tmp_path / "m.csv")
    np.testing.assert_array_equal(back.cells, ds.cells)
    np.testing.assert_array_equal(back.features, ds.features)
