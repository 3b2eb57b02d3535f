import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agrishade.scene import BUILTIN_LAYOUTS, CropArea, build_scene, open_field
from agrishade.shadegeom import exact_beam_factor, pose_scene
from agrishade.skydiffuse import (DiffuseEngine, PoseCache, PoseFingerprint, ShadingTable,
                                  build_shading_table, cell_blocked, coalesce_strips,
                                  diffuse_factor, dome_nodes, dome_weights, per_cell_diffuse,
                                  quantize)
from oracles import directions_blocked, rays_hit_rectangles, sun


def _table(fill, step=1.0):
    alt, az = dome_nodes(step)
    return ShadingTable(np.full((len(alt), len(az)), float(fill)), step)


def _brute_cell_fd(point, posed, step, offset=0.0):
    alt, az = dome_nodes(step)
    w = dome_weights(alt)
    A, G = np.meshgrid(alt, az[:-1], indexing="ij")
    dirs = np.stack([sun(a, g - offset) for a, g in zip(A.ravel(), G.ravel())])
    blocked = directions_blocked([point[0], point[1], 0.0], dirs, posed).reshape(A.shape)
    return float((blocked * w[:, None]).sum() / (w.sum() * (len(az) - 1)))


# -- dome and table --------------------------------------------------------

def test_dome_grid_shape():
    alt, az = dome_nodes(1.0)
    assert len(alt) == 91 and len(az) == 361
    assert alt[0] == 0.0 and alt[-1] == 90.0 and az[0] == -180.0 and az[-1] == 180.0
    w = dome_weights(alt)
    assert w[0] == 0.0 and w[-1] == 0.0 and np.all(w[1:-1] > 0)
    with pytest.raises(ValueError):
        dome_nodes(7.0)


def test_empty_scene_table_is_zero():
    sc = build_scene(open_field(BUILTIN_LAYOUTS["one_axis"]))
    t = build_shading_table(sc.corners, sc.crop, 2.0)
    assert t.values.shape == (46, 181)
    assert not t.values.any()


def test_zenith_row_is_uniform(scenes):
    sc = scenes["two_axis"]
    t = build_shading_table(pose_scene(sc, 20.0, 10.0), sc.crop, 2.0)
    assert np.all(t.values[-1] == t.values[-1, 0])
    assert np.all(t.values[:, -1] == t.values[:, 0])


def test_table_entry_equals_direct_beam_factor(scenes):
    sc = scenes["vertical"]
    posed = pose_scene(sc, 90.0)
    t = build_shading_table(posed, sc.crop, 1.0)
    alt, az = t.altitudes, t.azimuths
    i, j = int(np.nonzero(alt == 30.0)[0][0]), int(np.nonzero(az == 0.0)[0][0])
    assert t.values[i, j] == exact_beam_factor(posed, sun(30.0, 0.0), sc.crop)
    # and a few arbitrary nodes, including an offset layout azimuth
    for a, g in [(10.0, -120.0), (55.0, 33.0), (1.0, 179.0)]:
        i, j = int(np.nonzero(alt == a)[0][0]), int(np.nonzero(az == g)[0][0])
        assert t.values[i, j] == pytest.approx(exact_beam_factor(posed, sun(a, g), sc.crop),
                                               abs=1e-15)
    t_off = build_shading_table(posed, sc.crop, 1.0, azimuth_offset=25.0)
    i, j = int(np.nonzero(alt == 40.0)[0][0]), int(np.nonzero(az == 60.0)[0][0])
    assert t_off.values[i, j] == pytest.approx(
        exact_beam_factor(posed, sun(40.0, 35.0), sc.crop), abs=1e-15)


def test_horizon_row_uses_half_degree(scenes):
    sc = scenes["one_axis"]
    posed = pose_scene(sc, 30.0)
    t = build_shading_table(posed, sc.crop, 5.0)
    assert t.values[0, 10] == pytest.approx(
        exact_beam_factor(posed, sun(0.5, t.azimuths[10]), sc.crop), abs=1e-15)


def test_diffuse_factor_examples():
    assert diffuse_factor(_table(0.0)) == 0.0
    assert diffuse_factor(_table(1.0)) == pytest.approx(1.0, abs=1e-15)
    half = _table(0.0)
    half.values[:, half.azimuths < 0] = 1.0
    assert diffuse_factor(half) == pytest.approx(0.5, abs=1e-12)


def test_table_save_load_round_trip(tmp_path, scenes):
    sc = scenes["one_axis"]
    t = build_shading_table(pose_scene(sc, 12.0), sc.crop, 3.0)
    path = tmp_path / "t.f8"
    t.save(path)
    raw = np.fromfile(path, "<f8")
    assert raw.size == 31 * 121
    assert raw[121 * 5 + 7] == t.values[5, 7]          # altitude-major
    back = ShadingTable.load(path, 3.0)
    assert np.array_equal(back.values, t.values)
    with pytest.raises(ValueError):
        ShadingTable.load(path, 1.0)


# -- ray test --------------------------------------------------------------

def test_cell_blocked_examples():
    roof = np.array([[[0, 0, 2.0], [0, 1, 2.0], [2, 0, 2.0], [2, 1, 2.0]]])
    assert not cell_blocked((1.0, 0.5), 90.0, 0.0, np.zeros((0, 4, 3)))
    assert cell_blocked((1.0, 0.5), 90.0, 0.0, roof)
    assert not cell_blocked((5.0, 0.5), 90.0, 0.0, roof)
    # from a cell east of the roof, the western sky (azimuth +90) is covered
    assert cell_blocked((-1.0, 0.5), 60.0, 90.0, roof)
    assert not cell_blocked((-1.0, 0.5), 60.0, -90.0, roof)


def test_cell_blocked_matches_independent_intersection(rng):
    from agrishade.shadegeom import pose_corners
    mismatches = 0
    for _ in range(10_000):
        x0, y0 = rng.uniform(-3, 3, 2)
        c = np.array([[x0, y0, 0], [x0, y0 + 1, 0], [x0 + 2, y0, 0], [x0 + 2, y0 + 1, 0.0]])
        c[:, 2] = rng.uniform(0.5, 3)
        posed = pose_corners(c[None], c.mean(axis=0)[None], *rng.uniform(-80, 80, 2))
        p = rng.uniform(-4, 4, 2)
        a, g = rng.uniform(1, 89), rng.uniform(-180, 180)
        ref = rays_hit_rectangles([[p[0], p[1], 0.0]], sun(a, g), posed)[0]
        mismatches += cell_blocked(p, a, g, posed) != ref
    assert mismatches == 0


# -- per-cell diffuse ------------------------------------------------------

def test_open_field_has_no_diffuse_shading():
    sc = build_scene(open_field(BUILTIN_LAYOUTS["two_axis"]))
    res = per_cell_diffuse(sc.corners, sc.crop, 2.0)
    assert res.aggregate == 0.0 and not res.cells.any()
    assert res.cells.shape == (80, 40)


def test_infinite_ceiling_blocks_everything():
    crop = CropArea((0, 0), 2, 2, 0.5)
    L = 1e6
    ceiling = np.array([[[-L, -L, 1.0], [-L, L, 1.0], [L, -L, 1.0], [L, L, 1.0]]])
    res = per_cell_diffuse(ceiling, crop, 1.0)
    assert np.allclose(res.cells, 1.0, atol=1e-12)


@pytest.mark.parametrize("name, w, b", [("vertical", 90.0, 0.0), ("one_axis", 37.0, 0.0),
                                        ("two_axis", -22.0, 41.0)])
def test_per_cell_matches_brute_force(scenes, rng, name, w, b):
    sc = scenes[name]
    posed = pose_scene(sc, w, b)
    step, offset = 5.0, 0.0
    res = per_cell_diffuse(posed, sc.crop, step, offset)
    centers = sc.crop.cell_centers
    for k in rng.choice(len(centers), 6, replace=False):
        iy, ix = divmod(int(k), sc.crop.nx)
        assert res.cells[iy, ix] == pytest.approx(_brute_cell_fd(centers[k], posed, step, offset),
                                                  abs=1e-12)


def test_per_cell_with_layout_azimuth(scenes):
    sc = scenes["one_axis"]
    posed = pose_scene(sc, 20.0)
    res = per_cell_diffuse(posed, sc.crop, 10.0, azimuth_offset=30.0)
    centers = sc.crop.cell_centers
    for k in (0, 1234, 3199):
        iy, ix = divmod(k, sc.crop.nx)
        assert res.cells[iy, ix] == pytest.approx(_brute_cell_fd(centers[k], posed, 10.0, 30.0),
                                                  abs=1e-12)


def test_aggregate_is_cell_mean_and_close_to_table(scenes):
    sc = scenes["one_axis"]
    posed = pose_scene(sc, 45.0)
    res = per_cell_diffuse(posed, sc.crop, 2.0)
    assert abs(res.aggregate - res.cells.mean()) < 1e-6
    # the table integrates exact shadow areas; the cells sample centres
    table_fd = diffuse_factor(build_shading_table(posed, sc.crop, 2.0))
    assert abs(res.aggregate - table_fd) < 1e-3


def test_values_in_unit_interval(scenes):
    for name, (w, b) in {"vertical": (90, 0), "one_axis": (-50, 0), "two_axis": (10, 30)}.items():
        sc = scenes[name]
        res = per_cell_diffuse(pose_scene(sc, w, b), sc.crop, 3.0)
        assert res.cells.min() >= 0.0 and res.cells.max() <= 1.0
        assert 0.0 < res.aggregate < 1.0


def test_mirror_symmetric_pose_gives_mirrored_cells(scenes):
    sc = scenes["one_axis"]
    res = per_cell_diffuse(pose_scene(sc, 0.0), sc.crop, 2.0)
    assert np.abs(res.cells - res.cells[:, ::-1]).max() < 1e-9
    assert np.abs(res.cells - res.cells[::-1, :]).max() < 1e-9
    a = per_cell_diffuse(pose_scene(sc, 33.0), sc.crop, 2.0).cells
    b = per_cell_diffuse(pose_scene(sc, -33.0), sc.crop, 2.0).cells
    assert np.abs(a - b[:, ::-1]).max() < 1e-9


def test_adding_panels_never_decreases_cell_diffuse(scenes):
    sc = scenes["two_axis"]
    posed = pose_scene(sc, 15.0, -25.0)
    prev = np.zeros((sc.crop.ny, sc.crop.nx))
    for k in (1, 10, 25, 40):
        cur = per_cell_diffuse(posed[:k], sc.crop, 5.0).cells
        assert np.all(cur >= prev - 1e-15)
        prev = cur


@pytest.mark.parametrize("name, w, b", [("vertical", 90.0, 0.0), ("one_axis", 45.0, 0.0),
                                        ("two_axis", 30.0, -20.0)])
def test_dome_refinement(scenes, name, w, b):
    sc = scenes[name]
    posed = pose_scene(sc, w, b)
    f1 = per_cell_diffuse(posed, sc.crop, 1.0).aggregate
    f2 = per_cell_diffuse(posed, sc.crop, 2.0).aggregate
    assert abs(f1 - f2) < 0.005


def test_coalesced_strips_give_identical_cells(scenes):
    sc = scenes["one_axis"]
    posed = pose_scene(sc, 28.0)
    merged = coalesce_strips(posed, sc)
    assert len(merged) == 2
    a = per_cell_diffuse(posed, sc.crop, 3.0).cells
    b = per_cell_diffuse(merged, sc.crop, 3.0).cells
    assert np.abs(a - b).max() < 1e-12
    # units separated along the row are left alone
    assert len(coalesce_strips(pose_scene(scenes["two_axis"], 0.0), scenes["two_axis"])) == 40


# -- cache and engine ------------------------------------------------------

def test_quantize_buckets():
    assert quantize(12.34) == pytest.approx(12.3)
    assert quantize(12.36) == pytest.approx(12.4)
    assert quantize(-0.04) == 0.0 and math.copysign(1, quantize(-0.04)) == 1.0
    assert quantize(12.37, 0.0) == 12.37


def test_fingerprint_keys():
    a = PoseFingerprint("one_axis", 12.3, 0.0, "g", 1.0)
    assert a.key == PoseFingerprint("one_axis", 12.3, 0.0, "g", 1.0).key
    assert a.digest != PoseFingerprint("one_axis", 12.4, 0.0, "g", 1.0).digest


def test_vertical_engine_builds_once(scenes):
    engine = DiffuseEngine(scenes["vertical"], step=5.0)
    results = [engine.diffuse(90.0, 0.0) for _ in range(50)]
    assert engine.cache.builds == 1 and engine.cache.hits == 49
    assert all(r.aggregate == results[0].aggregate for r in results)


def test_repeated_pose_hits_cache_bit_identically(scenes):
    engine = DiffuseEngine(scenes["one_axis"], step=5.0)
    a = engine.diffuse(0.0)
    b = engine.diffuse(0.0)
    assert engine.cache.builds == 1 and engine.cache.hits == 1
    assert a is b


def test_nearby_poses_share_a_bucket(scenes):
    sc = scenes["one_axis"]
    engine = DiffuseEngine(sc, step=2.0)
    a = engine.diffuse(40.02)
    b = engine.diffuse(39.97)
    assert a is b and engine.cache.builds == 1
    exact = per_cell_diffuse(pose_scene(sc, 40.02), sc.crop, 2.0).aggregate
    assert abs(a.aggregate - exact) < 0.001


def test_mirror_reuse_matches_direct_evaluation(scenes):
    for name, poses in {"one_axis": [(-35.0, 0.0)], "two_axis": [(-20.0, -30.0), (25.0, -10.0)]}.items():
        sc = scenes[name]
        sym = DiffuseEngine(sc, step=5.0)
        plain = DiffuseEngine(sc, step=5.0, use_symmetry=False)
        for w, b in poses:
            assert np.abs(sym.diffuse(w, b).cells - plain.diffuse(w, b).cells).max() < 1e-9
        assert sym.cache.builds == len(poses)


def test_engine_table_matches_direct_build(scenes):
    sc = scenes["two_axis"]
    engine = DiffuseEngine(sc, step=5.0)
    t = engine.table(10.04, -3.0)
    direct = build_shading_table(pose_scene(sc, 10.0, -3.0), sc.crop, 5.0)
    assert np.array_equal(t.values, direct.values)
    assert engine.table(9.96, -3.0) is t


def test_persistent_cache_round_trip(tmp_path, scenes):
    sc = scenes["one_axis"]
    first = DiffuseEngine(sc, step=5.0, cache=PoseCache(tmp_path))
    a = first.diffuse(12.0)
    t = first.table(12.0)
    assert (tmp_path / "index.json").exists()
    second = DiffuseEngine(sc, step=5.0, cache=PoseCache(tmp_path))
    b = second.diffuse(12.0)
    assert second.cache.builds == 0
    assert np.array_equal(a.cells, b.cells)
    assert np.array_equal(second.table(12.0).values, t.values)


def test_cache_is_safe_under_concurrency(scenes):
    from concurrent.futures import ThreadPoolExecutor
    engine = DiffuseEngine(scenes["one_axis"], step=10.0)
    poses = [float(w) for w in np.tile(np.arange(-30, 31, 10), 6)]
    with ThreadPoolExecutor(6) as pool:
        res = list(pool.map(engine.diffuse, poses))
    serial = DiffuseEngine(scenes["one_axis"], step=10.0)
    for w, r in zip(poses, res):
        assert np.array_equal(r.cells, serial.diffuse(w).cells)
    assert len(engine.cache) == 4      # 0, 10, 20, 30 after mirroring


@settings(max_examples=20, deadline=None)
@given(st.floats(-60, 60))
def test_engine_values_bounded(w):
    sc = build_scene(BUILTIN_LAYOUTS["one_axis"])
    r = DiffuseEngine(sc, step=10.0).diffuse(w)
    assert 0.0 <= r.cells.min() and r.cells.max() <= 1.0
