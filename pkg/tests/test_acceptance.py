"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
Criterion 8 needs measured station data; point ``AGRISHADE_ICOS_DIR`` at a
directory holding ``<station>.csv`` files (default column layout, hourly,
2018) to enable it.
"""

import json
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from agrishade.cli import main as cli_main
from agrishade.par_pipeline import (WeatherRecord, spitters_par_fraction, yang2_arrays,
                                    yang2_diffuse_fraction)
from agrishade.scene import STATIONS, BUILTIN_LAYOUTS, CropArea, build_scene
from agrishade.shadegeom import (exact_beam_factor, panel_shadow_area, pose_matrix,
                                 pose_scene)
from agrishade.simulate import (SimulationOptions, emit_shading_timeseries,
                                representative_dates, simulate, write_outputs)
from agrishade.skydiffuse import DiffuseEngine, ShadingTable, diffuse_factor
from agrishade.solar import RadiationScalars, solar_vector_arrays, sun_position_arrays
from agrishade.tracking import axis_frame, backtrack_tilt, pose_for
from agrishade.weather import ingest_weather, IngestSpec, synthetic_clear_sky_year
from oracles import monte_carlo_fb, sun
from test_par_pipeline import ORACLE

LANNA = STATIONS["lanna"]
RESULTS: dict[int, str] = {}


def report(num: int, ok: bool, text: str) -> None:
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {text}"
    RESULTS[num] = line
    print(line)


def _hours(start, end):
    return np.arange(np.datetime64(start, "s"), np.datetime64(end, "s"), np.timedelta64(1, "h"))


# -- 1 ---------------------------------------------------------------------

def _random_scene(rng):
    """1-5 random flat panels above the crop, each with its own pose."""
    n = int(rng.integers(1, 6))
    out = []
    for _ in range(n):
        L, W = rng.uniform(0.5, 3.0, 2)
        x0, y0 = rng.uniform(1.0, 8.0), rng.uniform(2.0, 17.0)
        z = rng.uniform(1.0, 4.0)
        c = np.array([[x0, y0, z], [x0, y0 + W, z], [x0 + L, y0, z], [x0 + L, y0 + W, z]])
        ctr = c.mean(axis=0)
        R = pose_matrix(rng.uniform(-80, 80), rng.uniform(-80, 80))
        out.append((c - ctr) @ R.T + ctr)
    return np.array(out)


def test_criterion_1_geometry_oracle():
    rng = np.random.default_rng(1)
    crop = CropArea((0.0, 0.0), 10.0, 20.0, 0.25)
    t0 = time.perf_counter()
    worst, worst_ratio, shaded = 0.0, 0.0, 0
    failures = []
    for k in range(100):
        posed = _random_scene(rng)
        el = float(np.degrees(np.arcsin(rng.uniform(math.sin(math.radians(5.0)), 1.0))))
        s = sun(el, rng.uniform(-180, 180))
        fb = exact_beam_factor(posed, s, crop)
        p, sigma = monte_carlo_fb(posed, s, crop.bounds, 1_000_000, rng)
        tol = max(0.005, 3 * sigma)
        err = abs(fb - p)
        worst = max(worst, err)
        worst_ratio = max(worst_ratio, err / tol)
        shaded += fb > 0
        if err > tol:
            failures.append((k, fb, p, sigma))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    report(1, ok, f"100 scenes ({shaded} shaded), max |exact - MC| = {worst:.2e}, "
                  f"max err/tol = {worst_ratio:.2f}, {elapsed:.0f} s")
    assert not failures, failures
    assert elapsed < 300


# -- 2 ---------------------------------------------------------------------

def test_criterion_2_grid_consistency():
    """Cell-centre grid at 0.25 m against the exact union, every daylight hour
    of the equinox and solstice days, all stations."""
    opts = SimulationOptions(dome_step=10.0)
    worst = {}
    for name, lay in BUILTIN_LAYOUTS.items():
        for key, site in STATIONS.items():
            h = emit_shading_timeseries(site, lay, representative_dates(2018), opts)
            day = ~h.night
            err = np.abs(h.f_b_grid[day] - h.f_b[day])
            if err.max() > worst.get(name, (0.0,))[0]:
                worst[name] = (float(err.max()), key, str(h.times[day][err.argmax()]))
    # finer grids shrink the error: edge sampling, not a geometry defect
    fine = {}
    for name, (_, key, ts) in worst.items():
        lay = replace(BUILTIN_LAYOUTS[name], grid_resolution=0.05)
        h = emit_shading_timeseries(STATIONS[key], lay, [ts[:10]], opts)
        day = ~h.night
        fine[name] = float(np.abs(h.f_b_grid[day] - h.f_b[day]).max())
    ok = all(v[0] <= 0.01 for v in worst.values())
    detail = ", ".join(f"{n} {v[0]:.4f} ({v[1]} {v[2][:16]}; {fine[n]:.4f} at 0.05 m)"
                       for n, v in worst.items())
    report(2, ok, f"max |f_b grid - f_b exact| <= 0.01: {detail}")
    assert ok, worst


# -- 3 ---------------------------------------------------------------------

def test_criterion_3_backtracking():
    lay = BUILTIN_LAYOUTS["one_axis"]
    sc = build_scene(lay)
    t = _hours("2018-01-01T00:30", "2019-01-01T00:30")
    el, az = sun_position_arrays(t, LANNA.latitude, LANNA.longitude)
    rows = np.array([p.row_index for p in sc.panels])
    r0, r1 = list(np.nonzero(rows == 0)[0]), list(np.nonzero(rows == 1)[0])

    def inter_row(posed, s):
        return float(panel_shadow_area(posed, s, r0, r1).sum()
                     + panel_shadow_area(posed, s, r1, r0).sum())

    active, worst, control = 0, 0.0, 0.0
    for e, a in zip(el, az):
        if e <= 0:
            continue
        s = axis_frame(solar_vector_arrays(e, a), lay.panel_azimuth)
        ta = pose_for(lay, s)
        if not ta.backtracking:
            continue
        active += 1
        worst = max(worst, inter_row(pose_scene(sc, ta.omega_itc), s))
        if active % 25 == 0:
            # same hour without the correction: rows do shade each other
            w = min(max(ta.omega_it, lay.tilt_min), lay.tilt_max)
            control = max(control, inter_row(pose_scene(sc, w), s))

    # both one-sided limits at the activation boundary, clamped and unclamped
    boundary = math.degrees(math.acos(1.0 / lay.l_ew))
    jumps = []
    for sign in (1.0, -1.0):
        for lo, hi in ((lay.tilt_min, lay.tilt_max), (-90.0, 90.0)):
            below = backtrack_tilt(sign * (boundary - 1e-9), lay.l_ew, lo, hi)
            above = backtrack_tilt(sign * (boundary + 1e-9), lay.l_ew, lo, hi)
            jumps.append(abs(above - below))
    ok = active > 0 and worst < 1e-6 and control > 0 and max(jumps) <= 0.01
    report(3, ok, f"{active} backtracking hours, max inter-row panel shade {worst:.2e} m2 "
                  f"(uncorrected control {control:.1f} m2), boundary {boundary:.2f} deg, "
                  f"max tilt jump {max(jumps):.1e} deg")
    assert active > 0 and control > 0
    assert worst < 1e-6
    assert max(jumps) <= 0.01


# -- 4 ---------------------------------------------------------------------

def test_criterion_4_rotation_invariants():
    rng = np.random.default_rng(4)
    triples = rng.uniform(-180, 180, (10_000, 3))
    sc = build_scene(BUILTIN_LAYOUTS["two_axis"])
    base = sc.corners[:4]
    centers = sc.centers[:4]
    d0 = np.linalg.norm(base[:, :, None, :] - base[:, None, :, :], axis=-1)
    orth = det = moved = dist = 0.0
    for omega, beta, gamma in triples:
        for R in (pose_matrix(omega, beta), pose_matrix(gamma, omega)):
            orth = max(orth, float(np.abs(R.T @ R - np.eye(3)).max()))
            det = max(det, abs(float(np.linalg.det(R)) - 1.0))
        posed = pose_scene(replace(sc, panels=sc.panels[:4]), omega, beta)
        moved = max(moved, float(np.abs(posed.mean(axis=1) - centers).max()))
        d1 = np.linalg.norm(posed[:, :, None, :] - posed[:, None, :, :], axis=-1)
        dist = max(dist, float(np.abs(d1 - d0).max()))
    ok = orth <= 1e-12 and det <= 1e-12 and moved <= 1e-12 and dist <= 1e-9
    report(4, ok, f"10^4 triples: |R^T R - I| {orth:.1e}, |det - 1| {det:.1e}, "
                  f"centre drift {moved:.1e}, distance change {dist:.1e}")
    assert ok


# -- 5 ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def year_runs():
    """Full synthetic year at 58.33 N for the three layouts, timed."""
    weather = synthetic_clear_sky_year(LANNA.latitude, LANNA.longitude, 2018)
    runs = {}
    for name, lay in BUILTIN_LAYOUTS.items():
        t0 = time.perf_counter()
        res = simulate(LANNA, lay, weather, SimulationOptions())
        runs[name] = (res, time.perf_counter() - t0)
    return weather, runs


@pytest.mark.slow
def test_criterion_5_diffuse_properties(year_runs):
    _, runs = year_runs
    lo = min(float(r.hourly.f_d.min()) for r, _ in runs.values())
    hi = max(float(r.hourly.f_d.max()) for r, _ in runs.values())
    vert = runs["vertical"][0].hourly
    identical = bool(np.all(vert.f_d == vert.f_d[0]))

    # dome refinement on the poses met during the representative days
    refine = 0.0
    for name, lay in BUILTIN_LAYOUTS.items():
        sc = build_scene(lay)
        coarse, fine = DiffuseEngine(sc, 2.0), DiffuseEngine(sc, 1.0)
        h = runs[name][0].hourly
        day = ~h.night
        poses = sorted({(round(float(w), 1), round(float(b), 1))
                        for w, b in zip(h.omega[day], h.beta[day])})
        for w, b in poses[:: max(1, len(poses) // 12)]:
            a, c = coarse.diffuse(w, b), fine.diffuse(w, b)
            refine = max(refine, abs(a.aggregate - c.aggregate),
                         float(np.abs(a.cells - c.cells).max()))

    half = ShadingTable(np.zeros((91, 361)), 1.0)
    half.values[:, half.azimuths < 0] = 1.0
    half_fd = diffuse_factor(half)

    ok = (0.0 <= lo and hi <= 1.0 and identical and refine < 0.005
          and abs(half_fd - 0.5) <= 1e-9)
    report(5, ok, f"f_d in [{lo:.4f}, {hi:.4f}], vertical identical over "
                  f"{vert.f_d.size} hours: {identical}, 2->1 deg change {refine:.1e}, "
                  f"half dome {half_fd:.12f}")
    assert 0.0 <= lo and hi <= 1.0
    assert identical
    assert refine < 0.005
    assert abs(half_fd - 0.5) <= 1e-9


# -- 6 ---------------------------------------------------------------------

def test_criterion_6_decomposition_oracle():
    worst_kd = worst_par = 0.0
    kts = []
    t = np.datetime64("2018-06-21T12:00")
    for ghi, e_ext, g_cs, ast, z, kds, kd_ref, kpar_ref in ORACLE:
        rec = WeatherRecord(t, ghi, 0.5 * ghi, kds, g_cs)
        kd = yang2_diffuse_fraction(rec, RadiationScalars(e_ext, 0.0, ast), z)
        worst_kd = max(worst_kd, abs(kd - kd_ref))
        worst_par = max(worst_par, abs(spitters_par_fraction(kd_ref, 90.0 - z) - kpar_ref))
        kts.append(ghi / e_ext)
    # max clause: zero whenever GHI <= G_cs, positive otherwise
    ghi = np.array([300.0, 400.0, 500.0, 500.0])
    g_cs = np.array([400.0, 400.0, 400.0, 250.0])
    *_, k_de = yang2_arrays(ghi, 1000.0, g_cs, 12.0, 40.0, 0.3)
    clause = bool(np.all(k_de[:2] == 0.0) and np.allclose(k_de[2:], [0.2, 0.5], rtol=0, atol=1e-12))
    span = min(kts) <= 0.1 + 1e-12 and max(kts) >= 0.9 - 1e-12
    ok = worst_kd <= 1e-12 and worst_par <= 1e-12 and clause and span
    report(6, ok, f"{len(ORACLE)} tuples, k_t in [{min(kts):.2f}, {max(kts):.2f}], "
                  f"max |dk_d| {worst_kd:.1e}, max |dk_d,PAR| {worst_par:.1e}, "
                  f"k_de clause {np.round(k_de, 12).tolist()}")
    assert ok


# -- 7 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_layout_pattern(year_runs):
    _, runs = year_runs
    m = {n: r.metrics for n, (r, _) in runs.items()}
    elapsed = sum(dt for _, dt in runs.values())
    order = m["two_axis"].par_reduction < m["one_axis"].par_reduction < m["vertical"].par_reduction
    best_lhi = m["two_axis"].lhi > max(m["one_axis"].lhi, m["vertical"].lhi)
    ok = order and best_lhi and elapsed < 600
    table = ", ".join(f"{n} {v.par_reduction:.2f}% / LHI {v.lhi:.2f}%" for n, v in m.items())
    report(7, ok, f"reduction / LHI: {table}; {elapsed:.0f} s for 3 x 8760 h")
    assert order and best_lhi
    assert elapsed < 600


# -- 8 ---------------------------------------------------------------------

REFERENCE_LHI = {
    "lanna": {"vertical": 92.68, "one_axis": 91.83, "two_axis": 95.25},
    "estrees-mons": {"vertical": 93.76, "one_axis": 92.03, "two_axis": 95.39},
    "klingenberg": {"vertical": 93.48, "one_axis": 91.84, "two_axis": 95.26},
}
REFERENCE_REDUCTION = {
    "lanna": {"vertical": 34.72, "one_axis": 22.46, "two_axis": 11.41},
    "estrees-mons": {"vertical": 32.12, "one_axis": 23.14, "two_axis": 11.17},
    "klingenberg": {"vertical": 32.24, "one_axis": 23.01, "two_axis": 11.82},
}
ESTREES_TWO_AXIS_MEAN_PAR = 495.0


@pytest.mark.slow
def test_criterion_8_measured_data():
    root = os.environ.get("AGRISHADE_ICOS_DIR")
    if not root:
        RESULTS[8] = "criterion 8: SKIP  set AGRISHADE_ICOS_DIR to measured 2018 station files"
        pytest.skip("measured station data not supplied (AGRISHADE_ICOS_DIR)")
    misses = []
    lines = []
    for key in REFERENCE_REDUCTION:
        weather = ingest_weather(IngestSpec(Path(root) / f"{key}.csv"))
        for name, lay in BUILTIN_LAYOUTS.items():
            res = simulate(STATIONS[key], lay, weather, SimulationOptions(year=2018))
            red, lhi = res.metrics.par_reduction, res.metrics.lhi
            lines.append(f"{key}/{name} {red:.2f}% {lhi:.2f}%")
            if abs(red - REFERENCE_REDUCTION[key][name]) > 2.0:
                misses.append(("reduction", key, name, red))
            if abs(lhi - REFERENCE_LHI[key][name]) > 2.0:
                misses.append(("lhi", key, name, lhi))
            if key == "estrees-mons" and name == "two_axis":
                mp = res.metrics.mean_par
                if abs(mp / ESTREES_TWO_AXIS_MEAN_PAR - 1.0) > 0.05:
                    misses.append(("mean_par", key, name, mp))
    report(8, not misses, "; ".join(lines))
    assert not misses, misses


# -- 9 ---------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_9_determinism(year_runs, tmp_path):
    weather, runs = year_runs
    first = write_outputs(runs["one_axis"][0], tmp_path / "first")
    again = simulate(LANNA, BUILTIN_LAYOUTS["one_axis"], weather, SimulationOptions(workers=4))
    second = write_outputs(again, tmp_path / "second")
    same = {k: first[k].read_bytes() == second[k].read_bytes() for k in first}

    # the command line, twice from the same config file
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"site": {"station": "lanna"}, "layout": "two_axis",
                               "layout_overrides": {"grid_resolution": 0.5},
                               "options": {"dome_step": 5, "min_coverage": 0.0}}))
    wfile = tmp_path / "w.csv"
    from agrishade.weather import write_weather_csv
    day = weather.times.astype("datetime64[D]")
    write_weather_csv(weather.subset(np.isin(day, representative_dates(2018))), wfile)
    codes = [cli_main(["simulate", "--config", str(cfg), "--weather", str(wfile),
                       "--out", str(tmp_path / f"cli{i}")]) for i in (1, 2)]
    cli_files = sorted(p.name for p in (tmp_path / "cli1").iterdir())
    cli_same = all((tmp_path / "cli1" / n).read_bytes() == (tmp_path / "cli2" / n).read_bytes()
                   for n in cli_files)
    ok = all(same.values()) and codes == [0, 0] and cli_same
    report(9, ok, f"full-year one-axis (workers 1 vs 4) identical: {same}; "
                  f"CLI rerun identical over {len(cli_files)} files: {cli_same}")
    assert ok
