"""End-to-end annual simulation, layout comparison and shading time series."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .par_pipeline import (DARK_GHI, MIN_COVERAGE, YANG2, Metrics, MissingSatelliteFractionError,
                           PARMap, YearAccumulator, check_coverage, compute_metrics,
                           spitters_par_fraction, yang2_arrays)
from .scene import (LayoutConfig, SiteConfig, SystemKind, build_scene, layout_to_dict,
                    site_to_dict)
from .shadegeom import cell_occlusion, exact_beam_factor
from .skydiffuse import DiffuseEngine, PoseCache, diffuse_factor
from .solar import (apparent_solar_time_arrays, extraterrestrial_horizontal_arrays,
                    haurwitz_ghi, solar_vector_arrays, sun_position_arrays)
from .tracking import axis_frame, pose_for
from .weather import HOUR, WeatherSeries

CHUNK = 256          # timesteps per partial sum; fixed so results ignore --workers


class SimulationError(RuntimeError):
    def __init__(self, module: str, message: str):
        super().__init__(f"[{module}] {message}")
        self.module = module


class MismatchedWeatherError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationOptions:
    dome_step: float = 1.0
    pose_bucket: float = 0.1
    diffuse_mode: str = "per-cell"          # or "aggregate"
    lhi_mode: str = "std"
    beta0: float = YANG2.b0
    workers: int = 1
    offset_minutes: float = 30.0
    min_coverage: float = MIN_COVERAGE
    year: int | None = None
    cache_dir: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationOptions":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def __post_init__(self):
        if self.diffuse_mode not in ("per-cell", "aggregate"):
            raise ValueError(f"diffuse_mode must be 'per-cell' or 'aggregate', not {self.diffuse_mode!r}")
        if self.lhi_mode not in ("std", "variance"):
            raise ValueError(f"lhi_mode must be 'std' or 'variance', not {self.lhi_mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True, eq=False)
class Hourly:
    """Per-record shading diagnostics (arrays aligned with the weather records)."""

    times: np.ndarray
    elevation: np.ndarray
    azimuth: np.ndarray
    omega: np.ndarray
    beta: np.ndarray
    f_b: np.ndarray
    f_b_grid: np.ndarray
    f_d: np.ndarray
    night: np.ndarray


@dataclass(frozen=True, eq=False)
class SimulationResult:
    par_map: PARMap
    metrics: Metrics
    manifest: dict
    hourly: Hourly
    stats: dict = field(default_factory=dict)


# -- helpers ---------------------------------------------------------------

def _eval_times(times: np.ndarray, offset_minutes: float) -> np.ndarray:
    return times + np.timedelta64(int(round(offset_minutes * 60)), "s")


def _decompose_arrays(site: SiteConfig, weather: WeatherSeries, el: np.ndarray, t_eval,
                      beta0: float):
    """PAR beam and diffuse [W/m²] for every record."""
    ghi, par = weather.ghi, weather.par
    dark = (ghi <= DARK_GHI) | (par <= 0)
    up = el > 0
    e_ext = extraterrestrial_horizontal_arrays(t_eval, el)
    g_cs = np.where(np.isnan(weather.g_cs), haurwitz_ghi(el), weather.g_cs)
    ast = apparent_solar_time_arrays(t_eval, site.longitude)
    k_d = np.ones(len(ghi))
    need = ~dark & up
    measured = ~np.isnan(weather.k_d_measured)
    model = need & ~measured
    if np.any(model & np.isnan(weather.k_d_sat)):
        i = int(np.nonzero(model & np.isnan(weather.k_d_sat))[0][0])
        raise MissingSatelliteFractionError(
            f"record {weather.times[i]} has neither k_d_sat nor a measured diffuse fraction")
    if np.any(model):
        with np.errstate(divide="ignore", invalid="ignore"):
            kd, *_ = yang2_arrays(ghi[model], e_ext[model], g_cs[model], ast[model],
                                  90.0 - el[model], weather.k_d_sat[model],
                                  YANG2.with_beta0(beta0))
        k_d[model] = kd
    k_d[need & measured] = weather.k_d_measured[need & measured]
    k_par = np.ones(len(ghi))
    k_par[need] = spitters_par_fraction(k_d[need], el[need])
    par_eff = np.where(dark, 0.0, par)
    diffuse = par_eff * k_par
    return par_eff - diffuse, diffuse, dark


def _select_year(weather: WeatherSeries, year: int | None) -> tuple[WeatherSeries, int]:
    years = weather.times.astype("datetime64[Y]").astype(int) + 1970
    if len(years) == 0:
        raise SimulationError("cli_io", "weather series is empty")
    if year is None:
        vals, counts = np.unique(years, return_counts=True)
        year = int(vals[np.argmax(counts)])
    mask = years == year
    if not mask.any():
        raise SimulationError("cli_io", f"no weather records in {year}")
    return (weather if mask.all() else weather.subset(mask)), year


def _daylight_coverage(site, weather, year, opts) -> dict:
    start = np.datetime64(f"{year}-01-01T00:00:00", "s")
    end = np.datetime64(f"{year + 1}-01-01T00:00:00", "s")
    all_hours = np.arange(start, end, HOUR)
    el_all, _ = sun_position_arrays(_eval_times(all_hours, opts.offset_minutes),
                                    site.latitude, site.longitude)
    day = el_all > 0
    present = np.isin(all_hours, weather.times)
    expected, got = int(day.sum()), int((day & present).sum())
    frac = check_coverage(expected, got, opts.min_coverage)
    return {"daylight_expected": expected, "daylight_present": got, "coverage": frac}


def _pose(layout: LayoutConfig, s_layout, night: bool):
    if night:
        # trackers stow flat; the fixed system keeps its tilt
        if layout.system_kind is SystemKind.VERTICAL:
            return layout.fixed_tilt, 0.0
        return 0.0, 0.0
    return pose_for(layout, s_layout).pose


class _Runner:
    def __init__(self, site, layout, opts: SimulationOptions, cache: PoseCache | None = None):
        self.site = site
        self.layout = layout
        self.opts = opts
        try:
            self.scene = build_scene(layout)
        except ValueError as exc:
            raise SimulationError("scene", str(exc)) from exc
        self.cache = cache if cache is not None else PoseCache(opts.cache_dir)
        self.engine = DiffuseEngine(self.scene, opts.dome_step, opts.pose_bucket,
                                    layout.panel_azimuth, self.cache)
        crop = self.scene.crop
        self.shape = (crop.ny, crop.nx)

    def diffuse(self, omega, beta):
        """(per-cell f_d array or scalar, aggregate f_d)."""
        if not self.scene.panels:
            return 0.0, 0.0
        if self.opts.diffuse_mode == "aggregate":
            f = diffuse_factor(self.engine.table(omega, beta))
            return f, f
        res = self.engine.diffuse(omega, beta)
        return res.cells, res.aggregate

    def step(self, s_layout, night: bool, want_beam: bool):
        omega, beta = _pose(self.layout, s_layout, night)
        crop = self.scene.crop
        posed = self.engine.posed(omega, beta)
        if night or not want_beam or not self.scene.panels:
            occ = None
            f_b = f_b_grid = 0.0
        else:
            occ = cell_occlusion(posed, s_layout, crop)
            f_b = exact_beam_factor(posed, s_layout, crop)
            f_b_grid = occ.f_b
        return omega, beta, occ, f_b, f_b_grid


def simulate(site: SiteConfig, layout: LayoutConfig, weather: WeatherSeries,
             options: SimulationOptions | None = None, cache: PoseCache | None = None,
             config_checksum: str = "") -> SimulationResult:
    """Annual shaded and unshaded PAR maps, metrics and per-hour diagnostics."""
    opts = options or SimulationOptions()
    weather, year = _select_year(weather, opts.year)
    runner = _Runner(site, layout, opts, cache)
    coverage = _daylight_coverage(site, weather, year, opts)

    t_eval = _eval_times(weather.times, opts.offset_minutes)
    try:
        el, az = sun_position_arrays(t_eval, site.latitude, site.longitude)
    except ValueError as exc:
        raise SimulationError("solar", str(exc)) from exc
    s_geo = solar_vector_arrays(el, az)
    s_lay = axis_frame(s_geo, layout.panel_azimuth)
    try:
        par_beam, par_diff, dark = _decompose_arrays(site, weather, el, t_eval, opts.beta0)
    except MissingSatelliteFractionError:
        raise
    except (ValueError, FloatingPointError) as exc:
        raise SimulationError("par_pipeline", str(exc)) from exc

    n = len(weather)
    omega = np.zeros(n)
    beta = np.zeros(n)
    f_b = np.zeros(n)
    f_b_grid = np.zeros(n)
    f_d = np.zeros(n)
    night = el <= 0

    def run_chunk(lo: int, hi: int) -> YearAccumulator:
        acc = YearAccumulator(runner.shape)
        for i in range(lo, hi):
            total = par_beam[i] + par_diff[i]
            # shading factors are geometric and reported for dark hours too
            w, b, occ, fb, fbg = runner.step(s_lay[i], bool(night[i]), not night[i])
            omega[i], beta[i], f_b[i], f_b_grid[i] = w, b, fb, fbg
            fd_cells, fd_agg = runner.diffuse(w, b)
            f_d[i] = fd_agg
            if total <= 0:
                continue
            beam = par_beam[i] * (1.0 - occ.shaded) if occ is not None else par_beam[i]
            shaded = beam + par_diff[i] * (1.0 - np.asarray(fd_cells))
            acc.add(np.broadcast_to(shaded, runner.shape), total)
        return acc

    bounds = [(lo, min(n, lo + CHUNK)) for lo in range(0, n, CHUNK)]
    try:
        if opts.workers > 1:
            with ThreadPoolExecutor(opts.workers) as pool:
                parts = list(pool.map(lambda b: run_chunk(*b), bounds))
        else:
            parts = [run_chunk(*b) for b in bounds]
    except ValueError as exc:
        raise SimulationError("shadegeom", str(exc)) from exc
    total = YearAccumulator(runner.shape)
    for p in parts:
        total.merge(p)

    crop = runner.scene.crop
    meta = {"layout": layout.system_kind.value, "site": site.name, "year": year,
            "grid_resolution": crop.grid_resolution, "units": "kWh/m2/year",
            "par_unit_conversion_umol_per_W": 4.57}
    pmap = total.to_map(crop.x_centers, crop.y_centers, meta)
    try:
        metrics = compute_metrics(pmap, opts.lhi_mode)
    except ValueError as exc:
        raise SimulationError("par_pipeline", str(exc)) from exc
    hourly = Hourly(weather.times, el, az, omega, beta, f_b, f_b_grid, f_d, night)
    stats = {"records": n, "coverage": coverage,
             "diffuse_builds": runner.cache.builds, "diffuse_cache_hits": runner.cache.hits,
             "gaps": weather.gaps.as_dict()}
    manifest = build_manifest(site, layout, opts, year, weather, config_checksum)
    return SimulationResult(pmap, metrics, manifest, hourly, stats)


def build_manifest(site, layout, opts: SimulationOptions, year, weather: WeatherSeries,
                   config_checksum: str = "") -> dict:
    import numba

    o = asdict(opts)
    o.pop("workers")       # results do not depend on the worker count
    o.pop("cache_dir")
    return {
        "site": site_to_dict(site),
        "layout": layout_to_dict(layout),
        "year": year,
        "options": o,
        "tracking_mode": layout.tracking_mode.value,
        "dome_step": opts.dome_step,
        "grid_resolution": layout.grid_resolution,
        "inputs": {"weather_sha256": weather.checksum, "config_sha256": config_checksum,
                   "weather_columns": weather.provenance},
        "versions": {"agrishade": __version__, "numpy": np.__version__,
                     "numba": numba.__version__},
    }


# -- outputs ---------------------------------------------------------------

def _f(v: float) -> str:
    return repr(float(v))


def map_csv_text(pmap: PARMap) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "shaded_kwh", "unshaded_kwh"])
    for iy, y in enumerate(pmap.y):
        for ix, x in enumerate(pmap.x):
            w.writerow([_f(x), _f(y), _f(pmap.shaded[iy, ix]), _f(pmap.unshaded[iy, ix])])
    return buf.getvalue()


def metrics_dict(m: Metrics) -> dict:
    return {"lhi_percent": m.lhi, "par_reduction_percent": m.par_reduction,
            "mean_par_kwh_m2": m.mean_par, "mean_unshaded_kwh_m2": m.mean_unshaded}


def report_dict(res: SimulationResult) -> dict:
    # cache counters can vary with thread scheduling, so they stay out of the file
    stats = {k: v for k, v in res.stats.items() if not k.startswith("diffuse_")}
    return {"metrics": metrics_dict(res.metrics), "manifest": res.manifest, "stats": stats,
            "map_meta": res.par_map.meta}


def _write(path: Path, text: str) -> None:
    path.write_bytes(text.encode("utf-8"))


def write_outputs(res: SimulationResult, out_dir: str | Path, prefix: str = "") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"map": out / f"{prefix}par_map.csv", "report": out / f"{prefix}metrics.json",
             "hourly": out / f"{prefix}shading_hourly.csv"}
    _write(paths["map"], map_csv_text(res.par_map))
    _write(paths["report"], json.dumps(report_dict(res), indent=2, sort_keys=True) + "\n")
    _write(paths["hourly"], hourly_csv_text(res.hourly))
    return paths


def hourly_csv_text(h: Hourly) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", "elevation", "azimuth", "omega", "beta", "f_b", "f_b_grid", "f_d",
                "night"])
    for i in range(len(h.times)):
        w.writerow([str(h.times[i]) + "Z", _f(h.elevation[i]), _f(h.azimuth[i]), _f(h.omega[i]),
                    _f(h.beta[i]), _f(h.f_b[i]), _f(h.f_b_grid[i]), _f(h.f_d[i]),
                    int(h.night[i])])
    return buf.getvalue()


# -- comparison ------------------------------------------------------------

def compare(runs, weather: WeatherSeries, options: SimulationOptions | None = None,
            labels=None) -> list[tuple[str, SimulationResult]]:
    """Simulate several (site, layout) pairs against one weather series."""
    runs = list(runs)
    if len(runs) < 2:
        raise MismatchedWeatherError("compare needs at least two configurations")
    labels = list(labels) if labels else [r[1].system_kind.value for r in runs]
    sites = {(r[0].latitude, r[0].longitude) for r in runs}
    if len(sites) > 1:
        raise MismatchedWeatherError("configurations refer to different sites for one weather input")
    return [(lab, simulate(site, layout, weather, options)) for lab, (site, layout) in zip(labels, runs)]


def comparison_table(results) -> tuple[str, dict]:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "layout", "lhi_percent", "par_reduction_percent", "mean_par_kwh_m2"])
    rows = []
    for label, res in results:
        m = res.metrics
        w.writerow([label, res.manifest["layout"]["system_kind"], _f(m.lhi), _f(m.par_reduction),
                    _f(m.mean_par)])
        rows.append({"label": label, "layout": res.manifest["layout"]["system_kind"],
                     **metrics_dict(m)})
    return buf.getvalue(), {"runs": rows}


# -- representative-day shading series -------------------------------------

def representative_dates(year: int) -> list[np.datetime64]:
    """Spring equinox, summer solstice, autumn equinox, winter solstice (nominal dates)."""
    return [np.datetime64(f"{year}-{md}") for md in ("03-20", "06-21", "09-22", "12-21")]


def emit_shading_timeseries(site: SiteConfig, layout: LayoutConfig, dates,
                            options: SimulationOptions | None = None,
                            weather: WeatherSeries | None = None) -> Hourly:
    """Hourly f_b and f_d over whole days (no PAR accumulation)."""
    opts = options or SimulationOptions()
    dates = [np.datetime64(d, "D") for d in dates]
    if weather is not None and len(weather):
        lo = weather.times[0].astype("datetime64[D]")
        hi = weather.times[-1].astype("datetime64[D]")
        for d in dates:
            if d < lo or d > hi:
                raise SimulationError("cli_io", f"date {d} outside the weather range {lo}..{hi}")
    times = np.concatenate([d.astype("datetime64[s]") + np.arange(24) * HOUR for d in dates]) \
        if dates else np.zeros(0, "datetime64[s]")
    runner = _Runner(site, layout, opts)
    t_eval = _eval_times(times, opts.offset_minutes)
    el, az = sun_position_arrays(t_eval, site.latitude, site.longitude)
    s_lay = axis_frame(solar_vector_arrays(el, az), layout.panel_azimuth)
    n = len(times)
    out = {k: np.zeros(n) for k in ("omega", "beta", "f_b", "f_b_grid", "f_d")}
    night = el <= 0
    for i in range(n):
        w, b, _, fb, fbg = runner.step(s_lay[i], bool(night[i]), True)
        out["omega"][i], out["beta"][i], out["f_b"][i], out["f_b_grid"][i] = w, b, fb, fbg
        out["f_d"][i] = runner.diffuse(w, b)[1]
    return Hourly(times, el, az, out["omega"], out["beta"], out["f_b"], out["f_b_grid"],
                  out["f_d"], night)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


__all__ = [
    "SimulationOptions", "SimulationResult", "SimulationError", "MismatchedWeatherError",
    "Hourly", "simulate", "compare", "comparison_table", "emit_shading_timeseries",
    "representative_dates", "write_outputs", "map_csv_text", "hourly_csv_text",
    "report_dict", "build_manifest", "file_sha256",
]
