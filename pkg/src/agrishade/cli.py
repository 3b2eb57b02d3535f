"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 weather ingest error,
4 simulation error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .par_pipeline import InsufficientCoverageError, MissingSatelliteFractionError
from .scene import ConfigError, RunConfig, build_scene, load_config, validate_config
from .simulate import (MismatchedWeatherError, SimulationError, SimulationOptions, compare,
                       comparison_table, emit_shading_timeseries, file_sha256,
                       hourly_csv_text, representative_dates, simulate, write_outputs)
from .skydiffuse import DiffuseEngine, diffuse_factor
from .solar import solar_vector_arrays, sun_position_arrays
from .tracking import axis_frame, pose_for
from .weather import IngestError, IngestSpec, ingest_weather, synthetic_clear_sky_year

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_SIM = 0, 2, 3, 4


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load(path: str, args) -> RunConfig:
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, f"config error: {exc}") from exc
    changes = {}
    if getattr(args, "grid_res", None) is not None:
        changes["grid_resolution"] = args.grid_res
    if getattr(args, "tracking_mode", None) is not None:
        changes["tracking_mode"] = args.tracking_mode
    layout = cfg.layout.with_overrides(**changes) if changes else cfg.layout
    diags = validate_config(layout, cfg.site)
    if diags:
        raise _Fail(EXIT_CONFIG, "invalid configuration:\n" + "\n".join(f"  {d}" for d in diags))
    return RunConfig(cfg.site, layout, cfg.options)


def _options(cfg: RunConfig, args) -> SimulationOptions:
    data = {k: v for k, v in cfg.options.items() if k not in ("weather", "synthetic")}
    for flag, key in (("workers", "workers"), ("dome_step", "dome_step"),
                      ("lhi_mode", "lhi_mode"), ("beta0", "beta0"),
                      ("diffuse_mode", "diffuse_mode"), ("year", "year"),
                      ("min_coverage", "min_coverage"), ("cache_dir", "cache_dir")):
        v = getattr(args, flag, None)
        if v is not None:
            data[key] = v
    if getattr(args, "no_cache_persist", False):
        data["cache_dir"] = None
    try:
        return SimulationOptions.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise _Fail(EXIT_CONFIG, f"config error: {exc}") from exc


def _weather(cfg: RunConfig, args, config_path: str | None = None):
    try:
        if getattr(args, "synthetic_year", None) is not None:
            return synthetic_clear_sky_year(cfg.site.latitude, cfg.site.longitude,
                                            args.synthetic_year)
        if getattr(args, "weather", None):
            spec = IngestSpec(args.weather, par_unit=args.par_unit, cadence=args.cadence)
            if "weather" in cfg.options:
                w = dict(cfg.options["weather"])
                w["path"] = args.weather
                spec = IngestSpec.from_dict(w)
            return ingest_weather(spec)
        if "weather" in cfg.options:
            base = Path(config_path).parent if config_path else None
            return ingest_weather(IngestSpec.from_dict(cfg.options["weather"], base))
        if "synthetic" in cfg.options:
            syn = dict(cfg.options["synthetic"])
            return synthetic_clear_sky_year(cfg.site.latitude, cfg.site.longitude, **syn)
    except IngestError as exc:
        raise _Fail(EXIT_INGEST, f"ingest error: {exc}") from exc
    except (TypeError, KeyError) as exc:
        raise _Fail(EXIT_CONFIG, f"config error: bad weather block: {exc}") from exc
    raise _Fail(EXIT_CONFIG, "no weather input: pass --weather, --synthetic-year or set options.weather")


def _sim_errors(fn):
    try:
        return fn()
    except (SimulationError, InsufficientCoverageError, MissingSatelliteFractionError,
            MismatchedWeatherError) as exc:
        raise _Fail(EXIT_SIM, f"simulation error: {exc}") from exc
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, f"config error: {exc}") from exc


# -- commands --------------------------------------------------------------

def cmd_validate(args) -> int:
    for path in args.config:
        cfg = _load(path, args)
        build_scene(cfg.layout)
        print(f"{path}: ok ({cfg.layout.system_kind.value}, {cfg.layout.n_panels} panels)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    path = args.config[0]
    cfg = _load(path, args)
    opts = _options(cfg, args)
    weather = _weather(cfg, args, path)
    res = _sim_errors(lambda: simulate(cfg.site, cfg.layout, weather, opts,
                                       config_checksum=file_sha256(path)))
    paths = write_outputs(res, args.out)
    m = res.metrics
    print(f"LHI {m.lhi:.2f}%  PAR reduction {m.par_reduction:.2f}%  mean PAR {m.mean_par:.1f} kWh/m2")
    for p in paths.values():
        print(f"wrote {p}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.config) < 2:
        raise _Fail(EXIT_SIM, "simulation error: compare needs at least two --config files")
    cfgs = [_load(p, args) for p in args.config]
    weather_blocks = {json.dumps(c.options.get("weather"), sort_keys=True) for c in cfgs}
    if not args.weather and args.synthetic_year is None and len(weather_blocks) > 1:
        raise _Fail(EXIT_SIM, "simulation error: configurations name different weather inputs")
    opts = _options(cfgs[0], args)
    weather = _weather(cfgs[0], args, args.config[0])
    labels = [Path(p).stem for p in args.config]
    results = _sim_errors(lambda: compare([(c.site, c.layout) for c in cfgs], weather, opts,
                                          labels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text, js = comparison_table(results)
    (out / "comparison.csv").write_bytes(text.encode("utf-8"))
    (out / "comparison.json").write_bytes(
        (json.dumps(js, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    for label, res in results:
        write_outputs(res, out, prefix=f"{label}_")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_shading_series(args) -> int:
    path = args.config[0]
    cfg = _load(path, args)
    opts = _options(cfg, args)
    if args.dates:
        try:
            dates = [np.datetime64(d, "D") for d in args.dates]
        except ValueError as exc:
            raise _Fail(EXIT_CONFIG, f"config error: bad --dates value: {exc}") from exc
    else:
        dates = representative_dates(args.year or 2018)
    weather = None
    if args.weather:
        try:
            weather = ingest_weather(IngestSpec(args.weather, par_unit=args.par_unit,
                                                cadence=args.cadence))
        except IngestError as exc:
            raise _Fail(EXIT_INGEST, f"ingest error: {exc}") from exc
    h = _sim_errors(lambda: emit_shading_timeseries(cfg.site, cfg.layout, dates, opts, weather))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(hourly_csv_text(h).encode("utf-8"))
    print(f"wrote {out} ({len(h.times)} hours)")
    return EXIT_OK


def cmd_shading_table(args) -> int:
    path = args.config[0]
    cfg = _load(path, args)
    opts = _options(cfg, args)
    layout = cfg.layout
    scene = _sim_errors(lambda: build_scene(layout))
    if args.time:
        t = np.datetime64(args.time.rstrip("Z"), "s")
        el, az = sun_position_arrays(t, cfg.site.latitude, cfg.site.longitude)
        s = axis_frame(solar_vector_arrays(el[0], az[0]), layout.panel_azimuth)
        omega, beta = pose_for(layout, s).pose if s[2] > 0 else (0.0, 0.0)
    else:
        omega = layout.fixed_tilt if layout.system_kind.value == "vertical" else args.omega
        beta = args.beta
    engine = DiffuseEngine(scene, opts.dome_step, 0.0, layout.panel_azimuth)
    table = engine.table(omega, beta)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save(out)
    meta = {"layout": "altitude-major, azimuth-minor, little-endian float64",
            "shape": list(table.values.shape), "altitudes": [float(table.altitudes[0]),
                                                             float(table.altitudes[-1])],
            "azimuths": [float(table.azimuths[0]), float(table.azimuths[-1])],
            "step": table.step, "omega": omega, "beta": beta,
            "fingerprint": table.fingerprint.key if table.fingerprint else None,
            "f_d": diffuse_factor(table)}
    out.with_suffix(out.suffix + ".json").write_bytes(
        (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    print(f"wrote {out}  f_d = {meta['f_d']:.6f}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agrishade",
                                description="Ground shading and PAR maps for agrivoltaic layouts")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, weather=True):
        sp.add_argument("--config", action="append", required=True,
                        help="JSON run configuration (repeat for compare)")
        sp.add_argument("--grid-res", type=float, help="ground grid resolution [m]")
        sp.add_argument("--tracking-mode", choices=["default", "paper-literal"])
        sp.add_argument("--dome-step", type=float, help="sky-dome step [deg]")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--lhi-mode", choices=["std", "variance"])
        sp.add_argument("--beta0", type=float, help="YANG2 intercept override")
        sp.add_argument("--diffuse-mode", choices=["per-cell", "aggregate"])
        sp.add_argument("--cache-dir", help="persist pose cache in this directory")
        sp.add_argument("--no-cache-persist", action="store_true",
                        help="keep the pose cache in memory only")
        if weather:
            sp.add_argument("--weather", help="weather CSV")
            sp.add_argument("--par-unit", choices=["W", "umol"], default="W")
            sp.add_argument("--cadence", choices=["hourly", "half-hourly"], default="hourly")
            sp.add_argument("--synthetic-year", type=int,
                            help="use a synthetic clear-sky year instead of a weather file")
            sp.add_argument("--year", type=int, help="calendar year to simulate")
            sp.add_argument("--min-coverage", type=float)

    sp = sub.add_parser("validate", help="check configuration files")
    sp.add_argument("--config", action="append", required=True)
    sp.add_argument("--grid-res", type=float)
    sp.add_argument("--tracking-mode", choices=["default", "paper-literal"])
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("simulate", help="annual PAR map and metrics")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="metrics table for several layouts")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("shading-series", help="hourly f_b and f_d for given dates")
    common(sp)
    sp.add_argument("--dates", nargs="*", help="YYYY-MM-DD (default: equinoxes and solstices)")
    sp.add_argument("--out", required=True, help="output CSV")
    sp.set_defaults(func=cmd_shading_series)

    sp = sub.add_parser("shading-table", help="dome shading table for one pose")
    common(sp, weather=False)
    sp.add_argument("--omega", type=float, default=0.0)
    sp.add_argument("--beta", type=float, default=0.0)
    sp.add_argument("--time", help="UTC timestamp; pose follows the tracker at that instant")
    sp.add_argument("--out", required=True, help="output .f8 file")
    sp.set_defaults(func=cmd_shading_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _Fail as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
