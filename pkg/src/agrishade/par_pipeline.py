"""Irradiance decomposition (YANG2 + Spitters), shaded PAR composition and annual metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

DARK_GHI = 1.0          # W/m², records at or below are treated as dark
UMOL_PER_W = 4.57       # µmol m⁻² s⁻¹ per W/m² of PAR
MIN_COVERAGE = 0.95


class MissingSatelliteFractionError(ValueError):
    """Neither a satellite nor a measured diffuse fraction is available."""


class InsufficientCoverageError(ValueError):
    def __init__(self, message: str, stats: dict | None = None):
        super().__init__(message)
        self.stats = stats or {}


class DegenerateMapError(ValueError):
    """Map mean is zero (or fewer than two cells)."""


@dataclass(frozen=True)
class Yang2Coefficients:
    c: float = 0.0888
    b0: float = -2.6258
    b1: float = 7.2506
    b2: float = -0.0458
    b3: float = 0.0099
    b4: float = -0.0839
    b5: float = 0.5002
    b6: float = -2.1731

    def with_beta0(self, b0: float) -> "Yang2Coefficients":
        return replace(self, b0=b0)


YANG2 = Yang2Coefficients()
# value as typeset in the source; accepted via configuration
PRINTED_BETA0 = -26258.0


@dataclass(frozen=True)
class WeatherRecord:
    timestamp: np.datetime64
    ghi: float
    par: float
    k_d_sat: float | None = None
    g_cs: float | None = None
    k_d_measured: float | None = None

    def __post_init__(self):
        if self.ghi < 0 or self.par < 0:
            raise ValueError("irradiance values must be >= 0")
        for name in ("k_d_sat", "k_d_measured"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} outside [0, 1]")


@dataclass(frozen=True)
class DecompositionResult:
    k_t: float
    dk_tc: float
    k_de: float
    k_d: float
    k_d_par: float
    par_beam: float
    par_diffuse: float


def _clip01(x):
    return np.clip(x, 0.0, 1.0)


def yang2_arrays(ghi, e_ext, g_cs, ast, zenith, k_d_sat, coeffs: Yang2Coefficients = YANG2):
    """Vectorised YANG2 diffuse fraction (clamped to [0, 1]).

    ``zenith`` in degrees and ``ast`` in hours. Returns (k_d, k_t, dk_tc, k_de).
    """
    ghi = np.asarray(ghi, dtype=float)
    e_ext = np.asarray(e_ext, dtype=float)
    g_cs = np.asarray(g_cs, dtype=float)
    k_t = ghi / e_ext
    dk_tc = g_cs / e_ext - k_t
    k_de = np.maximum(0.0, 1.0 - g_cs / ghi)
    expo = (coeffs.b0 + coeffs.b1 * k_t + coeffs.b2 * np.asarray(ast, dtype=float)
            + coeffs.b3 * np.asarray(zenith, dtype=float) + coeffs.b4 * dk_tc
            + coeffs.b6 * np.asarray(k_d_sat, dtype=float))
    with np.errstate(over="ignore"):
        k_d = coeffs.c + (1.0 - coeffs.c) / (1.0 + np.exp(expo)) + coeffs.b5 * k_de
    return _clip01(k_d), k_t, dk_tc, k_de


def yang2_diffuse_fraction(record: WeatherRecord, scalars, zenith: float, ast: float | None = None,
                           coeffs: Yang2Coefficients = YANG2) -> float:
    """Diffuse fraction of GHI for one record.

    ``scalars`` carries E_ext, the clear-sky GHI and the apparent solar time;
    the record's own G_cs column wins over ``scalars.g_cs`` when present.
    """
    if record.k_d_sat is None:
        raise MissingSatelliteFractionError("record has no satellite diffuse fraction")
    if record.ghi <= 0:
        raise ValueError("GHI must be positive")
    if scalars.e_ext <= 0:
        raise ValueError("extraterrestrial irradiance must be positive")
    g_cs = record.g_cs if record.g_cs is not None else scalars.g_cs
    ast = scalars.ast if ast is None else ast
    k_d, *_ = yang2_arrays(record.ghi, scalars.e_ext, g_cs, ast, zenith, record.k_d_sat, coeffs)
    return float(k_d)


def spitters_par_fraction(k_d, elevation):
    """Diffuse share of PAR from the broadband diffuse fraction; ``elevation`` in degrees."""
    k_d = np.asarray(k_d, dtype=float)
    b = np.radians(np.asarray(elevation, dtype=float))
    q = 1.0 - k_d * k_d
    out = (1.0 + 0.3 * q) * k_d / (1.0 + q * np.sin(b) ** 2 * np.cos(b) ** 3)
    out = _clip01(out)
    return float(out) if out.ndim == 0 else out


def decompose(record: WeatherRecord, scalars, elevation: float,
              coeffs: Yang2Coefficients = YANG2) -> DecompositionResult:
    """Split the record's PAR into beam and diffuse parts."""
    g_cs = record.g_cs if record.g_cs is not None else scalars.g_cs
    if record.k_d_measured is not None:
        k_d = record.k_d_measured
        k_t = record.ghi / scalars.e_ext if scalars.e_ext > 0 else math.nan
        dk_tc = g_cs / scalars.e_ext - k_t if scalars.e_ext > 0 else math.nan
        k_de = max(0.0, 1.0 - g_cs / record.ghi) if record.ghi > 0 else 0.0
    else:
        k_d_arr, k_t, dk_tc, k_de = yang2_arrays(
            record.ghi, scalars.e_ext, g_cs, scalars.ast, 90.0 - elevation,
            _require_sat(record), coeffs)
        k_d, k_t, dk_tc, k_de = float(k_d_arr), float(k_t), float(dk_tc), float(k_de)
    k_d_par = spitters_par_fraction(k_d, elevation)
    diffuse = record.par * k_d_par
    return DecompositionResult(k_t, dk_tc, k_de, k_d, k_d_par, record.par - diffuse, diffuse)


def _require_sat(record):
    if record.k_d_sat is None:
        raise MissingSatelliteFractionError(
            "record has neither a satellite nor a measured diffuse fraction")
    return record.k_d_sat


def compose_cell_par(par_beam, par_diffuse, f_b, f_d):
    return par_beam * (1.0 - f_b) + par_diffuse * (1.0 - f_d)


# -- annual maps -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PARMap:
    """Annual PAR per cell [kWh/m²/year]; arrays shaped (ny, nx)."""

    shaded: np.ndarray
    unshaded: np.ndarray
    x: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(self.shaded.mean())


@dataclass(frozen=True)
class Metrics:
    lhi: float
    par_reduction: float
    mean_par: float
    mean_unshaded: float


class YearAccumulator:
    """Sums shaded and unshaded PAR [Wh/m²] over timesteps."""

    def __init__(self, shape: tuple[int, int]):
        self.shaded = np.zeros(shape)
        self.unshaded = np.zeros(shape)
        self.steps = 0

    def add(self, shaded_w, unshaded_w, dt_hours: float = 1.0) -> None:
        self.shaded += np.asarray(shaded_w, dtype=float) * dt_hours
        self.unshaded += np.asarray(unshaded_w, dtype=float) * dt_hours
        self.steps += 1

    def merge(self, other: "YearAccumulator") -> None:
        self.shaded += other.shaded
        self.unshaded += other.unshaded
        self.steps += other.steps

    def to_map(self, x, y, meta: dict | None = None) -> PARMap:
        return PARMap(self.shaded / 1000.0, self.unshaded / 1000.0, np.asarray(x),
                      np.asarray(y), dict(meta or {}))


def check_coverage(daylight_expected: int, daylight_present: int,
                   minimum: float = MIN_COVERAGE) -> float:
    """Fraction of daylight hours present; raises below ``minimum``."""
    if daylight_expected <= 0:
        return 1.0
    frac = daylight_present / daylight_expected
    if frac < minimum:
        stats = {"daylight_expected": daylight_expected, "daylight_present": daylight_present,
                 "coverage": frac}
        raise InsufficientCoverageError(
            f"weather covers {frac:.1%} of daylight hours (< {minimum:.0%}); "
            f"{daylight_expected - daylight_present} daylight hours missing", stats)
    return frac


def accumulate_year(steps, dt_hours: float = 1.0, shape=None, x=None, y=None,
                    meta: dict | None = None) -> PARMap:
    """Integrate ``(shaded_w, unshaded_w)`` cell arrays over timesteps into a PARMap."""
    acc = None
    for shaded_w, unshaded_w in steps:
        shaded_w = np.atleast_2d(np.asarray(shaded_w, dtype=float))
        if acc is None:
            acc = YearAccumulator(shaded_w.shape)
        acc.add(shaded_w, np.broadcast_to(unshaded_w, shaded_w.shape), dt_hours)
    if acc is None:
        if shape is None:
            raise ValueError("no timesteps and no map shape given")
        acc = YearAccumulator(shape)
    ny, nx = acc.shaded.shape
    x = np.arange(nx, dtype=float) if x is None else x
    y = np.arange(ny, dtype=float) if y is None else y
    return acc.to_map(x, y, meta)


def light_homogeneity_index(values, mode: str = "std") -> float:
    """100 * (1 - dispersion / mean) of the shaded map.

    ``mode="std"`` uses the sample standard deviation, ``"variance"`` the
    sample variance.
    """
    arr = np.asarray(getattr(values, "shaded", values), dtype=float).ravel()
    if arr.size < 2:
        raise DegenerateMapError("LHI needs at least two cells")
    mean = arr.mean()
    if not mean > 0:
        raise DegenerateMapError("map mean is zero")
    if mode == "std":
        disp = arr.std(ddof=1)
    elif mode == "variance":
        disp = arr.var(ddof=1)
    else:
        raise ValueError(f"unknown LHI mode {mode!r}")
    return float(100.0 * (1.0 - disp / mean))


def par_reduction(pmap: PARMap) -> float:
    tot = float(pmap.unshaded.sum())
    if not tot > 0:
        raise DegenerateMapError("unshaded PAR total is zero")
    return float(100.0 * (1.0 - pmap.shaded.sum() / tot))


def compute_metrics(pmap: PARMap, lhi_mode: str = "std") -> Metrics:
    return Metrics(light_homogeneity_index(pmap, lhi_mode), par_reduction(pmap),
                   float(pmap.shaded.mean()), float(pmap.unshaded.mean()))
