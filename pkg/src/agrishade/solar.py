"""Solar position, solar vector and the radiation scalars used by the decomposition.

The ephemeris is the NOAA implementation of Meeus' low-order solar theory
(Astronomical Algorithms, ch. 25), accurate to about 0.01° for 1800-2100,
plus the NOAA refraction correction.

Azimuth convention: 0 = south, positive toward west, range (-180, 180].
Solar vector frame: x west, y south, z zenith.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

SOLAR_CONSTANT = 1367.0
MIN_YEAR, MAX_YEAR = 1950, 2100

_UNIX_EPOCH_JD = 2440587.5


class TimestampRangeError(ValueError):
    """Raised for timestamps outside the supported ephemeris range."""


@dataclass(frozen=True)
class SolarPosition:
    elevation: float
    azimuth: float

    @property
    def zenith(self) -> float:
        return 90.0 - self.elevation


@dataclass(frozen=True)
class SolarVector:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class RadiationScalars:
    e_ext: float
    g_cs: float
    ast: float


def to_datetime64(ts) -> np.ndarray:
    """UTC datetime64[s] array from datetimes, strings or datetime64 values.

    Naive datetimes are taken as UTC.
    """
    if isinstance(ts, datetime):
        if ts.tzinfo is not None:
            ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
        return np.datetime64(ts, "s")
    if isinstance(ts, (list, tuple)):
        return np.array([to_datetime64(t) for t in ts], dtype="datetime64[s]")
    return np.asarray(ts, dtype="datetime64[s]")


def _check_range(t: np.ndarray) -> None:
    years = t.astype("datetime64[Y]").astype(np.int64) + 1970
    if np.any(years < MIN_YEAR) or np.any(years > MAX_YEAR):
        raise TimestampRangeError(f"timestamps must fall within {MIN_YEAR}-{MAX_YEAR}")


def julian_day(t) -> np.ndarray:
    t = to_datetime64(t)
    seconds = t.astype("datetime64[s]").astype(np.int64)
    return seconds / 86400.0 + _UNIX_EPOCH_JD


def day_of_year(t) -> np.ndarray:
    t = to_datetime64(t)
    return (t.astype("datetime64[D]") - t.astype("datetime64[Y]")).astype(np.int64) + 1


def _utc_hours(t: np.ndarray) -> np.ndarray:
    return (t - t.astype("datetime64[D]")).astype("timedelta64[s]").astype(np.int64) / 3600.0


def _sun_terms(jd):
    """Declination [rad] and equation of time [min] for Julian days ``jd``."""
    jc = (jd - 2451545.0) / 36525.0
    l0 = np.mod(280.46646 + jc * (36000.76983 + jc * 0.0003032), 360.0)
    m = 357.52911 + jc * (35999.05029 - 0.0001537 * jc)
    e = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc)
    mr = np.radians(m)
    c = (np.sin(mr) * (1.914602 - jc * (0.004817 + 0.000014 * jc))
         + np.sin(2 * mr) * (0.019993 - 0.000101 * jc)
         + np.sin(3 * mr) * 0.000289)
    omega = np.radians(125.04 - 1934.136 * jc)
    app_long = np.radians(l0 + c - 0.00569 - 0.00478 * np.sin(omega))
    eps0 = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0
    eps = np.radians(eps0 + 0.00256 * np.cos(omega))
    decl = np.arcsin(np.sin(eps) * np.sin(app_long))
    y = np.tan(eps / 2.0) ** 2
    l0r = np.radians(l0)
    eot = 4.0 * np.degrees(
        y * np.sin(2 * l0r)
        - 2 * e * np.sin(mr)
        + 4 * e * y * np.sin(mr) * np.cos(2 * l0r)
        - 0.5 * y * y * np.sin(4 * l0r)
        - 1.25 * e * e * np.sin(2 * mr)
    )
    return decl, eot


def refraction(elevation) -> np.ndarray:
    """NOAA atmospheric refraction correction [deg] for true elevation [deg]."""
    e = np.asarray(elevation, dtype=float)
    te = np.tan(np.radians(np.clip(e, -89.9, 89.9)))
    with np.errstate(divide="ignore", invalid="ignore"):
        arcsec = np.select(
            [e > 85.0, e > 5.0, e > -0.575],
            [0.0,
             58.1 / te - 0.07 / te**3 + 0.000086 / te**5,
             1735.0 + e * (-518.2 + e * (103.4 + e * (-12.79 + e * 0.711)))],
            default=-20.772 / te,
        )
    return arcsec / 3600.0


def equation_of_time(t) -> np.ndarray:
    """Equation of time in minutes."""
    t = to_datetime64(t)
    _check_range(t)
    return _sun_terms(julian_day(t))[1]


def sun_position_arrays(times, latitude: float, longitude: float,
                        refract: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (elevation, azimuth) in degrees for UTC ``times``."""
    t = np.atleast_1d(to_datetime64(times))
    _check_range(t)
    decl, eot = _sun_terms(julian_day(t))
    tst_min = np.mod(_utc_hours(t) * 60.0 + eot + 4.0 * longitude, 1440.0)
    ha = np.radians(tst_min / 4.0 - 180.0)
    phi = math.radians(latitude)
    sin_el = math.sin(phi) * np.sin(decl) + math.cos(phi) * np.cos(decl) * np.cos(ha)
    el = np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))
    az = np.degrees(np.arctan2(np.sin(ha),
                               np.cos(ha) * math.sin(phi) - np.tan(decl) * math.cos(phi)))
    az = np.where(az <= -180.0, az + 360.0, az)
    if refract:
        el = el + refraction(el)
    return el, az


def solar_position(timestamp, site, refract: bool = True) -> SolarPosition:
    el, az = sun_position_arrays(timestamp, site.latitude, site.longitude, refract)
    return SolarPosition(float(el[0]), float(az[0]))


def solar_vector_arrays(elevation, azimuth) -> np.ndarray:
    """Unit solar vectors, shape (..., 3)."""
    a = np.radians(np.asarray(elevation, dtype=float))
    g = np.radians(np.asarray(azimuth, dtype=float))
    return np.stack([np.cos(a) * np.sin(g), np.cos(a) * np.cos(g), np.sin(a)], axis=-1)


def solar_vector(pos: SolarPosition) -> SolarVector:
    x, y, z = solar_vector_arrays(pos.elevation, pos.azimuth)
    return SolarVector(float(x), float(y), float(z))


def eccentricity_correction(doy) -> np.ndarray:
    return 1.0 + 0.033 * np.cos(2.0 * np.pi * np.asarray(doy) / 365.0)


def extraterrestrial_horizontal_arrays(times, elevation) -> np.ndarray:
    sin_el = np.sin(np.radians(np.asarray(elevation, dtype=float)))
    return SOLAR_CONSTANT * eccentricity_correction(day_of_year(times)) * np.maximum(0.0, sin_el)


def extraterrestrial_horizontal(timestamp, pos: SolarPosition) -> float:
    return float(extraterrestrial_horizontal_arrays(timestamp, pos.elevation).ravel()[0])


def haurwitz_ghi(elevation) -> np.ndarray:
    """Fallback clear-sky GHI [W/m²] from the Haurwitz model (cloudless sky)."""
    cz = np.sin(np.radians(np.asarray(elevation, dtype=float)))
    out = np.zeros_like(cz)
    up = cz > 0
    out[up] = 1098.0 * cz[up] * np.exp(-0.059 / cz[up])
    return out


def clearsky_ghi(timestamp, pos: SolarPosition, site=None, supplied: float | None = None) -> float:
    """Clear-sky GHI: the supplied column value when given, else the Haurwitz fallback."""
    if pos.elevation <= 0:
        return 0.0
    if supplied is not None and math.isfinite(supplied):
        return max(0.0, float(supplied))
    return float(haurwitz_ghi(np.array([pos.elevation]))[0])


def apparent_solar_time_arrays(times, longitude: float) -> np.ndarray:
    t = np.atleast_1d(to_datetime64(times))
    _check_range(t)
    eot = _sun_terms(julian_day(t))[1]
    return np.mod(_utc_hours(t) + longitude / 15.0 + eot / 60.0, 24.0)


def apparent_solar_time(timestamp, site) -> float:
    return float(apparent_solar_time_arrays(timestamp, site.longitude)[0])


def radiation_scalars(timestamp, pos: SolarPosition, site, g_cs: float | None = None) -> RadiationScalars:
    return RadiationScalars(
        extraterrestrial_horizontal(timestamp, pos),
        clearsky_ghi(timestamp, pos, site, g_cs),
        apparent_solar_time(timestamp, site),
    )
