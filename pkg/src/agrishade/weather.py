"""Weather CSV ingest (ICOS-style hourly or half-hourly files) and synthetic years.

Timestamps are UTC labels of the interval start.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .par_pipeline import UMOL_PER_W, WeatherRecord
from .solar import haurwitz_ghi, sun_position_arrays, to_datetime64

HOUR = np.timedelta64(3600, "s")
HALF_HOUR = np.timedelta64(1800, "s")

DEFAULT_COLUMNS = {
    "timestamp": "timestamp",
    "ghi": "ghi",
    "par": "par",
    "k_d_sat": "k_d_sat",
    "g_cs": "g_cs",
    "k_d_measured": "k_d_measured",
}
_REQUIRED = ("timestamp", "ghi", "par")
_OPTIONAL = ("k_d_sat", "g_cs", "k_d_measured")


class IngestError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class MalformedRowError(IngestError):
    pass


class UnitViolationError(IngestError):
    pass


class CadenceViolationError(IngestError):
    pass


@dataclass(frozen=True)
class IngestSpec:
    """How to read one weather file.

    ``columns`` maps logical names (timestamp, ghi, par, k_d_sat, g_cs,
    k_d_measured) to CSV headers; missing optional columns are allowed.
    ``par_unit`` is ``"W"`` or ``"umol"``; ``cadence`` is ``"hourly"`` or
    ``"half-hourly"`` (averaged to hourly on ingest).
    """

    path: str | Path
    columns: dict = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    timestamp_format: str | None = None
    par_unit: str = "W"
    cadence: str = "hourly"

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "IngestSpec":
        data = dict(data)
        path = Path(data.pop("path"))
        if base is not None and not path.is_absolute():
            path = base / path
        cols = {**DEFAULT_COLUMNS, **data.pop("columns", {})}
        return cls(path, cols, **data)


@dataclass(frozen=True)
class GapReport:
    first: np.datetime64 | None
    last: np.datetime64 | None
    expected_hours: int
    present_hours: int
    missing: tuple = ()

    @property
    def n_missing(self) -> int:
        return self.expected_hours - self.present_hours

    def as_dict(self) -> dict:
        return {
            "first": None if self.first is None else str(self.first),
            "last": None if self.last is None else str(self.last),
            "expected_hours": self.expected_hours,
            "present_hours": self.present_hours,
            "missing_hours": self.n_missing,
        }


@dataclass(frozen=True, eq=False)
class WeatherSeries:
    """Hourly records as arrays; NaN marks an absent optional value."""

    times: np.ndarray
    ghi: np.ndarray
    par: np.ndarray
    k_d_sat: np.ndarray
    g_cs: np.ndarray
    k_d_measured: np.ndarray
    gaps: GapReport
    provenance: dict = field(default_factory=dict)
    checksum: str = ""

    def __len__(self) -> int:
        return len(self.times)

    @property
    def records(self) -> list[WeatherRecord]:
        def opt(v):
            return None if math.isnan(v) else float(v)

        return [WeatherRecord(t, float(g), float(p), opt(k), opt(c), opt(m))
                for t, g, p, k, c, m in zip(self.times, self.ghi, self.par, self.k_d_sat,
                                             self.g_cs, self.k_d_measured)]

    @property
    def years(self) -> list[int]:
        return sorted(set((self.times.astype("datetime64[Y]").astype(int) + 1970).tolist()))

    def subset(self, mask) -> "WeatherSeries":
        mask = np.asarray(mask)
        return WeatherSeries(self.times[mask], self.ghi[mask], self.par[mask],
                             self.k_d_sat[mask], self.g_cs[mask], self.k_d_measured[mask],
                             gap_report(self.times[mask]), self.provenance, self.checksum)


def gap_report(times: np.ndarray) -> GapReport:
    if len(times) == 0:
        return GapReport(None, None, 0, 0)
    first, last = times[0], times[-1]
    expected = int((last - first) // HOUR) + 1
    full = first + np.arange(expected) * HOUR
    missing = np.setdiff1d(full, times)
    return GapReport(first, last, expected, len(times), tuple(missing.tolist()))


def _parse_time(text: str, fmt: str | None) -> np.datetime64:
    if fmt:
        return np.datetime64(datetime.strptime(text, fmt), "s")
    t = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    return to_datetime64(t)


def _float(text: str, name: str, line: int) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise MalformedRowError(f"column {name!r}: cannot parse {text!r}", line) from None
    if not math.isfinite(v):
        raise MalformedRowError(f"column {name!r}: non-finite value", line)
    return v


def _checksum(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ingest_weather(spec: IngestSpec) -> WeatherSeries:
    """Read, validate and unit-normalise a weather CSV."""
    path = Path(spec.path)
    if spec.par_unit not in ("W", "umol"):
        raise IngestError(f"par_unit must be 'W' or 'umol', got {spec.par_unit!r}")
    if spec.cadence not in ("hourly", "half-hourly"):
        raise IngestError(f"cadence must be 'hourly' or 'half-hourly', got {spec.cadence!r}")
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRowError("empty file", 1) from None
        index = {}
        for name in _REQUIRED + _OPTIONAL:
            col = spec.columns.get(name)
            if col is not None and col in header:
                index[name] = header.index(col)
            elif name in _REQUIRED:
                raise MalformedRowError(f"missing mandatory column {col!r} ({name})", 1)
        rows = {k: [] for k in index}
        lines = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRowError(f"expected {len(header)} fields, found {len(row)}", line)
            try:
                ts = _parse_time(row[index["timestamp"]], spec.timestamp_format)
            except ValueError:
                raise MalformedRowError(
                    f"bad timestamp {row[index['timestamp']]!r}", line) from None
            rows["timestamp"].append(ts)
            for name in index:
                if name == "timestamp":
                    continue
                cell = row[index[name]].strip()
                if name in _OPTIONAL and cell in ("", "NA", "NaN", "nan"):
                    rows[name].append(math.nan)
                    continue
                v = _float(cell, name, line)
                if name in ("ghi", "par", "g_cs") and v < 0:
                    raise UnitViolationError(f"negative {name} ({v})", line)
                if name in ("k_d_sat", "k_d_measured") and not 0.0 <= v <= 1.0:
                    raise UnitViolationError(f"{name} outside [0, 1] ({v})", line)
                rows[name].append(v)
            lines.append(line)

    times = np.array(rows["timestamp"], dtype="datetime64[s]")
    n = len(times)
    cols = {name: np.array(rows[name], dtype=float) if name in rows else np.full(n, np.nan)
            for name in ("ghi", "par") + _OPTIONAL}
    if spec.par_unit == "umol":
        cols["par"] = cols["par"] / UMOL_PER_W
    step = HALF_HOUR if spec.cadence == "half-hourly" else HOUR
    if n > 1:
        d = np.diff(times)
        bad = np.nonzero((d <= np.timedelta64(0, "s")) | (d % step != np.timedelta64(0, "s")))[0]
        if len(bad):
            i = int(bad[0]) + 1
            raise CadenceViolationError(
                f"timestamp {times[i]} breaks the {spec.cadence} cadence after {times[i - 1]}",
                lines[i])
    if n and (times[0] - times[0].astype("datetime64[D]")) % step != np.timedelta64(0, "s"):
        raise CadenceViolationError(f"timestamp {times[0]} is not on the {spec.cadence} grid",
                                    lines[0])
    if spec.cadence == "half-hourly":
        times, cols = _to_hourly(times, cols)

    provenance = {name: spec.columns.get(name) if name in index else None
                  for name in _REQUIRED + _OPTIONAL}
    provenance["par_unit"] = spec.par_unit
    provenance["cadence"] = spec.cadence
    return WeatherSeries(times, cols["ghi"], cols["par"], cols["k_d_sat"], cols["g_cs"],
                         cols["k_d_measured"], gap_report(times), provenance, _checksum(path))


def _to_hourly(times, cols):
    hours = times.astype("datetime64[h]").astype("datetime64[s]")
    uniq, inv = np.unique(hours, return_inverse=True)
    out = {}
    for name, v in cols.items():
        sums = np.zeros(len(uniq))
        counts = np.zeros(len(uniq))
        ok = ~np.isnan(v)
        np.add.at(sums, inv[ok], v[ok])
        np.add.at(counts, inv[ok], 1)
        with np.errstate(invalid="ignore"):
            out[name] = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return uniq, out


def write_weather_csv(series: WeatherSeries, path: str | Path, par_unit: str = "W") -> None:
    """Write a series in the default column layout (round-trips through ingest)."""
    scale = UMOL_PER_W if par_unit == "umol" else 1.0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "ghi", "par", "k_d_sat", "g_cs", "k_d_measured"])
        for i in range(len(series)):
            vals = [series.ghi[i], series.par[i] * scale, series.k_d_sat[i], series.g_cs[i],
                    series.k_d_measured[i]]
            w.writerow([str(series.times[i].astype("datetime64[s]")) + "Z"]
                       + ["" if math.isnan(v) else repr(float(v)) for v in vals])


def synthetic_clear_sky_year(latitude: float, longitude: float, year: int = 2018,
                             k_d_sat: float = 0.2, par_ratio: float = 0.5,
                             offset_minutes: float = 30.0) -> WeatherSeries:
    """Cloudless hourly year: Haurwitz GHI at each interval midpoint, PAR = ratio * GHI."""
    start = np.datetime64(f"{year}-01-01T00:00:00", "s")
    end = np.datetime64(f"{year + 1}-01-01T00:00:00", "s")
    times = np.arange(start, end, HOUR)
    mid = times + np.timedelta64(int(round(offset_minutes * 60)), "s")
    el, _ = sun_position_arrays(mid, latitude, longitude)
    ghi = haurwitz_ghi(el)
    n = len(times)
    return WeatherSeries(times, ghi, par_ratio * ghi, np.full(n, float(k_d_sat)), ghi.copy(),
                         np.full(n, np.nan), gap_report(times),
                         {"source": "synthetic clear-sky (Haurwitz)", "par_ratio": par_ratio,
                          "k_d_sat": k_d_sat},
                         hashlib.sha256(f"synthetic|{latitude}|{longitude}|{year}|{k_d_sat}|"
                                        f"{par_ratio}|{offset_minutes}".encode()).hexdigest())


__all__ = [
    "IngestSpec", "IngestError", "MalformedRowError", "UnitViolationError",
    "CadenceViolationError", "GapReport", "WeatherSeries", "ingest_weather",
    "write_weather_csv", "synthetic_clear_sky_year", "gap_report",
]
