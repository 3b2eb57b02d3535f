"""Site and layout configuration, and the rest-pose panel geometry.

Coordinates are in a layout frame: z up, y along the rows (toward south when
the panel azimuth is 0), x across the rows (toward west). Row ``k`` has its
axis at ``x = k * row_spacing``; the crop reference rectangle spans
``[0, row_spacing] x [0, crop_area / row_spacing]`` and the panel strips are
centred on it along y.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

# Absolute tolerance used for the "tiles evenly" and "fits in the row" checks.
_LENGTH_TOL = 1e-9


class ConfigError(ValueError):
    """Raised when a site or layout violates one of its invariants."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class GeometryOverflowError(ConfigError):
    """Raised when the panels of a row do not fit in the declared row length."""


class SystemKind(str, enum.Enum):
    VERTICAL = "vertical"
    ONE_AXIS = "one_axis"
    TWO_AXIS = "two_axis"


class TrackingMode(str, enum.Enum):
    DEFAULT = "default"
    PAPER_LITERAL = "paper-literal"


@dataclass(frozen=True)
class Diagnostic:
    field: str
    value: Any
    rule: str

    def __str__(self) -> str:
        return f"{self.field}={self.value!r}: {self.rule}"


@dataclass(frozen=True)
class SiteConfig:
    """Geographic site; timestamps are always interpreted as UTC."""

    latitude: float
    longitude: float
    elevation: float = 0.0
    name: str = ""
    timestamp_convention: str = "UTC"


@dataclass(frozen=True)
class LayoutConfig:
    """Agrivoltaic layout parameters.

    ``panel_width`` (W) runs along the row and ``panel_length`` (L) across it.
    Panels are grouped in rotation units of ``panels_per_unit`` panels placed
    side by side across the row; units repeat along the row every ``pitch``
    metres (``None`` means contiguous, i.e. ``pitch = panel_width``).

    ``axis_height`` is the rotation-axis height for trackers and the height of
    the bottom edge for the vertical system.
    """

    system_kind: SystemKind
    panel_width: float = 1.0
    panel_length: float = 2.0
    n_panels: int = 40
    n_rows: int = 2
    row_spacing: float = 10.0
    row_length: float = 20.0
    crop_area: float = 200.0
    pitch: float | None = None
    panels_per_unit: int = 1
    axis_height: float = 0.0
    fixed_tilt: float = 90.0
    panel_azimuth: float = 0.0
    axis_tilt: float = 0.0
    tilt_min: float = -60.0
    tilt_max: float = 60.0
    grid_resolution: float = 0.25
    tracking_mode: TrackingMode = TrackingMode.DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "system_kind", SystemKind(self.system_kind))
        object.__setattr__(self, "tracking_mode", TrackingMode(self.tracking_mode))

    @property
    def panels_per_row(self) -> int:
        return self.n_panels // self.n_rows if self.n_rows else 0

    @property
    def units_per_row(self) -> int:
        return self.panels_per_row // self.panels_per_unit

    @property
    def unit_pitch(self) -> float:
        return self.panel_width if self.pitch is None else self.pitch

    @property
    def unit_span(self) -> float:
        """Extent of one rotation unit across the row axis."""
        return self.panels_per_unit * self.panel_length

    @property
    def strip_length(self) -> float:
        return self.units_per_row * self.unit_pitch

    @property
    def crop_length(self) -> float:
        return self.crop_area / self.row_spacing

    @property
    def l_ew(self) -> float:
        """Axis-to-axis distance across the rows over the unit span."""
        return self.row_spacing / self.unit_span

    @property
    def l_ns_ratio(self) -> float:
        """Unit pitch along the row over the panel width (L_NS / W)."""
        return self.unit_pitch / self.panel_width

    def with_overrides(self, **changes) -> "LayoutConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class PanelQuad:
    """One panel: corners P1..P4 (rows of ``corners``) and its rotation centre.

    At rest the corners follow P1 = (x0, y0, z0), P2 = P1 + W*y, P3 = P1 + L*x,
    P4 = P1 + L*x + W*y. ``cyclic`` gives them in perimeter order.
    """

    corners: np.ndarray
    center: np.ndarray
    row_index: int = 0
    unit_index: int = 0

    @property
    def cyclic(self) -> np.ndarray:
        return self.corners[[0, 2, 3, 1]]

    def coplanarity_error(self) -> float:
        p1, p2, p3, p4 = self.corners
        n = np.cross(p3 - p1, p2 - p1)
        n /= np.linalg.norm(n)
        return float(abs(np.dot(p4 - p1, n)))


@dataclass(frozen=True, eq=False)
class CropArea:
    """Axis-aligned crop reference rectangle and its cell grid.

    Cells are ordered x-fastest: index = iy * nx + ix.
    """

    origin: tuple[float, float]
    extent_x: float
    extent_y: float
    grid_resolution: float

    @property
    def nx(self) -> int:
        return int(round(self.extent_x / self.grid_resolution))

    @property
    def ny(self) -> int:
        return int(round(self.extent_y / self.grid_resolution))

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def area(self) -> float:
        return self.extent_x * self.extent_y

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, y0, x0 + self.extent_x, y0 + self.extent_y

    @property
    def x_centers(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.grid_resolution

    @property
    def y_centers(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.grid_resolution

    @property
    def cell_centers(self) -> np.ndarray:
        xx, yy = np.meshgrid(self.x_centers, self.y_centers)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def with_resolution(self, res: float) -> "CropArea":
        return CropArea(self.origin, self.extent_x, self.extent_y, res)


@dataclass(frozen=True, eq=False)
class Scene:
    layout: LayoutConfig
    panels: tuple[PanelQuad, ...]
    crop: CropArea

    @property
    def corners(self) -> np.ndarray:
        """Rest-pose corners, shape (n, 4, 3), P1..P4 order."""
        if not self.panels:
            return np.zeros((0, 4, 3))
        return np.stack([p.corners for p in self.panels])

    @property
    def centers(self) -> np.ndarray:
        if not self.panels:
            return np.zeros((0, 3))
        return np.stack([p.center for p in self.panels])


def _tiles(length: float, res: float) -> bool:
    n = length / res
    return abs(n - round(n)) <= _LENGTH_TOL * max(1.0, n)


def validate_config(layout: LayoutConfig, site: SiteConfig | None = None) -> list[Diagnostic]:
    """Check every invariant and return one diagnostic per violation."""
    diags: list[Diagnostic] = []

    def bad(name, rule):
        diags.append(Diagnostic(name, getattr(layout, name), rule))

    if site is not None:
        if not (-90.0 <= site.latitude <= 90.0):
            diags.append(Diagnostic("latitude", site.latitude, "latitude outside [-90, 90]"))
        if not (-180.0 <= site.longitude <= 180.0):
            diags.append(Diagnostic("longitude", site.longitude, "longitude outside [-180, 180]"))
        if not math.isfinite(site.elevation):
            diags.append(Diagnostic("elevation", site.elevation, "elevation must be finite"))

    for name in ("panel_width", "panel_length", "row_spacing", "row_length",
                 "crop_area", "grid_resolution"):
        v = getattr(layout, name)
        if not (math.isfinite(v) and v > 0):
            bad(name, f"{name} must be > 0")
    if layout.pitch is not None and not layout.pitch > 0:
        bad("pitch", "pitch must be > 0")
    if layout.n_panels < 0:
        bad("n_panels", "n_panels must be >= 0")
    if layout.n_rows < 1:
        bad("n_rows", "n_rows must be >= 1")
    if layout.panels_per_unit < 1:
        bad("panels_per_unit", "panels_per_unit must be >= 1")
    if diags:
        return diags

    if layout.n_panels % layout.n_rows:
        bad("n_panels", "n_panels not divisible by n_rows")
    elif layout.panels_per_row % layout.panels_per_unit:
        bad("panels_per_unit", "panels per row not divisible by panels_per_unit")
    if layout.tilt_min > layout.tilt_max:
        bad("tilt_min", "tilt_min exceeds tilt_max")
    for name in ("tilt_min", "tilt_max"):
        if abs(getattr(layout, name)) > 90.0:
            bad(name, f"{name} exceeds ±90 physical bound")
    if layout.axis_height < 0:
        bad("axis_height", "axis_height must be >= 0 (panels below ground)")
    if layout.axis_tilt != 0.0:
        bad("axis_tilt", "sloped axes are not modelled by the ground-shadow geometry; use 0")
    if layout.system_kind is SystemKind.VERTICAL and not (0.0 <= layout.fixed_tilt <= 90.0):
        bad("fixed_tilt", "fixed_tilt outside [0, 90]")
    if layout.pitch is not None and layout.pitch < layout.panel_width - _LENGTH_TOL:
        bad("pitch", "pitch smaller than panel_width (units overlap)")
    if layout.system_kind is not SystemKind.VERTICAL and layout.n_rows > 1 and layout.l_ew <= 1.0:
        bad("row_spacing", "row_spacing must exceed the unit span across the row (L_EW > 1)")
    if not _tiles(layout.row_spacing, layout.grid_resolution) or not _tiles(
        layout.crop_length, layout.grid_resolution
    ):
        bad("grid_resolution", "resolution does not tile area")
    if layout.crop_length > layout.row_length + _LENGTH_TOL:
        bad("crop_area", "crop area extends beyond the row length")
    if layout.n_panels and layout.strip_length > layout.row_length + _LENGTH_TOL:
        bad("row_length", "panels exceed row_length")
    return diags


def build_scene(layout: LayoutConfig) -> Scene:
    """Rest-pose panels and the crop grid for ``layout``."""
    diags = validate_config(layout)
    for d in diags:
        if d.field == "row_length":
            raise GeometryOverflowError(str(d), field=d.field)
    if diags:
        raise ConfigError("; ".join(str(d) for d in diags), field=diags[0].field)

    crop_len = layout.crop_length
    crop = CropArea((0.0, 0.0), layout.row_spacing, crop_len, layout.grid_resolution)

    W, L = layout.panel_width, layout.panel_length
    span = layout.unit_span
    if layout.system_kind is SystemKind.VERTICAL:
        # tilted 90° about the row axis; bottom edge lands on axis_height
        z_rest = layout.axis_height + 0.5 * span
    else:
        z_rest = layout.axis_height
    y_start = 0.5 * (crop_len - layout.strip_length)

    panels = []
    for r in range(layout.n_rows if layout.n_panels else 0):
        axis_x = r * layout.row_spacing
        for u in range(layout.units_per_row):
            yc = y_start + (u + 0.5) * layout.unit_pitch
            center = np.array([axis_x, yc, z_rest])
            for p in range(layout.panels_per_unit):
                x0 = axis_x - 0.5 * span + p * L
                y0 = yc - 0.5 * W
                corners = np.array([
                    [x0, y0, z_rest],
                    [x0, y0 + W, z_rest],
                    [x0 + L, y0, z_rest],
                    [x0 + L, y0 + W, z_rest],
                ])
                panels.append(PanelQuad(corners, center.copy(), r, u))
    return Scene(layout, tuple(panels), crop)


# -- presets -------------------------------------------------------------

STATIONS = {
    "lanna": SiteConfig(58.33, 13.1, 75.0, "Lanna, Sweden"),
    "estrees-mons": SiteConfig(49.87, 3.02, 85.0, "Estrees-Mons, France"),
    "klingenberg": SiteConfig(50.89, 13.52, 478.0, "Klingenberg, Germany"),
    "karrbo": SiteConfig(59.6099, 16.5448, 20.0, "Kärrbo Prästgård, Västerås, Sweden"),
}

_COMMON = dict(panel_width=1.0, panel_length=2.0, n_panels=40, n_rows=2,
               row_spacing=10.0, row_length=20.0, crop_area=200.0,
               panel_azimuth=0.0, grid_resolution=0.25)

BUILTIN_LAYOUTS = {
    "vertical": LayoutConfig(SystemKind.VERTICAL, axis_height=0.0, fixed_tilt=90.0, **_COMMON),
    "one_axis": LayoutConfig(SystemKind.ONE_AXIS, axis_height=3.0, tilt_min=-60.0,
                             tilt_max=60.0, **_COMMON),
    # 20 single-panel units per row at a 2 m pitch: the row is 40 m long and the
    # 200 m² crop rectangle sits centred on it.
    "two_axis": LayoutConfig(SystemKind.TWO_AXIS, axis_height=3.0, tilt_min=-60.0,
                             tilt_max=60.0, pitch=2.0,
                             **{**_COMMON, "row_length": 40.0}),
}


def open_field(layout: LayoutConfig) -> LayoutConfig:
    return replace(layout, n_panels=0)


# -- JSON ----------------------------------------------------------------

_LAYOUT_FIELDS = {f.name for f in fields(LayoutConfig)}
_SITE_FIELDS = {f.name for f in fields(SiteConfig)}


def layout_from_dict(data: dict) -> LayoutConfig:
    unknown = set(data) - _LAYOUT_FIELDS
    if unknown:
        raise ConfigError(f"unknown layout keys: {sorted(unknown)}", field=sorted(unknown)[0])
    if "system_kind" not in data:
        raise ConfigError("layout.system_kind is required", field="system_kind")
    try:
        return LayoutConfig(**data)
    except ValueError as exc:
        raise ConfigError(str(exc), field="system_kind") from exc


def site_from_dict(data: dict) -> SiteConfig:
    if "station" in data:
        key = data["station"].lower()
        if key not in STATIONS:
            raise ConfigError(f"unknown station {data['station']!r}", field="station")
        return STATIONS[key]
    unknown = set(data) - _SITE_FIELDS
    if unknown:
        raise ConfigError(f"unknown site keys: {sorted(unknown)}", field=sorted(unknown)[0])
    for key in ("latitude", "longitude"):
        if key not in data:
            raise ConfigError(f"site.{key} is required", field=key)
    return SiteConfig(**data)


def _jsonable(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def layout_to_dict(layout: LayoutConfig) -> dict:
    return {k: _jsonable(v) for k, v in asdict(layout).items()}


def site_to_dict(site: SiteConfig) -> dict:
    return asdict(site)


@dataclass(frozen=True)
class RunConfig:
    """Contents of one JSON configuration file."""

    site: SiteConfig
    layout: LayoutConfig
    options: dict = field(default_factory=dict)


def load_config(path: str | Path) -> RunConfig:
    """Read a ``{"site": ..., "layout": ..., "options": ...}`` JSON file.

    ``layout`` may also be a string naming one of the built-in layouts
    (``vertical``, ``one_axis``, ``two_axis``), optionally with overrides in
    ``layout_overrides``.
    """
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict) or "site" not in data or "layout" not in data:
        raise ConfigError(f"{path}: config needs 'site' and 'layout' objects")
    site = site_from_dict(data["site"])
    lay = data["layout"]
    if isinstance(lay, str):
        if lay not in BUILTIN_LAYOUTS:
            raise ConfigError(f"unknown built-in layout {lay!r}", field="layout")
        layout = replace(BUILTIN_LAYOUTS[lay], **data.get("layout_overrides", {}))
    else:
        layout = layout_from_dict(lay)
    return RunConfig(site, layout, dict(data.get("options", {})))
