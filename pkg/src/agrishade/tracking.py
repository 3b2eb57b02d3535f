"""Tracker orientation: ideal tracking, backtracking and tilt limits.

Angles are in degrees. ``omega`` is the rotation about the N-S (y) primary
axis, positive toward west; ``beta`` is the rotation about the secondary
(x) axis carried by the primary, positive toward south.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import LayoutConfig, SystemKind, TrackingMode


class SunBelowHorizonError(ValueError):
    """The sun is at or below the tracker's horizon plane."""


@dataclass(frozen=True)
class AxisGeometry:
    l_ew: float
    l_ns: float
    w: float
    axis_azimuth: float = 0.0
    axis_tilt: float = 0.0

    @classmethod
    def from_layout(cls, layout: LayoutConfig) -> "AxisGeometry":
        return cls(layout.l_ew, layout.unit_pitch, layout.panel_width,
                   layout.panel_azimuth, layout.axis_tilt)


@dataclass(frozen=True)
class TrackerAngles:
    omega_it: float = 0.0
    omega_itc: float = 0.0
    beta_it: float = 0.0
    beta_itc: float = 0.0
    sf: float = 0.0
    night: bool = False
    backtracking: bool = False

    @property
    def pose(self) -> tuple[float, float]:
        """(primary, secondary) rotation actually applied to the panels."""
        return self.omega_itc, self.beta_itc


def axis_frame(s, axis_azimuth: float, axis_tilt: float = 0.0) -> np.ndarray:
    """Express solar vector(s) ``s`` (..., 3) in the tracker axis frame."""
    s = np.asarray(s, dtype=float)
    x, y, z = s[..., 0], s[..., 1], s[..., 2]
    ca, sa = math.cos(math.radians(axis_azimuth)), math.sin(math.radians(axis_azimuth))
    cb, sb = math.cos(math.radians(axis_tilt)), math.sin(math.radians(axis_tilt))
    return np.stack([
        x * ca - y * sa,
        x * cb * sa + y * cb * ca - z * sb,
        x * sb * sa + y * sb * ca + z * cb,
    ], axis=-1)


def ideal_tilt(s_axis) -> float:
    x, _, z = s_axis
    if z <= 0:
        raise SunBelowHorizonError("sun below the tracker horizon")
    return math.degrees(math.atan2(x, z))


def shaded_fraction(omega_it: float, l_ew: float) -> float:
    if math.isinf(l_ew):
        return 0.0
    shadow = 1.0 / math.cos(math.radians(omega_it))
    return max(0.0, 1.0 - l_ew / shadow)


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, v))


def backtrack_tilt(omega_it: float, l_ew: float, tilt_min: float = -90.0,
                   tilt_max: float = 90.0) -> float:
    """Corrected primary tilt; correction applies only while rows shade each other."""
    arg = l_ew * math.cos(math.radians(omega_it))
    if arg >= 1.0:
        out = omega_it
    else:
        omega_c = math.degrees(math.acos(arg))
        out = omega_it - math.copysign(omega_c, omega_it)
    return _clamp(out, tilt_min, tilt_max)


def ideal_second_axis(s_axis, mode: TrackingMode | str = TrackingMode.DEFAULT) -> float:
    x, y, z = s_axis
    if z <= 0:
        raise SunBelowHorizonError("sun below the tracker horizon")
    if TrackingMode(mode) is TrackingMode.PAPER_LITERAL:
        r = math.hypot(x, y)
        return 0.0 if r == 0 else math.degrees(math.atan(y / r))
    return math.degrees(math.atan2(y, math.hypot(x, z)))


def backtrack_second_axis(beta_it: float, l_ns_ratio: float, tilt_min: float = -90.0,
                          tilt_max: float = 90.0,
                          mode: TrackingMode | str = TrackingMode.DEFAULT) -> float:
    """Corrected secondary tilt.

    Default mode subtracts the correction angle, mirroring the primary axis
    (continuous at the activation boundary). Paper-literal mode returns
    ``sign(beta) * arccos(ratio * cos(beta))`` directly.
    """
    arg = l_ns_ratio * math.cos(math.radians(beta_it))
    if arg >= 1.0:
        out = beta_it
    else:
        c = math.degrees(math.acos(arg))
        if TrackingMode(mode) is TrackingMode.PAPER_LITERAL:
            out = math.copysign(c, beta_it)
        else:
            out = beta_it - math.copysign(c, beta_it)
    return _clamp(out, tilt_min, tilt_max)


def pose_for(layout: LayoutConfig, s_layout) -> TrackerAngles:
    """Tracker angles for solar vector ``s_layout`` given in the layout frame.

    The layout frame already accounts for the panel azimuth; ``axis_tilt``
    is applied here on top of it.
    """
    kind = layout.system_kind
    if kind is SystemKind.VERTICAL:
        return TrackerAngles(layout.fixed_tilt, layout.fixed_tilt, 0.0, 0.0, 0.0,
                             night=bool(s_layout[2] <= 0))
    s_ax = axis_frame(s_layout, 0.0, layout.axis_tilt)
    if s_ax[2] <= 0:
        return TrackerAngles(night=True)
    w_it = ideal_tilt(s_ax)
    l_ew = layout.l_ew if layout.n_rows > 1 else math.inf
    sf = shaded_fraction(w_it, l_ew)
    w_itc = backtrack_tilt(w_it, l_ew, layout.tilt_min, layout.tilt_max)
    if kind is SystemKind.ONE_AXIS:
        return TrackerAngles(w_it, w_itc, 0.0, 0.0, sf, backtracking=sf > 0)
    b_it = ideal_second_axis(s_ax, layout.tracking_mode)
    ratio = layout.l_ns_ratio if layout.units_per_row > 1 else math.inf
    b_itc = backtrack_second_axis(b_it, ratio, layout.tilt_min, layout.tilt_max,
                                  layout.tracking_mode)
    return TrackerAngles(w_it, w_itc, b_it, b_itc, sf, backtracking=sf > 0)
