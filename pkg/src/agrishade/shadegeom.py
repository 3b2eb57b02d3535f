"""Panel posing, ground-shadow projection and beam shading on the crop area.

All coordinates are in the layout frame (see :mod:`agrishade.scene`). Panel
arrays are ``(n, 4, 3)`` in P1..P4 corner order unless stated otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .scene import CropArea, PanelQuad, Scene

TOL = 1e-9
_CYCLIC = [0, 2, 3, 1]


class DegenerateProjectionError(ValueError):
    """The projection direction is parallel to the target plane."""


class NoBeamError(ValueError):
    """The sun is at or below the horizon, so there is no beam shadow."""


# -- rotations -------------------------------------------------------------

def rotation_y(omega: float) -> np.ndarray:
    c, s = math.cos(math.radians(omega)), math.sin(math.radians(omega))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_x(angle: float) -> np.ndarray:
    c, s = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def pose_matrix(omega: float, beta: float = 0.0) -> np.ndarray:
    """Rotation applied to rest-pose offsets.

    The secondary rotation is applied first, in the panel's own frame, then
    the primary rotation about the row axis. With this order the rest normal
    (0, 0, 1) becomes (cos b sin w, sin b, cos b cos w), i.e. positive
    ``omega`` faces west and positive ``beta`` faces south.
    """
    return rotation_y(omega) @ rotation_x(-beta)


def pose_corners(corners: np.ndarray, centers: np.ndarray, omega: float,
                 beta: float = 0.0) -> np.ndarray:
    """Rotate every panel about its own centre; corners (n, 4, 3), centers (n, 3)."""
    corners = np.asarray(corners, dtype=float)
    if corners.size == 0:
        return corners.reshape(0, 4, 3)
    R = pose_matrix(omega, beta)
    c = np.asarray(centers, dtype=float)[:, None, :]
    return (corners - c) @ R.T + c


def pose_panel(quad: PanelQuad, angles) -> PanelQuad:
    """Posed copy of ``quad``; ``angles`` is a TrackerAngles or an (omega, beta) pair."""
    omega, beta = angles.pose if hasattr(angles, "pose") else angles
    posed = pose_corners(quad.corners[None], quad.center[None], omega, beta)[0]
    return PanelQuad(posed, quad.center.copy(), quad.row_index, quad.unit_index)


def pose_scene(scene: Scene, omega: float, beta: float = 0.0) -> np.ndarray:
    return pose_corners(scene.corners, scene.centers, omega, beta)


def cyclic(corners: np.ndarray) -> np.ndarray:
    """P1..P4 order to perimeter order."""
    return np.ascontiguousarray(np.asarray(corners, dtype=float)[..., _CYCLIC, :])


# -- projection ------------------------------------------------------------

def plane_normal(gamma: float, delta: float) -> np.ndarray:
    g, d = math.radians(gamma), math.radians(delta)
    return np.array([math.cos(g) * math.sin(d), math.sin(g) * math.sin(d), math.cos(d)])


def project_onto_plane(P, s, normal=(0.0, 0.0, 1.0), origin=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Point where the line P + t*s meets the plane through ``origin``."""
    P = np.asarray(P, dtype=float)
    s = np.asarray(s, dtype=float)
    n = np.asarray(normal, dtype=float)
    den = float(np.dot(n, s))
    if abs(den) < 1e-15:
        raise DegenerateProjectionError("projection direction parallel to the plane")
    t = -float(np.dot(n, P - np.asarray(origin, dtype=float))) / den
    return P + t * s


def project_point(P, s, normal=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Shadow of ``P`` along ``s`` on a plane through the origin, as (x, y)."""
    if s[2] <= 0:
        raise NoBeamError("sun below the horizon")
    return project_onto_plane(P, s, normal)[:2]


@dataclass(frozen=True, eq=False)
class ShadowPolygon:
    vertices: np.ndarray
    panel_index: int

    @property
    def area(self) -> float:
        return abs(float(K.poly_area(self.vertices, len(self.vertices))))


def _ground_shadows(posed: np.ndarray, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s[2] <= 0:
        raise NoBeamError("sun below the horizon")
    out = np.empty((len(posed), 4, 2))
    K.project_to_ground(cyclic(posed), s, out)
    return out


def shadow_polygons(posed: np.ndarray, s) -> list[ShadowPolygon]:
    """One counter-clockwise quadrilateral per panel (possibly zero-area)."""
    posed = np.asarray(posed, dtype=float).reshape(-1, 4, 3)
    return [ShadowPolygon(v, i) for i, v in enumerate(_ground_shadows(posed, s))]


def _as_poly_array(polygons) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(polygons, np.ndarray):
        arr = np.ascontiguousarray(polygons, dtype=float).reshape(-1, polygons.shape[-2], 2)
        return arr, np.full(len(arr), arr.shape[1], np.int64)
    polys = [np.asarray(getattr(p, "vertices", p), dtype=float) for p in polygons]
    if not polys:
        return np.zeros((0, 4, 2)), np.zeros(0, np.int64)
    kmax = max(len(p) for p in polys)
    if kmax > K.MAXV:
        raise ValueError(f"polygons limited to {K.MAXV} vertices")
    arr = np.zeros((len(polys), kmax, 2))
    for i, p in enumerate(polys):
        arr[i, :len(p)] = p
    return arr, np.array([len(p) for p in polys], np.int64)


def union_area_clipped(polygons, crop: CropArea | tuple) -> float:
    """Exact area of the union of convex polygons inside the crop rectangle."""
    arr, counts = _as_poly_array(polygons)
    if len(arr) == 0:
        return 0.0
    x0, y0, x1, y1 = crop.bounds if isinstance(crop, CropArea) else crop
    return float(K.union_area(arr, counts, x0, y0, x1, y1))


def beam_shading_factor(a_shade: float, a_tot: float) -> float:
    if a_tot <= 0:
        raise ValueError("A_tot must be positive")
    if a_shade < -TOL or a_shade > a_tot * (1 + 1e-12) + TOL:
        raise ValueError("A_shade outside [0, A_tot]")
    return min(1.0, max(0.0, a_shade / a_tot))


def exact_beam_factor(posed: np.ndarray, s, crop: CropArea) -> float:
    """f_b from the exact union of ground shadows; 0 for a sun below the horizon."""
    if s[2] <= 0 or len(posed) == 0:
        return 0.0
    return beam_shading_factor(union_area_clipped(_ground_shadows(posed, s), crop), crop.area)


@dataclass(frozen=True, eq=False)
class GroundOcclusionMap:
    shaded: np.ndarray      # (ny, nx) bool
    night: bool = False

    @property
    def f_b(self) -> float:
        return float(self.shaded.mean()) if self.shaded.size else 0.0


def cell_occlusion(posed: np.ndarray, s, crop: CropArea) -> GroundOcclusionMap:
    """Cells whose centre lies inside any ground shadow (boundary counts as inside)."""
    if s[2] <= 0:
        return GroundOcclusionMap(np.zeros((crop.ny, crop.nx), bool), night=True)
    posed = np.asarray(posed, dtype=float).reshape(-1, 4, 3)
    if len(posed) == 0:
        return GroundOcclusionMap(np.zeros((crop.ny, crop.nx), bool))
    shadows = _ground_shadows(posed, s)
    grid = K.rasterize_union(shadows, np.full(len(shadows), 4, np.int64), crop.origin[0],
                             crop.origin[1], crop.grid_resolution, crop.nx, crop.ny, TOL)
    return GroundOcclusionMap(grid)


# -- panel-on-panel shading ------------------------------------------------

def panel_shadow_area(posed: np.ndarray, s, receivers, casters) -> np.ndarray:
    """Beam-shaded area [m²] of each receiver panel cast by the caster panels.

    Casters are clipped to the sun side of the receiver plane and projected
    along ``s`` onto it; the union is clipped to the receiver rectangle.
    """
    posed = np.asarray(posed, dtype=float)
    s = np.asarray(s, dtype=float)
    out = np.zeros(len(receivers))
    for k, r in enumerate(receivers):
        p1, p2, p3 = posed[r, 0], posed[r, 1], posed[r, 2]
        e1, e2 = p3 - p1, p2 - p1
        l1, l2 = np.linalg.norm(e1), np.linalg.norm(e2)
        u1, u2 = e1 / l1, e2 / l2
        n = np.cross(u1, u2)
        ns = float(n @ s)
        if abs(ns) < 1e-12:
            continue
        if ns < 0:
            n, ns = -n, -ns
        polys = []
        for c in casters:
            if c == r:
                continue
            quad = cyclic(posed[c])
            d = (quad - p1) @ n
            pts = _clip_3d(quad, d)
            if len(pts) < 3:
                continue
            t = ((pts - p1) @ n) / ns
            hit = pts - t[:, None] * s
            uv = np.column_stack([(hit - p1) @ u1, (hit - p1) @ u2])
            if K.poly_area(uv, len(uv)) < 0:
                uv = uv[::-1]
            polys.append(np.ascontiguousarray(uv))
        if polys:
            out[k] = union_area_clipped(polys, (0.0, 0.0, l1, l2))
    return out


def _clip_3d(poly: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Part of a planar polygon with signed distance d >= 0."""
    pts = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        if d[i] >= 0:
            pts.append(poly[i])
        if (d[i] >= 0) != (d[j] >= 0):
            t = d[i] / (d[i] - d[j])
            pts.append(poly[i] + t * (poly[j] - poly[i]))
    return np.array(pts).reshape(-1, 3)


# -- debug output ----------------------------------------------------------

def write_shadow_csv(path: str | Path, records) -> None:
    """Write ``(timestep, panel_index, vertices)`` records, one row per polygon."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestep", "panel", "vertices"])
        for ts, poly in records:
            verts = ";".join(f"{x:.6f} {y:.6f}" for x, y in poly.vertices)
            w.writerow([ts, poly.panel_index, verts])
