"""Isotropic diffuse shading: sky-dome shading tables and per-cell dome occlusion.

The dome is discretised in ``step``-degree nodes, altitude 0..90 and azimuth
-180..180 (the last column repeats the first). Each node is the centre of a
patch with weight ``sin(a) * cos(a)`` (incidence on the horizontal ground times
the solid-angle factor), so the horizon row carries no weight.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .scene import CropArea, Scene, SystemKind
from .shadegeom import cyclic, pose_corners
from .solar import solar_vector_arrays

HORIZON_ALTITUDE = 0.5   # elevation used for the altitude-0 table entries
DEFAULT_BUCKET = 0.1
_RAY_TOL = 1e-9


def _check_step(step: float) -> tuple[int, int]:
    na = 90.0 / step
    nz = 360.0 / step
    if step <= 0 or abs(na - round(na)) > 1e-9 or abs(nz - round(nz)) > 1e-9:
        raise ValueError("dome step must divide 90 degrees")
    return int(round(na)) + 1, int(round(nz))


def dome_nodes(step: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Altitude nodes (0..90) and azimuth nodes (-180..180 inclusive)."""
    na, nz = _check_step(step)
    return np.arange(na) * step, -180.0 + np.arange(nz + 1) * step


def dome_weights(altitudes) -> np.ndarray:
    a = np.radians(np.asarray(altitudes, dtype=float))
    w = np.sin(a) * np.cos(a)
    w[np.isclose(np.asarray(altitudes, dtype=float), 90.0)] = 0.0
    return w


@dataclass(frozen=True)
class PoseFingerprint:
    """Identifies a posed scene: system kind, quantised angles and a geometry digest."""

    system_kind: str
    omega: float
    beta: float
    geometry: str = ""
    dome_step: float = 1.0

    @property
    def key(self) -> str:
        return f"{self.system_kind}|{self.omega:.4f}|{self.beta:.4f}|{self.geometry}|{self.dome_step:g}"

    @property
    def digest(self) -> str:
        return hashlib.sha1(self.key.encode()).hexdigest()[:16]


def quantize(angle: float, bucket: float = DEFAULT_BUCKET) -> float:
    """Representative angle of the bucket containing ``angle``."""
    if bucket <= 0:
        return float(angle)
    q = math.floor(angle / bucket + 0.5) * bucket
    return round(q, 9) + 0.0


@dataclass(frozen=True, eq=False)
class ShadingTable:
    """Beam shading factor of the crop area for every dome node.

    ``values`` has shape (n_altitudes, n_azimuths + 1); the last column repeats
    the first (the -180/+180 seam).
    """

    values: np.ndarray
    step: float = 1.0
    fingerprint: PoseFingerprint | None = None

    @property
    def altitudes(self) -> np.ndarray:
        return dome_nodes(self.step)[0]

    @property
    def azimuths(self) -> np.ndarray:
        return dome_nodes(self.step)[1]

    def save(self, path: str | Path) -> None:
        """Flat little-endian float64 file, altitude-major, azimuth-minor."""
        np.ascontiguousarray(self.values, dtype="<f8").tofile(path)

    @classmethod
    def load(cls, path: str | Path, step: float = 1.0,
             fingerprint: PoseFingerprint | None = None) -> "ShadingTable":
        na, nz = _check_step(step)
        vals = np.fromfile(path, dtype="<f8")
        if vals.size != na * (nz + 1):
            raise ValueError(f"{path}: expected {na * (nz + 1)} values, found {vals.size}")
        return cls(vals.reshape(na, nz + 1), step, fingerprint)


def build_shading_table(posed: np.ndarray, crop: CropArea, step: float = 1.0,
                        azimuth_offset: float = 0.0,
                        fingerprint: PoseFingerprint | None = None) -> ShadingTable:
    """f_b for a synthetic sun at each dome node.

    Node azimuths are geographic; ``azimuth_offset`` is the layout azimuth, so
    a node at azimuth g is at ``g - azimuth_offset`` in the layout frame.
    """
    alt, az = dome_nodes(step)
    nz = len(az) - 1
    alt_eval = np.where(alt <= 0.0, HORIZON_ALTITUDE, alt)
    A, G = np.meshgrid(alt_eval[:-1], az[:-1] - azimuth_offset, indexing="ij")
    dirs = np.ascontiguousarray(solar_vector_arrays(A, G).reshape(-1, 3))
    quads = cyclic(np.asarray(posed, dtype=float).reshape(-1, 4, 3))
    x0, y0, x1, y1 = crop.bounds
    vals = np.empty((len(alt), nz + 1))
    vals[:-1, :nz] = K.shading_table(quads, dirs, x0, y0, x1, y1).reshape(len(alt) - 1, nz)
    # the zenith is a single direction
    vals[-1, :] = K.shading_table(quads, np.array([[0.0, 0.0, 1.0]]), x0, y0, x1, y1)[0]
    vals[:, nz] = vals[:, 0]
    return ShadingTable(np.clip(vals, 0.0, 1.0), step, fingerprint)


def diffuse_factor(table: ShadingTable) -> float:
    """Weighted dome average of the table (seam column excluded)."""
    w = dome_weights(table.altitudes)
    v = table.values[:, :-1]
    return float((v * w[:, None]).sum() / (w.sum() * v.shape[1]))


def cell_blocked(center, altitude: float, azimuth: float, posed: np.ndarray) -> bool:
    """True if the ray from ``center`` (on the ground) toward (altitude, azimuth)
    meets any panel; azimuth in the layout frame."""
    d = solar_vector_arrays(altitude, azimuth)
    o = np.array([center[0], center[1], 0.0 if len(center) < 3 else center[2]], dtype=float)
    quads = cyclic(np.asarray(posed, dtype=float).reshape(-1, 4, 3))
    return bool(K.ray_hits_quads(o, d, quads, _RAY_TOL))


@dataclass(frozen=True, eq=False)
class DiffuseResult:
    aggregate: float
    cells: np.ndarray          # (ny, nx)
    fingerprint: PoseFingerprint | None = None


def per_cell_diffuse(posed: np.ndarray, crop: CropArea, step: float = 1.0,
                     azimuth_offset: float = 0.0,
                     fingerprint: PoseFingerprint | None = None) -> DiffuseResult:
    """Blocked weighted dome fraction seen from every cell centre."""
    alt, _ = dome_nodes(step)
    _, nz = _check_step(step)
    quads = cyclic(np.asarray(posed, dtype=float).reshape(-1, 4, 3))
    f = K.per_cell_diffuse(quads, crop.x_centers, crop.y_centers, float(step), len(alt),
                           -180.0 - azimuth_offset, float(step), nz, dome_weights(alt))
    cells = np.clip(f.reshape(crop.ny, crop.nx), 0.0, 1.0)
    return DiffuseResult(float(cells.mean()) if cells.size else 0.0, cells, fingerprint)


def coalesce_strips(posed: np.ndarray, scene: Scene, tol: float = 1e-12) -> np.ndarray:
    """Merge posed panels that tile a single rectangle along the row.

    Consecutive units of a row whose shared edges coincide (contiguous units
    with no secondary rotation) are replaced by one quad; the union of the
    panels, hence every occlusion test, is unchanged.
    """
    posed = np.asarray(posed, dtype=float)
    if len(posed) == 0:
        return posed
    out = []
    groups: dict[tuple[int, int], list[int]] = {}
    ppu = scene.layout.panels_per_unit
    for i, p in enumerate(scene.panels):
        groups.setdefault((p.row_index, i % ppu), []).append(i)
    for idx in groups.values():
        cur = posed[idx[0]].copy()
        for i in idx[1:]:
            nxt = posed[i]
            if np.abs(nxt[0] - cur[1]).max() <= tol and np.abs(nxt[2] - cur[3]).max() <= tol:
                cur[1], cur[3] = nxt[1], nxt[3]
            else:
                out.append(cur)
                cur = nxt.copy()
        out.append(cur)
    return np.array(out)


def _mirror_invariant(scene: Scene, axis: int) -> bool:
    """Rest-pose scene unchanged by reflection through the crop centre along ``axis``."""
    if not scene.panels:
        return True
    x0, y0, x1, y1 = scene.crop.bounds
    mid = 0.5 * ((x0 + x1) if axis == 0 else (y0 + y1))

    def canon(corners, centers):
        keys = []
        for c, m in zip(corners, centers):
            pts = sorted(tuple(np.round(p, 9)) for p in c)
            keys.append((tuple(np.round(m, 9)), tuple(pts)))
        return sorted(keys)

    corners = scene.corners.copy()
    centers = scene.centers.copy()
    m_corners = corners.copy()
    m_centers = centers.copy()
    m_corners[..., axis] = 2 * mid - corners[..., axis]
    m_centers[..., axis] = 2 * mid - centers[..., axis]
    return canon(corners, centers) == canon(m_corners, m_centers)


class PoseCache:
    """Thread-safe lookup-or-insert store keyed by pose fingerprint.

    With ``directory`` set, results are also written to and read from disk
    (one flat float64 file per fingerprint plus ``index.json``).
    """

    def __init__(self, directory: str | Path | None = None):
        self._store: dict[str, object] = {}
        self._lock = threading.Lock()
        self.directory = Path(directory) if directory else None
        self.hits = 0
        self.builds = 0

    def __len__(self) -> int:
        return len(self._store)

    def get_or_build(self, kind: str, fp: PoseFingerprint, builder):
        key = f"{kind}:{fp.key}"
        with self._lock:
            if key in self._store:
                self.hits += 1
                return self._store[key]
        value = self._load(kind, fp)
        if value is None:
            value = builder()
            self._save(kind, fp, value)
            counted = True
        else:
            counted = False
        with self._lock:
            if key in self._store:
                # another caller won the race; keep the first result
                self.hits += 1
                return self._store[key]
            self._store[key] = value
            if counted:
                self.builds += 1
            return value

    def _path(self, kind: str, fp: PoseFingerprint) -> Path:
        return self.directory / f"{kind}-{fp.digest}.f8"

    def _load(self, kind, fp):
        if self.directory is None:
            return None
        path = self._path(kind, fp)
        index = self.directory / "index.json"
        if not path.exists() or not index.exists():
            return None
        meta = json.loads(index.read_text()).get(path.name)
        if meta is None or meta["key"] != fp.key:
            return None
        vals = np.fromfile(path, dtype="<f8").reshape(meta["shape"])
        if kind == "table":
            return ShadingTable(vals, fp.dome_step, fp)
        return DiffuseResult(float(vals.mean()) if vals.size else 0.0, vals, fp)

    def _save(self, kind, fp, value) -> None:
        if self.directory is None:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        arr = value.values if kind == "table" else value.cells
        path = self._path(kind, fp)
        np.ascontiguousarray(arr, dtype="<f8").tofile(path)
        with self._lock:
            index_path = self.directory / "index.json"
            index = json.loads(index_path.read_text()) if index_path.exists() else {}
            index[path.name] = {"key": fp.key, "shape": list(arr.shape)}
            index_path.write_text(json.dumps(index, indent=1, sort_keys=True))


class DiffuseEngine:
    """Diffuse shading for a scene at arbitrary poses, with quantised caching.

    Poses are snapped to ``bucket``-degree representatives. When the rest scene
    and the dome grid are mirror-symmetric about the crop centre, a pose and
    its mirror images share one computation: (-w, b) is the x-mirror of (w, b)
    and (w, -b) the y-mirror.
    """

    def __init__(self, scene: Scene, step: float = 1.0, bucket: float = DEFAULT_BUCKET,
                 azimuth_offset: float = 0.0, cache: PoseCache | None = None,
                 use_symmetry: bool = True):
        _check_step(step)
        self.scene = scene
        self.step = step
        self.bucket = bucket
        self.azimuth_offset = azimuth_offset
        self.cache = cache if cache is not None else PoseCache()
        lay = scene.layout
        digest_src = json.dumps([scene.corners.round(9).tolist(), scene.crop.bounds,
                                 scene.crop.grid_resolution, azimuth_offset])
        self._geometry = hashlib.sha1(digest_src.encode()).hexdigest()[:12]
        grid_ok = abs(math.remainder(2 * azimuth_offset, step)) < 1e-9
        self._mirror_x = use_symmetry and grid_ok and _mirror_invariant(scene, 0)
        self._mirror_y = use_symmetry and grid_ok and _mirror_invariant(scene, 1)
        self._fixed = lay.system_kind is SystemKind.VERTICAL

    def fingerprint(self, omega: float, beta: float) -> PoseFingerprint:
        return PoseFingerprint(self.scene.layout.system_kind.value, omega, beta,
                               self._geometry, self.step)

    def _canonical(self, omega: float, beta: float) -> tuple[float, float, bool, bool]:
        if not self._fixed:
            omega, beta = quantize(omega, self.bucket), quantize(beta, self.bucket)
        fx = self._mirror_x and omega < 0
        fy = self._mirror_y and beta < 0
        return (-omega if fx else omega) + 0.0, (-beta if fy else beta) + 0.0, fx, fy

    def posed(self, omega: float, beta: float) -> np.ndarray:
        return pose_corners(self.scene.corners, self.scene.centers, omega, beta)

    def diffuse(self, omega: float, beta: float = 0.0) -> DiffuseResult:
        w, b, fx, fy = self._canonical(omega, beta)
        fp = self.fingerprint(w, b)

        def build():
            posed = coalesce_strips(self.posed(w, b), self.scene)
            return per_cell_diffuse(posed, self.scene.crop, self.step, self.azimuth_offset, fp)

        res = self.cache.get_or_build("cells", fp, build)
        if not (fx or fy):
            return res
        cells = res.cells
        if fx:
            cells = cells[:, ::-1]
        if fy:
            cells = cells[::-1, :]
        return DiffuseResult(res.aggregate, np.ascontiguousarray(cells), res.fingerprint)

    def table(self, omega: float, beta: float = 0.0) -> ShadingTable:
        """Dome shading table at the quantised pose (no mirror reuse: the table
        is indexed by absolute direction)."""
        if not self._fixed:
            omega, beta = quantize(omega, self.bucket), quantize(beta, self.bucket)
        fp = self.fingerprint(omega, beta)
        return self.cache.get_or_build(
            "table", fp,
            lambda: build_shading_table(self.posed(omega, beta), self.scene.crop, self.step,
                                        self.azimuth_offset, fp))
