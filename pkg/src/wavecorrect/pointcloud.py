"""Point-cloud tiles: minimal LAS reader/writer, ASCII tiles, tile boundaries.

Two on-disk formats are understood:

* a binary LAS subset (signature ``LASF``, public header block of at least
  227 bytes, point formats 0-10 of which only the scaled int32 X/Y/Z and,
  for formats 0-5, the classification byte are decoded);
* ASCII tiles with one ``x y z [class]`` line per point and ``#`` comments.

Boundaries are cached in ``boundaries.cache.json`` inside the tile directory.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

CACHE_NAME = "boundaries.cache.json"
LAS_SUFFIXES = (".las",)
ASCII_SUFFIXES = (".xyz", ".txt", ".asc")
MAX_HULL_POINTS = 200_000

_LAS_HEADER_FMT = "<4sHH16sBB32s32sHHHIIBHI5I3d3d6d"
_LAS_HEADER_SIZE = struct.calcsize(_LAS_HEADER_FMT)  # 227

# Counters exposed for cache tests; incremented on every payload/header read.
READ_STATS: Dict[str, int] = {"headers": 0, "payloads": 0}


class TileFormatError(ValueError):
    """Raised for unreadable tiles. ``str(err)`` starts with the failure kind."""


@dataclass(frozen=True)
class TileHeader:
    path: str
    min_x: float
    min_y: float
    max_x: float
    max_y: float
    point_count: int
    min_z: float = 0.0
    max_z: float = 0.0

    @property
    def degenerate(self) -> bool:
        return self.min_x == self.max_x or self.min_y == self.max_y


@dataclass(frozen=True)
class PointCloud:
    """Column arrays of one tile (or a merge of tiles)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    classification: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.x.size)

    @classmethod
    def empty(cls) -> "PointCloud":
        e = np.empty(0)
        return cls(e, e, e)

    @classmethod
    def concatenate(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return cls.empty()
        classes = None
        if all(c.classification is not None for c in clouds):
            classes = np.concatenate([c.classification for c in clouds])
        return cls(
            np.concatenate([c.x for c in clouds]),
            np.concatenate([c.y for c in clouds]),
            np.concatenate([c.z for c in clouds]),
            classes,
        )

    def crop(self, min_x: float, min_y: float, max_x: float, max_y: float) -> "PointCloud":
        m = (self.x >= min_x) & (self.x <= max_x) & (self.y >= min_y) & (self.y <= max_y)
        cls_ = None if self.classification is None else self.classification[m]
        return PointCloud(self.x[m], self.y[m], self.z[m], cls_)

    def records(self) -> List["PointRecord"]:
        cls_ = self.classification
        return [
            PointRecord(float(a), float(b), float(c), None if cls_ is None else int(cls_[i]))
            for i, (a, b, c) in enumerate(zip(self.x, self.y, self.z))
        ]


@dataclass(frozen=True)
class PointRecord:
    x: float
    y: float
    z: float
    classification: Optional[int] = None


@dataclass(frozen=True)
class TileBoundary:
    path: str
    mode: str
    polygon: Tuple[Tuple[float, float], ...]
    valid: bool = True
    degenerate: bool = False
    stride: int = 1

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)


# --------------------------------------------------------------------------- LAS


def write_las(
    path,
    x: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    classification: Optional[np.ndarray] = None,
    scale: float = 0.001,
    bounds: Optional[Tuple[float, float, float, float]] = None,
) -> None:
    """Write a LAS 1.2, point format 0 file.

    ``bounds`` overrides the declared ``(min_x, min_y, max_x, max_y)``; by
    default they are taken from the data.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    n = x.size
    if bounds is None:
        if n:
            bounds = (x.min(), y.min(), x.max(), y.max())
        else:
            bounds = (0.0, 0.0, 0.0, 0.0)
    zmin, zmax = (float(z.min()), float(z.max())) if n else (0.0, 0.0)
    min_x, min_y, max_x, max_y = (float(b) for b in bounds)
    off = (math.floor(min_x), math.floor(min_y), 0.0)

    header = struct.pack(
        _LAS_HEADER_FMT,
        b"LASF", 0, 0, b"\0" * 16, 1, 2,
        b"wavecorrect".ljust(32, b"\0"), b"wavecorrect".ljust(32, b"\0"),
        1, 2024, _LAS_HEADER_SIZE, _LAS_HEADER_SIZE, 0, 0, 20, n,
        n, 0, 0, 0, 0,
        scale, scale, scale,
        *off,
        max_x, min_x, max_y, min_y, zmax, zmin,
    )
    rec = np.zeros(n, dtype=_las_dtype(20))
    rec["X"] = np.round((x - off[0]) / scale).astype(np.int32)
    rec["Y"] = np.round((y - off[1]) / scale).astype(np.int32)
    rec["Z"] = np.round((z - off[2]) / scale).astype(np.int32)
    if classification is not None:
        rec["classification"] = np.asarray(classification, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def _las_dtype(record_length: int) -> np.dtype:
    return np.dtype(
        {
            "names": ["X", "Y", "Z", "classification"],
            "formats": ["<i4", "<i4", "<i4", "u1"],
            "offsets": [0, 4, 8, 15],
            "itemsize": record_length,
        }
    )


def _parse_las_header(raw: bytes, path: str) -> dict:
    if len(raw) < 4 or raw[:4] != b"LASF":
        raise TileFormatError(f"unsupported tile format: {path}")
    if len(raw) < _LAS_HEADER_SIZE:
        raise TileFormatError(f"corrupt tile: truncated header in {path}")
    f = struct.unpack(_LAS_HEADER_FMT, raw[:_LAS_HEADER_SIZE])
    major, minor = f[4], f[5]
    header_size, data_offset = f[10], f[11]
    fmt, rec_len, count = f[13], f[14], f[15]
    if major != 1 or minor > 4 or fmt > 10 or rec_len < 12:
        raise TileFormatError(f"unsupported tile format: {path}")
    if header_size < _LAS_HEADER_SIZE or data_offset < header_size:
        raise TileFormatError(f"corrupt tile: bad header geometry in {path}")
    scale = f[21:24]
    offset = f[24:27]
    max_x, min_x, max_y, min_y, max_z, min_z = f[27:33]
    return {
        "format": fmt, "record_length": rec_len, "count": count,
        "data_offset": data_offset, "scale": scale, "offset": offset,
        "bounds": (min_x, min_y, max_x, max_y), "zrange": (min_z, max_z),
    }


# ------------------------------------------------------------------------- ASCII


def _read_ascii(path: str) -> PointCloud:
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise TileFormatError(f"corrupt tile: {path}:{lineno} expected 'x y z [class]'")
            try:
                vals = [float(p) for p in parts[:3]]
                cls_ = float(parts[3]) if len(parts) == 4 else -1.0
            except ValueError:
                raise TileFormatError(f"corrupt tile: {path}:{lineno} non-numeric field") from None
            rows.append(vals + [cls_])
    if not rows:
        return PointCloud.empty()
    arr = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(arr[:, :3])):
        raise TileFormatError(f"corrupt tile: non-finite coordinate in {path}")
    cls_col = arr[:, 3]
    classification = None if np.all(cls_col < 0) else cls_col.astype(int)
    return PointCloud(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), classification)


def write_ascii(path, x, y, z, classification=None) -> None:
    with open(path, "w") as fh:
        fh.write("# x y z class\n")
        for i in range(len(x)):
            c = "" if classification is None else f" {int(classification[i])}"
            fh.write(f"{x[i]:.3f} {y[i]:.3f} {z[i]:.3f}{c}\n")


# ------------------------------------------------------------------- tile reads


def _is_ascii(path: str) -> bool:
    return path.lower().endswith(ASCII_SUFFIXES)


def read_tile_header(path) -> TileHeader:
    """Extents and point count without touching the point payload.

    ASCII tiles have no header, so their extents come from a full scan.
    """
    path = str(path)
    READ_STATS["headers"] += 1
    if _is_ascii(path):
        pc = _read_ascii(path)
        if not len(pc):
            raise TileFormatError(f"corrupt tile: no points in {path}")
        return TileHeader(
            path, float(pc.x.min()), float(pc.y.min()), float(pc.x.max()), float(pc.y.max()),
            len(pc), float(pc.z.min()), float(pc.z.max()),
        )
    with open(path, "rb") as fh:
        raw = fh.read(_LAS_HEADER_SIZE)
    h = _parse_las_header(raw, path)
    min_x, min_y, max_x, max_y = h["bounds"]
    if min_x > max_x or min_y > max_y:
        raise TileFormatError(f"corrupt tile: inverted extents in {path}")
    return TileHeader(path, min_x, min_y, max_x, max_y, h["count"], *h["zrange"])


def read_point_cloud(path) -> PointCloud:
    path = str(path)
    READ_STATS["payloads"] += 1
    if _is_ascii(path):
        return _read_ascii(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    h = _parse_las_header(raw, path)
    start, n, rec_len = h["data_offset"], h["count"], h["record_length"]
    payload = raw[start:]
    if len(payload) != n * rec_len:
        raise TileFormatError(
            f"corrupt tile: header declares {n} points, payload holds "
            f"{len(payload) / rec_len:g} in {path}"
        )
    rec = np.frombuffer(payload, dtype=_las_dtype(rec_len), count=n)
    sx, sy, sz = h["scale"]
    ox, oy, oz = h["offset"]
    classification = rec["classification"].astype(int) if h["format"] <= 5 else None
    return PointCloud(
        rec["X"] * sx + ox, rec["Y"] * sy + oy, rec["Z"] * sz + oz, classification
    )


def read_points(path) -> List[PointRecord]:
    """All point records of a tile, in file order."""
    return read_point_cloud(path).records()


def list_tiles(tile_dir) -> List[str]:
    tile_dir = Path(tile_dir)
    out = [
        str(p)
        for p in tile_dir.iterdir()
        if p.is_file() and p.name.lower().endswith(LAS_SUFFIXES + ASCII_SUFFIXES)
    ]
    return sorted(out)


# --------------------------------------------------------------------- geometry


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def compute_convex_hull(points) -> List[Tuple[float, float]]:
    """Monotone-chain convex hull, counter-clockwise, collinear points dropped.

    Identical inputs give a single vertex; collinear inputs give the two
    segment end points.
    """
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if not pts:
        raise ValueError("convex hull needs at least one point")
    if len(pts) <= 2:
        return pts

    lower: List[Tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: List[Tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and hull[0] == hull[1]:
        return hull[:1]
    return hull


def polygon_area(poly: Sequence[Sequence[float]]) -> float:
    if len(poly) < 3:
        return 0.0
    a = 0.0
    for (x0, y0), (x1, y1) in zip(poly, list(poly[1:]) + [poly[0]]):
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def point_in_convex_polygon(p, poly, slack: float = 1e-9) -> bool:
    """True when ``p`` lies inside or on a CCW convex polygon (within ``slack``)."""
    if len(poly) == 1:
        return math.dist(p, poly[0]) <= slack
    if len(poly) == 2:
        a, b = poly
        seg = math.dist(a, b)
        if abs(_cross(a, b, p)) > slack * max(seg, 1.0):
            return False
        t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / (seg * seg)
        return -slack <= t * seg <= seg + slack
    for a, b in zip(poly, list(poly[1:]) + [poly[0]]):
        edge = math.dist(a, b)
        if _cross(a, b, p) < -slack * max(edge, 1.0):
            return False
    return True


def _project(poly, axis) -> Tuple[float, float]:
    vals = [v[0] * axis[0] + v[1] * axis[1] for v in poly]
    return min(vals), max(vals)


def convex_intersects_rect(poly, min_x, min_y, max_x, max_y) -> bool:
    """Separating-axis test between a convex polygon and an axis-aligned box.

    Touching shapes count as intersecting.
    """
    rect = [(min_x, min_y), (max_x, min_y), (max_x, max_y), (min_x, max_y)]
    axes = [(1.0, 0.0), (0.0, 1.0)]
    n = len(poly)
    if n >= 2:
        edges = zip(poly, list(poly[1:]) + [poly[0]]) if n > 2 else [(poly[0], poly[1])]
        for a, b in edges:
            nx, ny = -(b[1] - a[1]), b[0] - a[0]
            if nx or ny:
                axes.append((nx, ny))
    for ax in axes:
        lo1, hi1 = _project(poly, ax)
        lo2, hi2 = _project(rect, ax)
        if hi1 < lo2 or hi2 < lo1:
            return False
    return True


# ------------------------------------------------------------------- boundaries


def compute_bbox(header: TileHeader) -> TileBoundary:
    poly = (
        (header.min_x, header.min_y),
        (header.max_x, header.min_y),
        (header.max_x, header.max_y),
        (header.min_x, header.max_y),
    )
    return TileBoundary(header.path, "simple", poly, degenerate=header.degenerate)


def _extreme_points(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    idx = {
        int(np.argmin(x)), int(np.argmax(x)), int(np.argmin(y)), int(np.argmax(y)),
        int(np.argmin(x + y)), int(np.argmax(x + y)),
        int(np.argmin(x - y)), int(np.argmax(x - y)),
    }
    return np.array(sorted(idx))


def compute_tile_hull(path) -> TileBoundary:
    pc = read_point_cloud(path)
    if not len(pc):
        raise TileFormatError(f"corrupt tile: no points in {path}")
    stride = max(1, math.ceil(len(pc) / MAX_HULL_POINTS))
    keep = np.arange(0, len(pc), stride)
    if stride > 1:
        keep = np.union1d(keep, _extreme_points(pc.x, pc.y))
    hull = compute_convex_hull(np.column_stack([pc.x[keep], pc.y[keep]]))
    return TileBoundary(str(path), "convex", tuple(hull), degenerate=len(hull) < 3, stride=stride)


def _boundary_to_json(b: TileBoundary, mtime: float) -> dict:
    return {
        "mtime": mtime, "mode": b.mode, "valid": b.valid, "degenerate": b.degenerate,
        "stride": b.stride, "polygon": [list(v) for v in b.polygon],
    }


def build_boundary_index(tile_dir, mode: str = "convex", use_cache: bool = True) -> List[TileBoundary]:
    """One boundary per readable tile, cached next to the tiles.

    Cache entries are reused when their mode matches and the tile is not
    newer than the entry. Unreadable tiles are logged, recorded as invalid in
    the cache and left out of the returned list.
    """
    if mode not in ("simple", "convex"):
        raise ValueError(f"unknown boundary mode {mode!r}")
    tile_dir = Path(tile_dir)
    cache_path = tile_dir / CACHE_NAME
    cache: dict = {}
    if use_cache and cache_path.exists():
        try:
            cache = json.loads(cache_path.read_text()).get("tiles", {})
        except (OSError, ValueError):
            log.warning("ignoring unreadable boundary cache %s", cache_path)
            cache = {}

    entries = {}
    boundaries = []
    dirty = False
    for path in list_tiles(tile_dir):
        name = os.path.basename(path)
        mtime = os.stat(path).st_mtime
        hit = cache.get(name)
        if hit is not None and hit.get("mode") == mode and hit.get("mtime", -1) >= mtime:
            entries[name] = hit
            if hit["valid"]:
                boundaries.append(
                    TileBoundary(
                        path, mode, tuple(tuple(v) for v in hit["polygon"]),
                        degenerate=hit.get("degenerate", False), stride=hit.get("stride", 1),
                    )
                )
            continue
        dirty = True
        try:
            if mode == "simple":
                b = compute_bbox(read_tile_header(path))
            else:
                b = compute_tile_hull(path)
        except (TileFormatError, OSError) as err:
            log.warning("skipping tile %s: %s", path, err)
            entries[name] = {"mtime": mtime, "mode": mode, "valid": False, "error": str(err)}
            continue
        entries[name] = _boundary_to_json(b, mtime)
        boundaries.append(b)

    if use_cache and (dirty or set(entries) != set(cache)):
        doc = {"version": 1, "mode": mode, "tiles": dict(sorted(entries.items()))}
        cache_path.write_text(json.dumps(doc, indent=1))
    return boundaries


def select_tiles(
    boundaries: Iterable[TileBoundary], x: float, y: float, buffer_m: float = 50.0
) -> List[str]:
    """Tiles whose boundary meets the square of side ``buffer_m`` centred on (x, y)."""
    h = buffer_m / 2.0
    hits = [
        b.path
        for b in boundaries
        if b.valid and convex_intersects_rect(b.polygon, x - h, y - h, x + h, y + h)
    ]
    return sorted(hits)
