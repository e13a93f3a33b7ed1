"""Pre-correction shot screening and vertical datum adjustment."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .model import Footprint

# Rejection reasons, in evaluation order.
REASONS = (
    "degrade flag",
    "quality flag",
    "solar elevation",
    "sensitivity",
    "mode count",
    "rh95 max",
    "dem difference",
)
MISSING_FIELD = "missing quality field"
NO_DATUM = "no datum coverage"


@dataclass(frozen=True)
class QualityCriteria:
    require_degrade_zero: bool = True
    require_quality_one: bool = True
    require_night: bool = True
    min_sensitivity: Optional[float] = 0.9
    forest_mode_check: bool = True
    max_rh95_m: Optional[float] = 30.0
    max_dem_diff_m: Optional[float] = 50.0

    def __post_init__(self):
        for name in ("min_sensitivity", "max_rh95_m", "max_dem_diff_m"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative")

    @classmethod
    def disabled(cls) -> "QualityCriteria":
        return cls(False, False, False, None, False, None, None)


def _first_failure(fp: Footprint, c: QualityCriteria) -> str:
    def need(*values):
        if any(v is None for v in values):
            raise _Missing

    try:
        if c.require_degrade_zero:
            need(fp.degrade_flag)
            if fp.degrade_flag != 0:
                return "degrade flag"
        if c.require_quality_one:
            need(fp.quality_flag)
            if fp.quality_flag != 1:
                return "quality flag"
        if c.require_night:
            need(fp.solar_elevation)
            if not fp.solar_elevation < 0:
                return "solar elevation"
        if c.min_sensitivity is not None:
            need(fp.sensitivity)
            if not fp.sensitivity >= c.min_sensitivity:
                return "sensitivity"
        if c.forest_mode_check:
            need(fp.num_detected_modes)
            if fp.rh.rh95 >= 5.0 and fp.num_detected_modes <= 1:
                return "mode count"
        if c.max_rh95_m is not None and not fp.rh.rh95 <= c.max_rh95_m:
            return "rh95 max"
        if c.max_dem_diff_m is not None:
            need(fp.dem_elevation)
            if not abs(fp.elev_lowestmode - fp.dem_elevation) <= c.max_dem_diff_m:
                return "dem difference"
    except _Missing:
        return MISSING_FIELD
    return ""


class _Missing(Exception):
    pass


def apply_quality_filters(
    footprints: Iterable[Footprint], criteria: QualityCriteria = QualityCriteria()
) -> Tuple[List[Footprint], List[Tuple[Footprint, str]]]:
    """Split shots into kept and rejected; rejections carry the first failing check."""
    kept, rejected = [], []
    for fp in footprints:
        reason = _first_failure(fp, criteria)
        if reason:
            rejected.append((fp, reason))
        else:
            kept.append(fp)
    return kept, rejected


# ------------------------------------------------------------------ geoid grid


class GeoidFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GeoidRaster:
    """Row-major grid of datum differences; row 0 is the northernmost row.

    ``origin_x, origin_y`` is the lower-left corner of the lower-left cell.
    """

    origin_x: float
    origin_y: float
    cell_size: float
    ncols: int
    nrows: int
    values: np.ndarray
    nodata: Optional[float] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        if self.ncols < 1 or self.nrows < 1:
            raise ValueError("raster needs at least one cell")
        if vals.size != self.ncols * self.nrows:
            raise ValueError("raster dimensions do not match value count")
        vals = vals.reshape(self.nrows, self.ncols)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def _cell(self, row: int, col: int) -> Optional[float]:
        v = self.values[row, col]
        if not math.isfinite(v) or (self.nodata is not None and v == self.nodata):
            return None
        return float(v)

    def sample(self, x: float, y: float) -> Optional[float]:
        """Bilinear value at ``(x, y)``; ``None`` when all four cells are nodata.

        Cell values sit at cell centres. Outside the centre hull the nearest
        2x2 block is extrapolated linearly, which keeps planar fields exact.
        Partial nodata blocks renormalise over the available corners.
        """
        fc = (x - self.origin_x) / self.cell_size - 0.5
        # Rows count from the top; convert y to a bottom-up centre coordinate.
        fr_up = (y - self.origin_y) / self.cell_size - 0.5
        c0 = int(np.clip(math.floor(fc), 0, max(self.ncols - 2, 0)))
        r0_up = int(np.clip(math.floor(fr_up), 0, max(self.nrows - 2, 0)))
        tx = fc - c0 if self.ncols > 1 else 0.0
        ty = fr_up - r0_up if self.nrows > 1 else 0.0
        c1 = min(c0 + 1, self.ncols - 1)
        r1_up = min(r0_up + 1, self.nrows - 1)
        corners = (
            (r0_up, c0, (1 - tx) * (1 - ty)),
            (r0_up, c1, tx * (1 - ty)),
            (r1_up, c0, (1 - tx) * ty),
            (r1_up, c1, tx * ty),
        )
        found = [(w, self._cell(self.nrows - 1 - r, c)) for r, c, w in corners]
        found = [(w, v) for w, v in found if v is not None]
        if not found:
            return None
        if len(found) == 4:
            return sum(w * v for w, v in found)
        weight = sum(w for w, _ in found)
        if weight == 0.0:
            return sum(v for _, v in found) / len(found)
        return sum(w * v for w, v in found) / weight


def read_geoid_raster(path) -> GeoidRaster:
    """Parse an ESRI ASCII grid (header keywords are case-insensitive)."""
    text = Path(path).read_text().split("\n")
    header = {}
    i = 0
    keys = {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter", "cellsize", "nodata_value"}
    while i < len(text):
        parts = text[i].split()
        if not parts:
            i += 1
            continue
        if parts[0].lower() not in keys:
            break
        if len(parts) != 2:
            raise GeoidFormatError(f"line {i + 1}: malformed header")
        header[parts[0].lower()] = parts[1]
        i += 1
    for k in ("ncols", "nrows", "cellsize"):
        if k not in header:
            raise GeoidFormatError(f"missing header keyword {k}")
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cell = float(header["cellsize"])
        if "xllcorner" in header:
            ox = float(header["xllcorner"])
        else:
            ox = float(header["xllcenter"]) - cell / 2
        if "yllcorner" in header:
            oy = float(header["yllcorner"])
        else:
            oy = float(header["yllcenter"]) - cell / 2
        nodata = float(header["nodata_value"]) if "nodata_value" in header else None
        values = np.array(" ".join(text[i:]).split(), dtype=float)
    except (KeyError, ValueError) as err:
        raise GeoidFormatError(f"bad geoid grid: {err}") from None
    if values.size != ncols * nrows:
        raise GeoidFormatError(f"expected {ncols * nrows} values, found {values.size}")
    return GeoidRaster(ox, oy, cell, ncols, nrows, values, nodata)


def write_geoid_raster(path, raster: GeoidRaster) -> None:
    lines = [
        f"ncols {raster.ncols}",
        f"nrows {raster.nrows}",
        f"xllcorner {raster.origin_x!r}",
        f"yllcorner {raster.origin_y!r}",
        f"cellsize {raster.cell_size!r}",
    ]
    if raster.nodata is not None:
        lines.append(f"NODATA_value {raster.nodata!r}")
    lines += [" ".join(repr(float(v)) for v in row) for row in raster.values]
    Path(path).write_text("\n".join(lines) + "\n")


def geoid_adjust(
    footprints: Iterable[Footprint], raster: GeoidRaster
) -> Tuple[List[Footprint], List[Tuple[Footprint, str]]]:
    """Move reported elevations onto the point cloud's vertical datum.

    Ground, DEM and waveform elevations all drop by the sampled difference;
    RH heights are ground-relative and stay untouched.
    """
    adjusted, rejected = [], []
    for fp in footprints:
        delta = raster.sample(fp.x, fp.y)
        if delta is None:
            rejected.append((fp, NO_DATUM))
            continue
        adjusted.append(dataclasses.replace(
            fp,
            elev_lowestmode=fp.elev_lowestmode - delta,
            waveform=fp.waveform.shifted(-delta),
            dem_elevation=None if fp.dem_elevation is None else fp.dem_elevation - delta,
            datum_adjustment=fp.datum_adjustment + delta,
        ))
    return adjusted, rejected
