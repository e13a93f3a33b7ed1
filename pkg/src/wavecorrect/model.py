"""Shared domain records for footprint geolocation correction.

All records are frozen dataclasses so they can be shipped to worker
processes and cached without defensive copies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

Offset = Tuple[float, float]

# Percentiles carried by every RH profile (0..100 in steps of 5).
RH_PERCENTILES: Tuple[int, ...] = tuple(range(0, 101, 5))


class CorrectionMode(str, enum.Enum):
    ORBIT = "orbit"
    BEAM = "beam"
    FOOTPRINT = "footprint"


@dataclass(frozen=True)
class Waveform:
    """Elevation-gridded amplitudes, first bin on top.

    Bin ``i`` is centred at ``top_elevation - i * bin_size``.
    """

    top_elevation: float
    bin_size: float
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        if self.bin_size <= 0:
            raise ValueError("bin_size must be positive")
        if amps.ndim != 1 or amps.size < 2:
            raise ValueError("waveform needs at least 2 bins")
        if not np.all(np.isfinite(amps)):
            raise ValueError("waveform amplitudes must be finite")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def __len__(self) -> int:
        return int(self.amplitudes.size)

    @property
    def elevations(self) -> np.ndarray:
        return self.top_elevation - self.bin_size * np.arange(self.amplitudes.size)

    @property
    def bottom_elevation(self) -> float:
        return self.top_elevation - self.bin_size * (self.amplitudes.size - 1)

    def shifted(self, dz: float) -> "Waveform":
        return Waveform(self.top_elevation + dz, self.bin_size, self.amplitudes)

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return (
            self.top_elevation == other.top_elevation
            and self.bin_size == other.bin_size
            and np.array_equal(self.amplitudes, other.amplitudes)
        )

    __hash__ = None


@dataclass(frozen=True)
class RHProfile:
    percentiles: Tuple[int, ...]
    heights: Tuple[float, ...]

    def __post_init__(self):
        pct = tuple(int(p) for p in self.percentiles)
        hts = tuple(float(h) for h in self.heights)
        if len(pct) != len(hts):
            raise ValueError("percentiles and heights differ in length")
        if list(pct) != sorted(set(pct)):
            raise ValueError("percentiles must be strictly increasing")
        if any(b < a for a, b in zip(hts, hts[1:])):
            raise ValueError("RH heights must be non-decreasing")
        object.__setattr__(self, "percentiles", pct)
        object.__setattr__(self, "heights", hts)

    def height(self, percentile: int) -> float:
        try:
            return self.heights[self.percentiles.index(int(percentile))]
        except ValueError:
            raise KeyError(f"RH profile has no percentile {percentile}") from None

    @property
    def rh50(self) -> float:
        return self.height(50)

    @property
    def rh95(self) -> float:
        return self.height(95)

    def as_dict(self) -> dict:
        return {f"rh{p}": h for p, h in zip(self.percentiles, self.heights)}


@dataclass(frozen=True)
class Footprint:
    """One reported shot. Quality fields may be ``None`` when absent from input."""

    shot_number: int
    beam_id: int
    delta_time: float
    x: float
    y: float
    elev_lowestmode: float
    rh: RHProfile
    waveform: Waveform
    sensitivity: Optional[float] = None
    quality_flag: Optional[int] = None
    degrade_flag: Optional[int] = None
    solar_elevation: Optional[float] = None
    num_detected_modes: Optional[int] = None
    dem_elevation: Optional[float] = None
    datum_adjustment: float = 0.0


@dataclass(frozen=True)
class OffsetGrid:
    """Square lattice of candidate offsets, row-major by dy then dx."""

    span_g: float
    step_s: float
    half_count: int

    @property
    def side(self) -> int:
        return 2 * self.half_count + 1

    def __len__(self) -> int:
        return self.side * self.side

    @property
    def axis(self) -> np.ndarray:
        return self.step_s * np.arange(-self.half_count, self.half_count + 1, dtype=float)

    @property
    def offsets(self) -> np.ndarray:
        """``(n, 2)`` array of ``(dx, dy)`` pairs in canonical order."""
        ax = self.axis
        dy, dx = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([dx.ravel(), dy.ravel()])

    @property
    def center_index(self) -> int:
        return self.half_count * self.side + self.half_count

    def offset(self, index: int) -> Offset:
        if not 0 <= index < len(self):
            raise IndexError(index)
        iy, ix = divmod(int(index), self.side)
        return (
            float((ix - self.half_count) * self.step_s),
            float((iy - self.half_count) * self.step_s),
        )


def canonical_offset_index(dx: float, dy: float, grid: OffsetGrid) -> int:
    """Row-major index of ``(dx, dy)`` in ``grid``."""
    fx = dx / grid.step_s + grid.half_count
    fy = dy / grid.step_s + grid.half_count
    ix, iy = round(fx), round(fy)
    if (
        abs(fx - ix) > 1e-9
        or abs(fy - iy) > 1e-9
        or not (0 <= ix < grid.side and 0 <= iy < grid.side)
    ):
        raise ValueError(f"offset not on grid: ({dx}, {dy})")
    return iy * grid.side + ix


@dataclass(frozen=True)
class ScoredFootprint:
    shot_number: int
    beam_id: int
    delta_time: float
    scores: Optional[np.ndarray]
    valid: bool
    reason: str = ""

    def __post_init__(self):
        if self.scores is not None:
            s = np.asarray(self.scores, dtype=float)
            s.setflags(write=False)
            object.__setattr__(self, "scores", s)
        if self.valid and self.scores is None:
            raise ValueError("valid scored footprint needs scores")

    __hash__ = None

    def __eq__(self, other):
        if not isinstance(other, ScoredFootprint):
            return NotImplemented
        same_scores = (
            (self.scores is None and other.scores is None)
            or (
                self.scores is not None
                and other.scores is not None
                and np.array_equal(self.scores, other.scores)
            )
        )
        return (
            same_scores
            and self.shot_number == other.shot_number
            and self.beam_id == other.beam_id
            and self.delta_time == other.delta_time
            and self.valid == other.valid
            and self.reason == other.reason
        )


@dataclass(frozen=True)
class SimulatedMetrics:
    waveform: Waveform
    ground_elevation: float
    rh: RHProfile
    offset: Offset = (0.0, 0.0)


@dataclass(frozen=True)
class CorrectionResult:
    shot_number: int
    beam_id: int
    mode: CorrectionMode
    status: str
    original_x: float
    original_y: float
    chosen_offset: Optional[Offset] = None
    corrected_x: Optional[float] = None
    corrected_y: Optional[float] = None
    final_score: Optional[float] = None
    cluster_size: Optional[int] = None
    simulated: Optional[SimulatedMetrics] = None
    discarded: bool = False
    reason: str = ""
    origin_simulated: Optional[SimulatedMetrics] = None

    @property
    def offset_magnitude(self) -> Optional[float]:
        if self.chosen_offset is None:
            return None
        return math.hypot(*self.chosen_offset)


def max_offset_magnitude(grid: OffsetGrid) -> float:
    return grid.half_count * grid.step_s * math.sqrt(2.0)

