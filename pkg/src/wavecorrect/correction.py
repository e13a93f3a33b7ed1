"""Candidate grids, per-footprint simulate-and-score, and offset selection.

Aggregation functions sort their input by shot number first, so results do
not depend on the order in which workers delivered scored footprints.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .model import (
    CorrectionMode,
    CorrectionResult,
    Footprint,
    Offset,
    OffsetGrid,
    ScoredFootprint,
    SimulatedMetrics,
)
from .pointcloud import PointCloud
from .scoring import rh95_change_filter, score_candidates
from .simulator import CandidateSet, SimParams, SimulationError, simulate_candidates, simulate_waveform

log = logging.getLogger(__name__)

# Slack on cluster window edges: shot times are multiples of 1/242 s and
# would otherwise fall either side of the boundary by rounding alone.
_TIME_SLACK = 1e-9


class NothingToCorrect(ValueError):
    pass


def generate_offset_grid(span_g: float = 30.0, step_s: float = 1.0) -> OffsetGrid:
    """Lattice of ``(dx, dy)`` candidates centred on (0, 0).

    The half-width in steps is ``span_g / (2 step_s)`` rounded to nearest with
    halves going up, so an odd number of steps (e.g. span 3, step 1) grows
    to the next even count while (0, 0) always stays on the lattice.
    """
    if not (span_g > 0 and step_s > 0):
        raise ValueError("grid span and step must be positive")
    if span_g < step_s:
        raise ValueError("grid span must be at least one step")
    half = int(math.floor(span_g / step_s / 2.0 + 0.5 + 1e-9))
    return OffsetGrid(float(span_g), float(step_s), half)


@dataclass(frozen=True)
class ClusterWindow:
    time_window_s: float = 0.04

    def __post_init__(self):
        if not self.time_window_s >= 0:
            raise ValueError("time window must be >= 0")


@dataclass(frozen=True)
class FootprintOutcome:
    """Worker output: the compact scored record plus optional candidate detail."""

    scored: ScoredFootprint
    candidates: Optional[List[tuple]] = None


def process_footprint(
    fp: Footprint,
    points: PointCloud,
    grid: OffsetGrid,
    params: SimParams,
    metrics: Sequence[str],
    threshold_m: float = 10.0,
    keep_candidates: bool = False,
) -> FootprintOutcome:
    """Simulate every grid offset, apply the RH95 change filter, score.

    Never raises for data problems: failures come back as an invalid record.
    """
    cand = simulate_candidates(points, fp.x, fp.y, grid.offsets, params)
    rows = _candidate_rows(fp, cand, None) if keep_candidates else None
    if not cand.valid.any():
        return FootprintOutcome(_invalid(fp, "empty footprint"), rows)
    if not rh95_change_filter(fp, cand, threshold_m):
        return FootprintOutcome(_invalid(fp, "rh95 change"), rows)
    scored = score_candidates(fp, cand, metrics)
    if keep_candidates:
        rows = _candidate_rows(fp, cand, scored.scores)
    return FootprintOutcome(scored, rows)


def _invalid(fp: Footprint, reason: str) -> ScoredFootprint:
    return ScoredFootprint(fp.shot_number, fp.beam_id, fp.delta_time, None, False, reason)


def _candidate_rows(fp: Footprint, cand: CandidateSet, scores) -> List[tuple]:
    rh95 = cand.rh_height(95)
    rows = []
    for i, (dx, dy) in enumerate(cand.offsets):
        rows.append((
            fp.shot_number, i, float(dx), float(dy), fp.x + dx, fp.y + dy,
            float(cand.ground[i]), float(rh95[i]),
            float(scores[i]) if scores is not None else float("nan"),
        ))
    return rows


# ----------------------------------------------------------------- aggregation


def _sorted_valid(scored: Sequence[ScoredFootprint]) -> List[ScoredFootprint]:
    return sorted((s for s in scored if s.valid), key=lambda s: s.shot_number)


def best_offset_index(mean_scores: np.ndarray, grid: OffsetGrid) -> int:
    """Argmax; ties go to the smallest displacement, then lowest (dy, dx)."""
    best = np.flatnonzero(mean_scores == mean_scores.max())
    if best.size == 1:
        return int(best[0])
    offs = grid.offsets[best]
    keys = [(dx * dx + dy * dy, dy, dx) for dx, dy in offs]
    return int(best[min(range(len(keys)), key=keys.__getitem__)])


def _mean_scores(members: Sequence[ScoredFootprint]) -> np.ndarray:
    total = np.zeros_like(members[0].scores)
    for m in members:
        total = total + m.scores
    return total / len(members)


def aggregate_orbit(scored: Sequence[ScoredFootprint], grid: OffsetGrid) -> Offset:
    """Offset with the highest mean score over all valid footprints."""
    members = _sorted_valid(scored)
    if not members:
        raise NothingToCorrect("nothing to correct")
    return grid.offset(best_offset_index(_mean_scores(members), grid))


def aggregate_beam(scored: Sequence[ScoredFootprint], grid: OffsetGrid) -> Dict[int, Optional[Offset]]:
    """Per-beam orbit aggregation; beams without valid footprints map to ``None``."""
    beams = sorted({s.beam_id for s in scored})
    out: Dict[int, Optional[Offset]] = {}
    for beam in beams:
        members = [s for s in scored if s.beam_id == beam]
        try:
            out[beam] = aggregate_orbit(members, grid)
        except NothingToCorrect:
            log.info("beam %s has no valid footprints; left uncorrected", beam)
            out[beam] = None
    return out


def cluster_footprints(
    scored: Sequence[ScoredFootprint], window: ClusterWindow
) -> Dict[int, List[int]]:
    """For each valid footprint, the shot numbers of valid same-beam shots
    within ``window / 2`` seconds (itself included)."""
    half = window.time_window_s / 2.0
    valid = _sorted_valid(scored)
    out: Dict[int, List[int]] = {}
    by_beam: Dict[int, List[ScoredFootprint]] = {}
    for s in valid:
        by_beam.setdefault(s.beam_id, []).append(s)
    for members in by_beam.values():
        members.sort(key=lambda s: (s.delta_time, s.shot_number))
        t = np.array([s.delta_time for s in members])
        shots = [s.shot_number for s in members]
        lo = np.searchsorted(t, t - half - _TIME_SLACK, side="left")
        hi = np.searchsorted(t, t + half + _TIME_SLACK, side="right")
        for i, s in enumerate(members):
            out[s.shot_number] = sorted(shots[lo[i] : hi[i]])
    return dict(sorted(out.items()))


def aggregate_footprint(
    scored: Sequence[ScoredFootprint], clusters: Mapping[int, Sequence[int]], grid: OffsetGrid
) -> Dict[int, Offset]:
    """Per target footprint, the best offset of the mean over its cluster."""
    by_shot = {s.shot_number: s for s in _sorted_valid(scored)}
    out: Dict[int, Offset] = {}
    for target in sorted(clusters):
        if target not in by_shot:
            continue
        members = [by_shot[m] for m in sorted(clusters[target]) if m in by_shot]
        out[target] = grid.offset(best_offset_index(_mean_scores(members), grid))
    return out


@dataclass(frozen=True)
class Selection:
    """Chosen offset per shot (``None`` = uncorrected) with its provenance."""

    offsets: Dict[int, Optional[Offset]]
    cluster_sizes: Dict[int, int]
    reasons: Dict[int, str]


def select_offsets(
    scored: Sequence[ScoredFootprint],
    grid: OffsetGrid,
    mode: CorrectionMode,
    window: Optional[ClusterWindow] = None,
) -> Selection:
    mode = CorrectionMode(mode)
    scored = sorted(scored, key=lambda s: s.shot_number)
    offsets: Dict[int, Optional[Offset]] = {}
    sizes: Dict[int, int] = {}
    reasons: Dict[int, str] = {s.shot_number: s.reason for s in scored if not s.valid}

    if mode is CorrectionMode.ORBIT:
        try:
            chosen = aggregate_orbit(scored, grid)
        except NothingToCorrect:
            chosen = None
        for s in scored:
            offsets[s.shot_number] = chosen if s.valid else None
    elif mode is CorrectionMode.BEAM:
        per_beam = aggregate_beam(scored, grid)
        for s in scored:
            offsets[s.shot_number] = per_beam[s.beam_id] if s.valid else None
            if s.valid and per_beam[s.beam_id] is None:
                reasons[s.shot_number] = "uncorrected beam"
    else:
        clusters = cluster_footprints(scored, window or ClusterWindow())
        chosen = aggregate_footprint(scored, clusters, grid)
        for s in scored:
            offsets[s.shot_number] = chosen.get(s.shot_number)
        sizes = {k: len(v) for k, v in clusters.items()}
    return Selection(offsets, sizes, reasons)


# ---------------------------------------------------------------- resimulation


def resimulate_and_emit(
    fp: Footprint,
    chosen: Offset,
    points: PointCloud,
    params: SimParams,
    mode: CorrectionMode = CorrectionMode.ORBIT,
    final_score: Optional[float] = None,
    cluster_size: Optional[int] = None,
    origin: bool = False,
) -> CorrectionResult:
    """Simulate once more at the corrected position and build the result."""
    dx, dy = float(chosen[0]), float(chosen[1])
    cx, cy = fp.x + dx, fp.y + dy
    mode = CorrectionMode(mode)
    origin_sim = _try_simulate(points, fp.x, fp.y, params)[0] if origin else None
    cand = simulate_candidates(points, fp.x, fp.y, np.array([[dx, dy]]), params)
    if cand.reasons[0]:
        return CorrectionResult(
            fp.shot_number, fp.beam_id, mode, "discarded", fp.x, fp.y, (dx, dy), cx, cy,
            final_score, cluster_size, None, True, cand.reasons[0], origin_sim,
        )
    return CorrectionResult(
        fp.shot_number, fp.beam_id, mode, "corrected", fp.x, fp.y, (dx, dy), cx, cy,
        final_score, cluster_size, cand.metrics(0), False, "", origin_sim,
    )


def _try_simulate(points, x, y, params) -> Tuple[Optional[SimulatedMetrics], str]:
    try:
        return simulate_waveform(points, x, y, params), ""
    except SimulationError as err:
        return None, str(err)


def uncorrected_result(
    fp: Footprint, mode: CorrectionMode, status: str, reason: str,
    points: Optional[PointCloud] = None, params: Optional[SimParams] = None, origin: bool = False,
) -> CorrectionResult:
    origin_sim = None
    if origin and points is not None:
        origin_sim = _try_simulate(points, fp.x, fp.y, params or SimParams())[0]
    return CorrectionResult(
        fp.shot_number, fp.beam_id, CorrectionMode(mode), status, fp.x, fp.y,
        discarded=True, reason=reason, origin_simulated=origin_sim,
    )
