"""Horizontal geolocation correction for large-footprint waveform lidar shots.

Waveforms are simulated from a reference point cloud at a grid of candidate
offsets around each reported shot, scored against the reported waveform, and
the best offset is chosen per orbit, per beam, or per temporal cluster.
"""

from .correction import (
    ClusterWindow,
    aggregate_beam,
    aggregate_footprint,
    aggregate_orbit,
    cluster_footprints,
    generate_offset_grid,
    process_footprint,
    resimulate_and_emit,
)
from .engine import RunConfig, run_pipeline, worker_pool_map
from .model import (
    CorrectionMode,
    CorrectionResult,
    Footprint,
    OffsetGrid,
    RHProfile,
    ScoredFootprint,
    SimulatedMetrics,
    Waveform,
)
from .simulator import SimParams, simulate_candidates, simulate_waveform

__version__ = "0.1.0"

__all__ = [
    "ClusterWindow", "CorrectionMode", "CorrectionResult", "Footprint", "OffsetGrid", "RHProfile",
    "RunConfig", "ScoredFootprint", "SimParams", "SimulatedMetrics", "Waveform",
    "aggregate_beam", "aggregate_footprint", "aggregate_orbit", "cluster_footprints",
    "generate_offset_grid", "process_footprint", "resimulate_and_emit", "run_pipeline",
    "simulate_candidates", "simulate_waveform", "worker_pool_map",
]
